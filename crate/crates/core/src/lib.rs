//! MELCOT: matrix-valued regression by marginal estimation and
//! learnable-cost optimal transport.
//!
//! A prediction is built in three steps. Classical regressors estimate the
//! row and column sums of the target matrix (or they are supplied up front),
//! a small perceptron maps the flattened input to a transport cost, and an
//! OT solver couples the two marginals under that cost. The coupling,
//! rescaled to the predicted mass, is the predicted matrix.

pub mod bench;
pub mod data;
pub mod error;
pub mod lcot;
pub mod matrix;
pub mod me;
pub mod metrics;
pub mod ot;
pub mod pipeline;

pub use error::{Error, Result};
pub use matrix::{mat, marginals_of, normalize_marginals, vec, MarginalPair, Matrix, MatrixSample, Shapes};
