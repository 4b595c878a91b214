//! The learnable-cost OT block: a perceptron produces a cost matrix, OT
//! couples the target marginals under it, and training fits the coupling
//! to the target matrix through unrolled Sinkhorn iterations.

mod adam;
mod network;
mod train;
mod unrolled;

pub use adam::AdamState;
pub use network::{cost_forward, CostNetwork, ForwardCache};
pub use train::{dataset_loss, lcot_train, LcotTrainConfig, LcotTrainOutput, TrainingExample};
pub use unrolled::{lcot_backward, lcot_forward, LcotTape, UnrolledSinkhorn};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ot::TransportPlan;

/// Frobenius norm of `scale * plan - target`.
pub fn lcot_loss(plan: &TransportPlan, target: &Matrix, scale: f64) -> Result<f64> {
    plan.plan.scaled(scale).frobenius_distance(target)
}

/// Loss value and its gradient with respect to the (unscaled) plan. The
/// scale is treated as a constant.
pub fn lcot_loss_grad(plan: &Matrix, target: &Matrix, scale: f64) -> Result<(f64, Matrix)> {
    if plan.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "plan {:?} vs target {:?}",
            plan.shape(),
            target.shape()
        )));
    }
    let residual: Vec<f64> = plan
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| scale * p - t)
        .collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    let grad = if loss > 0.0 {
        residual.iter().map(|r| scale * r / loss).collect()
    } else {
        vec![0.0; residual.len()]
    };
    Ok((loss, Matrix::from_vec(plan.rows(), plan.cols(), grad)?))
}
