use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Shapes};

/// Two-layer perceptron mapping a flattened input matrix to a non-negative
/// cost matrix: `C = softplus(W2 relu(W1 x + b1) + b2)`.
///
/// Parameters live in one flat vector laid out as `[W1, b1, W2, b2]`, with
/// both weight matrices row-major (`W1` is `hidden x in`, `W2` is
/// `out x hidden`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostNetwork {
    shapes: Shapes,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub pre_output: Vec<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl CostNetwork {
    pub fn parameter_count(shapes: &Shapes, hidden_dim: usize) -> usize {
        let (d_in, d_out) = (shapes.input_len(), shapes.output_len());
        hidden_dim * (d_in + d_out) + hidden_dim + d_out
    }

    pub fn zeros(shapes: Shapes, hidden_dim: usize) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        Ok(Self {
            shapes,
            hidden_dim,
            params: vec![0.0; Self::parameter_count(&shapes, hidden_dim)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(shapes: Shapes, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        Self::glorot_scaled(shapes, hidden_dim, 1.0, rng)
    }

    /// Glorot-uniform weights multiplied by `gain`, zero biases.
    pub fn glorot_scaled<R: Rng + ?Sized>(
        shapes: Shapes,
        hidden_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(shapes, hidden_dim)?;
        let (d_in, d_out) = (shapes.input_len(), shapes.output_len());
        let limit1 = gain * (6.0 / (d_in + hidden_dim) as f64).sqrt();
        let limit2 = gain * (6.0 / (hidden_dim + d_out) as f64).sqrt();
        let layout = net.layout();
        for w in &mut net.params[layout.w1.clone()] {
            *w = rng.random_range(-1.0..=1.0) * limit1;
        }
        for w in &mut net.params[layout.w2.clone()] {
            *w = rng.random_range(-1.0..=1.0) * limit2;
        }
        Ok(net)
    }

    pub fn from_params(shapes: Shapes, hidden_dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::parameter_count(&shapes, hidden_dim) {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                Self::parameter_count(&shapes, hidden_dim),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(Self {
            shapes,
            hidden_dim,
            params,
        })
    }

    pub fn shapes(&self) -> Shapes {
        self.shapes
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d_in, d_out, h) = (
            self.shapes.input_len(),
            self.shapes.output_len(),
            self.hidden_dim,
        );
        let w1 = 0..h * d_in;
        let b1 = w1.end..w1.end + h;
        let w2 = b1.end..b1.end + d_out * h;
        let b2 = w2.end..w2.end + d_out;
        Layout { w1, b1, w2, b2 }
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let expected = (self.shapes.in_rows, self.shapes.in_cols);
        if input.shape() != expected {
            return Err(Error::Dimension(format!(
                "cost network expects {expected:?} input, got {:?}",
                input.shape()
            )));
        }
        let x = input.as_slice();
        let l = self.layout();
        let (w1, b1) = (&self.params[l.w1], &self.params[l.b1]);
        let (w2, b2) = (&self.params[l.w2], &self.params[l.b2]);
        let d_in = x.len();
        let pre_hidden: Vec<f64> = (0..self.hidden_dim)
            .map(|r| b1[r] + dot(&w1[r * d_in..(r + 1) * d_in], x))
            .collect();
        let hidden: Vec<f64> = pre_hidden.iter().map(|v| v.max(0.0)).collect();
        let h = self.hidden_dim;
        let pre_output: Vec<f64> = (0..self.shapes.output_len())
            .map(|r| b2[r] + dot(&w2[r * h..(r + 1) * h], &hidden))
            .collect();
        let cost = Matrix::from_vec(
            self.shapes.out_rows,
            self.shapes.out_cols,
            pre_output.iter().map(|&z| softplus(z)).collect(),
        )
        .map_err(|_| Error::Numerical("cost network produced a non-finite cost".into()))?;
        Ok((
            cost,
            ForwardCache {
                input: x.to_vec(),
                pre_hidden,
                hidden,
                pre_output,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to all parameters, given its
    /// gradient with respect to the (row-major) cost matrix.
    pub fn backward(&self, cache: &ForwardCache, cost_grad: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let mut grad = vec![0.0; self.params.len()];
        let (h, d_in) = (self.hidden_dim, cache.input.len());
        let w2 = &self.params[l.w2.clone()];

        let out_grad: Vec<f64> = cost_grad
            .iter()
            .zip(&cache.pre_output)
            .map(|(g, &z)| g * sigmoid(z))
            .collect();
        let mut hidden_grad = vec![0.0; h];
        for (r, &og) in out_grad.iter().enumerate() {
            grad[l.b2.start + r] = og;
            for c in 0..h {
                grad[l.w2.start + r * h + c] = og * cache.hidden[c];
                hidden_grad[c] += og * w2[r * h + c];
            }
        }
        for r in 0..h {
            if cache.pre_hidden[r] <= 0.0 {
                continue;
            }
            let g = hidden_grad[r];
            grad[l.b1.start + r] = g;
            for c in 0..d_in {
                grad[l.w1.start + r * d_in + c] = g * cache.input[c];
            }
        }
        grad
    }
}

pub(crate) struct Layout {
    pub w1: std::ops::Range<usize>,
    pub b1: std::ops::Range<usize>,
    pub w2: std::ops::Range<usize>,
    pub b2: std::ops::Range<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cost matrix predicted for one input.
pub fn cost_forward(net: &CostNetwork, input: &Matrix) -> Result<Matrix> {
    net.forward(input).map(|(c, _)| c)
}
