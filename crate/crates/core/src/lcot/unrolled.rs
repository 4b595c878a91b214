//! Reverse-mode differentiation through a fixed number of log-domain
//! Sinkhorn iterations.
//!
//! The forward pass records every dual potential; the backward pass walks
//! the iterations in reverse, rebuilding the softmax weights of each
//! log-sum-exp from the recorded potentials.

use crate::error::{Error, Result};
use crate::matrix::{MarginalPair, Matrix};
use crate::ot::{log_sum_exp, SolverConfig, TransportPlan};

use super::network::{CostNetwork, ForwardCache};
use crate::ot::{augment, strip};

/// Recorded forward pass of `iterations` Sinkhorn sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledSinkhorn {
    eps: f64,
    n1: usize,
    n2: usize,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    cost: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// f after sweep k, for k = 1..=K.
    f_hist: Vec<Vec<f64>>,
    /// g after sweep k, for k = 0..=K (g⁰ = 0).
    g_hist: Vec<Vec<f64>>,
    plan: Vec<f64>,
}

impl UnrolledSinkhorn {
    /// `cost` is row-major `n1 x n2` and may hold `+inf` for forbidden cells.
    pub fn run(
        a: &[f64],
        b: &[f64],
        cost: &[f64],
        eps: f64,
        iterations: usize,
    ) -> Result<Self> {
        let (n1, n2) = (a.len(), b.len());
        if cost.len() != n1 * n2 {
            return Err(Error::Dimension("cost does not match marginals".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
        }
        if iterations == 0 {
            return Err(Error::Config("unrolled Sinkhorn needs at least one iteration".into()));
        }
        let rows: Vec<usize> = (0..n1).filter(|&i| a[i] > 0.0).collect();
        let cols: Vec<usize> = (0..n2).filter(|&j| b[j] > 0.0).collect();
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::DegenerateMarginal("marginal has no mass".into()));
        }
        let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
        let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
        let c = |i: usize, j: usize| cost[i * n2 + j];

        let mut f_hist = Vec::with_capacity(iterations);
        let mut g_hist = Vec::with_capacity(iterations + 1);
        g_hist.push(vec![0.0; n2]);
        for _ in 0..iterations {
            let g = g_hist.last().expect("seeded with g0");
            let mut f = vec![0.0; n1];
            for &i in &rows {
                let lse = log_sum_exp(cols.iter().map(|&j| (g[j] - c(i, j)) / eps));
                f[i] = eps * (log_a[i] - lse);
            }
            let mut g_next = vec![0.0; n2];
            for &j in &cols {
                let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - c(i, j)) / eps));
                g_next[j] = eps * (log_b[j] - lse);
            }
            f_hist.push(f);
            g_hist.push(g_next);
        }
        let (f, g) = (f_hist.last().unwrap(), g_hist.last().unwrap());
        let mut plan = vec![0.0; n1 * n2];
        for &i in &rows {
            for &j in &cols {
                plan[i * n2 + j] = ((f[i] + g[j] - c(i, j)) / eps).exp();
            }
        }
        if plan.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("unrolled Sinkhorn overflowed".into()));
        }
        Ok(Self {
            eps,
            n1,
            n2,
            log_a,
            log_b,
            cost: cost.to_vec(),
            rows,
            cols,
            f_hist,
            g_hist,
            plan,
        })
    }

    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    pub fn iterations(&self) -> usize {
        self.f_hist.len()
    }

    /// Summed L1 violation of both marginals by the final plan.
    pub fn marginal_violation(&self) -> f64 {
        let plan = Matrix::from_vec(self.n1, self.n2, self.plan.clone()).expect("finite plan");
        let rows = plan.row_sums();
        let cols = plan.col_sums();
        let a = self.log_a.iter().map(|v| v.exp());
        let b = self.log_b.iter().map(|v| v.exp());
        rows.iter().zip(a).map(|(s, t)| (s - t).abs()).sum::<f64>()
            + cols.iter().zip(b).map(|(s, t)| (s - t).abs()).sum::<f64>()
    }

    /// Gradient with respect to the cost matrix, given the gradient with
    /// respect to the plan. Marginals are constants.
    pub fn backward(&self, plan_grad: &[f64]) -> Vec<f64> {
        let (n2, eps) = (self.n2, self.eps);
        let c = |i: usize, j: usize| self.cost[i * n2 + j];
        let mut cost_grad = vec![0.0; self.n1 * n2];
        let mut f_bar = vec![0.0; self.n1];
        let mut g_bar = vec![0.0; n2];

        // P_ij = exp((f_i + g_j - C_ij) / eps)
        for &i in &self.rows {
            for &j in &self.cols {
                let k = i * n2 + j;
                let w = plan_grad[k] * self.plan[k] / eps;
                f_bar[i] += w;
                g_bar[j] += w;
                cost_grad[k] -= w;
            }
        }

        for k in (1..=self.iterations()).rev() {
            let f = &self.f_hist[k - 1];
            let g = &self.g_hist[k];
            let g_prev = &self.g_hist[k - 1];
            // g_j = eps log b_j - eps LSE_i((f_i - C_ij)/eps); the softmax over i
            // is exp((f_i - C_ij + g_j)/eps) / b_j.
            for &j in &self.cols {
                if g_bar[j] == 0.0 {
                    continue;
                }
                for &i in &self.rows {
                    let beta = ((f[i] - c(i, j) + g[j]) / eps - self.log_b[j]).exp();
                    let w = g_bar[j] * beta;
                    f_bar[i] -= w;
                    cost_grad[i * n2 + j] += w;
                }
            }
            // f_i = eps log a_i - eps LSE_j((g_prev_j - C_ij)/eps)
            let mut g_prev_bar = vec![0.0; n2];
            for &i in &self.rows {
                if f_bar[i] == 0.0 {
                    continue;
                }
                for &j in &self.cols {
                    let alpha = ((g_prev[j] - c(i, j) + f[i]) / eps - self.log_a[i]).exp();
                    let w = f_bar[i] * alpha;
                    g_prev_bar[j] -= w;
                    cost_grad[i * n2 + j] += w;
                }
            }
            f_bar.iter_mut().for_each(|v| *v = 0.0);
            g_bar = g_prev_bar;
        }
        for (k, g) in cost_grad.iter_mut().enumerate() {
            if self.cost[k].is_infinite() {
                *g = 0.0;
            }
        }
        cost_grad
    }
}

/// Everything needed to backpropagate one LCOT prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LcotTape {
    pub cost: Matrix,
    pub network: ForwardCache,
    pub sinkhorn: UnrolledSinkhorn,
    partial: bool,
}

/// Predicts a cost matrix and couples the (normalized) marginals under it
/// with `iterations` unrolled Sinkhorn sweeps. Partial backends unroll the
/// dummy-node augmented problem.
pub fn lcot_forward(
    net: &CostNetwork,
    input: &Matrix,
    marginals: &MarginalPair,
    solver: &SolverConfig,
    iterations: usize,
) -> Result<(TransportPlan, LcotTape)> {
    let (cost, cache) = net.forward(input)?;
    let (n1, n2) = cost.shape();
    if marginals.row.len() != n1 || marginals.col.len() != n2 {
        return Err(Error::Dimension(format!(
            "marginals of lengths {} and {} do not fit a {n1}x{n2} cost",
            marginals.row.len(),
            marginals.col.len()
        )));
    }
    let s = solver.effective_mass_fraction();
    let partial = s < 1.0;
    let sinkhorn = if partial {
        let aug = augment(&marginals.row, &marginals.col, cost.as_slice(), s);
        UnrolledSinkhorn::run(&aug.a, &aug.b, &aug.cost, solver.epsilon, iterations)?
    } else {
        UnrolledSinkhorn::run(
            &marginals.row,
            &marginals.col,
            cost.as_slice(),
            solver.epsilon,
            iterations,
        )?
    };
    let flat = if partial {
        strip(sinkhorn.plan(), n1, n2)
    } else {
        sinkhorn.plan().to_vec()
    };
    let plan = Matrix::from_vec(n1, n2, flat)?;
    let converged = sinkhorn.marginal_violation() <= solver.tolerance;
    let result = TransportPlan {
        objective: cost.dot(&plan),
        plan,
        iterations_used: iterations,
        converged,
    };
    Ok((
        result,
        LcotTape {
            cost,
            network: cache,
            sinkhorn,
            partial,
        },
    ))
}

/// Gradient of a loss with respect to the network parameters, given the
/// loss gradient with respect to the (unaugmented) plan.
pub fn lcot_backward(net: &CostNetwork, tape: &LcotTape, plan_grad: &Matrix) -> Vec<f64> {
    let (n1, n2) = tape.cost.shape();
    let cost_grad = if tape.partial {
        let w = n2 + 1;
        let mut padded = vec![0.0; (n1 + 1) * w];
        for i in 0..n1 {
            padded[i * w..i * w + n2].copy_from_slice(plan_grad.row(i));
        }
        strip(&tape.sinkhorn.backward(&padded), n1, n2)
    } else {
        tape.sinkhorn.backward(plan_grad.as_slice())
    };
    net.backward(&tape.network, &cost_grad)
}
