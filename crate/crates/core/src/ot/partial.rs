//! Partial transport through a dummy-node reduction.
//!
//! Each marginal gains one slack cell holding the `1 - s` units that stay
//! put. Real-to-slack arcs cost nothing and the slack-to-slack arc is
//! forbidden, so the real block of any feasible augmented plan ships
//! exactly `s` with row and column sums bounded by the marginals.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::network_simplex::exact_transport;
use super::sinkhorn::sinkhorn_log;
use super::{solve_lp, solve_sinkhorn, SolverConfig, TransportPlan, TransportProblem};

pub(crate) struct Augmented {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cost: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
}

/// Builds the `(n1 + 1) x (n2 + 1)` balanced problem for mass `s`.
pub(crate) fn augment(row: &[f64], col: &[f64], cost: &[f64], s: f64) -> Augmented {
    let (n1, n2) = (row.len(), col.len());
    let slack = 1.0 - s;
    let mut a = row.to_vec();
    a.push(slack);
    let mut b = col.to_vec();
    b.push(slack);
    let w = n2 + 1;
    let mut c = vec![0.0; (n1 + 1) * w];
    for i in 0..n1 {
        c[i * w..i * w + n2].copy_from_slice(&cost[i * n2..(i + 1) * n2]);
    }
    c[n1 * w + n2] = f64::INFINITY;
    Augmented {
        a,
        b,
        cost: c,
        n1: n1 + 1,
        n2: n2 + 1,
    }
}

/// Drops the slack row and column.
pub(crate) fn strip(aug: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    let w = n2 + 1;
    (0..n1)
        .flat_map(|i| aug[i * w..i * w + n2].iter().copied())
        .collect()
}

fn check(problem: &TransportProblem) -> Result<()> {
    let s = problem.mass_fraction();
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!(
            "mass_fraction must lie in (0, 1], got {s}"
        )));
    }
    Ok(())
}

/// Entropic partial OT: Sinkhorn on the augmented problem.
pub fn solve_sinkhorn_partial(
    problem: &TransportProblem,
    cfg: &SolverConfig,
) -> Result<TransportPlan> {
    check(problem)?;
    cfg.validate()?;
    if !problem.is_partial() {
        return solve_sinkhorn(problem, cfg);
    }
    let (n1, n2) = problem.shape();
    let aug = augment(
        problem.row_marginal(),
        problem.col_marginal(),
        problem.cost().as_slice(),
        problem.mass_fraction(),
    );
    let out = sinkhorn_log(&aug.a, &aug.b, &aug.cost, aug.n1, aug.n2, cfg)?;
    let plan = Matrix::from_vec(n1, n2, strip(&out.plan, n1, n2))?;
    Ok(TransportPlan {
        objective: problem.cost().dot(&plan),
        plan,
        iterations_used: out.iterations,
        converged: out.converged,
    })
}

/// Exact partial OT: network simplex on the augmented problem.
pub fn solve_lp_partial(problem: &TransportProblem) -> Result<TransportPlan> {
    check(problem)?;
    if !problem.is_partial() {
        return solve_lp(problem);
    }
    let (n1, n2) = problem.shape();
    let aug = augment(
        problem.row_marginal(),
        problem.col_marginal(),
        problem.cost().as_slice(),
        problem.mass_fraction(),
    );
    let (flow, pivots) = exact_transport(&aug.a, &aug.b, &aug.cost, aug.n1, aug.n2)?;
    let plan = Matrix::from_vec(n1, n2, strip(&flow, n1, n2))?;
    Ok(TransportPlan {
        objective: problem.cost().dot(&plan),
        plan,
        iterations_used: pivots,
        converged: true,
    })
}
