use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{SolverConfig, TransportPlan, TransportProblem};

/// Numerically stable `log(sum(exp(x)))`; `-inf` for an empty or all `-inf` input.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by log-domain Sinkhorn iterations.
///
/// Stops once the summed L1 violation of both marginals is at most
/// `cfg.tolerance`, or after `cfg.max_iterations`.
pub fn solve_sinkhorn(problem: &TransportProblem, cfg: &SolverConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    if problem.is_partial() {
        return Err(Error::Config(
            "full-mass Sinkhorn requires mass_fraction = 1".into(),
        ));
    }
    let (n1, n2) = problem.shape();
    let out = sinkhorn_log(
        problem.row_marginal(),
        problem.col_marginal(),
        problem.cost().as_slice(),
        n1,
        n2,
        cfg,
    )?;
    let plan = Matrix::from_vec(n1, n2, out.plan)?;
    Ok(TransportPlan {
        objective: problem.cost().dot(&plan),
        plan,
        iterations_used: out.iterations,
        converged: out.converged,
    })
}

/// Epsilon-scaling starts once `spread / epsilon` exceeds this ratio.
const EPS_SCALING_RATIO: f64 = 16.0;

/// Marginal violation accepted before moving to the next epsilon stage.
const STAGE_TOLERANCE: f64 = 1e-3;

pub(crate) struct SinkhornOutput {
    pub plan: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Log-domain Sinkhorn on balanced marginals of any common total mass.
///
/// `cost` is row-major and may contain `+inf` for forbidden cells. Zero
/// marginal entries are dropped and their plan rows/columns are zero.
pub(crate) fn sinkhorn_log(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    n1: usize,
    n2: usize,
    cfg: &SolverConfig,
) -> Result<SinkhornOutput> {
    debug_assert_eq!(cost.len(), n1 * n2);
    let eps = cfg.epsilon;
    let rows: Vec<usize> = (0..n1).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n2).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::DegenerateMarginal("marginal has no mass".into()));
    }
    // The plan is invariant to a constant cost shift; shifting keeps the
    // exponents near zero.
    let shift = cost
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let c = |i: usize, j: usize| cost[i * n2 + j] - shift;

    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n1];
    let mut g = vec![0.0; n2];
    let mut plan = vec![0.0; n1 * n2];
    let mut iterations = 0;
    let mut converged = false;

    // Small epsilon relative to the cost spread converges slowly from cold
    // potentials; warm-start them by halving epsilon from the spread down.
    // The fixed point at the target epsilon is unchanged, and every sweep
    // counts against max_iterations.
    let spread = cost
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(0.0, f64::max)
        - shift;
    let mut stages = vec![eps];
    while stages.last().is_some_and(|&e| 2.0 * e <= spread / EPS_SCALING_RATIO) {
        let next = 2.0 * stages.last().unwrap();
        stages.push(next);
    }
    stages.reverse();

    for (stage, &eps) in stages.iter().enumerate() {
        let last = stage + 1 == stages.len();
        let tol = if last {
            cfg.tolerance
        } else {
            cfg.tolerance.max(STAGE_TOLERANCE)
        };
        converged = false;
        while iterations < cfg.max_iterations {
            iterations += 1;
            for &i in &rows {
                let lse = log_sum_exp(cols.iter().map(|&j| (g[j] - c(i, j)) / eps));
                f[i] = eps * (log_a[i] - lse);
            }
            for &j in &cols {
                let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - c(i, j)) / eps));
                g[j] = eps * (log_b[j] - lse);
            }
            fill_plan(&mut plan, &f, &g, &rows, &cols, n2, eps, &c);
            let violation = marginal_violation(&plan, a, b, n1, n2);
            if !violation.is_finite() {
                return Err(Error::Numerical(
                    "Sinkhorn produced non-finite values; check epsilon and costs".into(),
                ));
            }
            if violation <= tol {
                converged = true;
                break;
            }
        }
        if !last && iterations >= cfg.max_iterations {
            // budget exhausted before reaching the target epsilon
            fill_plan(&mut plan, &f, &g, &rows, &cols, n2, stages[stages.len() - 1], &c);
            converged = false;
            break;
        }
    }
    Ok(SinkhornOutput {
        plan,
        iterations,
        converged,
    })
}

#[allow(clippy::too_many_arguments)]
fn fill_plan(
    plan: &mut [f64],
    f: &[f64],
    g: &[f64],
    rows: &[usize],
    cols: &[usize],
    n2: usize,
    eps: f64,
    c: &impl Fn(usize, usize) -> f64,
) {
    for &i in rows {
        for &j in cols {
            plan[i * n2 + j] = ((f[i] + g[j] - c(i, j)) / eps).exp();
        }
    }
}

fn marginal_violation(plan: &[f64], a: &[f64], b: &[f64], n1: usize, n2: usize) -> f64 {
    let mut col_sums = vec![0.0; n2];
    let mut total = 0.0;
    for i in 0..n1 {
        let row = &plan[i * n2..(i + 1) * n2];
        let mut s = 0.0;
        for (acc, v) in col_sums.iter_mut().zip(row) {
            *acc += v;
            s += v;
        }
        total += (s - a[i]).abs();
    }
    total + col_sums.iter().zip(b).map(|(s, t)| (s - t).abs()).sum::<f64>()
}
