//! Optimal transport solvers: entropic and exact, full and partial mass.
//!
//! All solvers take a [`TransportProblem`] whose marginals are unit-mass
//! probability vectors and return a [`TransportPlan`].

mod network_simplex;
mod partial;
mod sinkhorn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use network_simplex::solve_lp;
pub use partial::{solve_lp_partial, solve_sinkhorn_partial};
pub use sinkhorn::solve_sinkhorn;

pub(crate) use partial::{augment, strip};
pub(crate) use sinkhorn::log_sum_exp;

/// Tolerance on `sum(marginal) == 1`.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// One of the four OT variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Entropic (Sinkhorn) OT.
    Eot,
    /// Entropic partial OT.
    Epot,
    /// Exact OT by network simplex.
    Lpot,
    /// Exact partial OT by network simplex.
    Lppot,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::Eot, Backend::Epot, Backend::Lpot, Backend::Lppot];

    pub fn is_partial(self) -> bool {
        matches!(self, Backend::Epot | Backend::Lppot)
    }

    pub fn is_entropic(self) -> bool {
        matches!(self, Backend::Eot | Backend::Epot)
    }

    pub fn label(self) -> &'static str {
        match self {
            Backend::Eot => "EOT",
            Backend::Epot => "EPOT",
            Backend::Lpot => "LPOT",
            Backend::Lppot => "LPPOT",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eot" => Ok(Backend::Eot),
            "epot" => Ok(Backend::Epot),
            "lpot" => Ok(Backend::Lpot),
            "lppot" => Ok(Backend::Lppot),
            other => Err(Error::Config(format!("unknown OT backend `{other}`"))),
        }
    }
}

/// Solver parameters. Defaults: `epsilon = 0.5`, `tolerance = 5e-5`,
/// `max_iterations = 1000`, backend EOT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// Stopping threshold on the summed L1 marginal violation.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub backend: Backend,
    /// Transported mass used when `backend` is a partial variant.
    pub mass_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            tolerance: 5e-5,
            max_iterations: 1000,
            backend: Backend::Eot,
            mass_fraction: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        check_mass_fraction(self.mass_fraction)
    }

    /// Mass fraction a problem should carry under this config's backend.
    pub fn effective_mass_fraction(&self) -> f64 {
        if self.backend.is_partial() {
            self.mass_fraction
        } else {
            1.0
        }
    }
}

fn check_mass_fraction(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!(
            "mass_fraction must lie in (0, 1], got {s}"
        )));
    }
    Ok(())
}

/// Unit-mass marginals, a non-negative cost matrix and the mass to ship.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    cost: Matrix,
    mass_fraction: f64,
}

impl TransportProblem {
    pub fn new(
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        cost: Matrix,
        mass_fraction: f64,
    ) -> Result<Self> {
        if cost.shape() != (row_marginal.len(), col_marginal.len()) {
            return Err(Error::Dimension(format!(
                "cost is {:?} but marginals have lengths {} and {}",
                cost.shape(),
                row_marginal.len(),
                col_marginal.len()
            )));
        }
        for (axis, m) in [("row", &row_marginal), ("column", &col_marginal)] {
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Infeasible(format!(
                    "{axis} marginal has negative or non-finite entries"
                )));
            }
            let sum: f64 = m.iter().sum();
            if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(Error::Infeasible(format!(
                    "{axis} marginal sums to {sum}, expected 1"
                )));
            }
        }
        if cost.min() < 0.0 {
            return Err(Error::Config(format!(
                "cost entries must be non-negative, found {}",
                cost.min()
            )));
        }
        check_mass_fraction(mass_fraction)?;
        Ok(Self {
            row_marginal,
            col_marginal,
            cost,
            mass_fraction,
        })
    }

    /// Full-mass problem.
    pub fn balanced(row_marginal: Vec<f64>, col_marginal: Vec<f64>, cost: Matrix) -> Result<Self> {
        Self::new(row_marginal, col_marginal, cost, 1.0)
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn mass_fraction(&self) -> f64 {
        self.mass_fraction
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cost.shape()
    }

    pub fn is_partial(&self) -> bool {
        self.mass_fraction < 1.0
    }

    pub fn with_mass_fraction(&self, mass_fraction: f64) -> Result<Self> {
        Self::new(
            self.row_marginal.clone(),
            self.col_marginal.clone(),
            self.cost.clone(),
            mass_fraction,
        )
    }
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// `<C, X>` with the problem's original cost.
    pub objective: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Dispatches to the backend named in `cfg`. The problem's own mass
/// fraction is used; it must be 1 for the full-mass backends.
pub fn solve(problem: &TransportProblem, cfg: &SolverConfig) -> Result<TransportPlan> {
    match cfg.backend {
        Backend::Eot => solve_sinkhorn(problem, cfg),
        Backend::Epot => solve_sinkhorn_partial(problem, cfg),
        Backend::Lpot => solve_lp(problem),
        Backend::Lppot => solve_lp_partial(problem),
    }
}

/// Marginal and sign violations of a plan against its problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `||X 1 - m1||_1`.
    pub row_violation_l1: f64,
    /// `||X^T 1 - m2||_1`.
    pub col_violation_l1: f64,
    /// Largest amount by which a row sum exceeds its marginal (0 if none).
    pub row_excess: f64,
    /// Largest amount by which a column sum exceeds its marginal.
    pub col_excess: f64,
    pub negative_entries: usize,
    pub min_entry: f64,
    pub mass: f64,
    /// `|sum(X) - s|`.
    pub mass_violation: f64,
}

impl FeasibilityReport {
    /// Feasibility for the equality-constrained set.
    pub fn is_feasible_full(&self, tol: f64) -> bool {
        self.negative_entries == 0 && self.row_violation_l1 + self.col_violation_l1 <= tol
    }

    /// Feasibility for the partial set: marginals as upper bounds, fixed mass.
    pub fn is_feasible_partial(&self, ineq_tol: f64, mass_tol: f64) -> bool {
        self.negative_entries == 0
            && self.row_excess <= ineq_tol
            && self.col_excess <= ineq_tol
            && self.mass_violation <= mass_tol
    }
}

pub fn validate_plan(plan: &TransportPlan, problem: &TransportProblem) -> Result<FeasibilityReport> {
    validate_matrix(&plan.plan, problem)
}

pub(crate) fn validate_matrix(plan: &Matrix, problem: &TransportProblem) -> Result<FeasibilityReport> {
    if plan.shape() != problem.shape() {
        return Err(Error::Dimension(format!(
            "plan is {:?}, problem is {:?}",
            plan.shape(),
            problem.shape()
        )));
    }
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let l1 = |sums: &[f64], target: &[f64]| -> f64 {
        sums.iter().zip(target).map(|(s, t)| (s - t).abs()).sum()
    };
    let excess = |sums: &[f64], target: &[f64]| -> f64 {
        sums.iter()
            .zip(target)
            .map(|(s, t)| (s - t).max(0.0))
            .fold(0.0, f64::max)
    };
    let mass = plan.sum();
    Ok(FeasibilityReport {
        row_violation_l1: l1(&rows, &problem.row_marginal),
        col_violation_l1: l1(&cols, &problem.col_marginal),
        row_excess: excess(&rows, &problem.row_marginal),
        col_excess: excess(&cols, &problem.col_marginal),
        negative_entries: plan.as_slice().iter().filter(|v| **v < 0.0).count(),
        min_entry: plan.min(),
        mass,
        mass_violation: (mass - problem.mass_fraction).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TransportProblem {
        TransportProblem::balanced(
            vec![0.7, 0.3],
            vec![0.4, 0.6],
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn problem_validation() {
        let c = Matrix::zeros(2, 2);
        assert!(matches!(
            TransportProblem::balanced(vec![0.5, 0.6], vec![0.5, 0.5], c.clone()),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            TransportProblem::balanced(vec![1.0], vec![0.5, 0.5], c.clone()),
            Err(Error::Dimension(_))
        ));
        let neg = Matrix::from_rows(&[vec![0.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert!(TransportProblem::balanced(vec![0.5, 0.5], vec![0.5, 0.5], neg).is_err());
        assert!(TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], c.clone(), 0.0).is_err());
        assert!(TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], c, 1.5).is_err());
    }

    #[test]
    fn lp_plan_reports_exact_feasibility() {
        let p = fixture();
        let plan = solve_lp(&p).unwrap();
        let r = validate_plan(&plan, &p).unwrap();
        assert!(r.row_violation_l1 <= 1e-9 && r.col_violation_l1 <= 1e-9);
        assert_eq!(r.negative_entries, 0);
    }

    #[test]
    fn sinkhorn_plan_within_gamma() {
        let p = fixture();
        let cfg = SolverConfig::default();
        let plan = solve_sinkhorn(&p, &cfg).unwrap();
        let r = validate_plan(&plan, &p).unwrap();
        assert!(r.row_violation_l1 + r.col_violation_l1 <= 5e-5);
        assert!(plan.converged);
    }

    #[test]
    fn corrupted_plan_flags_negativity() {
        let p = fixture();
        let mut plan = solve_lp(&p).unwrap();
        plan.plan = Matrix::from_rows(&[vec![0.5, 0.3], vec![-0.1, 0.3]]).unwrap();
        let r = validate_plan(&plan, &p).unwrap();
        assert_eq!(r.negative_entries, 1);
        assert_eq!(r.min_entry, -0.1);
        assert!(!r.is_feasible_full(1e-6));
    }

    #[test]
    fn backend_parsing() {
        for b in Backend::ALL {
            assert_eq!(b.label().parse::<Backend>().unwrap(), b);
        }
        assert!("simplex".parse::<Backend>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.epsilon = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
