//! Exact transportation solver: the network simplex method specialised to
//! the complete bipartite graph (rows as sources, columns as sinks).
//!
//! The basis is a spanning tree of `n1 + n2 - 1` cells. Entering and leaving
//! cells follow Bland's rule, so degenerate pivots cannot cycle.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{TransportPlan, TransportProblem, MARGINAL_SUM_TOL};

/// Largest denominator tried when looking for an exact rational grid.
const MAX_GRID_DENOMINATOR: u32 = 1000;

/// Exact OT as a min-cost flow.
pub fn solve_lp(problem: &TransportProblem) -> Result<TransportPlan> {
    if problem.is_partial() {
        return Err(Error::Config("full-mass LP requires mass_fraction = 1".into()));
    }
    let (n1, n2) = problem.shape();
    let (flow, pivots) = exact_transport(
        problem.row_marginal(),
        problem.col_marginal(),
        problem.cost().as_slice(),
        n1,
        n2,
    )?;
    let plan = Matrix::from_vec(n1, n2, flow)?;
    Ok(TransportPlan {
        objective: problem.cost().dot(&plan),
        plan,
        iterations_used: pivots,
        converged: true,
    })
}

/// Solves the balanced transportation problem. `cost` may contain `+inf`
/// for cells that must carry no flow. Returns the row-major flow and the
/// number of pivots.
pub(crate) fn exact_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    n1: usize,
    n2: usize,
) -> Result<(Vec<f64>, usize)> {
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if (total_supply - total_demand).abs() > MARGINAL_SUM_TOL * total_supply.max(1.0) {
        return Err(Error::Infeasible(format!(
            "supply {total_supply} differs from demand {total_demand}"
        )));
    }

    // Rational marginals on a common grid are solved in integer units, which
    // keeps every pivot exact.
    let grid = detect_grid(supply.iter().chain(demand));
    let (a, b) = match grid {
        Some(l) => (
            supply.iter().map(|v| (v * l).round()).collect::<Vec<_>>(),
            demand.iter().map(|v| (v * l).round()).collect::<Vec<_>>(),
        ),
        None => {
            // rebalance float drift onto the last demand so the tree closes
            let mut b = demand.to_vec();
            b[n2 - 1] += total_supply - total_demand;
            if b[n2 - 1] < 0.0 {
                b[n2 - 1] = 0.0;
            }
            (supply.to_vec(), b)
        }
    };
    if grid.is_some() && a.iter().sum::<f64>() != b.iter().sum::<f64>() {
        return Err(Error::Infeasible("integer supplies and demands differ".into()));
    }

    let mut simplex = Simplex::new(&a, &b, cost, n1, n2);
    let pivots = simplex.run()?;
    let mut flow = simplex.flow;
    for (k, x) in flow.iter_mut().enumerate() {
        if cost[k].is_infinite() {
            if *x > 1e-9 * total_supply.max(1.0) {
                return Err(Error::Infeasible(
                    "no feasible plan avoids the forbidden cells".into(),
                ));
            }
            *x = 0.0;
        }
        if let Some(l) = grid {
            *x /= l;
        }
    }
    Ok((flow, pivots))
}

fn detect_grid<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Option<f64> {
    (1..=MAX_GRID_DENOMINATOR).map(f64::from).find(|&l| {
        values.clone().all(|&v| {
            let k = (v * l).round();
            k / l == v
        })
    })
}

struct Simplex {
    n1: usize,
    n2: usize,
    cost: Vec<f64>,
    forbidden: Vec<bool>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    /// Basic cells, as row-major indices.
    basis: Vec<usize>,
    tol: f64,
}

impl Simplex {
    fn new(a: &[f64], b: &[f64], cost: &[f64], n1: usize, n2: usize) -> Self {
        let max_finite = cost
            .iter()
            .filter(|c| c.is_finite())
            .fold(0.0f64, |m, c| m.max(c.abs()));
        // Penalty exceeding any dual potential difference of the restricted problem.
        let big_m = 4.0 * (n1 + n2 + 1) as f64 * (max_finite + 1.0);
        let forbidden: Vec<bool> = cost.iter().map(|c| c.is_infinite()).collect();
        let cost = cost
            .iter()
            .map(|&c| if c.is_infinite() { big_m } else { c })
            .collect();

        // North-west corner start; exactly n1 + n2 - 1 cells, possibly degenerate.
        let mut flow = vec![0.0; n1 * n2];
        let mut basic = vec![false; n1 * n2];
        let mut basis = Vec::with_capacity(n1 + n2 - 1);
        let (mut ra, mut rb) = (a[0], b[0]);
        let (mut i, mut j) = (0, 0);
        loop {
            let k = i * n2 + j;
            let x = ra.min(rb);
            flow[k] = x;
            basic[k] = true;
            basis.push(k);
            if i == n1 - 1 && j == n2 - 1 {
                break;
            }
            if (ra <= rb && i < n1 - 1) || j == n2 - 1 {
                rb -= x;
                i += 1;
                ra = a[i];
            } else {
                ra -= x;
                j += 1;
                rb = b[j];
            }
        }
        debug_assert_eq!(basis.len(), n1 + n2 - 1);
        Self {
            n1,
            n2,
            cost,
            forbidden,
            flow,
            basic,
            basis,
            tol: 1e-11 * (1.0 + max_finite),
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // node ids: rows 0..n1, columns n1..n1+n2; edge payload is the cell index
        let mut adj = vec![Vec::new(); self.n1 + self.n2];
        for &k in &self.basis {
            let (i, j) = (k / self.n2, k % self.n2);
            adj[i].push((self.n1 + j, k));
            adj[self.n1 + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n1 + self.n2;
        let mut pot = vec![f64::NAN; n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    // u_i + v_j = c_ij on every basic cell
                    pot[next] = self.cost[k] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(self.n1);
        (pot, v)
    }

    /// Tree path from row node `from` to column node `to`, as cell indices
    /// listed from the column end.
    fn path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let n = self.n1 + self.n2;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(node) = queue.pop_front() {
            if node == to {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = to;
        while node != from {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            cells.push(k);
            node = prev;
        }
        cells
    }

    fn run(&mut self) -> Result<usize> {
        let cap = 1_000 + 50 * (self.n1 * self.n2).pow(2);
        for pivot in 0..cap {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let entering = (0..self.n1 * self.n2).find(|&k| {
                !self.basic[k]
                    && !self.forbidden[k]
                    && self.cost[k] - u[k / self.n2] - v[k % self.n2] < -self.tol
            });
            let Some(enter) = entering else {
                return Ok(pivot);
            };
            let (p, q) = (enter / self.n2, enter % self.n2);
            let cycle = self.path(&adj, p, self.n1 + q);
            // cycle[0] touches column q and loses flow; signs alternate from there
            let minus = cycle.iter().step_by(2);
            let theta = minus
                .clone()
                .map(|&k| self.flow[k])
                .fold(f64::INFINITY, f64::min);
            let leave = *minus
                .filter(|&&k| self.flow[k] == theta)
                .min()
                .expect("cycle has a decreasing cell");
            for (step, &k) in cycle.iter().enumerate() {
                if step % 2 == 0 {
                    self.flow[k] -= theta;
                } else {
                    self.flow[k] += theta;
                }
            }
            self.flow[enter] = theta;
            self.flow[leave] = 0.0;
            self.basic[leave] = false;
            self.basic[enter] = true;
            let slot = self
                .basis
                .iter()
                .position(|&k| k == leave)
                .expect("leaving cell is basic");
            self.basis[slot] = enter;
        }
        Err(Error::Numerical(format!(
            "network simplex exceeded {cap} pivots"
        )))
    }
}
