use melcot::ot::{solve_lp, solve_lp_partial, solve_sinkhorn, SolverConfig, TransportProblem};
use melcot::Matrix;
use proptest::prelude::*;

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn problem_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Matrix)> {
    (2usize..=6, 2usize..=6).prop_flat_map(|(n1, n2)| {
        (
            prop::collection::vec(0.05f64..1.0, n1),
            prop::collection::vec(0.05f64..1.0, n2),
            prop::collection::vec(0.0f64..3.0, n1 * n2),
        )
            .prop_map(move |(a, b, c)| {
                (normalized(a), normalized(b), Matrix::from_vec(n1, n2, c).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_by_two_lp_matches_closed_form(
        a0 in 0.0f64..=1.0,
        b0 in 0.0f64..=1.0,
        c in prop::collection::vec(0.0f64..5.0, 4),
    ) {
        // one free variable t = X[0][0] on [max(0, a0 + b0 - 1), min(a0, b0)];
        // the objective is linear in t, so an endpoint is optimal
        let cost = Matrix::from_vec(2, 2, c.clone()).unwrap();
        let obj = |t: f64| {
            c[0] * t + c[1] * (a0 - t) + c[2] * (b0 - t) + c[3] * (1.0 - a0 - b0 + t)
        };
        let lo = (a0 + b0 - 1.0).max(0.0);
        let hi = a0.min(b0);
        let expected = obj(lo).min(obj(hi));
        let p = TransportProblem::balanced(vec![a0, 1.0 - a0], vec![b0, 1.0 - b0], cost).unwrap();
        let got = solve_lp(&p).unwrap().objective;
        prop_assert!((got - expected).abs() <= 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn lp_is_no_worse_than_any_feasible_plan((a, b, c) in problem_strategy()) {
        let p = TransportProblem::balanced(a.clone(), b.clone(), c.clone()).unwrap();
        let lp = solve_lp(&p).unwrap().objective;
        let product = Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j]);
        prop_assert!(lp <= c.dot(&product) + 1e-12);
        let sinkhorn = solve_sinkhorn(&p, &SolverConfig::default()).unwrap().plan;
        // the Sinkhorn plan is feasible only to within gamma in L1
        prop_assert!(lp <= c.dot(&sinkhorn) + 5e-5 * c.max());
    }

    #[test]
    fn row_permutation_permutes_the_plan((a, b, c) in problem_strategy(), shift in 1usize..6) {
        let n1 = a.len();
        let perm: Vec<usize> = (0..n1).map(|i| (i + shift) % n1).collect();
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pc = Matrix::from_fn(n1, b.len(), |i, j| c.get(perm[i], j));
        let cfg = SolverConfig::default();
        let x = solve_sinkhorn(&TransportProblem::balanced(a, b.clone(), c).unwrap(), &cfg).unwrap();
        let px = solve_sinkhorn(&TransportProblem::balanced(pa, b, pc).unwrap(), &cfg).unwrap();
        for i in 0..n1 {
            for j in 0..x.plan.cols() {
                prop_assert!((px.plan.get(i, j) - x.plan.get(perm[i], j)).abs() <= 1e-9);
            }
        }
        prop_assert!((px.objective - x.objective).abs() <= 1e-9);
    }

    #[test]
    fn scaling_cost_and_epsilon_together_leaves_plan((a, b, c) in problem_strategy(), k in 0.5f64..4.0) {
        let base = SolverConfig::default();
        let scaled_cfg = SolverConfig { epsilon: base.epsilon * k, ..base.clone() };
        let kc = c.scaled(k);
        let x = solve_sinkhorn(&TransportProblem::balanced(a.clone(), b.clone(), c).unwrap(), &base).unwrap();
        let y = solve_sinkhorn(&TransportProblem::balanced(a, b, kc).unwrap(), &scaled_cfg).unwrap();
        prop_assert_eq!(x.iterations_used, y.iterations_used);
        for (p, q) in x.plan.as_slice().iter().zip(y.plan.as_slice()) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn partial_lp_objective_grows_with_mass(
        (a, b, c) in problem_strategy(),
        s1 in 0.05f64..1.0,
        s2 in 0.05f64..1.0,
    ) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let p = TransportProblem::balanced(a, b, c).unwrap();
        let f_lo = solve_lp_partial(&p.with_mass_fraction(lo).unwrap()).unwrap().objective;
        let f_hi = solve_lp_partial(&p.with_mass_fraction(hi).unwrap()).unwrap().objective;
        prop_assert!(f_lo <= f_hi + 1e-9, "s {lo} -> {f_lo}, s {hi} -> {f_hi}");
    }
}
