//! OT-variant ablation: one MELCOT per backend, trained and scored with
//! identical data and seeds.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcot::LcotTrainConfig;
use crate::matrix::MatrixSample;
use crate::me::MeBackend;
use crate::ot::Backend;
use crate::pipeline::{train, KnownMarginals};

/// Printed under every ablation table.
pub const RSE_DEFINITION: &str =
    "RSE = sum((pred - truth)^2) / sum((truth - mean(truth))^2), pooled over all entries of all test samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub backends: Vec<Backend>,
    /// Mass fraction used by the partial backends.
    pub mass_fraction: f64,
    /// Score with ground-truth marginals instead of the ME block.
    pub oracle_marginals: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            backends: Backend::ALL.to_vec(),
            mass_fraction: 0.9,
            oracle_marginals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub backend: Backend,
    /// LCOT training wall-clock per epoch, seconds.
    pub train_s_per_iter: f64,
    /// Mean inference wall-clock per test sample, seconds.
    pub infer_s: f64,
    pub rmse: f64,
    pub rse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mass_fraction: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, backend: Backend) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.backend == backend)
    }

    pub const CSV_HEADER: &'static str = "backend,train_s_per_iter,infer_s,rmse";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.backend.label(),
                r.train_s_per_iter,
                r.infer_s,
                r.rmse
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>18} {:>12} {:>12}\n",
            "backend", "train_s_per_iter", "infer_s", "rmse"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>18.6} {:>12.6} {:>12.6}",
                r.backend.label(),
                r.train_s_per_iter,
                r.infer_s,
                r.rmse
            );
        }
        let _ = writeln!(out, "partial backends use mass_fraction = {}", self.mass_fraction);
        let _ = writeln!(out, "train_s_per_iter is LCOT training time per epoch");
        for r in &self.rows {
            match r.rse {
                Some(v) => {
                    let _ = writeln!(out, "{} RSE = {v:.6}", r.backend.label());
                }
                None => {
                    let _ = writeln!(out, "{} RSE undefined", r.backend.label());
                }
            }
        }
        let _ = writeln!(out, "{RSE_DEFINITION}");
        out
    }
}

/// Trains on `train_set` and scores on `test_set` once per backend.
pub fn run_ablation(
    train_set: &[MatrixSample],
    test_set: &[MatrixSample],
    me: &MeBackend,
    lcot: &LcotTrainConfig,
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    if cfg.backends.is_empty() {
        return Err(Error::Config("ablation needs at least one backend".into()));
    }
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(cfg.backends.len());
    for &backend in &cfg.backends {
        let mut run_cfg = lcot.clone();
        run_cfg.solver.backend = backend;
        run_cfg.solver.mass_fraction = cfg.mass_fraction;
        run_cfg.validate()?;

        let t = Instant::now();
        let model = train(train_set, me, &run_cfg, &KnownMarginals::default())?;
        let train_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let eval = model.evaluate(test_set, cfg.oracle_marginals)?;
        let infer_total = t.elapsed().as_secs_f64();
        // evaluate runs one untimed warm-up sample; exclude it from the mean
        let infer_s = infer_total / (test_set.len() + 1) as f64;

        log::info!(
            "{}: rmse {:.6e}, {:.3}s training",
            backend.label(),
            eval.metrics.rmse,
            train_s
        );
        rows.push(AblationRow {
            backend,
            train_s_per_iter: train_s / run_cfg.epochs.max(1) as f64,
            infer_s,
            rmse: eval.metrics.rmse,
            rse: eval.metrics.rse,
        });
    }
    Ok(AblationReport {
        mass_fraction: cfg.mass_fraction,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SyntheticSpec};
    use crate::me::RandomForestConfig;

    fn setup() -> (Vec<MatrixSample>, Vec<MatrixSample>, MeBackend, LcotTrainConfig) {
        let data = generate_synthetic(&SyntheticSpec {
            in_rows: 2,
            in_cols: 2,
            out_rows: 2,
            out_cols: 3,
            n_samples: 20,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let (tr, te) = split(&data, 0.8, 0).unwrap();
        let me = MeBackend::RandomForest(RandomForestConfig {
            n_trees: 5,
            ..Default::default()
        });
        let lcot = LcotTrainConfig {
            epochs: 3,
            hidden_dim: 4,
            ..Default::default()
        };
        (tr, te, me, lcot)
    }

    #[test]
    fn report_has_every_cell() {
        let (tr, te, me, lcot) = setup();
        let r = run_ablation(&tr, &te, &me, &lcot, &AblationConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 4);
        for row in &r.rows {
            assert!(row.train_s_per_iter >= 0.0 && row.infer_s >= 0.0 && row.rmse >= 0.0);
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "backend,train_s_per_iter,infer_s,rmse");
        assert_eq!(csv.lines().count(), 5);
        assert!(r.to_table().contains(RSE_DEFINITION));
    }

    #[test]
    fn full_mass_partial_lp_matches_lp() {
        let (tr, te, me, lcot) = setup();
        let cfg = AblationConfig {
            backends: vec![Backend::Lpot, Backend::Lppot],
            mass_fraction: 1.0,
            oracle_marginals: false,
        };
        let r = run_ablation(&tr, &te, &me, &lcot, &cfg).unwrap();
        let a = r.row(Backend::Lpot).unwrap().rmse;
        let b = r.row(Backend::Lppot).unwrap().rmse;
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn rejects_empty_backend_list() {
        let (tr, te, me, lcot) = setup();
        let cfg = AblationConfig {
            backends: vec![],
            ..Default::default()
        };
        assert!(run_ablation(&tr, &te, &me, &lcot, &cfg).is_err());
    }
}
