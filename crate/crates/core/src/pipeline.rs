//! End-to-end training and inference: marginal estimation, cost prediction
//! and the OT solve, bundled into a serializable model.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::fingerprint;
use crate::error::{Error, Result};
use crate::lcot::{cost_forward, lcot_train, CostNetwork, LcotTrainConfig, TrainingExample};
use crate::matrix::{marginals_of, MarginalPair, Matrix, MatrixSample, Shapes};
use crate::me::{fit_axis, reconcile_predictions, MeBackend, Regressor, VectorRegressor};
use crate::metrics::MetricSummary;
use crate::ot::{solve, validate_plan, FeasibilityReport, SolverConfig, TransportProblem};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Where one axis' marginal comes from at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalModel {
    Regressor(VectorRegressor),
    /// A fixed marginal in target units, used for every sample.
    Known { values: Vec<f64> },
}

impl MarginalModel {
    pub fn regressor(&self) -> Option<&VectorRegressor> {
        match self {
            MarginalModel::Regressor(r) => Some(r),
            MarginalModel::Known { .. } => None,
        }
    }
}

/// Marginals supplied up front instead of being estimated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnownMarginals {
    pub row: Option<Vec<f64>>,
    pub col: Option<Vec<f64>>,
}

fn check_known(values: &[f64], expected: usize, axis: &str) -> Result<()> {
    if values.len() != expected {
        return Err(Error::Dimension(format!(
            "known {axis} marginal has length {}, target needs {expected}",
            values.len()
        )));
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    if values.iter().any(|v| *v < 0.0) || values.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateMarginal(format!(
            "known {axis} marginal must be non-negative with positive sum"
        )));
    }
    Ok(())
}

impl KnownMarginals {
    pub fn validate(&self, shapes: &Shapes) -> Result<()> {
        if let Some(r) = &self.row {
            check_known(r, shapes.out_rows, "row")?;
        }
        if let Some(c) = &self.col {
            check_known(c, shapes.out_cols, "column")?;
        }
        Ok(())
    }
}

/// A trained MELCOT model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub crate_version: String,
    pub shapes: Shapes,
    pub me_row: MarginalModel,
    pub me_col: MarginalModel,
    pub cost_net: CostNetwork,
    pub solver: SolverConfig,
    /// Mass assigned to samples whose predicted marginals are degenerate.
    pub mean_train_mass: f64,
    pub dataset_fingerprint: String,
    pub me_backend: MeBackend,
    pub lcot: LcotTrainConfig,
    pub lcot_loss_trace: Vec<f64>,
}

/// Trains the ME block (skipping known axes) and the LCOT block
/// independently on the same dataset.
pub fn train(
    dataset: &[MatrixSample],
    me: &MeBackend,
    lcot: &LcotTrainConfig,
    known: &KnownMarginals,
) -> Result<TrainedModel> {
    me.validate()?;
    lcot.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shapes = Shapes::of_dataset(dataset)?;
    known.validate(&shapes)?;

    let me_row = match &known.row {
        Some(v) => MarginalModel::Known { values: v.clone() },
        None => MarginalModel::Regressor(fit_axis(dataset, me, true)?),
    };
    let me_col = match &known.col {
        Some(v) => MarginalModel::Known { values: v.clone() },
        None => MarginalModel::Regressor(fit_axis(dataset, me, false)?),
    };

    let mut examples = Vec::with_capacity(dataset.len());
    let mut total_mass = 0.0;
    for s in dataset {
        let target = s.target()?.clone();
        total_mass += target.sum();
        if let Some(ex) = TrainingExample::from_target(s.input.clone(), target)? {
            examples.push(ex);
        } else {
            log::warn!("sample `{}` has an all-zero target; skipped for LCOT training", s.id);
        }
    }
    if examples.is_empty() {
        return Err(Error::DegenerateMarginal(
            "every training target is all-zero".into(),
        ));
    }
    let out = lcot_train(shapes, &examples, lcot)?;
    if let Some(last) = out.loss_trace.last() {
        log::info!(
            "lcot training: loss {:.6e} -> {last:.6e} over {} epochs",
            out.loss_trace[0],
            out.loss_trace.len()
        );
    }
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        shapes,
        me_row,
        me_col,
        cost_net: out.network,
        solver: lcot.solver.clone(),
        mean_train_mass: total_mass / dataset.len() as f64,
        dataset_fingerprint: fingerprint(dataset),
        me_backend: me.clone(),
        lcot: lcot.clone(),
        lcot_loss_trace: out.loss_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalOrigin {
    Predicted,
    Known,
    Oracle,
    /// Predictions were degenerate; uniform marginals were used instead.
    Fallback,
}

impl MarginalOrigin {
    pub fn label(self) -> &'static str {
        match self {
            MarginalOrigin::Predicted => "predicted",
            MarginalOrigin::Known => "known",
            MarginalOrigin::Oracle => "oracle",
            MarginalOrigin::Fallback => "fallback",
        }
    }
}

/// Wall-clock time per inference stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub me_ms: f64,
    pub cost_ms: f64,
    pub ot_ms: f64,
    pub total_ms: f64,
}

/// The result of one inference call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub id: String,
    pub prediction: Matrix,
    pub scale: f64,
    pub row_origin: MarginalOrigin,
    pub col_origin: MarginalOrigin,
    /// Feasibility of the unit-mass plan against the marginals it was solved for.
    pub feasibility: FeasibilityReport,
    pub converged: bool,
    pub timing: StageTiming,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

enum Axis<'a> {
    Fixed(&'a [f64], MarginalOrigin),
    Model(&'a VectorRegressor),
}

impl TrainedModel {
    fn axis<'a>(model: &'a MarginalModel, over: Option<&'a [f64]>, origin: MarginalOrigin) -> Axis<'a> {
        match (over, model) {
            (Some(v), _) => Axis::Fixed(v, origin),
            (None, MarginalModel::Known { values }) => Axis::Fixed(values, MarginalOrigin::Known),
            (None, MarginalModel::Regressor(r)) => Axis::Model(r),
        }
    }

    /// Resolves both marginals to a unit-mass pair and scale. A known axis
    /// fixes the mass when the other axis is predicted.
    fn resolve_marginals(
        &self,
        input: &Matrix,
        row: Axis<'_>,
        col: Axis<'_>,
    ) -> Result<(MarginalPair, f64, MarginalOrigin, MarginalOrigin)> {
        let x = input.as_slice();
        let (row_v, row_o) = match row {
            Axis::Fixed(v, o) => (v.to_vec(), o),
            Axis::Model(r) => (r.predict(x)?, MarginalOrigin::Predicted),
        };
        let (col_v, col_o) = match col {
            Axis::Fixed(v, o) => (v.to_vec(), o),
            Axis::Model(r) => (r.predict(x)?, MarginalOrigin::Predicted),
        };
        let row_fixed = row_o != MarginalOrigin::Predicted;
        let col_fixed = col_o != MarginalOrigin::Predicted;
        let resolved = reconcile_predictions(row_v.clone(), col_v.clone()).map(|(pair, scale)| {
            let scale = match (row_fixed, col_fixed) {
                (true, false) => row_v.iter().sum(),
                (false, true) => col_v.iter().sum(),
                _ => scale,
            };
            (pair, scale)
        });
        match resolved {
            Ok((pair, scale)) => Ok((pair, scale, row_o, col_o)),
            Err(Error::DegenerateMarginal(msg)) if !(row_fixed && col_fixed) => {
                log::warn!("degenerate predicted marginals ({msg}); using uniform fallback");
                let (m1, m2) = (self.shapes.out_rows, self.shapes.out_cols);
                let pair = MarginalPair::new(vec![1.0 / m1 as f64; m1], vec![1.0 / m2 as f64; m2])?;
                let fb = |fixed: bool, o| if fixed { o } else { MarginalOrigin::Fallback };
                Ok((
                    pair,
                    self.mean_train_mass,
                    fb(row_fixed, row_o),
                    fb(col_fixed, col_o),
                ))
            }
            Err(e) => Err(e),
        }
    }

    fn run(&self, id: &str, input: &Matrix, row: Axis<'_>, col: Axis<'_>) -> Result<PredictionReport> {
        if input.shape() != (self.shapes.in_rows, self.shapes.in_cols) {
            return Err(Error::Dimension(format!(
                "input is {}x{}, model expects {}x{}",
                input.rows(),
                input.cols(),
                self.shapes.in_rows,
                self.shapes.in_cols
            )));
        }
        let start = Instant::now();
        let t = Instant::now();
        let (pair, scale, row_origin, col_origin) = self.resolve_marginals(input, row, col)?;
        let me_ms = ms(t);

        let t = Instant::now();
        let cost = cost_forward(&self.cost_net, input)?;
        let cost_ms = ms(t);

        let t = Instant::now();
        let problem = TransportProblem::new(
            pair.row,
            pair.col,
            cost,
            self.solver.effective_mass_fraction(),
        )?;
        let plan = solve(&problem, &self.solver)?;
        let ot_ms = ms(t);

        let feasibility = validate_plan(&plan, &problem)?;
        Ok(PredictionReport {
            id: id.to_string(),
            prediction: plan.plan.scaled(scale),
            scale,
            row_origin,
            col_origin,
            feasibility,
            converged: plan.converged,
            timing: StageTiming {
                me_ms,
                cost_ms,
                ot_ms,
                total_ms: ms(start),
            },
        })
    }

    /// Predicts a target matrix for one input.
    pub fn infer(&self, input: &Matrix) -> Result<PredictionReport> {
        self.infer_with(input, &KnownMarginals::default())
    }

    /// Like [`infer`](Self::infer), with per-call marginals overriding the
    /// model's own source on the axes that are given.
    pub fn infer_with(&self, input: &Matrix, known: &KnownMarginals) -> Result<PredictionReport> {
        known.validate(&self.shapes)?;
        let row = Self::axis(&self.me_row, known.row.as_deref(), MarginalOrigin::Known);
        let col = Self::axis(&self.me_col, known.col.as_deref(), MarginalOrigin::Known);
        self.run("", input, row, col)
    }

    /// Infers with the sample's ground-truth marginals on both axes.
    pub fn infer_with_oracle_marginals(&self, sample: &MatrixSample) -> Result<PredictionReport> {
        let m = marginals_of(sample.target()?)?;
        let row = Axis::Fixed(&m.row, MarginalOrigin::Oracle);
        let col = Axis::Fixed(&m.col, MarginalOrigin::Oracle);
        let mut r = self.run(&sample.id, &sample.input, row, col)?;
        r.id = sample.id.clone();
        Ok(r)
    }

    fn infer_sample(&self, sample: &MatrixSample, oracle: bool) -> Result<PredictionReport> {
        if oracle {
            self.infer_with_oracle_marginals(sample)
        } else {
            let mut r = self.infer(&sample.input)?;
            r.id = sample.id.clone();
            Ok(r)
        }
    }

    /// Runs inference over a dataset. Inputs-only datasets are allowed.
    pub fn predict_dataset(&self, dataset: &[MatrixSample]) -> Result<Vec<PredictionReport>> {
        dataset.iter().map(|s| self.infer_sample(s, false)).collect()
    }

    /// Scores the model on a labelled dataset. With `oracle`, the
    /// ground-truth marginals replace the ME block.
    pub fn evaluate(&self, dataset: &[MatrixSample], oracle: bool) -> Result<Evaluation> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        // warm-up, not timed
        self.infer_sample(&dataset[0], oracle)?;
        let reports = dataset
            .iter()
            .map(|s| self.infer_sample(s, oracle))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<Matrix> = reports.iter().map(|r| r.prediction.clone()).collect();
        let truths = dataset
            .iter()
            .map(|s| s.target().cloned())
            .collect::<Result<Vec<_>>>()?;
        let metrics = MetricSummary::compute(&preds, &truths)?;
        let timing = TimingSummary::median_of(&reports);
        Ok(Evaluation {
            metrics,
            timing,
            reports,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.solver.validate()?;
        if self.cost_net.shapes() != self.shapes {
            return Err(Error::Format(format!(
                "cost network shapes {} differ from model shapes {}",
                self.cost_net.shapes(),
                self.shapes
            )));
        }
        CostNetwork::from_params(
            self.shapes,
            self.cost_net.hidden_dim(),
            self.cost_net.params().to_vec(),
        )?;
        for (m, dim, axis) in [
            (&self.me_row, self.shapes.out_rows, "row"),
            (&self.me_col, self.shapes.out_cols, "column"),
        ] {
            match m {
                MarginalModel::Known { values } => check_known(values, dim, axis)?,
                MarginalModel::Regressor(r) => {
                    if r.input_dim() != self.shapes.input_len() || r.output_dim() != dim {
                        return Err(Error::Format(format!(
                            "{axis} regressor maps {} -> {}, model needs {} -> {dim}",
                            r.input_dim(),
                            r.output_dim(),
                            self.shapes.input_len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Median stage timings over a set of reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub median: StageTiming,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl TimingSummary {
    pub fn median_of(reports: &[PredictionReport]) -> Self {
        let col = |f: fn(&StageTiming) -> f64| median(reports.iter().map(|r| f(&r.timing)).collect());
        Self {
            median: StageTiming {
                me_ms: col(|t| t.me_ms),
                cost_ms: col(|t| t.cost_ms),
                ot_ms: col(|t| t.ot_ms),
                total_ms: col(|t| t.total_ms),
            },
        }
    }
}

/// Metrics, timing and per-sample reports of one evaluation run. Metrics
/// are kept apart from timing so that they are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricSummary,
    pub timing: TimingSummary,
    pub reports: Vec<PredictionReport>,
}

/// Writes reports as CSV: metadata columns followed by the flattened
/// prediction in `out_r{i}_c{j}` order.
pub fn write_reports_csv<W: std::io::Write>(reports: &[PredictionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let (rows, cols) = first.prediction.shape();
    let mut header: Vec<String> = [
        "id",
        "row_origin",
        "col_origin",
        "scale",
        "converged",
        "row_violation_l1",
        "col_violation_l1",
        "me_ms",
        "cost_ms",
        "ot_ms",
        "total_ms",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..rows {
        for j in 0..cols {
            header.push(format!("out_r{i}_c{j}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut rec = vec![
            r.id.clone(),
            r.row_origin.label().to_string(),
            r.col_origin.label().to_string(),
            r.scale.to_string(),
            r.converged.to_string(),
            r.feasibility.row_violation_l1.to_string(),
            r.feasibility.col_violation_l1.to_string(),
            r.timing.me_ms.to_string(),
            r.timing.cost_ms.to_string(),
            r.timing.ot_ms.to_string(),
            r.timing.total_ms.to_string(),
        ];
        rec.extend(r.prediction.as_slice().iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Writes one JSON object per report per line.
pub fn write_reports_jsonl<W: std::io::Write>(reports: &[PredictionReport], mut out: W) -> Result<()> {
    for r in reports {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Predicts the entrywise training-mean target for every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBaseline {
    pub mean: Matrix,
}

impl MeanBaseline {
    pub fn fit(dataset: &[MatrixSample]) -> Result<Self> {
        let first = dataset.first().ok_or(Error::EmptyDataset)?.target()?;
        let (r, c) = first.shape();
        let mut acc = vec![0.0; r * c];
        for s in dataset {
            let t = s.target()?;
            if t.shape() != (r, c) {
                return Err(Error::Dimension(format!(
                    "target of `{}` is {:?}, expected {:?}",
                    s.id,
                    t.shape(),
                    (r, c)
                )));
            }
            for (a, v) in acc.iter_mut().zip(t.as_slice()) {
                *a += v;
            }
        }
        let n = dataset.len() as f64;
        Ok(Self {
            mean: Matrix::from_vec(r, c, acc.into_iter().map(|v| v / n).collect())?,
        })
    }

    pub fn evaluate(&self, dataset: &[MatrixSample]) -> Result<MetricSummary> {
        let truths = dataset
            .iter()
            .map(|s| s.target().cloned())
            .collect::<Result<Vec<_>>>()?;
        let preds = vec![self.mean.clone(); truths.len()];
        MetricSummary::compute(&preds, &truths)
    }
}
