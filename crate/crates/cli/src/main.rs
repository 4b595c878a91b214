mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use melcot::bench::run_ablation;
use melcot::data::{fingerprint, generate_synthetic, load_csv_inferred, save_csv, split, Dataset};
use melcot::me::{me_mse, Regressor};
use melcot::ot::Backend;
use melcot::pipeline::{
    train, write_reports_csv, write_reports_jsonl, KnownMarginals, MeanBaseline, TrainedModel,
};
use melcot::{marginals_of, Error, Result, Shapes};

use config::{read_marginal_file, RunConfig};

#[derive(Parser)]
#[command(name = "melcot", version, about = "Matrix-valued regression with learnable-cost optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic teacher dataset as CSV.
    GenSynth(Common),
    /// Train a model and write it as JSON.
    Train {
        #[command(flatten)]
        common: Common,
        /// Labelled dataset CSV; overrides `data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict target matrices for every row of an input CSV.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV with `id` and `in_r*_c*` columns; target columns are ignored.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Score a model on labelled data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Part of the configured split to score.
        #[arg(long, value_enum, default_value_t = Subset::Test)]
        subset: Subset,
        /// Use ground-truth marginals instead of the ME block.
        #[arg(long)]
        oracle_marginals: bool,
    },
    /// Compare the four OT backends on one dataset.
    AblateOt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    solver: Option<Backend>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    mass_fraction: Option<f64>,
    /// File with one known row marginal, used for every sample.
    #[arg(long)]
    known_row_marginals: Option<PathBuf>,
    /// File with one known column marginal, used for every sample.
    #[arg(long)]
    known_col_marginals: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    Train,
    Test,
    All,
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    /// Loads the config file, applies flag overrides and validates.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        if let Some(b) = self.solver {
            cfg.solver.backend = b;
        }
        if let Some(v) = self.epsilon {
            cfg.solver.epsilon = v;
        }
        if let Some(v) = self.tol {
            cfg.solver.tolerance = v;
        }
        if let Some(v) = self.max_iter {
            cfg.solver.max_iterations = v;
        }
        if let Some(v) = self.mass_fraction {
            cfg.solver.mass_fraction = v;
            cfg.ablation.mass_fraction = v;
        }
        if let Some(p) = &self.known_row_marginals {
            cfg.known.row_marginals = Some(p.clone());
        }
        if let Some(p) = &self.known_col_marginals {
            cfg.known.col_marginals = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn solver_overridden(&self) -> bool {
        self.solver.is_some()
            || self.epsilon.is_some()
            || self.tol.is_some()
            || self.max_iter.is_some()
            || self.mass_fraction.is_some()
    }
}

fn known_marginals(cfg: &RunConfig) -> Result<KnownMarginals> {
    Ok(KnownMarginals {
        row: cfg.known.row_marginals.as_deref().map(read_marginal_file).transpose()?,
        col: cfg.known.col_marginals.as_deref().map(read_marginal_file).transpose()?,
    })
}

fn load_data(cfg: &RunConfig, flag: Option<&Path>) -> Result<Dataset> {
    match flag.or(cfg.data.csv.as_deref()) {
        Some(path) => {
            let (data, schema) = load_csv_inferred(path)?;
            if !schema.has_targets {
                return Err(Error::Schema(format!(
                    "{} has no target columns",
                    path.display()
                )));
            }
            Ok(data)
        }
        None => generate_synthetic(&cfg.data.synthetic),
    }
}

fn split_parts(cfg: &RunConfig, data: Dataset) -> Result<(Dataset, Dataset)> {
    if cfg.split.ratio >= 1.0 {
        Ok((data.clone(), data))
    } else {
        split(&data, cfg.split.ratio, cfg.seed)
    }
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_model_shapes(model: &TrainedModel, data: &Shapes, labelled: bool) -> Result<()> {
    let m = model.shapes;
    let inputs_ok = (m.in_rows, m.in_cols) == (data.in_rows, data.in_cols);
    let outputs_ok = !labelled || (m.out_rows, m.out_cols) == (data.out_rows, data.out_cols);
    if inputs_ok && outputs_ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!("model shapes {m} but data shapes {data}")))
    }
}

fn cmd_gen_synth(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let out = common
        .out
        .clone()
        .or(cfg.output.dataset.clone())
        .unwrap_or_else(|| PathBuf::from("synthetic.csv"));
    let data = generate_synthetic(&cfg.data.synthetic)?;
    let schema = save_csv(&out, &data)?;
    println!("wrote {} samples to {}", data.len(), out.display());
    println!("shapes {}", schema.shapes);
    println!("fingerprint {}", fingerprint(&data));
    Ok(())
}

fn cmd_train(common: &Common, data_path: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    let known = known_marginals(&cfg)?;
    let out = common
        .out
        .clone()
        .or(cfg.output.model.clone())
        .unwrap_or_else(|| PathBuf::from("model.json"));
    let data = load_data(&cfg, data_path)?;
    let (train_set, _) = split_parts(&cfg, data)?;
    log::info!("training on {} samples", train_set.len());
    let model = train(&train_set, &cfg.me, &cfg.lcot_config(), &known)?;
    model.save(&out)?;

    println!("model written to {}", out.display());
    for (axis, m, rows) in [("row", &model.me_row, true), ("col", &model.me_col, false)] {
        match m.regressor() {
            Some(r) => {
                let mut total = 0.0;
                for s in &train_set {
                    let truth = marginals_of(s.target()?)?;
                    let truth = if rows { truth.row } else { truth.col };
                    total += me_mse(&r.predict(s.input.as_slice())?, &truth)?;
                }
                println!("ME {axis} training MSE {:.6e}", total / train_set.len() as f64);
            }
            None => println!("ME {axis}: known marginal, no regressor trained"),
        }
    }
    let trace = &model.lcot_loss_trace;
    let tail = trace.len().saturating_sub(5);
    if let Some(first) = trace.first() {
        println!("LCOT loss epoch 0: {first:.6e}");
    }
    for (k, v) in trace.iter().enumerate().skip(tail) {
        println!("LCOT loss epoch {k}: {v:.6e}");
    }
    Ok(())
}

fn load_model(common: &Common, cfg: &RunConfig, path: &Path) -> Result<TrainedModel> {
    let mut model = TrainedModel::load(path)?;
    if common.solver_overridden() {
        model.solver = cfg.solver.clone();
    }
    Ok(model)
}

fn cmd_infer(common: &Common, model_path: &Path, input: &Path, format: Format) -> Result<()> {
    let cfg = common.resolve()?;
    let known = known_marginals(&cfg)?;
    let model = load_model(common, &cfg, model_path)?;
    known.validate(&model.shapes)?;
    let (data, schema) = load_csv_inferred(input)?;
    check_model_shapes(&model, &schema.shapes, false)?;
    let reports = data
        .iter()
        .map(|s| {
            let mut r = model.infer_with(&s.input, &known)?;
            r.id = s.id.clone();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let out_path = common.out.as_deref().or(cfg.output.predictions.as_deref());
    let w = output_writer(out_path)?;
    match format {
        Format::Csv => write_reports_csv(&reports, w)?,
        Format::Jsonl => write_reports_jsonl(&reports, w)?,
    }
    log::info!("predicted {} samples", reports.len());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6e}"))
}

fn cmd_eval(
    common: &Common,
    model_path: &Path,
    data_path: Option<&Path>,
    subset: Subset,
    oracle: bool,
) -> Result<()> {
    let cfg = common.resolve()?;
    let model = load_model(common, &cfg, model_path)?;
    let data = load_data(&cfg, data_path)?;
    check_model_shapes(&model, &Shapes::of_dataset(&data)?, true)?;
    let (train_set, test_set) = split_parts(&cfg, data.clone())?;
    let scored = match subset {
        Subset::Train => train_set.clone(),
        Subset::Test => test_set,
        Subset::All => data,
    };
    let eval = model.evaluate(&scored, oracle)?;
    let baseline = MeanBaseline::fit(&train_set)?.evaluate(&scored)?;

    let m = &eval.metrics;
    let t = &eval.timing.median;
    println!("samples          {}", m.n_samples);
    println!("marginals        {}", if oracle { "oracle" } else { "model" });
    println!("rmse             {:.6e}", m.rmse);
    println!("rse              {}", fmt_opt(m.rse));
    println!("normalized rmse  {}", fmt_opt(m.normalized_rmse));
    println!("baseline rmse    {:.6e}", baseline.rmse);
    println!("baseline rse     {}", fmt_opt(baseline.rse));
    println!(
        "median ms        me {:.4}  cost {:.4}  ot {:.4}  total {:.4}",
        t.me_ms, t.cost_ms, t.ot_ms, t.total_ms
    );
    if let Some(p) = common.out.as_deref().or(cfg.output.report.as_deref()) {
        let text = serde_json::to_string_pretty(&eval.metrics).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(p, text + "\n").map_err(|e| io_err(p, e))?;
        println!("metrics written to {}", p.display());
    }
    if let Some(p) = cfg.output.predictions.as_deref() {
        let w = output_writer(Some(p))?;
        write_reports_jsonl(&eval.reports, w)?;
    }
    Ok(())
}

fn cmd_ablate(common: &Common, data_path: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    let data = load_data(&cfg, data_path)?;
    let (train_set, test_set) = split_parts(&cfg, data)?;
    let report = run_ablation(&train_set, &test_set, &cfg.me, &cfg.lcot_config(), &cfg.ablation)?;
    print!("{}", report.to_table());
    if let Some(p) = common.out.as_deref().or(cfg.output.report.as_deref()) {
        std::fs::write(p, report.to_csv()).map_err(|e| io_err(p, e))?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(c) => cmd_gen_synth(c),
        Command::Train { common, data } => cmd_train(common, data.as_deref()),
        Command::Infer {
            common,
            model,
            input,
            format,
        } => cmd_infer(common, model, input, *format),
        Command::Eval {
            common,
            model,
            data,
            subset,
            oracle_marginals,
        } => cmd_eval(common, model, data.as_deref(), *subset, *oracle_marginals),
        Command::AblateOt { common, data } => cmd_ablate(common, data.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
