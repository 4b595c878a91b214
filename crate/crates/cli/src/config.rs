//! The TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use melcot::bench::AblationConfig;
use melcot::data::SyntheticSpec;
use melcot::lcot::LcotTrainConfig;
use melcot::me::MeBackend;
use melcot::ot::SolverConfig;
use melcot::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Labelled CSV; when absent the `synthetic` section is generated in memory.
    pub csv: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcotSection {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub unroll_iterations: usize,
    pub batch_size: Option<usize>,
}

impl Default for LcotSection {
    fn default() -> Self {
        let d = LcotTrainConfig::default();
        Self {
            hidden_dim: d.hidden_dim,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            unroll_iterations: d.unroll_iterations,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Fraction of samples used for training; 1.0 disables the split.
    pub ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { ratio: 0.8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnownSection {
    pub row_marginals: Option<PathBuf>,
    pub col_marginals: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the synthetic generator, the split, the ME block and LCOT.
    pub seed: u64,
    pub data: DataSection,
    pub me: MeBackend,
    pub lcot: LcotSection,
    pub solver: SolverConfig,
    pub split: SplitSection,
    pub known: KnownSection,
    pub ablation: AblationConfig,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every seeded component.
    pub fn apply_seed(&mut self) {
        self.data.synthetic.seed = self.seed;
        if let MeBackend::RandomForest(c) = &mut self.me {
            c.seed = self.seed;
        }
    }

    pub fn lcot_config(&self) -> LcotTrainConfig {
        LcotTrainConfig {
            solver: self.solver.clone(),
            unroll_iterations: self.lcot.unroll_iterations,
            epochs: self.lcot.epochs,
            batch_size: self.lcot.batch_size,
            seed: self.seed,
            hidden_dim: self.lcot.hidden_dim,
            learning_rate: self.lcot.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.csv.is_none() {
            self.data.synthetic.validate()?;
        }
        self.me.validate()?;
        self.lcot_config().validate()?;
        if !(self.split.ratio > 0.0 && self.split.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "split ratio must lie in (0, 1], got {}",
                self.split.ratio
            )));
        }
        if !(self.ablation.mass_fraction > 0.0 && self.ablation.mass_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "ablation mass_fraction must lie in (0, 1], got {}",
                self.ablation.mass_fraction
            )));
        }
        Ok(())
    }
}

/// Reads a marginal vector: numbers separated by commas, whitespace or
/// newlines. A first line that is not numeric is treated as a header.
pub fn read_marginal_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parse_line = |line: &str| -> Option<Vec<f64>> {
        line.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().ok())
            .collect()
    };
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        match parse_line(line) {
            Some(v) => values.extend(v),
            None if k == 0 => continue,
            None => {
                return Err(Error::Parse {
                    row: k + 1,
                    column: String::new(),
                    message: format!("{}: `{line}` is not a list of numbers", path.display()),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Schema(format!("{}: no marginal values", path.display())));
    }
    Ok(values)
}
