use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{marginals_of, normalize_marginals, MarginalPair, Matrix, Shapes};
use crate::ot::SolverConfig;

use super::{lcot_backward, lcot_forward, lcot_loss_grad, AdamState, CostNetwork};

/// LCOT training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcotTrainConfig {
    pub solver: SolverConfig,
    /// Cap on the Sinkhorn sweeps unrolled for backpropagation; the
    /// effective count is `min(solver.max_iterations, unroll_iterations)`.
    pub unroll_iterations: usize,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub hidden_dim: usize,
    pub learning_rate: f64,
}

impl Default for LcotTrainConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            unroll_iterations: 100,
            epochs: 200,
            batch_size: None,
            seed: 0,
            hidden_dim: 10,
            learning_rate: 1e-2,
        }
    }
}

impl LcotTrainConfig {
    pub fn unroll(&self) -> usize {
        self.solver.max_iterations.min(self.unroll_iterations)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.unroll_iterations == 0 {
            return Err(Error::Config("unroll_iterations must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One LCOT training pair with its unit-mass ground-truth marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: Matrix,
    pub target: Matrix,
    pub marginals: MarginalPair,
    pub scale: f64,
}

impl TrainingExample {
    /// Uses the target's own marginals. Returns `None` for an all-zero target.
    pub fn from_target(input: Matrix, target: Matrix) -> Result<Option<Self>> {
        let raw = marginals_of(&target)?;
        if raw.mass <= 0.0 {
            return Ok(None);
        }
        let (marginals, scale) = normalize_marginals(&raw)?;
        Ok(Some(Self {
            input,
            target,
            marginals,
            scale,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcotTrainOutput {
    pub network: CostNetwork,
    /// Mean per-sample Frobenius loss seen during each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mean per-sample Frobenius loss of `net` over `examples`.
pub fn dataset_loss(
    net: &CostNetwork,
    examples: &[TrainingExample],
    solver: &SolverConfig,
    iterations: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in examples {
        let (plan, _) = lcot_forward(net, &ex.input, &ex.marginals, solver, iterations)?;
        total += plan.plan.scaled(ex.scale).frobenius_distance(&ex.target)?;
    }
    Ok(total / examples.len() as f64)
}

/// Trains a fresh cost network with Adam.
pub fn lcot_train(
    shapes: Shapes,
    examples: &[TrainingExample],
    cfg: &LcotTrainConfig,
) -> Result<LcotTrainOutput> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = CostNetwork::glorot(shapes, cfg.hidden_dim, &mut rng)?;
    lcot_train_from(network, examples, cfg, &mut rng)
}

/// Continues training an existing network.
pub(crate) fn lcot_train_from(
    mut network: CostNetwork,
    examples: &[TrainingExample],
    cfg: &LcotTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LcotTrainOutput> {
    let iterations = cfg.unroll();
    let n = examples.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut adam = AdamState::new(network.params().len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; network.params().len()];
            for &idx in chunk {
                let ex = &examples[idx];
                let (plan, tape) =
                    lcot_forward(&network, &ex.input, &ex.marginals, &cfg.solver, iterations)?;
                let (loss, plan_grad) = lcot_loss_grad(&plan.plan, &ex.target, ex.scale)?;
                epoch_loss += loss;
                let g = lcot_backward(&network, &tape, &plan_grad);
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in epoch {epoch}; epsilon may be too small or the learning rate too high"
                )));
            }
            adam.step(network.params_mut(), &grad);
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {mean} in epoch {epoch}; epsilon may be too small or the learning rate too high"
            )));
        }
        log::debug!("lcot epoch {epoch}: loss {mean:.6e}");
        loss_trace.push(mean);
    }
    Ok(LcotTrainOutput {
        network,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_examples(seed: u64) -> (Shapes, Vec<TrainingExample>) {
        let shapes = Shapes::new(1, 3, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher = CostNetwork::glorot_scaled(shapes, 4, 3.0, &mut rng).unwrap();
        let solver = SolverConfig::default();
        let examples = (0..12)
            .map(|_| {
                let input = Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
                let r: f64 = rng.random_range(0.2..0.8);
                let c: f64 = rng.random_range(0.2..0.8);
                let marginals = MarginalPair::new(vec![r, 1.0 - r], vec![c, 1.0 - c]).unwrap();
                let (plan, _) = lcot_forward(&teacher, &input, &marginals, &solver, 200).unwrap();
                TrainingExample {
                    input,
                    target: plan.plan.scaled(3.0),
                    marginals,
                    scale: 3.0,
                }
            })
            .collect();
        (shapes, examples)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (shapes, ex) = toy_examples(1);
        let cfg = LcotTrainConfig {
            epochs: 0,
            hidden_dim: 4,
            seed: 9,
            ..LcotTrainConfig::default()
        };
        let out = lcot_train(shapes, &ex, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = CostNetwork::glorot(shapes, 4, &mut rng).unwrap();
        assert_eq!(out.network, init);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn same_seed_same_parameters() {
        let (shapes, ex) = toy_examples(2);
        let cfg = LcotTrainConfig {
            epochs: 5,
            hidden_dim: 4,
            batch_size: Some(5),
            seed: 4,
            ..LcotTrainConfig::default()
        };
        let a = lcot_train(shapes, &ex, &cfg).unwrap();
        let b = lcot_train(shapes, &ex, &cfg).unwrap();
        assert_eq!(a.network.params(), b.network.params());
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn training_reduces_loss() {
        let (shapes, ex) = toy_examples(3);
        let cfg = LcotTrainConfig {
            epochs: 60,
            hidden_dim: 4,
            batch_size: Some(4),
            ..LcotTrainConfig::default()
        };
        let out = lcot_train(shapes, &ex, &cfg).unwrap();
        let first = out.loss_trace[0];
        let last = *out.loss_trace.last().unwrap();
        assert!(last < 0.5 * first, "loss {first} -> {last}");
    }

    #[test]
    fn zero_mass_targets_are_skipped() {
        let ex = TrainingExample::from_target(Matrix::zeros(1, 2), Matrix::zeros(2, 2)).unwrap();
        assert!(ex.is_none());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (shapes, ex) = toy_examples(4);
        let cfg = LcotTrainConfig {
            hidden_dim: 0,
            ..LcotTrainConfig::default()
        };
        assert!(matches!(lcot_train(shapes, &ex, &cfg), Err(Error::Config(_))));
        let cfg = LcotTrainConfig {
            learning_rate: f64::NAN,
            ..LcotTrainConfig::default()
        };
        assert!(lcot_train(shapes, &ex, &cfg).is_err());
    }
}
