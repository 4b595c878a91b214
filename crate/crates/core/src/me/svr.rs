//! Epsilon-support vector regression trained by SMO.
//!
//! The dual is written over `2l` variables (`α` then `α*`) as
//! `min ½ βᵀQβ + pᵀβ` subject to `yᵀβ = 0`, `0 ≤ β ≤ C`, and solved by
//! pairwise updates with second-order working-set selection. Targets are
//! standardized before fitting, so `epsilon_tube` is in units of the
//! target's standard deviation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    pub kernel: Kernel,
    /// RBF width; `None` means `1 / d`.
    pub gamma: Option<f64>,
    pub c_reg: f64,
    pub epsilon_tube: f64,
    /// Cap on SMO pair updates.
    pub max_passes: usize,
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf,
            gamma: None,
            c_reg: 1.0,
            epsilon_tube: 0.1,
            max_passes: 100_000,
            tol: 1e-3,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(Error::Config(format!("c_reg must be positive, got {}", self.c_reg)));
        }
        if !(self.epsilon_tube >= 0.0 && self.epsilon_tube.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon_tube must be >= 0, got {}",
                self.epsilon_tube
            )));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// A fitted scalar SVR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svr {
    kernel: Kernel,
    gamma: f64,
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
    bias: f64,
    y_mean: f64,
    y_scale: f64,
}

fn kernel_value(kernel: Kernel, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        Kernel::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * d2).exp()
        }
    }
}

impl Svr {
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig) -> Result<Self> {
        cfg.validate()?;
        let l = x.len();
        if l == 0 {
            return Err(Error::EmptyDataset);
        }
        if y.len() != l {
            return Err(Error::Dimension(format!("{l} inputs but {} targets", y.len())));
        }
        let d = x[0].len();
        let gamma = cfg.gamma.unwrap_or(1.0 / d.max(1) as f64);
        let y_mean = y.iter().sum::<f64>() / l as f64;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / l as f64;
        let y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let k: Vec<f64> = (0..l * l)
            .map(|ij| kernel_value(cfg.kernel, gamma, &x[ij / l], &x[ij % l]))
            .collect();
        let kij = |i: usize, j: usize| k[(i % l) * l + (j % l)];
        let n = 2 * l;
        let sign = |t: usize| if t < l { 1.0 } else { -1.0 };
        let c = cfg.c_reg;
        let mut alpha = vec![0.0; n];
        let mut grad: Vec<f64> = (0..n)
            .map(|t| cfg.epsilon_tube - sign(t) * ys[t % l])
            .collect();

        let mut iter = 0;
        while iter < cfg.max_passes {
            // i maximises -y G over the "up" set
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..n {
                let up = if sign(t) > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
                if up && -sign(t) * grad[t] >= gmax {
                    gmax = -sign(t) * grad[t];
                    i = t;
                }
            }
            if i == usize::MAX {
                break;
            }
            let mut gmin = f64::INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                let low = if sign(t) > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
                if !low {
                    continue;
                }
                let v = -sign(t) * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = kij(i, i) + kij(t, t) - 2.0 * kij(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    if -b * b / a <= best {
                        best = -b * b / a;
                        j = t;
                    }
                }
            }
            if gmax - gmin < cfg.tol || j == usize::MAX {
                break;
            }
            iter += 1;

            let q = |s: usize, t: usize| sign(s) * sign(t) * kij(s, t);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if sign(i) != sign(j) {
                let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }
        if iter == cfg.max_passes {
            log::warn!("SMO stopped at max_passes = {} before meeting tol", cfg.max_passes);
        }

        // offset from free variables, else the midpoint of the feasible interval
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut n_free) = (0.0, 0usize);
        for t in 0..n {
            let yg = sign(t) * grad[t];
            if alpha[t] >= c {
                if sign(t) < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if sign(t) > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free_sum += yg;
                n_free += 1;
            }
        }
        let rho = if n_free > 0 {
            free_sum / n_free as f64
        } else {
            0.5 * (ub + lb)
        };

        let mut support = Vec::new();
        let mut coef = Vec::new();
        for s in 0..l {
            let w = alpha[s] - alpha[s + l];
            if w != 0.0 {
                support.push(x[s].clone());
                coef.push(w);
            }
        }
        Ok(Self {
            kernel: cfg.kernel,
            gamma,
            support,
            coef,
            bias: -rho,
            y_mean,
            y_scale,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let f: f64 = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(s, w)| w * kernel_value(self.kernel, self.gamma, s, x))
            .sum::<f64>()
            + self.bias;
        self.y_mean + self.y_scale * f
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn constant_targets_with_zero_tube_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 20, 3);
        let y = vec![4.25; 20];
        let cfg = SvrConfig {
            epsilon_tube: 0.0,
            ..SvrConfig::default()
        };
        let m = Svr::fit(&x, &y, &cfg).unwrap();
        assert_eq!(m.predict(&[10.0, -3.0, 0.5]), 4.25);
        assert_eq!(m.n_support(), 0);
    }

    #[test]
    fn linear_kernel_fits_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 60, 4);
        let w = [1.5, -2.0, 0.5, 0.0];
        let y: Vec<f64> = x.iter().map(|r| 3.0 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let cfg = SvrConfig {
            kernel: Kernel::Linear,
            epsilon_tube: 0.01,
            c_reg: 10.0,
            ..SvrConfig::default()
        };
        let m = Svr::fit(&x, &y, &cfg).unwrap();
        let mse = x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum::<f64>() / 60.0;
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn rbf_fits_smooth_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].sin()).collect();
        let cfg = SvrConfig {
            gamma: Some(1.0),
            c_reg: 10.0,
            epsilon_tube: 0.05,
            ..SvrConfig::default()
        };
        let m = Svr::fit(&x, &y, &cfg).unwrap();
        let mse = x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum::<f64>() / 80.0;
        assert!(mse < 5e-3, "mse {mse}");
    }

    #[test]
    fn rejects_bad_config() {
        let x = vec![vec![0.0]];
        let cfg = SvrConfig {
            c_reg: 0.0,
            ..SvrConfig::default()
        };
        assert!(Svr::fit(&x, &[1.0], &cfg).is_err());
        let cfg = SvrConfig {
            epsilon_tube: -0.1,
            ..SvrConfig::default()
        };
        assert!(Svr::fit(&x, &[1.0], &cfg).is_err());
    }
}
