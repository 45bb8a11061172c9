//! Empirical variance of stochastic gradient estimators across seeds.

use rayon::prelude::*;

use super::backward::{terminal_loss_gradient, GradMode};
use super::clip::EwmaSmoother;
use crate::error::{Result, SldiError};
use crate::rng::derive_seed;
use crate::sde::{fixtures, sample_brownian, BrownianPath, Scheme, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// One path per seed.
    Plain,
    /// Mean over a path and its negation.
    Antithetic,
    /// Plain gradient mixed with a warm running average.
    Clipped,
    /// Mean over two independent paths (same cost as antithetic).
    IndependentPair,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Plain => "plain",
            Estimator::Antithetic => "antithetic",
            Estimator::Clipped => "variance_clipped",
            Estimator::IndependentPair => "independent_pair",
        }
    }
}

/// OU terminal-loss fixture `L = z_T^2 / 2` with the gradient taken with
/// respect to the drift and diffusion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceConfig {
    pub theta: f64,
    pub sigma: f64,
    pub z0: f64,
    pub horizon: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub grad_mode: GradMode,
    pub alpha: f64,
    pub rho: f64,
    /// Seeds used only to warm the running average of the clipped estimator.
    pub warmup: usize,
    pub n_seeds: usize,
    pub seed: u64,
    /// Restrict the gradient to the drift parameters.
    pub drift_only: bool,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            theta: 1.0,
            sigma: 0.5,
            z0: 1.0,
            horizon: 1.0,
            steps: 32,
            scheme: Scheme::EulerMaruyama,
            grad_mode: GradMode::Tape,
            alpha: 0.9,
            rho: 0.99,
            warmup: 200,
            n_seeds: 100,
            seed: 0,
            drift_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub estimator: Estimator,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub trace_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub n_seeds: usize,
    pub stats: Vec<EstimatorStats>,
    /// Per-coordinate mean of (antithetic - plain) over seeds, in units of
    /// its standard error. Zero when both estimators agree exactly.
    pub antithetic_bias_z: Vec<f64>,
}

impl VarianceReport {
    pub fn get(&self, e: Estimator) -> &EstimatorStats {
        self.stats.iter().find(|s| s.estimator == e).expect("every estimator is reported")
    }

    pub fn antithetic_unbiased(&self) -> bool {
        self.antithetic_bias_z.iter().all(|z| z.abs() <= 3.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimator,n_seeds,trace_variance,mean,variance\n");
        for st in &self.stats {
            let join = |v: &[f64]| v.iter().map(|x| crate::fmt::fmt_f64(*x)).collect::<Vec<_>>().join(";");
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                st.estimator.name(),
                self.n_seeds,
                crate::fmt::fmt_f64(st.trace_variance),
                join(&st.mean),
                join(&st.variance)
            ));
        }
        s
    }
}

/// Sample mean and unbiased variance per coordinate.
pub fn mean_and_variance(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let p = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; p];
    if n > 1 {
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m).powi(2) / (n - 1) as f64;
            }
        }
    }
    (mean, var)
}

fn stats(estimator: Estimator, samples: &[Vec<f64>]) -> EstimatorStats {
    let (mean, variance) = mean_and_variance(samples);
    EstimatorStats {
        estimator,
        trace_variance: variance.iter().sum(),
        mean,
        variance,
    }
}

fn average(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Runs every estimator over `cfg.n_seeds` seeds with a caller-supplied
/// gradient function of the Brownian path.
pub fn variance_report_with(
    grad: impl Fn(&BrownianPath) -> Result<Vec<f64>> + Sync,
    grid: &TimeGrid,
    noise_dim: usize,
    cfg: &VarianceConfig,
) -> Result<VarianceReport> {
    if cfg.n_seeds < 2 {
        return Err(SldiError::InvalidInput("variance needs at least two seeds".into()));
    }
    let noise = |stream: u64, s: usize| sample_brownian(grid, noise_dim, derive_seed(derive_seed(cfg.seed, stream), s as u64));
    let per_seed: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| {
            let w = noise(0, s)?;
            let g = grad(&w)?;
            let ga = grad(&w.antithetic())?;
            let gi = grad(&noise(1, s)?)?;
            Ok((g, ga, gi))
        })
        .collect::<Result<_>>()?;
    let warm: Vec<Vec<f64>> = (0..cfg.warmup)
        .into_par_iter()
        .map(|s| grad(&noise(2, s)?))
        .collect::<Result<_>>()?;

    let p = per_seed[0].0.len();
    let mut smoother = EwmaSmoother::new(cfg.alpha, cfg.rho, p)?;
    if !warm.is_empty() {
        // start from the warmup mean, then keep the EWMA running over them
        smoother.running = mean_and_variance(&warm).0;
        for g in &warm {
            smoother.apply(g)?;
        }
    }

    let plain: Vec<Vec<f64>> = per_seed.iter().map(|t| t.0.clone()).collect();
    let anti: Vec<Vec<f64>> = per_seed.iter().map(|t| average(&t.0, &t.1)).collect();
    let pair: Vec<Vec<f64>> = per_seed.iter().map(|t| average(&t.0, &t.2)).collect();
    let mut clipped = Vec::with_capacity(cfg.n_seeds);
    for g in &plain {
        clipped.push(smoother.apply(g)?);
    }

    let diffs: Vec<Vec<f64>> = anti
        .iter()
        .zip(&plain)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let (dm, dv) = mean_and_variance(&diffs);
    let n = cfg.n_seeds as f64;
    let antithetic_bias_z = dm
        .iter()
        .zip(&dv)
        .map(|(m, v)| {
            let se = (v / n).sqrt();
            if se == 0.0 {
                if *m == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                m / se
            }
        })
        .collect();

    Ok(VarianceReport {
        n_seeds: cfg.n_seeds,
        stats: vec![
            stats(Estimator::Plain, &plain),
            stats(Estimator::Antithetic, &anti),
            stats(Estimator::Clipped, &clipped),
            stats(Estimator::IndependentPair, &pair),
        ],
        antithetic_bias_z,
    })
}

/// [`variance_report_with`] on the OU terminal-loss fixture of `cfg`.
pub fn gradient_variance_report(cfg: &VarianceConfig) -> Result<VarianceReport> {
    if !(cfg.horizon > 0.0) || cfg.steps == 0 {
        return Err(SldiError::InvalidInput("need a positive horizon and at least one step".into()));
    }
    let (model, store) = fixtures::ou(cfg.theta, cfg.sigma);
    let grid = TimeGrid::uniform(0.0, cfg.horizon, cfg.steps)?;
    let sde = model.bind(store.flat());
    let grad = |w: &BrownianPath| {
        terminal_loss_gradient(&sde, &[cfg.z0], &grid, w, cfg.scheme, cfg.grad_mode, |z| {
            (0.5 * z[0] * z[0], vec![z[0]])
        })
        .map(|(_, g)| if cfg.drift_only { g[model.drift.param_range()].to_vec() } else { g })
    };
    variance_report_with(grad, &grid, 1, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_model_has_zero_variance() {
        // the diffusion-parameter gradient still carries dW at sigma = 0
        let cfg = VarianceConfig { sigma: 0.0, n_seeds: 8, warmup: 4, drift_only: true, ..Default::default() };
        let r = gradient_variance_report(&cfg).unwrap();
        for s in &r.stats {
            assert!(s.trace_variance < 1e-25, "{}", s.estimator.name());
        }
        assert!(r.antithetic_unbiased());
    }

    #[test]
    fn needs_two_seeds() {
        let cfg = VarianceConfig { n_seeds: 1, ..Default::default() };
        assert!(gradient_variance_report(&cfg).is_err());
    }

    #[test]
    fn antithetic_cancels_linear_gradients() {
        // gradient linear in the noise: the antithetic mean is exact
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let cfg = VarianceConfig { n_seeds: 10, warmup: 0, ..Default::default() };
        let r = variance_report_with(|w| Ok(vec![1.0 + w.total()[0]]), &grid, 1, &cfg).unwrap();
        assert!(r.get(Estimator::Antithetic).trace_variance < 1e-28);
        assert!(r.get(Estimator::Plain).trace_variance > 0.0);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = VarianceConfig { n_seeds: 6, warmup: 3, ..Default::default() };
        assert_eq!(gradient_variance_report(&cfg).unwrap(), gradient_variance_report(&cfg).unwrap());
    }
}
