//! Run configuration and its `key = value` file format.
//!
//! ```text
//! # comment
//! [model]
//! latent_dim = 2
//! drift_hidden = 32,32
//! ```
//!
//! Every key belongs to exactly one section; unknown sections or keys,
//! duplicate keys and malformed values are configuration errors. Floats are
//! written in shortest round-trip form, so `parse(render(c)) == c`.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::adjoint::GradMode;
use crate::data::{gen_gbm, gen_ou, gen_sinusoid, subsample_irregular, Dataset};
use crate::rng::derive_seed;
use crate::error::{Result, SldiError};
use crate::sde::{DiffusionMode, Scheme, TimeGrid};
use crate::variational::{ElboConfig, GaussianDist, KlSchedule, ModelSpec, NoiseModel, PosteriorMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Ou,
    Gbm,
    Sinusoid,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Ou => "ou",
            DataKind::Gbm => "gbm",
            DataKind::Sinusoid => "sinusoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "ou" => Some(DataKind::Ou),
            "gbm" => Some(DataKind::Gbm),
            "sinusoid" => Some(DataKind::Sinusoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnealKind {
    Constant,
    LinearWarmup,
    EntropyAware,
}

impl AnnealKind {
    pub fn name(self) -> &'static str {
        match self {
            AnnealKind::Constant => "constant",
            AnnealKind::LinearWarmup => "linear_warmup",
            AnnealKind::EntropyAware => "entropy_aware",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(AnnealKind::Constant),
            "linear_warmup" => Some(AnnealKind::LinearWarmup),
            "entropy_aware" => Some(AnnealKind::EntropyAware),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    // [model]
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub obs_dim: usize,
    pub drift_hidden: Vec<usize>,
    pub diffusion_hidden: Vec<usize>,
    pub posterior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub encoder_hidden: usize,
    pub coadjoint_hidden: Option<Vec<usize>>,
    pub diffusion_mode: DiffusionMode,
    pub posterior: PosteriorMode,
    pub heteroscedastic: bool,
    pub obs_var: f64,
    pub z0_prior_var: f64,
    // [solver]
    pub scheme: Scheme,
    pub dt: f64,
    // [objective]
    pub lambda: f64,
    pub beta: f64,
    pub samples: usize,
    pub eval_samples: usize,
    pub anneal: AnnealKind,
    pub warmup: usize,
    /// Reference entropy of the entropy-aware schedule; `None` uses the
    /// entropy of the `z0` prior.
    pub h_ref: Option<f64>,
    // [optim]
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub alpha: f64,
    pub rho: f64,
    pub spectral_bound: f64,
    pub grad_mode: GradMode,
    pub batch_size: usize,
    pub steps: usize,
    // [run]
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Validation ELBO is recorded every this many steps (0 = only at the
    /// first and last record).
    pub eval_every: usize,
    /// Abort when more than this fraction of a batch's samples blow up.
    pub abort_fraction: f64,
    // [data]
    pub data_kind: DataKind,
    pub data_dim: usize,
    pub n_sequences: usize,
    pub horizon: f64,
    pub n_obs: usize,
    pub keep_prob: f64,
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub freq: f64,
    pub obs_noise: f64,
    pub z0_mean: f64,
    pub z0_var: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 2,
            noise_dim: 2,
            obs_dim: 2,
            drift_hidden: vec![32, 32],
            diffusion_hidden: vec![16],
            posterior_hidden: vec![32],
            decoder_hidden: vec![16],
            encoder_hidden: 16,
            coadjoint_hidden: None,
            diffusion_mode: DiffusionMode::Diagonal,
            posterior: PosteriorMode::Shared,
            heteroscedastic: false,
            obs_var: 0.1,
            z0_prior_var: 1.0,
            scheme: Scheme::EulerMaruyama,
            dt: 1.0 / 32.0,
            lambda: 0.01,
            beta: 0.1,
            samples: 1,
            eval_samples: 64,
            anneal: AnnealKind::LinearWarmup,
            warmup: 500,
            h_ref: None,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            alpha: 0.9,
            rho: 0.99,
            spectral_bound: 2.0,
            grad_mode: GradMode::Tape,
            batch_size: 32,
            steps: 5000,
            seed: 0,
            log_every: 50,
            checkpoint_every: 1000,
            eval_every: 0,
            abort_fraction: 0.5,
            data_kind: DataKind::Ou,
            data_dim: 2,
            n_sequences: 200,
            horizon: 2.0,
            n_obs: 21,
            keep_prob: 1.0,
            theta: 1.0,
            sigma: 0.5,
            mu: 0.5,
            freq: 3.0,
            obs_noise: 0.1f64.sqrt(),
            z0_mean: 0.0,
            z0_var: 1.0,
        }
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect()
}

fn num<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

fn named<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> std::result::Result<T, String> {
    f(s).ok_or_else(|| format!("unknown value '{s}'"))
}

type Getter = fn(&TrainConfig) -> String;
type Setter = fn(&mut TrainConfig, &str) -> std::result::Result<(), String>;

macro_rules! fields {
    ($( $section:literal, $key:literal, $field:ident : $get:expr, $set:expr; )*) => {
        const FIELDS: &[(&str, &str, Getter, Setter)] = &[
            $( ($section, $key,
                |c: &TrainConfig| { let f: fn(&TrainConfig) -> String = $get; f(c) },
                |c: &mut TrainConfig, s: &str| { let f: fn(&str) -> std::result::Result<_, String> = $set; c.$field = f(s)?; Ok(()) }), )*
        ];
    };
}

fields! {
    "model", "latent_dim", latent_dim: |c| c.latent_dim.to_string(), num;
    "model", "noise_dim", noise_dim: |c| c.noise_dim.to_string(), num;
    "model", "obs_dim", obs_dim: |c| c.obs_dim.to_string(), num;
    "model", "drift_hidden", drift_hidden: |c| list(&c.drift_hidden), parse_list;
    "model", "diffusion_hidden", diffusion_hidden: |c| list(&c.diffusion_hidden), parse_list;
    "model", "posterior_hidden", posterior_hidden: |c| list(&c.posterior_hidden), parse_list;
    "model", "decoder_hidden", decoder_hidden: |c| list(&c.decoder_hidden), parse_list;
    "model", "encoder_hidden", encoder_hidden: |c| c.encoder_hidden.to_string(), num;
    "model", "coadjoint_hidden", coadjoint_hidden:
        |c| c.coadjoint_hidden.as_ref().map_or("none".to_string(), |h| list(h)),
        |s| if s == "none" { Ok(None) } else { parse_list(s).map(Some) };
    "model", "diffusion", diffusion_mode: |c| c.diffusion_mode.name().to_string(), |s| named(s, DiffusionMode::from_name);
    "model", "posterior", posterior: |c| c.posterior.name().to_string(), |s| named(s, PosteriorMode::from_name);
    "model", "heteroscedastic", heteroscedastic: |c| c.heteroscedastic.to_string(), num;
    "model", "obs_var", obs_var: |c| c.obs_var.to_string(), num;
    "model", "z0_prior_var", z0_prior_var: |c| c.z0_prior_var.to_string(), num;
    "solver", "scheme", scheme: |c| c.scheme.name().to_string(), |s| named(s, Scheme::from_name);
    "solver", "dt", dt: |c| c.dt.to_string(), num;
    "objective", "lambda", lambda: |c| c.lambda.to_string(), num;
    "objective", "beta", beta: |c| c.beta.to_string(), num;
    "objective", "samples", samples: |c| c.samples.to_string(), num;
    "objective", "eval_samples", eval_samples: |c| c.eval_samples.to_string(), num;
    "objective", "anneal", anneal: |c| c.anneal.name().to_string(), |s| named(s, AnnealKind::from_name);
    "objective", "warmup", warmup: |c| c.warmup.to_string(), num;
    "objective", "h_ref", h_ref:
        |c| c.h_ref.map_or("auto".to_string(), |h| h.to_string()),
        |s| if s == "auto" { Ok(None) } else { num(s).map(Some) };
    "optim", "lr", lr: |c| c.lr.to_string(), num;
    "optim", "adam_beta1", adam_beta1: |c| c.adam_beta1.to_string(), num;
    "optim", "adam_beta2", adam_beta2: |c| c.adam_beta2.to_string(), num;
    "optim", "adam_eps", adam_eps: |c| c.adam_eps.to_string(), num;
    "optim", "alpha", alpha: |c| c.alpha.to_string(), num;
    "optim", "rho", rho: |c| c.rho.to_string(), num;
    "optim", "spectral_bound", spectral_bound: |c| c.spectral_bound.to_string(), num;
    "optim", "grad_mode", grad_mode: |c| c.grad_mode.name().to_string(), |s| named(s, GradMode::from_name);
    "optim", "batch_size", batch_size: |c| c.batch_size.to_string(), num;
    "optim", "steps", steps: |c| c.steps.to_string(), num;
    "run", "seed", seed: |c| c.seed.to_string(), num;
    "run", "log_every", log_every: |c| c.log_every.to_string(), num;
    "run", "checkpoint_every", checkpoint_every: |c| c.checkpoint_every.to_string(), num;
    "run", "eval_every", eval_every: |c| c.eval_every.to_string(), num;
    "run", "abort_fraction", abort_fraction: |c| c.abort_fraction.to_string(), num;
    "data", "kind", data_kind: |c| c.data_kind.name().to_string(), |s| named(s, DataKind::from_name);
    "data", "dim", data_dim: |c| c.data_dim.to_string(), num;
    "data", "n_sequences", n_sequences: |c| c.n_sequences.to_string(), num;
    "data", "horizon", horizon: |c| c.horizon.to_string(), num;
    "data", "n_obs", n_obs: |c| c.n_obs.to_string(), num;
    "data", "keep_prob", keep_prob: |c| c.keep_prob.to_string(), num;
    "data", "theta", theta: |c| c.theta.to_string(), num;
    "data", "sigma", sigma: |c| c.sigma.to_string(), num;
    "data", "mu", mu: |c| c.mu.to_string(), num;
    "data", "freq", freq: |c| c.freq.to_string(), num;
    "data", "obs_noise", obs_noise: |c| c.obs_noise.to_string(), num;
    "data", "z0_mean", z0_mean: |c| c.z0_mean.to_string(), num;
    "data", "z0_var", z0_var: |c| c.z0_var.to_string(), num;
}

impl TrainConfig {
    /// Renders every key, grouped by section.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (sec, key, get, _) in FIELDS {
            if *sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{key} = {}\n", get(self)));
        }
        out
    }

    /// Parses a config file; keys that are absent keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut section: Option<String> = None;
        let mut seen: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| SldiError::ConfigError(format!("line {line_no}: malformed section header '{line}'")))?
                    .trim();
                if !FIELDS.iter().any(|f| f.0 == name) {
                    return Err(SldiError::ConfigError(format!("line {line_no}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SldiError::ConfigError(format!("line {line_no}: expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| SldiError::ConfigError(format!("line {line_no}: key '{key}' outside any section")))?;
            let field = FIELDS
                .iter()
                .find(|f| f.0 == sec && f.1 == key)
                .ok_or_else(|| SldiError::ConfigError(format!("line {line_no}: unknown key '{key}' in [{sec}]")))?;
            if seen.iter().any(|(s, k)| s == sec && k == key) {
                return Err(SldiError::ConfigError(format!("line {line_no}: duplicate key '{key}' in [{sec}]")));
            }
            seen.push((sec.to_string(), key.to_string()));
            (field.3)(&mut cfg, value)
                .map_err(|e| SldiError::ConfigError(format!("line {line_no}: bad value for {key}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SldiError::ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SldiError::ConfigError(what.to_string()));
        if self.latent_dim == 0 || self.noise_dim == 0 || self.obs_dim == 0 || self.encoder_hidden == 0 {
            return bad("latent_dim, noise_dim, obs_dim and encoder_hidden must be >= 1");
        }
        if self.diffusion_mode != DiffusionMode::Full && self.noise_dim != self.latent_dim {
            return bad("diagonal and scalar diffusion need noise_dim == latent_dim");
        }
        if [&self.drift_hidden, &self.diffusion_hidden, &self.posterior_hidden, &self.decoder_hidden]
            .iter()
            .any(|h| h.contains(&0))
        {
            return bad("hidden widths must be >= 1");
        }
        if !(self.obs_var > 0.0) || !(self.z0_prior_var > 0.0) || !(self.dt > 0.0) {
            return bad("obs_var, z0_prior_var and dt must be > 0");
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return bad("lambda and beta must be >= 0");
        }
        if self.samples == 0 || self.eval_samples == 0 || self.batch_size == 0 {
            return bad("samples, eval_samples and batch_size must be >= 1");
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("need lr >= 0, adam betas in [0, 1) and adam_eps > 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("need alpha in [0, 1] and rho in (0, 1)");
        }
        if !(self.spectral_bound > 0.0) {
            return bad("spectral_bound must be > 0");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        if !(self.abort_fraction > 0.0 && self.abort_fraction <= 1.0) {
            return bad("abort_fraction must be in (0, 1]");
        }
        if self.data_dim == 0 || self.n_obs < 2 || !(self.horizon > 0.0) || !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("need data dim >= 1, n_obs >= 2, horizon > 0 and keep_prob in (0, 1]");
        }
        if self.data_kind == DataKind::Gbm && !(self.z0_mean > 0.0) {
            return bad("gbm data needs z0_mean > 0");
        }
        if let Some(h) = self.h_ref {
            if !h.is_finite() {
                return bad("h_ref must be finite");
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            latent_dim: self.latent_dim,
            noise_dim: self.noise_dim,
            obs_dim: self.obs_dim,
            drift_hidden: self.drift_hidden.clone(),
            diffusion_hidden: self.diffusion_hidden.clone(),
            posterior_hidden: self.posterior_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            encoder_hidden: self.encoder_hidden,
            coadjoint_hidden: self.coadjoint_hidden.clone(),
            diffusion_mode: self.diffusion_mode,
            posterior: self.posterior,
            noise: if self.heteroscedastic {
                NoiseModel::Heteroscedastic
            } else {
                NoiseModel::Fixed { var: self.obs_var }
            },
            z0_prior: GaussianDist {
                mean: vec![0.0; self.latent_dim],
                var: vec![self.z0_prior_var; self.latent_dim],
            },
        }
    }

    pub fn schedule(&self) -> KlSchedule {
        match self.anneal {
            AnnealKind::Constant => KlSchedule::Constant,
            AnnealKind::LinearWarmup => KlSchedule::LinearWarmup { steps: self.warmup },
            AnnealKind::EntropyAware => KlSchedule::EntropyAware {
                steps: self.warmup,
                h_ref: self.h_ref.unwrap_or_else(|| self.model_spec().z0_prior.entropy()),
            },
        }
    }

    /// Observed dimension of the data this config generates.
    pub fn data_obs_dim(&self) -> usize {
        match self.data_kind {
            DataKind::Ou => self.data_dim,
            DataKind::Gbm | DataKind::Sinusoid => 1,
        }
    }

    /// Synthetic dataset described by the `[data]` section, drawn from `seed`.
    pub fn generate_data(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let grid = TimeGrid::uniform(0.0, self.horizon, self.n_obs - 1)?;
        let n = self.n_sequences;
        let mut ds = match self.data_kind {
            DataKind::Ou => {
                let z0 = GaussianDist { mean: vec![self.z0_mean; self.data_dim], var: vec![self.z0_var.max(0.0); self.data_dim] };
                gen_ou(n, self.theta, self.sigma, &z0, self.obs_noise, &grid, seed)?
            }
            DataKind::Gbm => gen_gbm(n, self.mu, self.sigma, self.z0_mean, &grid, seed)?,
            DataKind::Sinusoid => gen_sinusoid(n, self.freq, self.theta, self.sigma, self.obs_noise, &grid, seed)?,
        };
        if self.keep_prob < 1.0 {
            for (i, s) in ds.sequences.iter_mut().enumerate() {
                *s = subsample_irregular(s, self.keep_prob, 2, derive_seed(derive_seed(seed, 7), i as u64))?;
            }
        }
        Ok(ds)
    }

    /// Objective settings for training (one sample, weight set per step).
    pub fn elbo_config(&self, kl_weight: f64) -> ElboConfig {
        ElboConfig {
            dt: self.dt,
            scheme: self.scheme,
            lambda: self.lambda,
            beta: self.beta,
            kl_weight,
            n_samples: self.samples,
            grad_mode: self.grad_mode,
        }
    }
}
