//! The optimization loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::config::TrainConfig;
use super::eval::{evaluate, EvalConfig, EvalReport};
use super::metrics::MetricsRecord;
use super::optim::Adam;
use crate::adjoint::EwmaSmoother;
use crate::data::{Dataset, ObservationSeq, Split};
use crate::error::{Result, SldiError};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::spectral::max_spectral_norm;
use crate::nn::{spectral_project_in_place, ParamStore};
use crate::rng::{derive_seed, rng_from_seed};
use crate::variational::model::CONSTRAINED;
use crate::variational::{batch_objective, kl_anneal, SldiModel};

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const VAL_STREAM: u64 = 4;
/// Decay of the running posterior entropy used by entropy-aware annealing.
const ENTROPY_DECAY: f64 = 0.99;

pub const METRICS_FILE: &str = "metrics.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: SldiModel,
    pub store: ParamStore,
    pub records: Vec<MetricsRecord>,
    /// Largest constrained spectral norm after each optimizer step.
    pub spectral_norms: Vec<f64>,
    pub total_blowups: usize,
}

/// Model and projected initial parameters for `cfg`.
pub fn init_model(cfg: &TrainConfig) -> Result<(SldiModel, ParamStore)> {
    cfg.validate()?;
    let (model, mut store) = SldiModel::build(&cfg.model_spec(), derive_seed(cfg.seed, INIT_STREAM))?;
    spectral_project_in_place(&mut store, &CONSTRAINED, cfg.spectral_bound)?;
    Ok((model, store))
}

/// Checkpoint metadata: the full rendered config plus the step count.
pub fn checkpoint_meta(cfg: &TrainConfig, step: usize) -> Vec<String> {
    let mut meta = vec![format!("step {step}")];
    meta.extend(cfg.render().lines().map(|l| format!("config {l}")));
    meta
}

/// Recovers the config embedded by [`checkpoint_meta`].
pub fn config_from_meta(meta: &[String]) -> Result<TrainConfig> {
    let text: Vec<&str> = meta.iter().filter_map(|l| l.strip_prefix("config ")).collect();
    if text.is_empty() {
        return Err(SldiError::ConfigError("checkpoint carries no config".into()));
    }
    TrainConfig::parse(&text.join("\n"))
}

/// Validation settings used during training and by the CLI `eval`.
pub fn eval_config(cfg: &TrainConfig) -> EvalConfig {
    EvalConfig {
        dt: cfg.dt,
        scheme: cfg.scheme,
        samples: cfg.eval_samples,
        lambda: cfg.lambda,
        beta: cfg.beta,
        seed: derive_seed(cfg.seed, VAL_STREAM),
    }
}

fn check_dataset(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    if let Some(s) = data.sequences.iter().find(|s| s.obs_dim() != cfg.obs_dim) {
        return Err(SldiError::ConfigError(format!(
            "sequence {} has {} observed dimensions, config says obs_dim = {}",
            s.id,
            s.obs_dim(),
            cfg.obs_dim
        )));
    }
    if data.split(Split::Train).is_empty() {
        return Err(SldiError::InvalidInput("dataset has no training sequences".into()));
    }
    Ok(())
}

struct Sink {
    dir: PathBuf,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            metrics: BufWriter::new(File::create(dir.join(METRICS_FILE))?),
            timing: BufWriter::new(File::create(dir.join(TIMING_FILE))?),
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trains on the training split of `data`. With `out` set, writes the
/// metrics stream, a separate timing stream, periodic checkpoints and the
/// final `checkpoint.txt` into that directory.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutput> {
    check_dataset(cfg, data)?;
    let (model, mut store) = init_model(cfg)?;
    let train_seqs = data.split(Split::Train);
    let val_seqs = data.split(Split::Val);
    let mut sink = out.map(Sink::open).transpose()?;
    let schedule = cfg.schedule();
    let mut adam = Adam::new(store.len(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut smoother = EwmaSmoother::new(cfg.alpha, cfg.rho, store.len())?;
    let mut running_entropy: Option<f64> = None;
    let mut records = Vec::new();
    let mut spectral_norms = Vec::with_capacity(cfg.steps);
    let mut total_blowups = 0;
    let started = Instant::now();
    let ecfg = eval_config(cfg);
    let validate = |store: &ParamStore| -> Result<Option<EvalReport>> {
        if val_seqs.is_empty() {
            return Ok(None);
        }
        evaluate(&model, store.flat(), &val_seqs, &ecfg).map(Some)
    };

    for step in 0..cfg.steps {
        let w = kl_anneal(step, schedule, running_entropy);
        let mut rng = rng_from_seed(derive_seed(derive_seed(cfg.seed, BATCH_STREAM), step as u64));
        let batch: Vec<&ObservationSeq> = (0..cfg.batch_size)
            .map(|_| train_seqs[rng.gen_range(0..train_seqs.len())])
            .collect();
        let noise_seed = derive_seed(derive_seed(cfg.seed, NOISE_STREAM), step as u64);
        let res = batch_objective(&model, store.flat(), &batch, &cfg.elbo_config(w), noise_seed, true).map_err(|e| match e {
            SldiError::NumericalBlowup { detail, .. } => {
                SldiError::blowup(step, format!("every sequence of the batch blew up ({detail})"))
            }
            other => other,
        })?;
        total_blowups += res.blowups;
        if res.blowups as f64 > cfg.abort_fraction * res.samples as f64 {
            return Err(SldiError::blowup(
                step,
                format!("{} of {} samples blew up (limit {})", res.blowups, res.samples, cfg.abort_fraction),
            ));
        }
        // the optimizer minimizes the negated objective
        let raw: Vec<f64> = res.grad.as_ref().expect("gradient requested").iter().map(|g| -g).collect();
        let update = smoother.apply(&raw)?;
        adam.step(store.flat_mut(), &update)?;
        if store.flat().iter().any(|v| !v.is_finite()) {
            return Err(SldiError::blowup(step, "parameters became non-finite after the update"));
        }
        spectral_project_in_place(&mut store, &CONSTRAINED, cfg.spectral_bound)?;
        let spectral = max_spectral_norm(&store, &CONSTRAINED)?;
        spectral_norms.push(spectral);
        running_entropy = Some(match running_entropy {
            None => res.mean_entropy,
            Some(h) => ENTROPY_DECAY * h + (1.0 - ENTROPY_DECAY) * res.mean_entropy,
        });

        let done = step + 1;
        let last = done == cfg.steps;
        if step % cfg.log_every == 0 || last {
            let want_val = last || step == 0 || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
            let val = if want_val { validate(&store)? } else { None };
            let rec = MetricsRecord {
                step: done,
                breakdown: res.breakdown,
                grad_norm: norm(&raw),
                grad_variance: None,
                blowups: res.blowups,
                samples: res.samples,
                spectral_max: spectral,
                val_elbo: val.as_ref().map(|v| v.elbo.total),
                rmse: val.as_ref().map(|v| v.rmse),
                nll: val.as_ref().map(|v| v.nll),
                coverage50: val.as_ref().map(|v| v.coverage50),
                coverage90: val.as_ref().map(|v| v.coverage90),
            };
            if let Some(s) = sink.as_mut() {
                writeln!(s.metrics, "{}", rec.to_line())?;
                s.metrics.flush()?;
                writeln!(s.timing, "step={done} wall_ms={}", started.elapsed().as_millis())?;
                s.timing.flush()?;
            }
            records.push(rec);
        }
        if let Some(s) = sink.as_ref() {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !last {
                save_checkpoint(&s.dir.join(format!("checkpoint_{done:06}.txt")), &store, &checkpoint_meta(cfg, done))?;
            }
        }
    }
    if let Some(s) = sink.as_ref() {
        save_checkpoint(&s.dir.join(CHECKPOINT_FILE), &store, &checkpoint_meta(cfg, cfg.steps))?;
    }
    Ok(TrainOutput { model, store, records, spectral_norms, total_blowups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_ou;
    use crate::sde::TimeGrid;
    use crate::variational::GaussianDist;

    fn tiny() -> (TrainConfig, Dataset) {
        let cfg = TrainConfig {
            latent_dim: 1,
            noise_dim: 1,
            obs_dim: 1,
            drift_hidden: vec![4],
            diffusion_hidden: vec![],
            posterior_hidden: vec![4],
            decoder_hidden: vec![],
            encoder_hidden: 3,
            dt: 0.25,
            batch_size: 4,
            steps: 6,
            log_every: 2,
            eval_samples: 4,
            ..Default::default()
        };
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let data = gen_ou(20, 1.0, 0.5, &GaussianDist::standard(1), 0.3, &grid, 5).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (mut cfg, data) = tiny();
        cfg.steps = 0;
        let out = train(&cfg, &data, None).unwrap();
        assert_eq!(out.store, init_model(&cfg).unwrap().1);
        assert!(out.records.is_empty());
    }

    #[test]
    fn zero_learning_rate_and_no_smoothing_freezes_parameters() {
        let (mut cfg, data) = tiny();
        cfg.lr = 0.0;
        let out = train(&cfg, &data, None).unwrap();
        assert_eq!(out.store, init_model(&cfg).unwrap().1);
    }

    #[test]
    fn records_and_files() {
        let (cfg, data) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &data, Some(dir.path())).unwrap();
        assert_eq!(out.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 3, 5, 6]);
        assert_eq!(out.spectral_norms.len(), 6);
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 4);
        let (store, meta) = crate::nn::checkpoint::load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(store, out.store);
        assert_eq!(config_from_meta(&meta).unwrap(), cfg);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let (mut cfg, data) = tiny();
        cfg.obs_dim = 2;
        assert!(matches!(train(&cfg, &data, None), Err(SldiError::ConfigError(_))));
    }
}
