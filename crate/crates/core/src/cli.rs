//! Command-line front end. Every subcommand writes its artifacts into
//! `--out` and a one-line summary to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adjoint::{gradient_variance_report, GradMode, VarianceConfig};
use crate::data::{load_dataset, save_dataset, Dataset, Split};
use crate::error::{Result, SldiError};
use crate::nn::checkpoint::load_checkpoint;
use crate::sde::{strong_weak_error, AnalyticFixture, Scheme};
use crate::train::gradcheck::{gradcheck, GradcheckConfig};
use crate::train::ladder::{theorem_ladder, LadderConfig};
use crate::train::run::{config_from_meta, eval_config, CHECKPOINT_FILE};
use crate::train::{evaluate, train, TrainConfig};
use crate::variational::{PosteriorMode, SldiModel};

pub const DATASET_FILE: &str = "dataset.txt";

#[derive(Parser, Debug)]
#[command(name = "sldi", version, about = "Latent neural SDE training and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Configuration file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub grad_mode: Option<GradModeArg>,
    #[arg(long, global = true, value_enum)]
    pub posterior: Option<PosteriorArg>,
    #[arg(long, global = true, value_enum)]
    pub scheme: Option<SchemeArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum GradModeArg {
    Tape,
    Adjoint,
    AdjointCorrected,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PosteriorArg {
    Shared,
    Separate,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SchemeArg {
    Em,
    Milstein,
}

impl From<GradModeArg> for GradMode {
    fn from(g: GradModeArg) -> Self {
        match g {
            GradModeArg::Tape => GradMode::Tape,
            GradModeArg::Adjoint => GradMode::Adjoint,
            GradModeArg::AdjointCorrected => GradMode::AdjointCorrected,
        }
    }
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Em => Scheme::EulerMaruyama,
            SchemeArg::Milstein => Scheme::Milstein,
        }
    }
}

impl From<PosteriorArg> for PosteriorMode {
    fn from(p: PosteriorArg) -> Self {
        match p {
            PosteriorArg::Shared => PosteriorMode::Shared,
            PosteriorArg::Separate => PosteriorMode::Separate,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic dataset from the `[data]` section.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes metrics, timing and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the final checkpoint inside `--out`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Which split to evaluate (train, val or test).
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Tape vs finite differences vs adjoint on the shipped fixtures.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        latent_dim: usize,
    },
    /// Strong and weak error table for an analytic fixture.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gbm")]
        fixture: String,
        #[arg(long, default_value_t = 1.0)]
        drift: f64,
        #[arg(long, default_value_t = 0.5)]
        vol: f64,
        #[arg(long, default_value_t = 1.0)]
        z0: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Coarsest step is 2^-min_level, finest 2^-max_level.
        #[arg(long, default_value_t = 4)]
        min_level: u32,
        #[arg(long, default_value_t = 9)]
        max_level: u32,
    },
    /// Encoder-width / step-size refinement ladder against the exact smoother.
    TheoremLadder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 5)]
        n_seeds: u64,
    },
    /// Plain, antithetic and clipped gradient variance on the OU fixture.
    VarianceReport {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n_seeds: usize,
        /// Restrict the comparison to drift parameters.
        #[arg(long)]
        drift_only: bool,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = common.grad_mode {
        cfg.grad_mode = g.into();
    }
    if let Some(p) = common.posterior {
        cfg.posterior = p.into();
    }
    if let Some(s) = common.scheme {
        cfg.scheme = s.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, text)?;
    Ok(p)
}

fn dataset_for(cfg: &TrainConfig, data: &Option<PathBuf>) -> Result<Dataset> {
    match data {
        Some(p) => load_dataset(p),
        None => cfg.generate_data(cfg.seed),
    }
}

/// Runs one parsed command. The returned text is the stdout summary.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let ds = cfg.generate_data(cfg.seed)?;
            fs::create_dir_all(&common.out)?;
            let path = common.out.join(DATASET_FILE);
            save_dataset(&path, &ds)?;
            Ok(format!("wrote {} sequences to {}\n", ds.len(), path.display()))
        }
        Command::Train { common, data } => {
            let cfg = load_config(&common)?;
            let ds = dataset_for(&cfg, &data)?;
            write(&common.out, "config.txt", &cfg.render())?;
            let out = train(&cfg, &ds, Some(&common.out))?;
            let last = out.records.last();
            Ok(format!(
                "trained {} steps; final objective {}; validation elbo {}; blowups {}\n",
                cfg.steps,
                last.map_or("na".into(), |r| crate::fmt::fmt_f64(r.breakdown.total)),
                last.and_then(|r| r.val_elbo).map_or("na".into(), crate::fmt::fmt_f64),
                out.total_blowups
            ))
        }
        Command::Eval { common, checkpoint, data, split } => {
            let checkpoint = checkpoint.unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
            let (store, meta) = load_checkpoint(&checkpoint)?;
            let mut cfg = config_from_meta(&meta)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(s) = common.scheme {
                cfg.scheme = s.into();
            }
            let model = SldiModel::attach(&cfg.model_spec(), &store)?;
            let ds = dataset_for(&cfg, &data)?;
            let which = Split::from_name(&split)
                .ok_or_else(|| SldiError::ConfigError(format!("unknown split '{split}' (train, val or test)")))?;
            let seqs = ds.split(which);
            if seqs.is_empty() {
                return Err(SldiError::InvalidInput(format!("dataset has no {split} sequences")));
            }
            let report = evaluate(&model, store.flat(), &seqs, &eval_config(&cfg))?;
            let text = report.to_text();
            write(&common.out, "eval.txt", &text)?;
            Ok(text)
        }
        Command::Gradcheck { common, latent_dim } => {
            let report = gradcheck(&GradcheckConfig { seed: common.seed.unwrap_or(0), latent_dim, fault_block: None })?;
            let text = report.to_text();
            write(&common.out, "gradcheck.txt", &text)?;
            if !report.passed() {
                return Err(SldiError::InvalidState(format!(
                    "gradient check failed for {} block(s)",
                    report.failures().len()
                )));
            }
            Ok(text.lines().last().unwrap_or_default().to_string() + "\n")
        }
        Command::Convergence { common, fixture, drift, vol, z0, horizon, paths, min_level, max_level } => {
            if min_level > max_level || max_level > 20 {
                return Err(SldiError::ConfigError("need min_level <= max_level <= 20".into()));
            }
            let fx = AnalyticFixture::from_name(&fixture, drift, vol, z0)
                .map_err(|e| SldiError::ConfigError(e.to_string()))?;
            let dts: Vec<f64> = (min_level..=max_level).map(|l| 0.5f64.powi(l as i32)).collect();
            let scheme = common.scheme.map_or(Scheme::EulerMaruyama, Scheme::from);
            let table = strong_weak_error(fx, scheme, horizon, &dts, paths, common.seed.unwrap_or(0))?;
            let csv = table.to_csv();
            write(&common.out, &format!("convergence_{}_{}.csv", fx.name(), scheme.name()), &csv)?;
            Ok(format!(
                "strong slope {} weak slope {}\n",
                table.strong_slope.map_or("na".into(), crate::fmt::fmt_f64),
                table.weak_slope.map_or("na".into(), crate::fmt::fmt_f64)
            ))
        }
        Command::TheoremLadder { common, steps, n_seeds } => {
            let base = common.seed.unwrap_or(0);
            let mut cfg = LadderConfig { seeds: (base..base + n_seeds).collect(), ..Default::default() };
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let report = theorem_ladder(&cfg)?;
            write(&common.out, "ladder.csv", &report.to_csv())?;
            let summary = report.summary();
            write(&common.out, "ladder_summary.txt", &summary)?;
            Ok(summary)
        }
        Command::VarianceReport { common, n_seeds, drift_only } => {
            let cfg = VarianceConfig {
                n_seeds,
                drift_only,
                seed: common.seed.unwrap_or(0),
                scheme: common.scheme.map_or(Scheme::EulerMaruyama, Scheme::from),
                grad_mode: common.grad_mode.map_or(GradMode::Tape, GradMode::from),
                ..Default::default()
            };
            let report = gradient_variance_report(&cfg)?;
            write(&common.out, "variance.csv", &report.to_csv())?;
            let tv = |e| crate::fmt::fmt_f64(report.get(e).trace_variance);
            use crate::adjoint::Estimator::*;
            Ok(format!(
                "trace variance plain {} antithetic {} clipped {}; antithetic unbiased {}\n",
                tv(Plain),
                tv(Antithetic),
                tv(Clipped),
                report.antithetic_unbiased()
            ))
        }
    }
}
