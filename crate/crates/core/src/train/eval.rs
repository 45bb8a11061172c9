//! Held-out predictive metrics and the Monte Carlo ELBO of a trained model.

use rayon::prelude::*;

use crate::data::ObservationSeq;
use crate::error::{Result, SldiError};
use crate::fmt::fmt_f64;
use crate::rng::{derive_seed, rng_from_seed, standard_normals};
use crate::sde::{Scheme, TimeGrid};
use crate::variational::elbo::sample_noise;
use crate::variational::{batch_objective, reparam_sample, ElboBreakdown, ElboConfig, NoiseModel, SldiModel};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub samples: usize,
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub elbo: ElboBreakdown,
    /// Root mean squared error of the posterior-mean prediction at held-out
    /// timestamps, over all held-out coordinates.
    pub rmse: f64,
    /// Mean negative log density of held-out values under a Gaussian fit to
    /// the predictive samples.
    pub nll: f64,
    pub coverage50: f64,
    pub coverage90: f64,
    pub n_heldout: usize,
    /// Mean lag-1 autocorrelation of posterior path increments (descriptive).
    pub coherence: f64,
    pub blowups: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let b = &self.elbo;
        format!(
            "elbo={} recon={} kl_z0={} kl_path={} rmse={} nll={} coverage50={} coverage90={} n_heldout={} coherence={} blowups={}\n",
            fmt_f64(b.total),
            fmt_f64(b.recon),
            fmt_f64(b.kl_z0),
            fmt_f64(b.kl_path),
            fmt_f64(self.rmse),
            fmt_f64(self.nll),
            fmt_f64(self.coverage50),
            fmt_f64(self.coverage90),
            self.n_heldout,
            fmt_f64(self.coherence),
            self.blowups
        )
    }
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn lag1_autocorrelation(x: &[f64]) -> Option<f64> {
    if x.len() < 3 {
        return None;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if den == 0.0 {
        return None;
    }
    Some(x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / den)
}

#[derive(Default)]
struct SeqStats {
    sq_err: f64,
    nll: f64,
    in50: usize,
    in90: usize,
    count: usize,
    coherence: Vec<f64>,
    blowups: usize,
}

fn sequence_stats(model: &SldiModel, params: &[f64], seq: &ObservationSeq, cfg: &EvalConfig, seed: u64) -> Result<SeqStats> {
    let mut st = SeqStats::default();
    if seq.len() < 2 {
        return Ok(st);
    }
    let cond: Vec<usize> = (0..seq.len()).step_by(2).collect();
    let held: Vec<usize> = (1..seq.len()).step_by(2).collect();
    let cs = seq.select(&cond);
    let t0 = seq.timestamps[0].min(0.0);
    let (grid, idx) = TimeGrid::merged(t0, *seq.timestamps.last().unwrap(), cfg.dt, &seq.timestamps)?;
    let q0 = model.encoder.encode(params, t0, &cs.timestamps, &cs.values)?;
    let sde = model.generator.bind(params);
    let n = seq.obs_dim();
    // per held-out observation: decoder means and predictive draws per coordinate
    let mut means = vec![vec![Vec::new(); n]; held.len()];
    let mut draws = vec![vec![Vec::new(); n]; held.len()];
    for s in 0..cfg.samples {
        let (eps, noise) = sample_noise(seed, s, model.latent_dim(), &grid, model.prior.noise_dim)?;
        let z0 = reparam_sample(&q0, &eps);
        let path = match sde.simulate(&z0, &grid, &noise, cfg.scheme) {
            Ok(p) => p,
            Err(SldiError::NumericalBlowup { .. }) => {
                st.blowups += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for c in 0..model.latent_dim() {
            let inc: Vec<f64> = path.states.windows(2).map(|w| w[1][c] - w[0][c]).collect();
            if let Some(r) = lag1_autocorrelation(&inc) {
                st.coherence.push(r);
            }
        }
        let mut rng = rng_from_seed(derive_seed(derive_seed(seed, s as u64), 2));
        for (h, &j) in held.iter().enumerate() {
            let out = model.decoder.eval(params, &path.states[idx[j]])?;
            let e = standard_normals(&mut rng, n);
            for c in 0..n {
                let var = match model.noise {
                    NoiseModel::Fixed { var } => var,
                    NoiseModel::Heteroscedastic => out[n + c].exp(),
                };
                means[h][c].push(out[c]);
                draws[h][c].push(out[c] + var.sqrt() * e[c]);
            }
        }
    }
    if st.blowups == cfg.samples {
        return Ok(st);
    }
    for (h, &j) in held.iter().enumerate() {
        for c in 0..n {
            let x = seq.values[j][c];
            let m = &means[h][c];
            let pred = m.iter().sum::<f64>() / m.len() as f64;
            st.sq_err += (x - pred).powi(2);
            let mut y = draws[h][c].clone();
            let k = y.len() as f64;
            let mu = y.iter().sum::<f64>() / k;
            let var = if y.len() > 1 { y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0) } else { f64::NAN };
            st.nll += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + (x - mu).powi(2) / (2.0 * var);
            y.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            if x >= quantile(&y, 0.25) && x <= quantile(&y, 0.75) {
                st.in50 += 1;
            }
            if x >= quantile(&y, 0.05) && x <= quantile(&y, 0.95) {
                st.in90 += 1;
            }
            st.count += 1;
        }
    }
    Ok(st)
}

/// Conditions on the even-indexed observations of each sequence and
/// predicts the odd-indexed ones from `cfg.samples` posterior paths; also
/// reports the `cfg.samples`-sample ELBO on the full sequences.
pub fn evaluate(model: &SldiModel, params: &[f64], seqs: &[&ObservationSeq], cfg: &EvalConfig) -> Result<EvalReport> {
    if seqs.is_empty() {
        return Err(SldiError::InvalidInput("nothing to evaluate".into()));
    }
    if let Some(s) = seqs.iter().find(|s| s.obs_dim() != model.obs_dim()) {
        return Err(SldiError::ConfigError(format!(
            "sequence {} has {} observed dimensions but the model expects {}",
            s.id,
            s.obs_dim(),
            model.obs_dim()
        )));
    }
    let ecfg = ElboConfig {
        dt: cfg.dt,
        scheme: cfg.scheme,
        lambda: cfg.lambda,
        beta: cfg.beta,
        kl_weight: 1.0,
        n_samples: cfg.samples,
        grad_mode: crate::adjoint::GradMode::Tape,
    };
    let elbo = batch_objective(model, params, seqs, &ecfg, cfg.seed, false)?;
    let stats: Vec<SeqStats> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| sequence_stats(model, params, s, cfg, derive_seed(derive_seed(cfg.seed, 1), i as u64)))
        .collect::<Result<_>>()?;
    let mut tot = SeqStats::default();
    for s in stats {
        tot.sq_err += s.sq_err;
        tot.nll += s.nll;
        tot.in50 += s.in50;
        tot.in90 += s.in90;
        tot.count += s.count;
        tot.coherence.extend(s.coherence);
        tot.blowups += s.blowups;
    }
    let c = tot.count as f64;
    let ratio = |v: f64| if tot.count == 0 { f64::NAN } else { v / c };
    Ok(EvalReport {
        elbo: elbo.breakdown,
        rmse: ratio(tot.sq_err).sqrt(),
        nll: ratio(tot.nll),
        coverage50: ratio(tot.in50 as f64),
        coverage90: ratio(tot.in90 as f64),
        n_heldout: tot.count,
        coherence: if tot.coherence.is_empty() { f64::NAN } else { tot.coherence.iter().sum::<f64>() / tot.coherence.len() as f64 },
        blowups: tot.blowups + elbo.blowups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 5.0);
        assert_eq!(quantile(&x, 0.5), 3.0);
        assert_eq!(quantile(&x, 0.125), 1.5);
    }

    #[test]
    fn autocorrelation_of_alternating_signal() {
        let r = lag1_autocorrelation(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        assert!(r < -0.8);
        assert!(lag1_autocorrelation(&[2.0, 2.0, 2.0]).is_none());
    }
}
