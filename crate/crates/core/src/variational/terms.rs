//! Per-term pieces of the objective: transition and pathwise KL, emission
//! likelihoods, the drift-energy penalty, annealing and antithetic pairs.

use std::f64::consts::PI;

use crate::error::{check_len, Result, SldiError};
use crate::nn::{NeuralField, Tape, Var};
use crate::sde::{BrownianPath, DiffusionMode, LatentPath, Sde};

/// KL between the Euler–Maruyama transitions `N(z + mu_q dt, S^2 dt)` and
/// `N(z + mu_p dt, S^2 dt)` with diagonal `S`:
/// `dt/2 * sum_i (mu_q,i - mu_p,i)^2 / S_i^2`.
pub fn transition_kl_step(mu_q: &[f64], mu_p: &[f64], sigma_diag: &[f64], dt: f64) -> f64 {
    0.5 * dt
        * mu_q
            .iter()
            .zip(mu_p)
            .zip(sigma_diag)
            .map(|((q, p), s)| (q - p).powi(2) / (s * s))
            .sum::<f64>()
}

pub fn transition_kl_on_tape(tape: &mut Tape, mu_q: Var, mu_p: Var, sigma: Var, dt: f64) -> Var {
    let diff = tape.sub(mu_q, mu_p);
    let num = tape.square(diff);
    let den = tape.square(sigma);
    let ratio = tape.div(num, den);
    let s = tape.sum(ratio);
    tape.scale(s, 0.5 * dt)
}

/// Riemann sum of transition KLs along a stored path: an estimate of
/// `1/2 E int |mu_q - mu_p|^2_{D^-1} dt` for posterior and prior SDEs that
/// share their (diagonal) diffusion. The diffusion of `prior` is used.
pub fn girsanov_kl_path(path: &LatentPath, posterior: &Sde, prior: &Sde) -> Result<f64> {
    if prior.model.mode == DiffusionMode::Full {
        return Err(SldiError::UnsupportedScheme(
            "pathwise KL requires diagonal or scalar diffusion".into(),
        ));
    }
    path.noise.check_grid(&path.grid)?;
    let mut total = 0.0;
    for (k, (t, dt)) in path.grid.steps().enumerate() {
        let z = &path.states[k];
        let (sigma, _) = prior.diag_sigma_and_slope(z, t)?;
        total += transition_kl_step(&posterior.drift(z, t), &prior.drift(z, t), &sigma, dt);
    }
    Ok(total)
}

/// Observation model `x ~ N(f(z), diag(v))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Shared fixed variance `v`.
    Fixed { var: f64 },
    /// Decoder outputs `2n` values: mean then log-variance.
    Heteroscedastic,
}

impl NoiseModel {
    pub fn decoder_outputs(self, n: usize) -> usize {
        match self {
            NoiseModel::Fixed { .. } => n,
            NoiseModel::Heteroscedastic => 2 * n,
        }
    }
}

fn gaussian_logpdf(x: &[f64], mean: &[f64], log_var: impl Fn(usize) -> f64) -> f64 {
    x.iter()
        .zip(mean)
        .enumerate()
        .map(|(i, (x, m))| {
            let lv = log_var(i);
            -0.5 * ((2.0 * PI).ln() + lv + (x - m).powi(2) * (-lv).exp())
        })
        .sum()
}

/// `log p(x | z)` under the decoder and noise model.
pub fn emission_loglik(decoder: &NeuralField, params: &[f64], z: &[f64], x: &[f64], noise: NoiseModel) -> Result<f64> {
    let out = decoder.eval(params, z)?;
    check_len("decoder output", out.len(), noise.decoder_outputs(x.len()))?;
    Ok(match noise {
        NoiseModel::Fixed { var } => gaussian_logpdf(x, &out, |_| var.ln()),
        NoiseModel::Heteroscedastic => gaussian_logpdf(x, &out[..x.len()], |i| out[x.len() + i]),
    })
}

pub fn emission_on_tape(tape: &mut Tape, decoder: &NeuralField, z: Var, x: &[f64], noise: NoiseModel) -> Var {
    let n = x.len();
    let out = decoder.apply(tape, z);
    let xv = tape.leaf(x.to_vec());
    match noise {
        NoiseModel::Fixed { var } => {
            let r = tape.sub(xv, out);
            let sq = tape.square(r);
            let s = tape.sum(sq);
            tape.affine(s, -0.5 / var, -0.5 * n as f64 * (2.0 * PI * var).ln())
        }
        NoiseModel::Heteroscedastic => {
            let mean = tape.slice(out, 0, n);
            let lv = tape.slice(out, n, n);
            let r = tape.sub(xv, mean);
            let sq = tape.square(r);
            let neg = tape.scale(lv, -1.0);
            let prec = tape.exp(neg);
            let quad = tape.mul(sq, prec);
            let body = tape.add(quad, lv);
            let s = tape.sum(body);
            tape.affine(s, -0.5, -0.5 * n as f64 * (2.0 * PI).ln())
        }
    }
}

/// `lambda * sum_k |mu(z_k, t_k)|^2 dt_k` (left Riemann sum of the drift
/// energy along the path).
pub fn path_energy_penalty(path: &LatentPath, sde: &Sde, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * path
            .grid
            .steps()
            .enumerate()
            .map(|(k, (t, dt))| sde.drift(&path.states[k], t).iter().map(|m| m * m).sum::<f64>() * dt)
            .sum::<f64>()
}

/// `|mu|^2 dt` for one step, recorded on the tape.
pub fn drift_energy_on_tape(tape: &mut Tape, mu: Var, dt: f64) -> Var {
    let sq = tape.square(mu);
    let s = tape.sum(sq);
    tape.scale(s, dt)
}

/// Diagnostic `sum_k |z_{k+1} - z_k|^2 / dt_k`. It grows like the number
/// of steps for any path with noise and is never part of the objective.
pub fn raw_increment_energy(path: &LatentPath) -> f64 {
    path.grid
        .steps()
        .enumerate()
        .map(|(k, (_, dt))| {
            path.states[k + 1]
                .iter()
                .zip(&path.states[k])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / dt
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlSchedule {
    Constant,
    LinearWarmup { steps: usize },
    /// Warmup scaled by `clamp(h_ref / H, 0.5, 2)` with `H` the running
    /// posterior entropy; a non-positive `H` uses the upper clamp.
    EntropyAware { steps: usize, h_ref: f64 },
}

impl KlSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            KlSchedule::Constant => "constant",
            KlSchedule::LinearWarmup { .. } => "linear_warmup",
            KlSchedule::EntropyAware { .. } => "entropy_aware",
        }
    }
}

/// Weight on the KL terms at optimizer step `step`.
pub fn kl_anneal(step: usize, schedule: KlSchedule, running_entropy: Option<f64>) -> f64 {
    let ramp = |k: usize| if k == 0 { 1.0 } else { (step as f64 / k as f64).min(1.0) };
    match schedule {
        KlSchedule::Constant => 1.0,
        KlSchedule::LinearWarmup { steps } => ramp(steps),
        KlSchedule::EntropyAware { steps, h_ref } => {
            let w = ramp(steps);
            if w >= 1.0 {
                return 1.0;
            }
            let ratio = match running_entropy {
                None => 1.0,
                Some(h) if h > 0.0 => (h_ref / h).clamp(0.5, 2.0),
                Some(_) => 2.0,
            };
            (w * ratio).clamp(0.0, 1.0)
        }
    }
}

/// `(payoff(W) + payoff(-W)) / 2`.
pub fn antithetic_estimate(payoff: impl Fn(&BrownianPath) -> f64, noise: &BrownianPath) -> f64 {
    0.5 * (payoff(noise) + payoff(&noise.antithetic()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ParamStore};
    use crate::sde::{fixtures, sample_brownian, Scheme, TimeGrid};
    use proptest::prelude::*;

    #[test]
    fn transition_kl_values() {
        assert_eq!(transition_kl_step(&[0.4, 1.0], &[0.4, 1.0], &[1.0, 2.0], 0.1), 0.0);
        assert!((transition_kl_step(&[0.3], &[0.0], &[1.0], 0.5) - 0.0225).abs() < 1e-15);
        let a = transition_kl_step(&[0.3, -0.2], &[0.1, 0.5], &[0.7, 1.3], 0.5);
        let b = transition_kl_step(&[0.3, -0.2], &[0.1, 0.5], &[0.7, 1.3], 0.25);
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn girsanov_constant_mismatch_is_deterministic() {
        // sigma = 2, delta = 1, T = 1 -> T delta^2 / (2 sigma^2) = 0.125
        let (prior, pp) = fixtures::constant(0.0, 2.0);
        let (post, qp) = fixtures::constant(1.0, 2.0);
        let g = TimeGrid::uniform(0.0, 1.0, 32).unwrap();
        let w = sample_brownian(&g, 1, 3).unwrap();
        let path = post.bind(qp.flat()).simulate(&[0.0], &g, &w, Scheme::EulerMaruyama).unwrap();
        let kl = girsanov_kl_path(&path, &post.bind(qp.flat()), &prior.bind(pp.flat())).unwrap();
        assert!((kl - 0.125).abs() < 1e-13);
        let same = girsanov_kl_path(&path, &prior.bind(pp.flat()), &prior.bind(pp.flat())).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn girsanov_rejects_full_diffusion() {
        let (m, p) = fixtures::linear(&[vec![0.0]], &[vec![1.0, 0.5]]);
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let w = sample_brownian(&g, 2, 0).unwrap();
        let path = m.bind(p.flat()).simulate(&[0.0], &g, &w, Scheme::EulerMaruyama).unwrap();
        let sde = m.bind(p.flat());
        assert!(matches!(girsanov_kl_path(&path, &sde, &sde), Err(SldiError::UnsupportedScheme(_))));
    }

    fn identity_decoder(outputs: usize) -> (NeuralField, ParamStore) {
        let mut store = ParamStore::new();
        let mut w = vec![0.0; outputs];
        w[0] = 1.0;
        let f = NeuralField::affine_with(&mut store, "decoder", &w, &vec![0.0; outputs], Activation::Identity).unwrap();
        (f, store)
    }

    #[test]
    fn emission_values() {
        let (f, p) = identity_decoder(1);
        let base = emission_loglik(&f, p.flat(), &[0.7], &[0.7], NoiseModel::Fixed { var: 1.0 }).unwrap();
        assert!((base + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((base - (-0.918939)).abs() < 1e-6);
        let r = 0.4;
        let off = emission_loglik(&f, p.flat(), &[0.7], &[0.7 + r], NoiseModel::Fixed { var: 1.0 }).unwrap();
        assert!((off - (base - r * r / 2.0)).abs() < 1e-15);
        let (h, hp) = identity_decoder(2);
        let het = emission_loglik(&h, hp.flat(), &[0.7], &[0.7 + r], NoiseModel::Heteroscedastic).unwrap();
        assert_eq!(het, off);
    }

    #[test]
    fn emission_tape_matches_direct() {
        let mut store = ParamStore::new();
        let f = NeuralField::affine_with(&mut store, "decoder", &[0.5, -1.0, 0.2, 0.3, 0.1, 0.7, -0.4, 0.9], &[0.1, 0.0, -0.3, 0.2], Activation::Identity).unwrap();
        let z = [0.3, -0.6];
        let x = [0.2, 1.1];
        let mut tape = Tape::new(store.flat());
        let zv = tape.leaf(z.to_vec());
        let v = emission_on_tape(&mut tape, &f, zv, &x, NoiseModel::Heteroscedastic);
        let want = emission_loglik(&f, store.flat(), &z, &x, NoiseModel::Heteroscedastic).unwrap();
        assert!((tape.scalar(v) - want).abs() < 1e-14);

        let mut store = ParamStore::new();
        let f = NeuralField::affine_with(&mut store, "decoder", &[0.5, -1.0, 0.2, 0.3], &[0.1, 0.0], Activation::Identity).unwrap();
        let mut tape = Tape::new(store.flat());
        let zv = tape.leaf(z.to_vec());
        let v = emission_on_tape(&mut tape, &f, zv, &x, NoiseModel::Fixed { var: 0.1 });
        let want = emission_loglik(&f, store.flat(), &z, &x, NoiseModel::Fixed { var: 0.1 }).unwrap();
        assert!((tape.scalar(v) - want).abs() < 1e-13);
    }

    #[test]
    fn path_energy_constant_drift() {
        let (m, p) = fixtures::constant(0.6, 0.3);
        let g = TimeGrid::uniform(0.0, 2.0, 16).unwrap();
        let w = sample_brownian(&g, 1, 1).unwrap();
        let sde = m.bind(p.flat());
        let path = sde.simulate(&[0.0], &g, &w, Scheme::EulerMaruyama).unwrap();
        assert_eq!(path_energy_penalty(&path, &sde, 0.0), 0.0);
        assert!((path_energy_penalty(&path, &sde, 0.5) - 0.5 * 0.36 * 2.0).abs() < 1e-14);
        assert!(raw_increment_energy(&path) > 0.0);
    }

    #[test]
    fn annealing_schedules() {
        let lw = KlSchedule::LinearWarmup { steps: 100 };
        assert_eq!(kl_anneal(0, lw, None), 0.0);
        assert_eq!(kl_anneal(50, lw, None), 0.5);
        assert_eq!(kl_anneal(100, lw, None), 1.0);
        assert_eq!(kl_anneal(1000, lw, Some(0.1)), 1.0);
        assert_eq!(kl_anneal(7, KlSchedule::Constant, None), 1.0);
        assert_eq!(kl_anneal(3, KlSchedule::LinearWarmup { steps: 0 }, None), 1.0);
        let ea = KlSchedule::EntropyAware { steps: 100, h_ref: 1.4 };
        assert_eq!(kl_anneal(50, ea, Some(1.4)), 0.5);
        assert_eq!(kl_anneal(50, ea, Some(0.1)), 1.0);
        assert_eq!(kl_anneal(50, ea, Some(100.0)), 0.25);
        assert_eq!(kl_anneal(100, ea, Some(100.0)), 1.0);
    }

    #[test]
    fn antithetic_symmetry_cases() {
        let g = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let w = sample_brownian(&g, 1, 2).unwrap();
        let linear = |b: &BrownianPath| 3.0 + 2.0 * b.total()[0];
        assert!((antithetic_estimate(linear, &w) - 3.0).abs() < 1e-15);
        let even = |b: &BrownianPath| b.increments.iter().map(|v| v[0] * v[0]).sum::<f64>();
        assert!((antithetic_estimate(even, &w) - even(&w)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn kl_terms_nonnegative(dq in -3.0f64..3.0, dp in -3.0f64..3.0, s in 0.05f64..3.0, dt in 1e-4f64..1.0) {
            prop_assert!(transition_kl_step(&[dq], &[dp], &[s], dt) >= 0.0);
        }

        #[test]
        fn warmup_is_monotone(a in 0usize..1000, b in 0usize..1000, k in 1usize..500) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s = KlSchedule::LinearWarmup { steps: k };
            prop_assert!(kl_anneal(lo, s, None) <= kl_anneal(hi, s, None));
        }
    }
}
