//! Monte Carlo ELBO over sequences and batches, with parameter gradients
//! from the tape or from the continuous adjoint.

use rayon::prelude::*;

use super::gaussian::{gaussian_kl_on_tape, reparam_on_tape, GaussianDist};
use super::model::{PosteriorMode, SldiModel};
use super::terms::{drift_energy_on_tape, emission_on_tape, transition_kl_on_tape};
use crate::adjoint::{adjoint_backward, AdjointTrace, CoAdjointField, GradMode};
use crate::data::ObservationSeq;
use crate::error::{Result, SldiError};
use crate::nn::{Tape, Var};
use crate::rng::{derive_seed, rng_from_seed, standard_normals};
use crate::sde::grid::MERGE_TOLERANCE;
use crate::sde::{sample_brownian, BrownianPath, LatentPath, Scheme, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct ElboConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Drift-energy penalty weight.
    pub lambda: f64,
    /// Co-adjoint penalty weight.
    pub beta: f64,
    /// Annealing weight on the KL terms.
    pub kl_weight: f64,
    pub n_samples: usize,
    pub grad_mode: GradMode,
}

impl Default for ElboConfig {
    fn default() -> Self {
        ElboConfig {
            dt: 1.0 / 32.0,
            scheme: Scheme::EulerMaruyama,
            lambda: 0.01,
            beta: 0.1,
            kl_weight: 1.0,
            n_samples: 1,
            grad_mode: GradMode::Tape,
        }
    }
}

impl ElboConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.n_samples == 0 {
            return Err(SldiError::ConfigError("need dt > 0 and at least one sample".into()));
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) || !(0.0..=1.0).contains(&self.kl_weight) {
            return Err(SldiError::ConfigError("need lambda, beta >= 0 and kl_weight in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl_z0: f64,
    pub kl_path: f64,
    pub r_path: f64,
    pub adjoint_penalty: f64,
    pub total: f64,
    pub annealing_weight: f64,
}

impl ElboBreakdown {
    /// Fills in `total` from the parts.
    pub fn assemble(recon: f64, kl_z0: f64, kl_path: f64, r_path: f64, adjoint_penalty: f64, w: f64) -> Self {
        ElboBreakdown {
            recon,
            kl_z0,
            kl_path,
            r_path,
            adjoint_penalty,
            total: recon - w * (kl_z0 + kl_path) - r_path - adjoint_penalty,
            annealing_weight: w,
        }
    }

    pub fn identity_residual(&self) -> f64 {
        let b = Self::assemble(self.recon, self.kl_z0, self.kl_path, self.r_path, self.adjoint_penalty, self.annealing_weight);
        (b.total - self.total).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub breakdown: ElboBreakdown,
    /// Gradient of `breakdown.total` with respect to the flat parameters.
    pub grad: Option<Vec<f64>>,
    pub samples_used: usize,
    pub blowups: usize,
    /// Entropy of the encoded `q(z0)`.
    pub z0_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Mean over the sequences that produced at least one sample.
    pub breakdown: ElboBreakdown,
    pub grad: Option<Vec<f64>>,
    pub blowups: usize,
    pub samples: usize,
    pub failed_sequences: usize,
    pub mean_entropy: f64,
}

/// Simulation grid of a sequence: step at most `dt` from `min(0, t_1)` to the
/// last timestamp with every timestamp inserted as a knot. Returns the grid
/// and the knot index of each observation.
pub fn sequence_grid(seq: &ObservationSeq, dt: f64) -> Result<(TimeGrid, Vec<usize>)> {
    let ts = &seq.timestamps;
    if ts.is_empty() {
        return Err(SldiError::InvalidInput(format!("sequence {} has no observations", seq.id)));
    }
    let t0 = ts[0].min(0.0);
    let t1 = ts[ts.len() - 1];
    if t1 - t0 <= MERGE_TOLERANCE {
        return Ok((TimeGrid::from_knots(vec![t0])?, vec![0; ts.len()]));
    }
    TimeGrid::merged(t0, t1, dt, ts)
}

/// Initial-state noise and Brownian path of Monte Carlo sample `s`.
pub fn sample_noise(seed: u64, s: usize, latent_dim: usize, grid: &TimeGrid, noise_dim: usize) -> Result<(Vec<f64>, BrownianPath)> {
    let ss = derive_seed(seed, s as u64);
    let eps = standard_normals(&mut rng_from_seed(derive_seed(ss, 0)), latent_dim);
    Ok((eps, sample_brownian(grid, noise_dim, derive_seed(ss, 1))?))
}

enum States<'a> {
    Simulate { z0: Var, noise: &'a BrownianPath },
    Given(&'a [Vec<f64>]),
}

struct SampleTerms {
    states: Vec<Var>,
    recon: Var,
    kl_path: Option<Var>,
    energy: Option<Var>,
}

fn finite(tape: &Tape, v: Var) -> bool {
    tape.value(v).iter().all(|x| x.is_finite())
}

#[allow(clippy::too_many_arguments)]
fn record_sample(
    tape: &mut Tape,
    model: &SldiModel,
    grid: &TimeGrid,
    idx: &[usize],
    seq: &ObservationSeq,
    cfg: &ElboConfig,
    source: States,
) -> Result<SampleTerms> {
    let mut states = match source {
        States::Simulate { z0, .. } => vec![z0],
        States::Given(values) => values.iter().map(|v| tape.leaf(v.clone())).collect(),
    };
    let separate = model.mode == PosteriorMode::Separate;
    let mut kls = Vec::new();
    let mut energies = Vec::new();
    for (k, (t, dt)) in grid.steps().enumerate() {
        let z = states[k];
        let mu_p = model.prior.drift_on_tape(tape, z, t);
        let mu_gen = if separate {
            let mu_q = model.generator.drift_on_tape(tape, z, t);
            let sigma = model.prior.diag_sigma_on_tape(tape, z, t)?;
            kls.push(transition_kl_on_tape(tape, mu_q, mu_p, sigma, dt));
            mu_q
        } else {
            mu_p
        };
        if cfg.lambda > 0.0 {
            energies.push(drift_energy_on_tape(tape, mu_p, dt));
        }
        if let States::Simulate { noise, .. } = source {
            let next = model
                .generator
                .step_with_drift_on_tape(tape, z, t, dt, &noise.increments[k], cfg.scheme, mu_gen)?;
            if !finite(tape, next) {
                return Err(SldiError::blowup(k, "non-finite latent state"));
            }
            states.push(next);
        }
    }
    let emissions: Vec<Var> = idx
        .iter()
        .zip(&seq.values)
        .map(|(&i, x)| emission_on_tape(tape, &model.decoder, states[i], x, model.noise))
        .collect();
    let recon = tape.add_all(&emissions);
    let kl_path = (!kls.is_empty()).then(|| tape.add_all(&kls));
    let energy = (!energies.is_empty()).then(|| tape.add_all(&energies));
    for v in [Some(recon), kl_path, energy].into_iter().flatten() {
        if !finite(tape, v) {
            return Err(SldiError::blowup(grid.num_steps(), "non-finite objective term"));
        }
    }
    Ok(SampleTerms { states, recon, kl_path, energy })
}

fn mean_of(tape: &mut Tape, terms: &[Option<Var>], inv: f64) -> Option<Var> {
    let present: Vec<Var> = terms.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let s = tape.add_all(&present);
    Some(tape.scale(s, inv))
}

/// Adds `beta * co_adjoint_train_loss` to the breakdown and its (negated,
/// scaled) gradient to `grad`. `adjoints` are loss cotangents per knot.
fn co_adjoint_term(
    model: &SldiModel,
    params: &[f64],
    cfg: &ElboConfig,
    path: &LatentPath,
    adjoints: Vec<Vec<f64>>,
    grad: &mut [f64],
) -> Result<f64> {
    let Some(net) = &model.coadjoint else { return Ok(0.0) };
    if cfg.beta == 0.0 || path.grid.num_steps() == 0 {
        return Ok(0.0);
    }
    let field = CoAdjointField::new(net.clone(), model.latent_dim())?;
    let trace = AdjointTrace { grid: path.grid.clone(), adjoints, param_grad: vec![] };
    let (loss, g) = field.train_loss_and_grad(params, path, &trace)?;
    for (a, b) in grad.iter_mut().zip(g) {
        *a -= cfg.beta * b;
    }
    Ok(cfg.beta * loss)
}

/// Objective of one sequence with `cfg.n_samples` reparameterized samples.
/// Samples whose simulation blows up are skipped; if every sample blows up
/// the blowup is returned as an error.
pub fn sequence_objective(
    model: &SldiModel,
    params: &[f64],
    seq: &ObservationSeq,
    cfg: &ElboConfig,
    seed: u64,
    want_grad: bool,
) -> Result<SequenceResult> {
    cfg.validate()?;
    let (grid, idx) = sequence_grid(seq, cfg.dt)?;
    let (d, m) = (model.latent_dim(), model.prior.noise_dim);
    let mut tape = Tape::new(params);
    let (mean, logvar) = model.encoder.encode_on_tape(&mut tape, grid.t0(), &seq.timestamps, &seq.values)?;
    let q0 = GaussianDist {
        mean: tape.value(mean).to_vec(),
        var: tape.value(logvar).iter().map(|v| v.exp()).collect(),
    };
    let kl_z0 = gaussian_kl_on_tape(&mut tape, mean, logvar, &model.z0_prior);
    let adjoint = cfg.grad_mode.adjoint_mode().filter(|_| want_grad);
    let gen_sde = model.generator.bind(params);

    let mut samples = Vec::new();
    let mut blowups = 0;
    let mut first_error = None;
    for s in 0..cfg.n_samples {
        let (eps, noise) = sample_noise(seed, s, d, &grid, m)?;
        let z0 = reparam_on_tape(&mut tape, mean, logvar, &eps);
        let rec = match adjoint {
            None => record_sample(&mut tape, model, &grid, &idx, seq, cfg, States::Simulate { z0, noise: &noise })
                .map(|t| (t, None)),
            Some(_) => gen_sde
                .simulate(tape.value(z0), &grid, &noise, cfg.scheme)
                .and_then(|path| {
                    let t = record_sample(&mut tape, model, &grid, &idx, seq, cfg, States::Given(&path.states))?;
                    Ok((t, Some(path)))
                }),
        };
        match rec {
            Ok((terms, path)) => samples.push((z0, noise, terms, path)),
            Err(e @ SldiError::NumericalBlowup { .. }) => {
                blowups += 1;
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(first_error.expect("at least one sample was attempted"));
    }
    let n_ok = samples.len();
    let inv = 1.0 / n_ok as f64;
    let recons: Vec<Option<Var>> = samples.iter().map(|s| Some(s.2.recon)).collect();
    let kls: Vec<Option<Var>> = samples.iter().map(|s| s.2.kl_path).collect();
    let energies: Vec<Option<Var>> = samples.iter().map(|s| s.2.energy).collect();
    let recon = mean_of(&mut tape, &recons, inv).expect("at least one sample");
    let kl_path = mean_of(&mut tape, &kls, inv);
    let energy = mean_of(&mut tape, &energies, inv);

    let kl_all = match kl_path {
        Some(k) => tape.add(kl_z0, k),
        None => kl_z0,
    };
    let weighted = tape.scale(kl_all, cfg.kl_weight);
    let mut total = tape.sub(recon, weighted);
    if let Some(e) = energy {
        let r = tape.scale(e, cfg.lambda);
        total = tape.sub(total, r);
    }

    let read = |v: Option<Var>, tape: &Tape| v.map_or(0.0, |v| tape.scalar(v));
    let recon_v = tape.scalar(recon);
    let kl_z0_v = tape.scalar(kl_z0);
    let kl_path_v = read(kl_path, &tape);
    let r_path_v = cfg.lambda * read(energy, &tape);

    let needs_backward = want_grad || (model.coadjoint.is_some() && cfg.beta > 0.0);
    let mut grad = None;
    let mut penalty = 0.0;
    if needs_backward {
        let g = tape.backward(total);
        let mut flat = g.params().to_vec();
        let first = &samples[0];
        let values: Vec<Vec<f64>> = first.2.states.iter().map(|v| tape.value(*v).to_vec()).collect();
        // loss cotangents (of -total) of sample 0, at single-sample scale
        let mut co_adjoints: Vec<Vec<f64>> = first.2.states.iter().map(|v| g.wrt(*v, d).iter().map(|x| -x * n_ok as f64).collect()).collect();
        if let Some(mode) = adjoint {
            let mut seeds = Vec::with_capacity(n_ok);
            for (i, (z0, _, terms, path)) in samples.iter().enumerate() {
                let path = path.as_ref().expect("adjoint samples keep their path");
                let local: Vec<Vec<f64>> = terms.states.iter().map(|v| g.wrt(*v, d)).collect();
                let k = local.len() - 1;
                let trace = adjoint_backward(&gen_sde, path, &local[k], mode, Some(&local[..k]))?;
                for (a, b) in flat.iter_mut().zip(&trace.param_grad) {
                    *a += b;
                }
                if i == 0 {
                    co_adjoints = trace.adjoints.iter().map(|a| a.iter().map(|x| -x * n_ok as f64).collect()).collect();
                }
                seeds.push((*z0, trace.adjoints[0].clone()));
            }
            let g2 = tape.backward_seeded(&seeds);
            for (a, b) in flat.iter_mut().zip(g2.params()) {
                *a += b;
            }
        }
        let path = LatentPath { grid: grid.clone(), states: values, noise: first.1.clone() };
        penalty = co_adjoint_term(model, params, cfg, &path, co_adjoints, &mut flat)?;
        if want_grad {
            grad = Some(flat);
        }
    }

    Ok(SequenceResult {
        breakdown: ElboBreakdown::assemble(recon_v, kl_z0_v, kl_path_v, r_path_v, penalty, cfg.kl_weight),
        grad,
        samples_used: n_ok,
        blowups,
        z0_entropy: q0.entropy(),
    })
}

/// Mean objective over `seqs`, evaluated in parallel and reduced in input
/// order. Sequence `i` draws its noise from `derive_seed(seed, i)`.
pub fn batch_objective(
    model: &SldiModel,
    params: &[f64],
    seqs: &[&ObservationSeq],
    cfg: &ElboConfig,
    seed: u64,
    want_grad: bool,
) -> Result<BatchResult> {
    if seqs.is_empty() {
        return Err(SldiError::InvalidInput("empty batch".into()));
    }
    let results: Vec<Result<SequenceResult>> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| sequence_objective(model, params, s, cfg, derive_seed(seed, i as u64), want_grad))
        .collect();
    let mut parts = [0.0; 5];
    let mut grad = want_grad.then(|| vec![0.0; params.len()]);
    let (mut blowups, mut samples, mut failed, mut entropy, mut ok) = (0, 0, 0, 0.0, 0usize);
    let mut first_error = None;
    for r in results {
        match r {
            Ok(r) => {
                let b = r.breakdown;
                for (p, v) in parts.iter_mut().zip([b.recon, b.kl_z0, b.kl_path, b.r_path, b.adjoint_penalty]) {
                    *p += v;
                }
                if let (Some(acc), Some(g)) = (grad.as_mut(), r.grad.as_ref()) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                blowups += r.blowups;
                samples += r.samples_used + r.blowups;
                entropy += r.z0_entropy;
                ok += 1;
            }
            Err(e @ SldiError::NumericalBlowup { .. }) => {
                failed += 1;
                blowups += cfg.n_samples;
                samples += cfg.n_samples;
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if ok == 0 {
        return Err(first_error.expect("batch is non-empty"));
    }
    let inv = 1.0 / ok as f64;
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    let [recon, kl_z0, kl_path, r_path, pen] = parts.map(|v| v * inv);
    Ok(BatchResult {
        breakdown: ElboBreakdown::assemble(recon, kl_z0, kl_path, r_path, pen, cfg.kl_weight),
        grad,
        blowups,
        samples,
        failed_sequences: failed,
        mean_entropy: entropy * inv,
    })
}

/// Objective value only.
pub fn elbo(model: &SldiModel, params: &[f64], seqs: &[&ObservationSeq], cfg: &ElboConfig, seed: u64) -> Result<ElboBreakdown> {
    Ok(batch_objective(model, params, seqs, cfg, seed, false)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{finite_diff_grad, finite_diff_grad_richardson};
    use crate::variational::model::tests::small_spec;
    use crate::variational::{ModelSpec, NoiseModel};

    fn seq() -> ObservationSeq {
        ObservationSeq::new(
            "s",
            vec![0.0, 0.3, 0.7, 1.0],
            vec![vec![0.1], vec![0.4], vec![0.2], vec![-0.1]],
            vec![],
        )
        .unwrap()
    }

    fn cfg() -> ElboConfig {
        ElboConfig { dt: 0.125, n_samples: 2, ..Default::default() }
    }

    #[test]
    fn breakdown_identity_holds() {
        let spec = small_spec(PosteriorMode::Separate);
        let (model, store) = SldiModel::build(&spec, 3).unwrap();
        let s = seq();
        let r = sequence_objective(&model, store.flat(), &s, &cfg(), 1, false).unwrap();
        let b = r.breakdown;
        let rebuilt = b.recon - b.annealing_weight * (b.kl_z0 + b.kl_path) - b.r_path - b.adjoint_penalty;
        assert!((rebuilt - b.total).abs() <= 1e-12);
        assert!(b.kl_path > 0.0 && b.kl_z0 >= 0.0 && b.r_path >= 0.0);
    }

    #[test]
    fn matched_prior_has_zero_kl() {
        // zero readout weights and biases: q(z0) = N(0, I) = p(z0)
        let spec = small_spec(PosteriorMode::Shared);
        let (model, mut store) = SldiModel::build(&spec, 3).unwrap();
        for e in store.entries().to_vec() {
            if e.name.starts_with("encoder.readout") {
                store.flat_mut()[e.range()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let r = sequence_objective(&model, store.flat(), &seq(), &cfg(), 1, false).unwrap();
        assert_eq!(r.breakdown.kl_z0, 0.0);
        assert_eq!(r.breakdown.kl_path, 0.0);
    }

    fn check_grad(spec: &ModelSpec, mode: GradMode, tol: f64) {
        // the co-adjoint penalty treats its targets as data, so it is left out
        let mut spec = spec.clone();
        spec.coadjoint_hidden = None;
        let (model, store) = SldiModel::build(&spec, 5).unwrap();
        let s = seq();
        let c = ElboConfig { grad_mode: mode, ..cfg() };
        let r = sequence_objective(&model, store.flat(), &s, &c, 9, true).unwrap();
        let f = |p: &[f64]| sequence_objective(&model, p, &s, &c, 9, false).unwrap().breakdown.total;
        // |total| is O(100) here, so plain differences with h = 1e-5 would
        // put the rounding error (eps |f| / h) at the tolerance
        let fd = finite_diff_grad_richardson(f, store.flat(), 1e-4).unwrap();
        let g = r.grad.unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
        }
        assert!(worst < tol, "{mode:?}: {worst}");
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        check_grad(&small_spec(PosteriorMode::Shared), GradMode::Tape, 1e-6);
        check_grad(&small_spec(PosteriorMode::Separate), GradMode::Tape, 1e-6);
        let mut het = small_spec(PosteriorMode::Separate);
        het.noise = NoiseModel::Heteroscedastic;
        check_grad(&het, GradMode::Tape, 1e-6);
    }

    #[test]
    fn co_adjoint_penalty_enters_total_and_gradient() {
        let mut spec = small_spec(PosteriorMode::Shared);
        spec.coadjoint_hidden = Some(vec![4]);
        let (model, store) = SldiModel::build(&spec, 5).unwrap();
        let s = seq();
        let r = sequence_objective(&model, store.flat(), &s, &cfg(), 2, true).unwrap();
        assert!(r.breakdown.adjoint_penalty > 0.0);
        // the co-adjoint block gets exactly -beta * d(train loss)
        let net = model.coadjoint.as_ref().unwrap();
        let range = net.param_range();
        let g = r.grad.unwrap();
        let f = |p: &[f64]| {
            let mut full = store.flat().to_vec();
            full[range.clone()].copy_from_slice(p);
            sequence_objective(&model, &full, &s, &cfg(), 2, false).unwrap().breakdown.adjoint_penalty
        };
        let fd = finite_diff_grad(f, &store.flat()[range.clone()], 1e-6).unwrap();
        for (a, b) in g[range.clone()].iter().zip(&fd) {
            assert!((a + b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_modes_produce_full_gradients() {
        // exact for the parameter-independent parts; the adjoint is only a
        // first-order approximation of the dynamics part
        let mut spec = small_spec(PosteriorMode::Shared);
        spec.coadjoint_hidden = None;
        let (model, store) = SldiModel::build(&spec, 5).unwrap();
        let s = seq();
        let tape = sequence_objective(&model, store.flat(), &s, &cfg(), 4, true).unwrap().grad.unwrap();
        for mode in [GradMode::Adjoint, GradMode::AdjointCorrected] {
            let c = ElboConfig { grad_mode: mode, ..cfg() };
            let g = sequence_objective(&model, store.flat(), &s, &c, 4, true).unwrap().grad.unwrap();
            let dec = model.decoder.param_range();
            for i in dec {
                assert!((g[i] - tape[i]).abs() < 1e-10);
            }
            let cos = g.iter().zip(&tape).map(|(a, b)| a * b).sum::<f64>()
                / (g.iter().map(|a| a * a).sum::<f64>().sqrt() * tape.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(cos > 0.9, "{mode:?}: {cos}");
        }
    }

    #[test]
    fn batch_is_order_reduced_and_deterministic() {
        let spec = small_spec(PosteriorMode::Separate);
        let (model, store) = SldiModel::build(&spec, 3).unwrap();
        let a = seq();
        let mut b = seq();
        b.id = "t".into();
        let batch = [&a, &b];
        let r1 = batch_objective(&model, store.flat(), &batch, &cfg(), 7, true).unwrap();
        let r2 = batch_objective(&model, store.flat(), &batch, &cfg(), 7, true).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.breakdown.identity_residual() <= 1e-12);
        assert_eq!(r1.samples, 4);
    }

    #[test]
    fn observation_times_are_knots() {
        let s = ObservationSeq::new("x", vec![0.25, 0.33, 1.7], vec![vec![0.0]; 3], vec![]).unwrap();
        let (g, idx) = sequence_grid(&s, 0.125).unwrap();
        assert_eq!(g.t0(), 0.0);
        for (t, i) in s.timestamps.iter().zip(&idx) {
            assert!((g.knots()[*i] - t).abs() < 1e-12);
        }
        let single = ObservationSeq::new("y", vec![0.0], vec![vec![0.0]], vec![]).unwrap();
        assert_eq!(sequence_grid(&single, 0.1).unwrap().0.num_steps(), 0);
    }
}
