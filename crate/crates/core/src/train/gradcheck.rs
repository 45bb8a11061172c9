//! Gradient verification on fixed fixtures: tape against finite
//! differences, and the continuous adjoint against the tape on
//! deterministic dynamics.

use std::ops::Range;

use rand::Rng;

use crate::adjoint::{adjoint_backward, AdjointMode};
use crate::data::ObservationSeq;
use crate::error::{Result, SldiError};
use crate::fmt::fmt_f64;
use crate::nn::{xavier_init, Activation, FieldSpec, NeuralField, ParamStore, Tape};
use crate::oracles::{finite_diff_grad, finite_diff_grad_richardson};
use crate::rng::{derive_seed, rng_from_seed, standard_normals};
use crate::sde::{fixtures, sample_brownian, DiffusionMode, Scheme, SdeModel, TimeGrid};
use crate::variational::{
    sequence_objective, ElboConfig, GaussianDist, ModelSpec, NoiseModel, PosteriorMode, SldiModel,
};

pub const TAPE_VS_FD_TOL: f64 = 1e-6;
pub const ADJOINT_VS_TAPE_TOL: f64 = 1e-3;
/// Step of the deterministic adjoint comparison.
pub const ADJOINT_DT: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Latent dimension of the network fixtures (at most 3).
    pub latent_dim: usize,
    /// Parameter block (entry name) whose weight vector-Jacobian product is
    /// deliberately corrupted on the tape.
    pub fault_block: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { seed: 0, latent_dim: 2, fault_block: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub fixture: String,
    pub comparison: &'static str,
    pub block: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradcheckRow::passed)
    }

    pub fn failures(&self) -> Vec<&GradcheckRow> {
        self.rows.iter().filter(|r| !r.passed()).collect()
    }

    pub fn worst(&self, comparison: &str) -> f64 {
        self.rows.iter().filter(|r| r.comparison == comparison).map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "fixture={} comparison={} block={} max_rel_err={} threshold={} status={}\n",
                r.fixture,
                r.comparison,
                r.block,
                fmt_f64(r.max_rel_err),
                fmt_f64(r.threshold),
                if r.passed() { "pass" } else { "FAIL" }
            ));
        }
        s.push_str(&format!("overall={}\n", if self.passed() { "pass" } else { "FAIL" }));
        s
    }
}

/// `|a - b| / max(|a|, |b|, 1e-3)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn block_rows(
    fixture: &str,
    comparison: &'static str,
    store: &ParamStore,
    got: &[f64],
    want: &[f64],
    threshold: f64,
    only: Option<Range<usize>>,
) -> Vec<GradcheckRow> {
    store
        .entries()
        .iter()
        .filter(|e| only.as_ref().map_or(true, |r| r.contains(&e.offset)))
        .map(|e| GradcheckRow {
            fixture: fixture.to_string(),
            comparison,
            block: e.name.clone(),
            max_rel_err: e.range().map(|i| rel_err(got[i], want[i])).fold(0.0, f64::max),
            threshold,
        })
        .collect()
}

/// Terminal loss `|z_T|^2 / 2` through the solver on the tape, optionally
/// with a corrupted weight block.
fn tape_terminal_grad(
    model: &SdeModel,
    params: &[f64],
    z0: &[f64],
    grid: &TimeGrid,
    noise: &crate::sde::BrownianPath,
    scheme: Scheme,
    fault: Option<Range<usize>>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new(params);
    if let Some(r) = fault {
        tape.inject_vjp_fault(r);
    }
    let z = tape.leaf(z0.to_vec());
    let states = model.simulate_on_tape(&mut tape, z, grid, noise, scheme)?;
    let zt = *states.last().expect("at least one knot");
    let cot = tape.value(zt).to_vec();
    Ok(tape.backward_seeded(&[(zt, cot)]).into_params())
}

fn terminal_loss(model: &SdeModel, params: &[f64], z0: &[f64], grid: &TimeGrid, noise: &crate::sde::BrownianPath, scheme: Scheme) -> f64 {
    match model.bind(params).simulate(z0, grid, noise, scheme) {
        Ok(p) => 0.5 * p.terminal().iter().map(|v| v * v).sum::<f64>(),
        Err(_) => f64::NAN,
    }
}

fn mlp_sde(d: usize, seed: u64, zero_diffusion: bool) -> Result<(SdeModel, ParamStore)> {
    let mut store = ParamStore::new();
    let drift = NeuralField::register(&mut store, "drift", &FieldSpec::mlp(d + 1, &[6], d, Activation::Tanh))?;
    let diffusion = NeuralField::register(
        &mut store,
        "diffusion",
        &FieldSpec::mlp(d + 1, &[4], d, Activation::Tanh).with_output(Activation::Softplus),
    )?;
    xavier_init(&mut store, seed);
    let mut rng = rng_from_seed(derive_seed(seed, 99));
    for e in store.entries().to_vec() {
        if !e.is_weight() {
            store.flat_mut()[e.range()].iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
    }
    if zero_diffusion {
        let r = diffusion.param_range();
        store.flat_mut()[r].iter_mut().for_each(|v| *v = 0.0);
        // softplus(0) > 0, so zero noise comes from zero increments instead
    }
    Ok((SdeModel::new(drift, diffusion, d, d, DiffusionMode::Diagonal)?, store))
}

fn check_sde_fixture(
    rows: &mut Vec<GradcheckRow>,
    name: &str,
    model: &SdeModel,
    store: &ParamStore,
    z0: &[f64],
    scheme: Scheme,
    fault: Option<Range<usize>>,
    seed: u64,
) -> Result<()> {
    let grid = TimeGrid::uniform(0.0, 1.0, 32)?;
    let noise = sample_brownian(&grid, model.noise_dim, seed)?;
    let tape = tape_terminal_grad(model, store.flat(), z0, &grid, &noise, scheme, fault)?;
    let fd = finite_diff_grad(|p| terminal_loss(model, p, z0, &grid, &noise, scheme), store.flat(), 1e-5)?;
    rows.extend(block_rows(name, "tape-vs-fd", store, &tape, &fd, TAPE_VS_FD_TOL, None));
    Ok(())
}

fn elbo_spec(d: usize, posterior: PosteriorMode) -> ModelSpec {
    ModelSpec {
        latent_dim: d,
        noise_dim: d,
        obs_dim: 1,
        drift_hidden: vec![5],
        diffusion_hidden: vec![3],
        posterior_hidden: vec![5],
        decoder_hidden: vec![],
        encoder_hidden: 4,
        coadjoint_hidden: None,
        diffusion_mode: DiffusionMode::Diagonal,
        posterior,
        noise: NoiseModel::Fixed { var: 0.1 },
        z0_prior: GaussianDist::standard(d),
    }
}

/// Runs every fixture and returns one row per (fixture, parameter block).
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let d = cfg.latent_dim;
    if d == 0 || d > 3 {
        return Err(SldiError::ConfigError(format!("gradcheck needs 1 <= latent_dim <= 3, got {d}")));
    }
    let mut rows = Vec::new();
    let fault_in = |store: &ParamStore| -> Result<Option<Range<usize>>> {
        match &cfg.fault_block {
            None => Ok(None),
            Some(b) => Ok(store.entry(b).map(|e| e.range())),
        }
    };

    let (m, s) = fixtures::linear_scalar(-0.7, 0.5);
    check_sde_fixture(&mut rows, "linear-sde", &m, &s, &[1.2], Scheme::EulerMaruyama, fault_in(&s)?, cfg.seed)?;
    let (m, s) = fixtures::gbm(0.3, 0.4);
    check_sde_fixture(&mut rows, "gbm-milstein", &m, &s, &[1.0], Scheme::Milstein, fault_in(&s)?, cfg.seed)?;
    let (m, s) = mlp_sde(d, cfg.seed, false)?;
    let z0: Vec<f64> = (0..d).map(|i| 0.5 - 0.3 * i as f64).collect();
    check_sde_fixture(&mut rows, "mlp-sde-em", &m, &s, &z0, Scheme::EulerMaruyama, fault_in(&s)?, cfg.seed)?;
    check_sde_fixture(&mut rows, "mlp-sde-milstein", &m, &s, &z0, Scheme::Milstein, fault_in(&s)?, cfg.seed)?;

    // ELBO of a small latent model; |objective| is O(10-100), so the
    // differences use Richardson extrapolation at a larger step
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 7));
    let times: [f64; 5] = [0.0, 0.2, 0.45, 0.5, 0.9];
    let values: Vec<Vec<f64>> = times.iter().map(|t| vec![(3.0 * t).sin() + 0.1 * standard_normals(&mut rng, 1)[0]]).collect();
    let seq = ObservationSeq::new("gradcheck", times.to_vec(), values, vec![])?;
    for (name, mode) in [("elbo-shared", PosteriorMode::Shared), ("elbo-separate", PosteriorMode::Separate)] {
        let (model, store) = SldiModel::build(&elbo_spec(d, mode), cfg.seed)?;
        let ecfg = ElboConfig { dt: 0.125, n_samples: 2, ..Default::default() };
        let g = sequence_objective(&model, store.flat(), &seq, &ecfg, cfg.seed, true)?.grad.expect("requested");
        let f = |p: &[f64]| {
            sequence_objective(&model, p, &seq, &ecfg, cfg.seed, false).map_or(f64::NAN, |r| r.breakdown.total)
        };
        let fd = finite_diff_grad_richardson(f, store.flat(), 1e-4)?;
        rows.extend(block_rows(name, "tape-vs-fd", &store, &g, &fd, TAPE_VS_FD_TOL, None));
    }

    // continuous adjoint on deterministic dynamics (no Brownian forcing)
    let (m, s) = mlp_sde(d, cfg.seed, true)?;
    let grid = TimeGrid::uniform(0.0, 1.0, (1.0 / ADJOINT_DT).round() as usize)?;
    let still = crate::sde::BrownianPath::from_increments(0, d, vec![vec![0.0; d]; grid.num_steps()])?;
    let tape = tape_terminal_grad(&m, s.flat(), &z0, &grid, &still, Scheme::EulerMaruyama, fault_in(&s)?)?;
    let sde = m.bind(s.flat());
    let path = sde.simulate(&z0, &grid, &still, Scheme::EulerMaruyama)?;
    let trace = adjoint_backward(&sde, &path, path.terminal(), AdjointMode::DriftOnly, None)?;
    rows.extend(block_rows(
        "mlp-ode-adjoint",
        "adjoint-vs-tape",
        &s,
        &trace.param_grad,
        &tape,
        ADJOINT_VS_TAPE_TOL,
        Some(m.drift.param_range()),
    ));
    Ok(GradcheckReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_fixtures_pass() {
        let r = gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.to_text().ends_with("overall=pass\n"));
    }

    #[test]
    fn corrupted_block_is_named() {
        let cfg = GradcheckConfig { fault_block: Some("drift.l0.weight".into()), ..Default::default() };
        let r = gradcheck(&cfg).unwrap();
        assert!(!r.passed());
        assert!(r.failures().iter().all(|f| f.block == "drift.l0.weight"));
        assert!(r.failures().iter().any(|f| f.fixture == "mlp-sde-em"));
    }

    #[test]
    fn rejects_large_dimensions() {
        let cfg = GradcheckConfig { latent_dim: 4, ..Default::default() };
        assert!(matches!(gradcheck(&cfg), Err(SldiError::ConfigError(_))));
    }

    #[test]
    fn report_is_stable() {
        let a = gradcheck(&GradcheckConfig::default()).unwrap().to_text();
        let b = gradcheck(&GradcheckConfig::default()).unwrap().to_text();
        assert_eq!(a, b);
    }
}
