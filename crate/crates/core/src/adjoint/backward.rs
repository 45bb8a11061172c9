//! Reverse-time gradient passes over a stored forward path.

use std::ops::Range;

use crate::error::{check_len, Result, SldiError};
use crate::nn::{Tape, Var};
use crate::sde::{BrownianPath, DiffusionMode, LatentPath, Scheme, Sde, TimeGrid};

/// Which gradient machinery produces parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Exact reverse mode through the recorded solver steps.
    Tape,
    /// Continuous adjoint with the drift Jacobian only.
    Adjoint,
    /// Continuous adjoint including the diffusion-Jacobian term and the
    /// stored-noise parametric diffusion term.
    AdjointCorrected,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::Tape => "tape",
            GradMode::Adjoint => "adjoint",
            GradMode::AdjointCorrected => "adjoint-corrected",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tape" => Some(GradMode::Tape),
            "adjoint" => Some(GradMode::Adjoint),
            "adjoint-corrected" => Some(GradMode::AdjointCorrected),
            _ => None,
        }
    }

    pub fn adjoint_mode(self) -> Option<AdjointMode> {
        match self {
            GradMode::Tape => None,
            GradMode::Adjoint => Some(AdjointMode::DriftOnly),
            GradMode::AdjointCorrected => Some(AdjointMode::WithDiffusionCorrection),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointMode {
    DriftOnly,
    WithDiffusionCorrection,
}

/// Adjoint states at every knot plus the parameter gradient accumulated
/// on the way back.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrace {
    pub grid: TimeGrid,
    pub adjoints: Vec<Vec<f64>>,
    pub param_grad: Vec<f64>,
}

impl AdjointTrace {
    /// `(a_{k+1} - a_k) / dt_k` for every step.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        self.grid
            .steps()
            .enumerate()
            .map(|(k, (_, dt))| {
                self.adjoints[k + 1]
                    .iter()
                    .zip(&self.adjoints[k])
                    .map(|(b, a)| (b - a) / dt)
                    .collect()
            })
            .collect()
    }
}

/// Gradient of `loss` with respect to the flat parameters of the tape.
pub fn backprop_through_solver(tape: Option<&Tape>, loss: Var) -> Result<Vec<f64>> {
    let tape = tape.ok_or_else(|| SldiError::InvalidState("no forward tape was recorded".into()))?;
    Ok(tape.backward(loss).into_params())
}

fn add_into(dst: &mut [f64], range: Range<usize>, src: &[f64], scale: f64) {
    for (d, s) in dst[range].iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// `sum_i J_i J_i^T` where `J_i` is the state Jacobian of column `i` of
/// `Sigma(z, t)`.
fn diffusion_jacobian_gram(sde: &Sde, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let model = sde.model;
    let (d, m) = (model.latent_dim, model.noise_dim);
    let jac = model.diffusion.input_jacobian(sde.params, x)?;
    let entry = |r: usize, i: usize| -> Option<usize> {
        match model.mode {
            DiffusionMode::Full => Some(r * m + i),
            DiffusionMode::Diagonal => (r == i).then_some(i),
            DiffusionMode::Scalar => (r == i).then_some(0),
        }
    };
    let mut g = vec![vec![0.0; d]; d];
    for i in 0..m {
        for r in 0..d {
            let Some(or) = entry(r, i) else { continue };
            for s in 0..d {
                let Some(os) = entry(s, i) else { continue };
                g[r][s] += (0..d).map(|c| jac[or][c] * jac[os][c]).sum::<f64>();
            }
        }
    }
    Ok(g)
}

/// Cotangent on the raw diffusion output such that its vector-Jacobian
/// product gives the parameter gradient of `a . Sigma dW`.
fn noise_cotangent(sde: &Sde, a: &[f64], dw: &[f64]) -> Vec<f64> {
    let model = sde.model;
    let (d, m) = (model.latent_dim, model.noise_dim);
    match model.mode {
        DiffusionMode::Full => (0..d * m).map(|o| a[o / m] * dw[o % m]).collect(),
        DiffusionMode::Diagonal => a.iter().zip(dw).map(|(a, w)| a * w).collect(),
        DiffusionMode::Scalar => vec![a.iter().zip(dw).map(|(a, w)| a * w).sum()],
    }
}

/// Integrates the adjoint `da/dt = -a^T (J_mu - sum_i J_i J_i^T)` backward
/// on the stored path with explicit Euler steps on the path's grid, starting
/// from `a_terminal`. The parameter gradient accumulates
/// `(d mu / d theta)^T a_{k+1} dt_k`; in corrected mode it also accumulates
/// the stored-noise term `(d Sigma / d theta)^T (a_{k+1} dW_k^T)`.
///
/// `local[k]`, when given, is added to `a_k` after the step (loss terms that
/// depend directly on the state at knot `k`, for `k < K`).
pub fn adjoint_backward(
    sde: &Sde,
    path: &LatentPath,
    a_terminal: &[f64],
    mode: AdjointMode,
    local: Option<&[Vec<f64>]>,
) -> Result<AdjointTrace> {
    let d = sde.model.latent_dim;
    let k_steps = path.grid.num_steps();
    if path.states.len() != k_steps + 1 {
        return Err(SldiError::GridError("path states do not match its grid".into()));
    }
    path.noise.check_grid(&path.grid)?;
    check_len("terminal adjoint", a_terminal.len(), d)?;
    if let Some(l) = local {
        if l.len() != k_steps + 1 && l.len() != k_steps {
            return Err(SldiError::GridError("local cotangents do not match the grid".into()));
        }
    }
    if a_terminal.iter().any(|v| !v.is_finite()) {
        return Err(SldiError::InvalidInput("terminal adjoint must be finite".into()));
    }
    let drift_range = sde.model.drift.param_range();
    let diff_range = sde.model.diffusion.param_range();
    let mut param_grad = vec![0.0; sde.params.len()];
    let mut adjoints = vec![vec![0.0; d]; k_steps + 1];
    adjoints[k_steps] = a_terminal.to_vec();
    let knots = path.grid.knots().to_vec();
    for k in (0..k_steps).rev() {
        let (t, dt) = (knots[k], knots[k + 1] - knots[k]);
        let mut x = path.states[k].clone();
        x.push(t);
        let a_next = adjoints[k + 1].clone();
        let (jx, gp) = sde.model.drift.vjp(sde.params, &x, &a_next)?;
        add_into(&mut param_grad, drift_range.clone(), &gp, dt);
        let mut a: Vec<f64> = (0..d).map(|i| a_next[i] + dt * jx[i]).collect();
        if mode == AdjointMode::WithDiffusionCorrection {
            let g = diffusion_jacobian_gram(sde, &x)?;
            for (r, ar) in a.iter_mut().enumerate() {
                *ar -= dt * (0..d).map(|s| g[s][r] * a_next[s]).sum::<f64>();
            }
            let v = noise_cotangent(sde, &a_next, &path.noise.increments[k]);
            let (_, gd) = sde.model.diffusion.vjp(sde.params, &x, &v)?;
            add_into(&mut param_grad, diff_range.clone(), &gd, 1.0);
        }
        if let Some(l) = local {
            for (ai, li) in a.iter_mut().zip(&l[k]) {
                *ai += li;
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SldiError::blowup(k, "non-finite adjoint state"));
        }
        adjoints[k] = a;
    }
    Ok(AdjointTrace {
        grid: path.grid.clone(),
        adjoints,
        param_grad,
    })
}

/// Value and parameter gradient of `loss(z_T)` for a path started at `z0`,
/// where `loss` returns its value and gradient in `z_T`.
#[allow(clippy::too_many_arguments)]
pub fn terminal_loss_gradient(
    sde: &Sde,
    z0: &[f64],
    grid: &TimeGrid,
    noise: &BrownianPath,
    scheme: Scheme,
    mode: GradMode,
    loss: impl Fn(&[f64]) -> (f64, Vec<f64>),
) -> Result<(f64, Vec<f64>)> {
    match mode.adjoint_mode() {
        None => {
            let mut tape = Tape::new(sde.params);
            let z = tape.leaf(z0.to_vec());
            let states = sde.model.simulate_on_tape(&mut tape, z, grid, noise, scheme)?;
            let zt = *states.last().unwrap();
            let (value, cot) = loss(tape.value(zt));
            let g = tape.backward_seeded(&[(zt, cot)]);
            Ok((value, g.into_params()))
        }
        Some(am) => {
            let path = sde.simulate(z0, grid, noise, scheme)?;
            let (value, cot) = loss(path.terminal());
            let trace = adjoint_backward(sde, &path, &cot, am, None)?;
            Ok((value, trace.param_grad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::finite_diff_grad;
    use crate::sde::{fixtures, sample_brownian};

    fn quad(z: &[f64]) -> (f64, Vec<f64>) {
        (0.5 * z.iter().map(|v| v * v).sum::<f64>(), z.to_vec())
    }

    #[test]
    fn zero_dynamics_keep_adjoint_constant() {
        let (m, p) = fixtures::linear_scalar(0.0, 0.0);
        let sde = m.bind(p.flat());
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let w = sample_brownian(&g, 1, 0).unwrap();
        let path = sde.simulate(&[0.3], &g, &w, Scheme::EulerMaruyama).unwrap();
        for mode in [AdjointMode::DriftOnly, AdjointMode::WithDiffusionCorrection] {
            let tr = adjoint_backward(&sde, &path, &[1.7], mode, None).unwrap();
            assert!(tr.adjoints.iter().all(|a| a[0] == 1.7));
        }
    }

    #[test]
    fn linear_decay_adjoint() {
        // mu = -z on [0, 1], a_T = 1: a(t) = exp(-(T - t)), so a_0 = e^{-1}
        let (m, p) = fixtures::linear_scalar(-1.0, 0.0);
        let sde = m.bind(p.flat());
        let g = TimeGrid::uniform(0.0, 1.0, 1024).unwrap();
        let w = sample_brownian(&g, 1, 0).unwrap();
        let path = sde.simulate(&[1.0], &g, &w, Scheme::EulerMaruyama).unwrap();
        let tr = adjoint_backward(&sde, &path, &[1.0], AdjointMode::DriftOnly, None).unwrap();
        assert_eq!(tr.adjoints[1024], vec![1.0]);
        assert!((tr.adjoints[0][0] - (-1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn linear_in_terminal_cotangent() {
        let (m, p) = fixtures::linear(&[vec![-0.5, 0.3], vec![0.1, -0.2]], &[vec![0.0], vec![0.0]]);
        let sde = m.bind(p.flat());
        let g = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let w = sample_brownian(&g, 1, 0).unwrap();
        let path = sde.simulate(&[1.0, -1.0], &g, &w, Scheme::EulerMaruyama).unwrap();
        let a = adjoint_backward(&sde, &path, &[0.4, -0.9], AdjointMode::DriftOnly, None).unwrap();
        let b = adjoint_backward(&sde, &path, &[1.2, -2.7], AdjointMode::DriftOnly, None).unwrap();
        for (x, y) in a.adjoints.iter().zip(&b.adjoints) {
            for (u, v) in x.iter().zip(y) {
                assert!((3.0 * u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let (m, p) = fixtures::ou(0.7, 0.5);
        let g = TimeGrid::uniform(0.0, 1.0, 40).unwrap();
        let w = sample_brownian(&g, 1, 11).unwrap();
        let (_, grad) = terminal_loss_gradient(&m.bind(p.flat()), &[1.2], &g, &w, Scheme::EulerMaruyama, GradMode::Tape, quad).unwrap();
        let f = |q: &[f64]| {
            let path = m.bind(q).simulate(&[1.2], &g, &w, Scheme::EulerMaruyama).unwrap();
            quad(path.terminal()).0
        };
        let fd = finite_diff_grad(f, p.flat(), 1e-5).unwrap();
        for (a, b) in grad.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
        }
        // parameter-free loss
        let (_, zero) = terminal_loss_gradient(&m.bind(p.flat()), &[1.2], &g, &w, Scheme::EulerMaruyama, GradMode::Tape, |_| (1.0, vec![0.0])).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let mut other = Tape::new(&[]);
        let v = other.leaf(vec![0.0]);
        assert!(matches!(backprop_through_solver(None, v), Err(SldiError::InvalidState(_))));
    }

    #[test]
    fn corrected_adjoint_is_exact_for_additive_noise() {
        let (m, p) = fixtures::ou(0.7, 0.5);
        let sde = m.bind(p.flat());
        let g = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let w = sample_brownian(&g, 1, 5).unwrap();
        let (_, tape) = terminal_loss_gradient(&sde, &[0.8], &g, &w, Scheme::EulerMaruyama, GradMode::Tape, quad).unwrap();
        let (_, adj) = terminal_loss_gradient(&sde, &[0.8], &g, &w, Scheme::EulerMaruyama, GradMode::AdjointCorrected, quad).unwrap();
        for (a, b) in tape.iter().zip(&adj) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
