//! Itô SDE `dz = mu(z, t) dt + Sigma(z, t) dW` with neural coefficients,
//! and its Euler–Maruyama and Milstein discretizations.
//!
//! Time is appended to the state as a raw scalar feature, so both fields
//! take `d + 1` inputs. The diffusion field's output is interpreted by
//! [`DiffusionMode`]:
//!
//! * `Full`: `d * m` outputs, row-major `d x m` matrix.
//! * `Diagonal`: `d` outputs, `Sigma = diag(out)`, `m = d`.
//! * `Scalar`: one output, `Sigma = out * I`, `m = d`.

use super::brownian::BrownianPath;
use super::grid::TimeGrid;
use crate::error::{check_len, Result, SldiError};
use crate::nn::{NeuralField, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionMode {
    Full,
    Diagonal,
    Scalar,
}

impl DiffusionMode {
    pub fn name(self) -> &'static str {
        match self {
            DiffusionMode::Full => "full",
            DiffusionMode::Diagonal => "diagonal",
            DiffusionMode::Scalar => "scalar",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "full" => DiffusionMode::Full,
            "diagonal" => DiffusionMode::Diagonal,
            "scalar" => DiffusionMode::Scalar,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    Milstein,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "em",
            Scheme::Milstein => "milstein",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "em" => Some(Scheme::EulerMaruyama),
            "milstein" => Some(Scheme::Milstein),
            _ => None,
        }
    }
}

/// Simulated trajectory with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub noise: BrownianPath,
}

impl LatentPath {
    pub fn terminal(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    pub drift: NeuralField,
    pub diffusion: NeuralField,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub mode: DiffusionMode,
}

fn with_time(z: &[f64], t: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(z.len() + 1);
    x.extend_from_slice(z);
    x.push(t);
    x
}

fn check_finite(step: usize, z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SldiError::blowup(step, format!("non-finite state {z:?}")))
    }
}

impl SdeModel {
    pub fn new(
        drift: NeuralField,
        diffusion: NeuralField,
        latent_dim: usize,
        noise_dim: usize,
        mode: DiffusionMode,
    ) -> Result<Self> {
        let d = latent_dim;
        if d == 0 || noise_dim == 0 {
            return Err(SldiError::InvalidInput("SDE dimensions must be >= 1".into()));
        }
        check_len("drift input", drift.input_dim(), d + 1)?;
        check_len("drift output", drift.output_dim(), d)?;
        check_len("diffusion input", diffusion.input_dim(), d + 1)?;
        let want = match mode {
            DiffusionMode::Full => d * noise_dim,
            DiffusionMode::Diagonal => d,
            DiffusionMode::Scalar => 1,
        };
        check_len("diffusion output", diffusion.output_dim(), want)?;
        if mode != DiffusionMode::Full && noise_dim != d {
            return Err(SldiError::InvalidInput(format!(
                "{} diffusion requires m == d, got m = {noise_dim}, d = {d}",
                mode.name()
            )));
        }
        Ok(SdeModel {
            drift,
            diffusion,
            latent_dim,
            noise_dim,
            mode,
        })
    }

    /// Same diffusion, different drift (posterior dynamics).
    pub fn with_drift(&self, drift: NeuralField) -> Result<Self> {
        Self::new(drift, self.diffusion.clone(), self.latent_dim, self.noise_dim, self.mode)
    }

    pub fn bind<'a>(&'a self, params: &'a [f64]) -> Sde<'a> {
        Sde { model: self, params }
    }

    fn input_on_tape(tape: &mut Tape, z: Var, t: f64) -> Var {
        let tv = tape.constant(t);
        tape.concat(&[z, tv])
    }

    pub fn drift_on_tape(&self, tape: &mut Tape, z: Var, t: f64) -> Var {
        let x = Self::input_on_tape(tape, z, t);
        self.drift.apply(tape, x)
    }

    /// Diagonal of `Sigma` as a `d`-node (diagonal and scalar modes).
    pub fn diag_sigma_on_tape(&self, tape: &mut Tape, z: Var, t: f64) -> Result<Var> {
        let x = Self::input_on_tape(tape, z, t);
        let out = self.diffusion.apply(tape, x);
        match self.mode {
            DiffusionMode::Diagonal => Ok(out),
            DiffusionMode::Scalar => Ok(tape.broadcast(out, self.latent_dim)),
            DiffusionMode::Full => Err(SldiError::UnsupportedScheme(
                "diagonal of a full diffusion matrix".into(),
            )),
        }
    }

    fn diffuse_on_tape(&self, tape: &mut Tape, out: Var, dw: &[f64]) -> Var {
        let w = tape.leaf(dw.to_vec());
        match self.mode {
            DiffusionMode::Full => tape.matvec(out, w, self.latent_dim, self.noise_dim),
            DiffusionMode::Diagonal => tape.mul(out, w),
            DiffusionMode::Scalar => {
                let b = tape.broadcast(out, self.latent_dim);
                tape.mul(b, w)
            }
        }
    }

    /// One scheme step recorded on the tape.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        z: Var,
        t: f64,
        dt: f64,
        dw: &[f64],
        scheme: Scheme,
    ) -> Result<Var> {
        let x = Self::input_on_tape(tape, z, t);
        let mu = self.drift.apply(tape, x);
        self.step_with_drift_on_tape(tape, z, t, dt, dw, scheme, mu)
    }

    /// Like [`SdeModel::step_on_tape`] with the drift value `mu` at `(z, t)`
    /// already recorded, so callers can reuse it for other terms.
    #[allow(clippy::too_many_arguments)]
    pub fn step_with_drift_on_tape(
        &self,
        tape: &mut Tape,
        z: Var,
        t: f64,
        dt: f64,
        dw: &[f64],
        scheme: Scheme,
        mu: Var,
    ) -> Result<Var> {
        check_len("brownian increment", dw.len(), self.noise_dim)?;
        if scheme == Scheme::Milstein && self.mode == DiffusionMode::Full {
            return Err(SldiError::UnsupportedScheme(
                "Milstein requires diagonal or scalar diffusion".into(),
            ));
        }
        let x = Self::input_on_tape(tape, z, t);
        let drift_part = tape.scale(mu, dt);
        let next = tape.add(z, drift_part);
        let out = self.diffusion.apply(tape, x);
        let noise_part = self.diffuse_on_tape(tape, out, dw);
        let mut next = tape.add(next, noise_part);
        if scheme == Scheme::Milstein {
            let d = self.latent_dim;
            let mut slopes = Vec::with_capacity(d);
            for i in 0..d {
                let mut e = vec![0.0; d + 1];
                e[i] = 1.0;
                let dir = tape.leaf(e);
                let (_, tangent) = self.diffusion.apply_with_tangent(tape, x, dir);
                let idx = if self.mode == DiffusionMode::Scalar { 0 } else { i };
                slopes.push(tape.slice(tangent, idx, 1));
            }
            let slope = tape.concat(&slopes);
            let sigma = match self.mode {
                DiffusionMode::Scalar => tape.broadcast(out, d),
                _ => out,
            };
            let coef = tape.leaf(dw.iter().map(|w| 0.5 * (w * w - dt)).collect());
            let prod = tape.mul(sigma, slope);
            let corr = tape.mul(prod, coef);
            next = tape.add(next, corr);
        }
        Ok(next)
    }

    /// Records a full trajectory; returns one node per knot.
    pub fn simulate_on_tape(
        &self,
        tape: &mut Tape,
        z0: Var,
        grid: &TimeGrid,
        noise: &BrownianPath,
        scheme: Scheme,
    ) -> Result<Vec<Var>> {
        noise.check_grid(grid)?;
        let mut states = Vec::with_capacity(grid.num_steps() + 1);
        states.push(z0);
        for (k, (t, dt)) in grid.steps().enumerate() {
            let z = states[k];
            let next = self.step_on_tape(tape, z, t, dt, &noise.increments[k], scheme)?;
            check_finite(k, tape.value(next))?;
            states.push(next);
        }
        Ok(states)
    }
}

/// An [`SdeModel`] bound to concrete parameter values.
#[derive(Clone, Copy)]
pub struct Sde<'a> {
    pub model: &'a SdeModel,
    pub params: &'a [f64],
}

impl<'a> Sde<'a> {
    pub fn dim(&self) -> usize {
        self.model.latent_dim
    }

    pub fn drift(&self, z: &[f64], t: f64) -> Vec<f64> {
        self.model.drift.eval_unchecked(self.params, &with_time(z, t))
    }

    /// Raw diffusion-field output (see [`DiffusionMode`] for its layout).
    pub fn diffusion_output(&self, z: &[f64], t: f64) -> Vec<f64> {
        self.model.diffusion.eval_unchecked(self.params, &with_time(z, t))
    }

    /// `Sigma(z, t)` as `d` rows of `m` entries.
    pub fn sigma_matrix(&self, z: &[f64], t: f64) -> Vec<Vec<f64>> {
        let out = self.diffusion_output(z, t);
        let (d, m) = (self.model.latent_dim, self.model.noise_dim);
        (0..d)
            .map(|i| match self.model.mode {
                DiffusionMode::Full => out[i * m..(i + 1) * m].to_vec(),
                DiffusionMode::Diagonal => {
                    let mut row = vec![0.0; m];
                    row[i] = out[i];
                    row
                }
                DiffusionMode::Scalar => {
                    let mut row = vec![0.0; m];
                    row[i] = out[0];
                    row
                }
            })
            .collect()
    }

    /// `Sigma(z, t) dW`.
    pub fn diffuse(&self, z: &[f64], t: f64, dw: &[f64]) -> Vec<f64> {
        let out = self.diffusion_output(z, t);
        let (d, m) = (self.model.latent_dim, self.model.noise_dim);
        match self.model.mode {
            DiffusionMode::Full => (0..d)
                .map(|i| out[i * m..(i + 1) * m].iter().zip(dw).map(|(a, b)| a * b).sum())
                .collect(),
            DiffusionMode::Diagonal => out.iter().zip(dw).map(|(a, b)| a * b).collect(),
            DiffusionMode::Scalar => dw.iter().map(|w| out[0] * w).collect(),
        }
    }

    /// `(Sigma_ii, dSigma_ii / dz_i)` for diagonal and scalar modes.
    pub fn diag_sigma_and_slope(&self, z: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.model.latent_dim;
        let x = with_time(z, t);
        let idx = |i: usize| match self.model.mode {
            DiffusionMode::Diagonal => Ok(i),
            DiffusionMode::Scalar => Ok(0),
            DiffusionMode::Full => Err(SldiError::UnsupportedScheme(
                "Milstein requires diagonal or scalar diffusion".into(),
            )),
        };
        let mut sigma = Vec::with_capacity(d);
        let mut slope = Vec::with_capacity(d);
        for i in 0..d {
            let mut e = vec![0.0; d + 1];
            e[i] = 1.0;
            let (y, dy) = self.model.diffusion.jvp(self.params, &x, &e)?;
            sigma.push(y[idx(i)?]);
            slope.push(dy[idx(i)?]);
        }
        Ok((sigma, slope))
    }

    fn check_step(&self, z: &[f64], dt: f64, dw: &[f64]) -> Result<()> {
        check_len("state", z.len(), self.model.latent_dim)?;
        check_len("brownian increment", dw.len(), self.model.noise_dim)?;
        if !(dt > 0.0) {
            return Err(SldiError::InvalidInput(format!("step {dt} must be > 0")));
        }
        Ok(())
    }

    /// `z + mu(z, t) dt + Sigma(z, t) dW`.
    pub fn em_step(&self, z: &[f64], t: f64, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
        self.check_step(z, dt, dw)?;
        let mu = self.drift(z, t);
        let noise = self.diffuse(z, t, dw);
        let next: Vec<f64> = (0..z.len()).map(|i| z[i] + mu[i] * dt + noise[i]).collect();
        check_finite(0, &next)?;
        Ok(next)
    }

    /// Euler–Maruyama plus the diagonal-noise correction
    /// `0.5 Sigma_ii dSigma_ii/dz_i (dW_i^2 - dt)`.
    pub fn milstein_step(&self, z: &[f64], t: f64, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
        self.check_step(z, dt, dw)?;
        let (sigma, slope) = self.diag_sigma_and_slope(z, t)?;
        let mu = self.drift(z, t);
        let next: Vec<f64> = (0..z.len())
            .map(|i| {
                z[i] + mu[i] * dt
                    + sigma[i] * dw[i]
                    + 0.5 * sigma[i] * slope[i] * (dw[i] * dw[i] - dt)
            })
            .collect();
        check_finite(0, &next)?;
        Ok(next)
    }

    pub fn step(&self, scheme: Scheme, z: &[f64], t: f64, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
        match scheme {
            Scheme::EulerMaruyama => self.em_step(z, t, dt, dw),
            Scheme::Milstein => self.milstein_step(z, t, dt, dw),
        }
    }

    pub fn simulate(
        &self,
        z0: &[f64],
        grid: &TimeGrid,
        noise: &BrownianPath,
        scheme: Scheme,
    ) -> Result<LatentPath> {
        noise.check_grid(grid)?;
        if noise.dim != self.model.noise_dim {
            return Err(SldiError::GridError("noise dimension does not match the model".into()));
        }
        let mut states = Vec::with_capacity(grid.num_steps() + 1);
        states.push(z0.to_vec());
        for (k, (t, dt)) in grid.steps().enumerate() {
            let next = self
                .step(scheme, &states[k], t, dt, &noise.increments[k])
                .map_err(|e| match e {
                    SldiError::NumericalBlowup { detail, .. } => SldiError::blowup(k, detail),
                    other => other,
                })?;
            states.push(next);
        }
        Ok(LatentPath {
            grid: grid.clone(),
            states,
            noise: noise.clone(),
        })
    }
}
