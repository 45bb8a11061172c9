use std::f64::consts::PI;

use crate::error::{check_len, Result, SldiError};
use crate::nn::{Tape, Var};

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_len("gaussian variance", var.len(), mean.len())?;
        if var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SldiError::InvalidInput(format!(
                "gaussian variances must be finite and > 0, got {var:?}"
            )));
        }
        Ok(GaussianDist { mean, var })
    }

    pub fn standard(d: usize) -> Self {
        GaussianDist {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }

    /// Zero-variance limit; only meaningful for sampling.
    pub fn point_mass(mean: Vec<f64>) -> Self {
        let d = mean.len();
        GaussianDist {
            mean,
            var: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn entropy(&self) -> f64 {
        self.var
            .iter()
            .map(|v| 0.5 * (2.0 * PI * std::f64::consts::E * v).ln())
            .sum()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| -0.5 * ((2.0 * PI * v).ln() + (x - m).powi(2) / v))
            .sum()
    }
}

/// `mean + sqrt(var) * eps`.
pub fn reparam_sample(dist: &GaussianDist, eps: &[f64]) -> Vec<f64> {
    dist.mean
        .iter()
        .zip(&dist.var)
        .zip(eps)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect()
}

/// Closed-form `KL(q || p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &GaussianDist, p: &GaussianDist) -> f64 {
    q.mean
        .iter()
        .zip(&q.var)
        .zip(p.mean.iter().zip(&p.var))
        .map(|((mq, vq), (mp, vp))| 0.5 * (vq / vp + (mq - mp).powi(2) / vp - 1.0 - (vq / vp).ln()))
        .sum()
}

/// Reparameterized sample recorded on the tape from `(mean, log_var)` nodes.
pub fn reparam_on_tape(tape: &mut Tape, mean: Var, log_var: Var, eps: &[f64]) -> Var {
    let half = tape.scale(log_var, 0.5);
    let sd = tape.exp(half);
    let e = tape.leaf(eps.to_vec());
    let noise = tape.mul(sd, e);
    tape.add(mean, noise)
}

/// `KL(q || prior)` recorded on the tape, with `q` given by
/// `(mean, log_var)` nodes.
pub fn gaussian_kl_on_tape(tape: &mut Tape, mean: Var, log_var: Var, prior: &GaussianDist) -> Var {
    let inv = tape.leaf(prior.var.iter().map(|v| 1.0 / v).collect());
    let pm = tape.leaf(prior.mean.clone());
    let var = tape.exp(log_var);
    let diff = tape.sub(mean, pm);
    let sq = tape.square(diff);
    let num = tape.add(var, sq);
    let ratio = tape.mul(num, inv);
    let body = tape.sub(ratio, log_var);
    let s = tape.sum(body);
    let shift: f64 = prior.var.iter().map(|v| 0.5 * (v.ln() - 1.0)).sum();
    tape.affine(s, 0.5, shift)
}
