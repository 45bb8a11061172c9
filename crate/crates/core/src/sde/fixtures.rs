//! Small affine SDEs with closed-form behaviour, built from identity-activation
//! fields so that they run through exactly the same code as trained models.

use super::model::{DiffusionMode, SdeModel};
use crate::nn::{Activation, NeuralField, ParamStore};

fn build(
    drift_w: Vec<f64>,
    drift_b: Vec<f64>,
    diff_w: Vec<f64>,
    diff_b: Vec<f64>,
    d: usize,
    m: usize,
    mode: DiffusionMode,
) -> (SdeModel, ParamStore) {
    let mut store = ParamStore::new();
    let drift = NeuralField::affine_with(&mut store, "drift", &drift_w, &drift_b, Activation::Identity)
        .expect("fixture drift");
    let diffusion =
        NeuralField::affine_with(&mut store, "diffusion", &diff_w, &diff_b, Activation::Identity)
            .expect("fixture diffusion");
    let model = SdeModel::new(drift, diffusion, d, m, mode).expect("fixture dims");
    (model, store)
}

/// Scalar `dz = a z dt + s dW`.
pub fn linear_scalar(a: f64, s: f64) -> (SdeModel, ParamStore) {
    build(vec![a, 0.0], vec![0.0], vec![0.0, 0.0], vec![s], 1, 1, DiffusionMode::Diagonal)
}

/// Scalar Ornstein–Uhlenbeck `dz = -theta z dt + sigma dW`.
pub fn ou(theta: f64, sigma: f64) -> (SdeModel, ParamStore) {
    linear_scalar(-theta, sigma)
}

/// Geometric Brownian motion `dz = mu z dt + sigma z dW`.
pub fn gbm(mu: f64, sigma: f64) -> (SdeModel, ParamStore) {
    build(vec![mu, 0.0], vec![0.0], vec![sigma, 0.0], vec![0.0], 1, 1, DiffusionMode::Diagonal)
}

/// Scalar `dz = c dt + s dW`.
pub fn constant(c: f64, s: f64) -> (SdeModel, ParamStore) {
    build(vec![0.0, 0.0], vec![c], vec![0.0, 0.0], vec![s], 1, 1, DiffusionMode::Diagonal)
}

/// `dz = A z dt + B dW` with full constant `B` (`d x m`, rows given).
pub fn linear(a: &[Vec<f64>], b: &[Vec<f64>]) -> (SdeModel, ParamStore) {
    let d = a.len();
    let m = b.first().map_or(0, |r| r.len());
    let mut drift_w = Vec::with_capacity(d * (d + 1));
    for row in a {
        drift_w.extend_from_slice(row);
        drift_w.push(0.0);
    }
    let diff_b: Vec<f64> = b.iter().flatten().copied().collect();
    build(
        drift_w,
        vec![0.0; d],
        vec![0.0; d * m * (d + 1)],
        diff_b,
        d,
        m,
        DiffusionMode::Full,
    )
}

/// `dz = A z dt + diag(b) dW`.
pub fn linear_diag(a: &[Vec<f64>], b: &[f64]) -> (SdeModel, ParamStore) {
    let d = a.len();
    let mut drift_w = Vec::with_capacity(d * (d + 1));
    for row in a {
        drift_w.extend_from_slice(row);
        drift_w.push(0.0);
    }
    build(
        drift_w,
        vec![0.0; d],
        vec![0.0; d * (d + 1)],
        b.to_vec(),
        d,
        d,
        DiffusionMode::Diagonal,
    )
}
