//! Consistency penalty between adjoint traces and a reference field, and
//! the learned co-adjoint field that predicts `-da/dt`.

use super::backward::AdjointTrace;
use crate::error::{check_len, Result, SldiError};
use crate::nn::NeuralField;
use crate::sde::LatentPath;

/// `beta * sum_k |A_k - (a_{k+1} - a_k)/dt_k|^2 dt_k`. `reference` holds
/// one vector per step (a trailing entry for the final knot is ignored).
pub fn adjoint_consistency_penalty(trace: &AdjointTrace, reference: &[Vec<f64>], beta: f64) -> Result<f64> {
    let k_steps = trace.grid.num_steps();
    if reference.len() != k_steps && reference.len() != k_steps + 1 {
        return Err(SldiError::GridError(format!(
            "reference has {} entries for a grid of {k_steps} steps",
            reference.len()
        )));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let inc = trace.increments();
    let mut total = 0.0;
    for (k, (_, dt)) in trace.grid.steps().enumerate() {
        check_len("reference cotangent", reference[k].len(), inc[k].len())?;
        total += reference[k].iter().zip(&inc[k]).map(|(r, v)| (r - v).powi(2)).sum::<f64>() * dt;
    }
    Ok(beta * total)
}

/// Learned field `A(z, t)` with the convention `da = -A dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAdjointField {
    pub net: NeuralField,
}

impl CoAdjointField {
    pub fn new(net: NeuralField, latent_dim: usize) -> Result<Self> {
        check_len("co-adjoint input", net.input_dim(), latent_dim + 1)?;
        check_len("co-adjoint output", net.output_dim(), latent_dim)?;
        Ok(CoAdjointField { net })
    }

    pub fn eval(&self, params: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut x = z.to_vec();
        x.push(t);
        self.net.eval(params, &x)
    }

    /// `a - A(z, t) dt`.
    pub fn step(&self, params: &[f64], z: &[f64], t: f64, dt: f64, a: &[f64]) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(SldiError::InvalidInput(format!("step {dt} must be > 0")));
        }
        let f = self.eval(params, z, t)?;
        check_len("adjoint state", a.len(), f.len())?;
        Ok(a.iter().zip(f).map(|(a, f)| a - f * dt).collect())
    }

    fn check(&self, path: &LatentPath, trace: &AdjointTrace) -> Result<()> {
        if path.grid != trace.grid || path.states.len() != trace.adjoints.len() {
            return Err(SldiError::GridError("path and adjoint trace use different grids".into()));
        }
        Ok(())
    }

    /// `sum_k |A(z_k, t_k) + (a_{k+1} - a_k)/dt_k|^2 dt_k`.
    pub fn train_loss(&self, params: &[f64], path: &LatentPath, trace: &AdjointTrace) -> Result<f64> {
        Ok(self.train_loss_and_grad(params, path, trace)?.0)
    }

    /// Loss and its gradient over the whole flat parameter vector (non-zero
    /// only on this field's parameters; the trace is treated as data).
    pub fn train_loss_and_grad(&self, params: &[f64], path: &LatentPath, trace: &AdjointTrace) -> Result<(f64, Vec<f64>)> {
        self.check(path, trace)?;
        let inc = trace.increments();
        let range = self.net.param_range();
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (k, (t, dt)) in path.grid.steps().enumerate() {
            let pred = self.eval(params, &path.states[k], t)?;
            let resid: Vec<f64> = pred.iter().zip(&inc[k]).map(|(p, v)| p + v).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>() * dt;
            let cot: Vec<f64> = resid.iter().map(|r| 2.0 * r * dt).collect();
            let mut x = path.states[k].clone();
            x.push(t);
            let (_, gp) = self.net.vjp(params, &x, &cot)?;
            for (g, v) in grad[range.clone()].iter_mut().zip(gp) {
                *g += v;
            }
        }
        Ok((loss, grad))
    }
}

/// Free-function form of [`CoAdjointField::step`].
pub fn co_adjoint_step(field: &CoAdjointField, params: &[f64], z: &[f64], t: f64, dt: f64, a: &[f64]) -> Result<Vec<f64>> {
    field.step(params, z, t, dt, a)
}

/// Free-function form of [`CoAdjointField::train_loss`].
pub fn co_adjoint_train_loss(field: &CoAdjointField, params: &[f64], path: &LatentPath, trace: &AdjointTrace) -> Result<f64> {
    field.train_loss(params, path, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{xavier_init, Activation, FieldSpec, ParamStore};
    use crate::oracles::finite_diff_grad;
    use crate::rng::{rng_from_seed, standard_normals};
    use crate::sde::{sample_brownian, TimeGrid};

    fn random_trace(seed: u64, steps: usize, d: usize) -> (LatentPath, AdjointTrace) {
        let g = TimeGrid::from_knots((0..=steps).map(|k| (k as f64).powf(1.3) * 0.1).collect()).unwrap();
        let mut rng = rng_from_seed(seed);
        let states: Vec<Vec<f64>> = (0..=steps).map(|_| standard_normals(&mut rng, d)).collect();
        let adjoints: Vec<Vec<f64>> = (0..=steps).map(|_| standard_normals(&mut rng, d)).collect();
        let noise = sample_brownian(&g, d, seed).unwrap();
        (
            LatentPath { grid: g.clone(), states, noise },
            AdjointTrace { grid: g, adjoints, param_grad: vec![] },
        )
    }

    fn field(d: usize, seed: u64) -> (CoAdjointField, ParamStore) {
        let mut store = ParamStore::new();
        let net = NeuralField::register(&mut store, "coadjoint", &FieldSpec::mlp(d + 1, &[5], d, Activation::Tanh)).unwrap();
        xavier_init(&mut store, seed);
        (CoAdjointField::new(net, d).unwrap(), store)
    }

    #[test]
    fn penalty_cases() {
        let (_, tr) = random_trace(1, 9, 2);
        let r = tr.increments();
        assert_eq!(adjoint_consistency_penalty(&tr, &r, 0.0).unwrap(), 0.0);
        assert_eq!(adjoint_consistency_penalty(&tr, &r, 0.3).unwrap(), 0.0);
        let mut rng = rng_from_seed(4);
        let refs: Vec<Vec<f64>> = (0..9).map(|_| standard_normals(&mut rng, 2)).collect();
        let got = adjoint_consistency_penalty(&tr, &refs, 0.3).unwrap();
        // brute force straight from the formula
        let k = tr.grid.knots();
        let mut want = 0.0;
        for s in 0..9 {
            let h = k[s + 1] - k[s];
            for i in 0..2 {
                let da = (tr.adjoints[s + 1][i] - tr.adjoints[s][i]) / h;
                want += (refs[s][i] - da) * (refs[s][i] - da) * h;
            }
        }
        assert!((got - 0.3 * want).abs() < 1e-12);
        assert!(got > 0.0);
        assert!(matches!(adjoint_consistency_penalty(&tr, &refs[..5], 1.0), Err(SldiError::GridError(_))));
    }

    #[test]
    fn co_adjoint_step_cases() {
        let mut store = ParamStore::new();
        let net = NeuralField::affine_with(&mut store, "coadjoint", &[0.0; 6], &[0.5, -1.0], Activation::Identity).unwrap();
        let f = CoAdjointField::new(net, 2).unwrap();
        let mut a = vec![1.0, 2.0];
        for k in 0..7 {
            a = co_adjoint_step(&f, store.flat(), &[0.3, 0.1], k as f64 * 0.1, 0.1, &a).unwrap();
        }
        assert!((a[0] - (1.0 - 7.0 * 0.5 * 0.1)).abs() < 1e-14);
        assert!((a[1] - (2.0 + 7.0 * 0.1)).abs() < 1e-14);

        let mut store = ParamStore::new();
        let net = NeuralField::affine_with(&mut store, "coadjoint", &[0.0; 6], &[0.0, 0.0], Activation::Identity).unwrap();
        let zero = CoAdjointField::new(net, 2).unwrap();
        assert_eq!(zero.step(store.flat(), &[1.0, 1.0], 0.0, 0.2, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn co_adjoint_step_parameter_gradient() {
        let (f, store) = field(2, 6);
        let z = [0.2, -0.4];
        let a = [1.0, 0.5];
        let dir = [0.3, -0.7];
        let obj = |p: &[f64]| {
            let out = f.step(p, &z, 0.3, 0.1, &a).unwrap();
            out.iter().zip(&dir).map(|(o, w)| o * w).sum::<f64>()
        };
        let fd = finite_diff_grad(obj, store.flat(), 1e-5).unwrap();
        let mut x = z.to_vec();
        x.push(0.3);
        let cot: Vec<f64> = dir.iter().map(|w| -0.1 * w).collect();
        let (_, g) = f.net.vjp(store.flat(), &x, &cot).unwrap();
        for (u, v) in g.iter().zip(&fd) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn train_loss_cases() {
        let (f, store) = field(2, 2);
        let (path, tr) = random_trace(3, 8, 2);
        let got = f.train_loss(store.flat(), &path, &tr).unwrap();
        let k = tr.grid.knots();
        let mut want = 0.0;
        for s in 0..8 {
            let h = k[s + 1] - k[s];
            let pred = f.eval(store.flat(), &path.states[s], k[s]).unwrap();
            for i in 0..2 {
                let target = -(tr.adjoints[s + 1][i] - tr.adjoints[s][i]) / h;
                want += (pred[i] - target).powi(2) * h;
            }
        }
        assert!((got - want).abs() < 1e-12);
        let (_, grad) = f.train_loss_and_grad(store.flat(), &path, &tr).unwrap();
        let fd = finite_diff_grad(|p| f.train_loss(p, &path, &tr).unwrap(), store.flat(), 1e-5).unwrap();
        for (u, v) in grad.iter().zip(&fd) {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(v.abs()).max(1e-3));
        }

        // zero field against a constant trace
        let mut zs = ParamStore::new();
        let net = NeuralField::affine_with(&mut zs, "coadjoint", &[0.0; 6], &[0.0, 0.0], Activation::Identity).unwrap();
        let zero = CoAdjointField::new(net, 2).unwrap();
        let flat = AdjointTrace { grid: tr.grid.clone(), adjoints: vec![vec![0.7, -0.2]; 9], param_grad: vec![] };
        assert_eq!(zero.train_loss(zs.flat(), &path, &flat).unwrap(), 0.0);
    }
}
