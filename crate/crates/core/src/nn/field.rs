//! Multi-layer perceptron fields with exact Jacobian products.

use std::ops::Range;

use super::activation::Activation;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{check_len, Result, SldiError};

/// Layer widths (input first, output last) and activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl FieldSpec {
    pub fn mlp(input: usize, hidden: &[usize], output: usize, act: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        FieldSpec {
            widths,
            hidden: act,
            output: Activation::Identity,
        }
    }

    pub fn affine(input: usize, output: usize) -> Self {
        FieldSpec {
            widths: vec![input, output],
            hidden: Activation::Identity,
            output: Activation::Identity,
        }
    }

    pub fn with_output(mut self, act: Activation) -> Self {
        self.output = act;
        self
    }

    fn layer_act(&self, i: usize) -> Activation {
        if i + 2 == self.widths.len() {
            self.output
        } else {
            self.hidden
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: usize,
    pub bias: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub act: Activation,
}

impl DenseLayer {
    fn pre_activation(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.weight..self.weight + self.out_dim * self.in_dim];
        let b = &params[self.bias..self.bias + self.out_dim];
        (0..self.out_dim)
            .map(|r| {
                b[r] + w[r * self.in_dim..(r + 1) * self.in_dim]
                    .iter()
                    .zip(x)
                    .map(|(a, c)| a * c)
                    .sum::<f64>()
            })
            .collect()
    }

    fn weight_times(&self, params: &[f64], u: &[f64]) -> Vec<f64> {
        let w = &params[self.weight..self.weight + self.out_dim * self.in_dim];
        (0..self.out_dim)
            .map(|r| {
                w[r * self.in_dim..(r + 1) * self.in_dim]
                    .iter()
                    .zip(u)
                    .map(|(a, c)| a * c)
                    .sum()
            })
            .collect()
    }
}

/// A parameterized differentiable map `R^in -> R^out`.
///
/// The field does not own its parameters; it records offsets into a
/// [`ParamStore`] and every evaluation takes the flat parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    name: String,
    spec: FieldSpec,
    layers: Vec<DenseLayer>,
    params: Range<usize>,
}

impl NeuralField {
    /// Registers zero-initialized parameters for `spec` under `name`.
    pub fn register(store: &mut ParamStore, name: &str, spec: &FieldSpec) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(SldiError::InvalidInput(format!(
                "field {name}: widths {:?} must have at least two positive entries",
                spec.widths
            )));
        }
        let start = store.len();
        let mut layers = Vec::new();
        for (i, w) in spec.widths.windows(2).enumerate() {
            let weight = store.add_zeros(&format!("{name}.l{i}.weight"), vec![w[1], w[0]])?;
            let bias = store.add_zeros(&format!("{name}.l{i}.bias"), vec![w[1]])?;
            layers.push(DenseLayer {
                weight,
                bias,
                out_dim: w[1],
                in_dim: w[0],
                act: spec.layer_act(i),
            });
        }
        Ok(NeuralField {
            name: name.to_string(),
            spec: spec.clone(),
            layers,
            params: start..store.len(),
        })
    }

    /// Re-binds to parameters that already exist in `store` (e.g. after
    /// loading a checkpoint).
    pub fn attach(store: &ParamStore, name: &str, spec: &FieldSpec) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, w) in spec.widths.windows(2).enumerate() {
            let find = |suffix: &str, shape: Vec<usize>| -> Result<usize> {
                let key = format!("{name}.l{i}.{suffix}");
                let e = store
                    .entry(&key)
                    .ok_or_else(|| SldiError::ConfigError(format!("missing parameter {key}")))?;
                if e.shape != shape {
                    return Err(SldiError::ConfigError(format!(
                        "parameter {key} has shape {:?}, expected {shape:?}",
                        e.shape
                    )));
                }
                Ok(e.offset)
            };
            layers.push(DenseLayer {
                weight: find("weight", vec![w[1], w[0]])?,
                bias: find("bias", vec![w[1]])?,
                out_dim: w[1],
                in_dim: w[0],
                act: spec.layer_act(i),
            });
        }
        let start = layers.first().map(|l| l.weight).unwrap_or(0);
        let last = layers.last().expect("at least one layer");
        Ok(NeuralField {
            name: name.to_string(),
            spec: spec.clone(),
            params: start..last.bias + last.out_dim,
            layers,
        })
    }

    /// Single affine layer `act(W x + b)` with explicitly supplied values.
    pub fn affine_with(
        store: &mut ParamStore,
        name: &str,
        weight: &[f64],
        bias: &[f64],
        act: Activation,
    ) -> Result<Self> {
        let out = bias.len();
        if out == 0 || weight.len() % out != 0 {
            return Err(SldiError::shape(format!(
                "field {name}: weight length {} incompatible with {out} outputs",
                weight.len()
            )));
        }
        let spec = FieldSpec::affine(weight.len() / out, out).with_output(act);
        let f = Self::register(store, name, &spec)?;
        let l = &f.layers[0];
        store.flat_mut()[l.weight..l.weight + weight.len()].copy_from_slice(weight);
        store.flat_mut()[l.bias..l.bias + out].copy_from_slice(bias);
        Ok(f)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Range of this field's parameters in the flat vector.
    pub fn param_range(&self) -> Range<usize> {
        self.params.clone()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_len(&format!("{} input", self.name), x.len(), self.input_dim())?;
        Ok(self.eval_unchecked(params, x))
    }

    pub(crate) fn eval_unchecked(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l
                .pre_activation(params, &h)
                .into_iter()
                .map(|a| l.act.apply(a))
                .collect();
        }
        h
    }

    /// Value and Jacobian-vector product `J u`.
    pub fn jvp(&self, params: &[f64], x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(&format!("{} input", self.name), x.len(), self.input_dim())?;
        check_len(&format!("{} tangent", self.name), u.len(), self.input_dim())?;
        let mut h = x.to_vec();
        let mut t = u.to_vec();
        for l in &self.layers {
            let pre = l.pre_activation(params, &h);
            let wt = l.weight_times(params, &t);
            t = pre
                .iter()
                .zip(&wt)
                .map(|(p, w)| l.act.derivative(*p) * w)
                .collect();
            h = pre.into_iter().map(|a| l.act.apply(a)).collect();
        }
        Ok((h, t))
    }

    /// Vector-Jacobian product: returns `(J_x^T v, J_params^T v)` where the
    /// parameter gradient is indexed relative to [`Self::param_range`].
    pub fn vjp(&self, params: &[f64], x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(&format!("{} input", self.name), x.len(), self.input_dim())?;
        check_len(&format!("{} cotangent", self.name), v.len(), self.output_dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let pre = l.pre_activation(params, &h);
            inputs.push(h);
            h = pre.iter().map(|a| l.act.apply(*a)).collect();
            pres.push(pre);
        }
        let base = self.params.start;
        let mut pgrad = vec![0.0; self.params.len()];
        let mut g = v.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let gpre: Vec<f64> = g
                .iter()
                .zip(&pres[li])
                .map(|(gi, p)| gi * l.act.derivative(*p))
                .collect();
            let w = &params[l.weight..l.weight + l.out_dim * l.in_dim];
            let mut gin = vec![0.0; l.in_dim];
            for r in 0..l.out_dim {
                let row = &w[r * l.in_dim..(r + 1) * l.in_dim];
                let wrow = l.weight - base + r * l.in_dim;
                for c in 0..l.in_dim {
                    gin[c] += gpre[r] * row[c];
                    pgrad[wrow + c] += gpre[r] * inputs[li][c];
                }
                pgrad[l.bias - base + r] += gpre[r];
            }
            g = gin;
        }
        Ok((g, pgrad))
    }

    /// Dense input Jacobian, `output_dim` rows of `input_dim` entries.
    pub fn input_jacobian(&self, params: &[f64], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.input_dim();
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            cols.push(self.jvp(params, x, &e)?.1);
        }
        Ok((0..self.output_dim())
            .map(|r| cols.iter().map(|c| c[r]).collect())
            .collect())
    }

    /// Records the forward pass on `tape`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for l in &self.layers {
            let pre = tape.linear(h, l.weight, Some(l.bias), l.out_dim, l.in_dim);
            h = if l.act == Activation::Identity {
                pre
            } else {
                tape.act(pre, l.act)
            };
        }
        h
    }

    /// Records the forward pass together with the directional derivative
    /// `J(x) dir`, so that the derivative itself can be differentiated.
    pub fn apply_with_tangent(&self, tape: &mut Tape, x: Var, dir: Var) -> (Var, Var) {
        let mut h = x;
        let mut t = dir;
        for l in &self.layers {
            let pre = tape.linear(h, l.weight, Some(l.bias), l.out_dim, l.in_dim);
            let wt = tape.linear(t, l.weight, None, l.out_dim, l.in_dim);
            if l.act == Activation::Identity {
                h = pre;
                t = wt;
            } else {
                let slope = tape.act_deriv(pre, l.act);
                t = tape.mul(slope, wt);
                h = tape.act(pre, l.act);
            }
        }
        (h, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::xavier_init;
    use proptest::prelude::*;

    fn random_field(seed: u64) -> (NeuralField, ParamStore) {
        let mut store = ParamStore::new();
        let spec = FieldSpec::mlp(3, &[5, 4], 2, Activation::Tanh).with_output(Activation::Softplus);
        let f = NeuralField::register(&mut store, "f", &spec).unwrap();
        xavier_init(&mut store, seed);
        // non-zero biases so that bias gradients are exercised
        for (i, e) in store.entries().to_vec().iter().enumerate() {
            if e.name.ends_with("bias") {
                for (k, v) in store.slice_mut(&e.name).unwrap().iter_mut().enumerate() {
                    *v = 0.1 * ((i + k) as f64).sin();
                }
            }
        }
        (f, store)
    }

    #[test]
    fn identity_affine_field_is_identity() {
        let mut store = ParamStore::new();
        let f = NeuralField::affine_with(
            &mut store,
            "id",
            &[1.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(f.eval(store.flat(), &[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut store = ParamStore::new();
        let f = NeuralField::affine_with(
            &mut store,
            "c",
            &[0.0; 6],
            &[1.5, -0.5],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(f.eval(store.flat(), &[9.0, 1.0, -4.0]).unwrap(), vec![1.5, -0.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (f, store) = random_field(1);
        assert!(matches!(
            f.eval(store.flat(), &[1.0, 2.0]),
            Err(SldiError::ShapeError(_))
        ));
        assert!(f.vjp(store.flat(), &[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn affine_vjp_is_transpose() {
        let mut store = ParamStore::new();
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let f = NeuralField::affine_with(&mut store, "a", &w, &[0.1, 0.2], Activation::Identity)
            .unwrap();
        let (gx, _) = f.vjp(store.flat(), &[0.0, 0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(gx, vec![1.0 - 4.0, 2.0 - 5.0, 3.0 - 6.0]);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut store = ParamStore::new();
        let f = NeuralField::affine_with(&mut store, "t", &[1.0], &[0.0], Activation::Tanh).unwrap();
        let (gx, _) = f.vjp(store.flat(), &[0.0], &[1.0]).unwrap();
        assert_eq!(gx, vec![1.0]);
    }

    #[test]
    fn outputs_finite_on_bounded_inputs() {
        let (f, store) = random_field(3);
        for k in 0..50 {
            let x: Vec<f64> = (0..3).map(|i| 10.0 * ((k * 3 + i) as f64 * 0.7).sin()).collect();
            assert!(f.eval(store.flat(), &x).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let (f, store) = random_field(11);
        let x = [0.4, -0.7, 1.1];
        let v = [0.8, -1.3];
        let (gx, gp) = f.vjp(store.flat(), &x, &v).unwrap();
        let h = 1e-5;
        let loss = |p: &[f64], xx: &[f64]| -> f64 {
            f.eval(p, xx).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum()
        };
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(store.flat(), &xp) - loss(store.flat(), &xm)) / (2.0 * h);
            worst = worst.max((fd - gx[i]).abs() / fd.abs().max(1e-3));
        }
        let range = f.param_range();
        for k in range.clone() {
            let mut pp = store.flat().to_vec();
            let mut pm = pp.clone();
            pp[k] += h;
            pm[k] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            worst = worst.max((fd - gp[k - range.start]).abs() / fd.abs().max(1e-3));
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn tape_forward_and_tangent_agree_with_direct_evaluation() {
        let (f, store) = random_field(5);
        let x = vec![0.2, 0.1, -0.5];
        let u = vec![1.0, 0.0, 0.5];
        let (y, ju) = f.jvp(store.flat(), &x, &u).unwrap();
        let mut tape = Tape::new(store.flat());
        let xv = tape.leaf(x);
        let uv = tape.leaf(u);
        let (yv, tv) = f.apply_with_tangent(&mut tape, xv, uv);
        for (a, b) in tape.value(yv).iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in tape.value(tv).iter().zip(&ju) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn jvp_and_vjp_are_adjoint(seed in 0u64..1000,
                                   x in proptest::collection::vec(-2.0f64..2.0, 3),
                                   u in proptest::collection::vec(-1.0f64..1.0, 3),
                                   v in proptest::collection::vec(-1.0f64..1.0, 2)) {
            let (f, store) = random_field(seed);
            let (_, ju) = f.jvp(store.flat(), &x, &u).unwrap();
            let (jtv, _) = f.vjp(store.flat(), &x, &v).unwrap();
            let lhs: f64 = v.iter().zip(&ju).map(|(a, b)| a * b).sum();
            let rhs: f64 = jtv.iter().zip(&u).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-12);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
        }
    }
}
