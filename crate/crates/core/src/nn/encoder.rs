//! Bidirectional gated recurrent encoder for `q(z0 | x_{1:T})`.
//!
//! Each cell step consumes `[x_k, gap_k, h]` where `gap_k` is the elapsed
//! time since the previously consumed observation, so irregular sampling is
//! visible to the network. The cell is a gated update:
//!
//! ```text
//! u = sigmoid(W_u [x, gap, h] + b_u)
//! c = tanh(W_c [x, gap, h] + b_c)
//! h' = h + u * (c - h)
//! ```
//!
//! The final forward and backward states are concatenated and mapped
//! affinely to `(mean, log-variance)`.

use super::activation::Activation;
use super::field::{FieldSpec, NeuralField};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Result, SldiError};
use crate::variational::GaussianDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub obs_dim: usize,
    pub hidden: usize,
    pub latent: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct GatedCell {
    update: NeuralField,
    candidate: NeuralField,
}

impl GatedCell {
    fn specs(spec: &EncoderSpec) -> (FieldSpec, FieldSpec) {
        let input = spec.obs_dim + 1 + spec.hidden;
        (
            FieldSpec::affine(input, spec.hidden).with_output(Activation::Sigmoid),
            FieldSpec::affine(input, spec.hidden).with_output(Activation::Tanh),
        )
    }

    fn register(store: &mut ParamStore, name: &str, spec: &EncoderSpec) -> Result<Self> {
        let (u, c) = Self::specs(spec);
        Ok(GatedCell {
            update: NeuralField::register(store, &format!("{name}.update"), &u)?,
            candidate: NeuralField::register(store, &format!("{name}.candidate"), &c)?,
        })
    }

    fn attach(store: &ParamStore, name: &str, spec: &EncoderSpec) -> Result<Self> {
        let (u, c) = Self::specs(spec);
        Ok(GatedCell {
            update: NeuralField::attach(store, &format!("{name}.update"), &u)?,
            candidate: NeuralField::attach(store, &format!("{name}.candidate"), &c)?,
        })
    }

    fn step(&self, tape: &mut Tape, x: Var, gap: f64, h: Var) -> Var {
        let g = tape.constant(gap);
        let inp = tape.concat(&[x, g, h]);
        let u = self.update.apply(tape, inp);
        let c = self.candidate.apply(tape, inp);
        let diff = tape.sub(c, h);
        let gated = tape.mul(u, diff);
        tape.add(h, gated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentEncoder {
    spec: EncoderSpec,
    forward: GatedCell,
    backward: GatedCell,
    readout: NeuralField,
}

impl RecurrentEncoder {
    pub fn register(store: &mut ParamStore, name: &str, spec: EncoderSpec) -> Result<Self> {
        Ok(RecurrentEncoder {
            spec,
            forward: GatedCell::register(store, &format!("{name}.fwd"), &spec)?,
            backward: GatedCell::register(store, &format!("{name}.bwd"), &spec)?,
            readout: NeuralField::register(
                store,
                &format!("{name}.readout"),
                &FieldSpec::affine(2 * spec.hidden, 2 * spec.latent),
            )?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, spec: EncoderSpec) -> Result<Self> {
        Ok(RecurrentEncoder {
            spec,
            forward: GatedCell::attach(store, &format!("{name}.fwd"), &spec)?,
            backward: GatedCell::attach(store, &format!("{name}.bwd"), &spec)?,
            readout: NeuralField::attach(
                store,
                &format!("{name}.readout"),
                &FieldSpec::affine(2 * spec.hidden, 2 * spec.latent),
            )?,
        })
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn readout(&self) -> &NeuralField {
        &self.readout
    }

    fn validate(&self, times: &[f64], values: &[Vec<f64>]) -> Result<()> {
        if times.is_empty() {
            return Err(SldiError::InvalidInput("cannot encode an empty sequence".into()));
        }
        if times.len() != values.len() {
            return Err(SldiError::shape("timestamps and values differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SldiError::InvalidInput("timestamps must be strictly increasing".into()));
        }
        for v in values {
            crate::error::check_len("observation", v.len(), self.spec.obs_dim)?;
        }
        Ok(())
    }

    /// Records the encoder on `tape`; returns `(mean, log_variance)` nodes.
    /// `t_start` is the time origin used for the first forward gap.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        t_start: f64,
        times: &[f64],
        values: &[Vec<f64>],
    ) -> Result<(Var, Var)> {
        self.validate(times, values)?;
        let n = times.len();
        let xs: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();

        let mut hf = tape.leaf(vec![0.0; self.spec.hidden]);
        let mut prev = t_start;
        for k in 0..n {
            hf = self.forward.step(tape, xs[k], times[k] - prev, hf);
            prev = times[k];
        }
        let mut hb = tape.leaf(vec![0.0; self.spec.hidden]);
        for k in (0..n).rev() {
            let gap = if k + 1 < n { times[k + 1] - times[k] } else { 0.0 };
            hb = self.backward.step(tape, xs[k], gap, hb);
        }
        let h = tape.concat(&[hf, hb]);
        let out = self.readout.apply(tape, h);
        let d = self.spec.latent;
        Ok((tape.slice(out, 0, d), tape.slice(out, d, d)))
    }

    pub fn encode(
        &self,
        params: &[f64],
        t_start: f64,
        times: &[f64],
        values: &[Vec<f64>],
    ) -> Result<GaussianDist> {
        let mut tape = Tape::new(params);
        let (m, lv) = self.encode_on_tape(&mut tape, t_start, times, values)?;
        let mean = tape.value(m).to_vec();
        let var: Vec<f64> = tape.value(lv).iter().map(|v| v.exp()).collect();
        if mean.iter().chain(&var).any(|v| !v.is_finite()) || var.iter().any(|v| *v <= 0.0) {
            return Err(SldiError::NumericsError(format!(
                "encoder produced a degenerate posterior (mean {mean:?}, var {var:?})"
            )));
        }
        GaussianDist::new(mean, var)
    }

    /// Encodes the first `valid_len` entries of a padded batch row; entries
    /// past the mask are never read.
    pub fn encode_padded(
        &self,
        params: &[f64],
        t_start: f64,
        times: &[f64],
        values: &[Vec<f64>],
        valid_len: usize,
    ) -> Result<GaussianDist> {
        if valid_len > times.len() || valid_len > values.len() {
            return Err(SldiError::shape("mask longer than padded sequence"));
        }
        self.encode(params, t_start, &times[..valid_len], &values[..valid_len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::xavier_init;

    fn setup(seed: u64) -> (RecurrentEncoder, ParamStore) {
        let mut store = ParamStore::new();
        let enc = RecurrentEncoder::register(
            &mut store,
            "encoder",
            EncoderSpec { obs_dim: 2, hidden: 5, latent: 3 },
        )
        .unwrap();
        xavier_init(&mut store, seed);
        (enc, store)
    }

    fn seq() -> (Vec<f64>, Vec<Vec<f64>>) {
        (
            vec![0.1, 0.35, 0.4, 1.2],
            vec![vec![0.5, -1.0], vec![0.2, 0.3], vec![-0.7, 0.1], vec![1.5, 0.9]],
        )
    }

    #[test]
    fn constant_readout_ignores_input() {
        let (enc, mut store) = setup(1);
        let r = enc.readout().layers()[0].clone();
        store.flat_mut()[r.weight..r.weight + r.in_dim * r.out_dim].fill(0.0);
        let bias = [0.1, 0.2, 0.3, -1.0, 0.0, 0.5];
        store.flat_mut()[r.bias..r.bias + 6].copy_from_slice(&bias);
        let (t, v) = seq();
        let q = enc.encode(store.flat(), 0.0, &t, &v).unwrap();
        assert_eq!(q.mean, vec![0.1, 0.2, 0.3]);
        let expect: Vec<f64> = bias[3..].iter().map(|b: &f64| b.exp()).collect();
        assert_eq!(q.var, expect);
    }

    #[test]
    fn padding_beyond_mask_is_ignored() {
        let (enc, store) = setup(2);
        let (mut t, mut v) = seq();
        let base = enc.encode_padded(store.flat(), 0.0, &t, &v, 3).unwrap();
        t[3] = 99.0;
        v[3] = vec![-50.0, 50.0];
        let again = enc.encode_padded(store.flat(), 0.0, &t, &v, 3).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn single_observation_and_empty_sequence() {
        let (enc, store) = setup(3);
        let q = enc.encode(store.flat(), 0.0, &[0.5], &[vec![1.0, 1.0]]).unwrap();
        assert!(q.var.iter().all(|v| *v > 0.0));
        assert!(matches!(
            enc.encode(store.flat(), 0.0, &[], &[]),
            Err(SldiError::InvalidInput(_))
        ));
    }

    #[test]
    fn gap_feature_changes_the_encoding() {
        let (enc, store) = setup(4);
        let (t, v) = seq();
        let shifted: Vec<f64> = t.iter().enumerate().map(|(i, x)| x + 0.1 * i as f64).collect();
        let a = enc.encode(store.flat(), 0.0, &t, &v).unwrap();
        let b = enc.encode(store.flat(), 0.0, &shifted, &v).unwrap();
        assert_ne!(a.mean, b.mean);
    }

    #[test]
    fn tape_gradients_through_recurrent_cells_match_finite_differences() {
        let (enc, store) = setup(6);
        let (t, v) = seq();
        let weights = [0.7, -0.4, 1.1, 0.3, 0.9, -1.2];
        let loss_grad = |p: &[f64]| -> (f64, Vec<f64>) {
            let mut tape = Tape::new(p);
            let (m, lv) = enc.encode_on_tape(&mut tape, 0.0, &t, &v).unwrap();
            let both = tape.concat(&[m, lv]);
            let w = tape.leaf(weights.to_vec());
            let prod = tape.mul(both, w);
            let sq = tape.square(prod);
            let out = tape.sum(sq);
            let g = tape.backward(out);
            (tape.scalar(out), g.params().to_vec())
        };
        let (_, grad) = loss_grad(store.flat());
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..store.len() {
            let mut pp = store.flat().to_vec();
            let mut pm = pp.clone();
            pp[k] += h;
            pm[k] -= h;
            let fd = (loss_grad(&pp).0 - loss_grad(&pm).0) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3));
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }
}
