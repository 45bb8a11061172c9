use rand::Rng;

use super::field::{FieldSpec, NeuralField};
use super::params::ParamStore;
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed};

/// Half-width of the Xavier-uniform interval for a `fan_out x fan_in` matrix.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fills every rank-2 `*.weight` tensor with Xavier-uniform draws and sets
/// every other tensor to zero. Each tensor draws from its own sub-stream of
/// `seed`, keyed by its position in the store.
pub fn xavier_init(store: &mut ParamStore, seed: u64) {
    let entries = store.entries().to_vec();
    for (i, e) in entries.iter().enumerate() {
        let slot = &mut store.flat_mut()[e.range()];
        if e.is_weight() {
            let bound = xavier_bound(e.shape[1], e.shape[0]);
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            slot.iter_mut()
                .for_each(|w| *w = rng.gen_range(-bound..=bound));
        } else {
            slot.iter_mut().for_each(|w| *w = 0.0);
        }
    }
}

/// Xavier-initialized standalone field.
pub fn xavier_field(name: &str, spec: &FieldSpec, seed: u64) -> Result<(NeuralField, ParamStore)> {
    let mut store = ParamStore::new();
    let f = NeuralField::register(&mut store, name, spec)?;
    xavier_init(&mut store, seed);
    Ok((f, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::Activation;

    #[test]
    fn one_by_one_bound_is_sqrt3() {
        assert!((xavier_bound(1, 1) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn biases_zero_weights_bounded_and_deterministic() {
        let spec = FieldSpec::mlp(4, &[7], 3, Activation::Tanh);
        let (f, a) = xavier_field("f", &spec, 9).unwrap();
        let (_, b) = xavier_field("f", &spec, 9).unwrap();
        assert_eq!(a, b);
        for e in a.entries() {
            let vals = a.slice(&e.name).unwrap();
            if e.is_weight() {
                let bound = xavier_bound(e.shape[1], e.shape[0]);
                assert!(vals.iter().all(|w| w.abs() <= bound));
                assert!(vals.iter().any(|w| *w != 0.0));
            } else {
                assert!(vals.iter().all(|w| *w == 0.0));
            }
        }
        assert_eq!(f.num_params(), a.len());
    }

    #[test]
    fn empirical_variance_matches_uniform_formula() {
        // 100 x 100 matrix: 10^4 draws, variance of U(-b, b) is b^2 / 3 = 2 / (fan_in + fan_out)
        let spec = FieldSpec::affine(100, 100);
        let (_, store) = xavier_field("w", &spec, 4).unwrap();
        let w = store.slice("w.l0.weight").unwrap();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / 200.0;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }
}
