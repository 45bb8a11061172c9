//! Largest-singular-value estimation and spectral-norm projection.

use super::params::ParamStore;
use crate::error::{Result, SldiError};
use crate::rng::{rng_from_seed, standard_normals};

/// Seed of the power-iteration start vector used by [`max_spectral_norm`].
pub const POWER_ITERATION_SEED: u64 = 0x5eed_5eed;
/// Iterations used by the spectral guard check.
pub const PROJECTION_ITERS: usize = 200;

fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += w[r * cols + c] * u[r];
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Power-iteration estimate of `sigma_max` of a `rows x cols` row-major
/// matrix. The estimate after `k` iterations is `|W v_k|` where `v_k` is
/// the normalized `k`-th iterate of `W^T W` on a seeded Gaussian start
/// vector; the sequence is non-decreasing in `k`.
pub fn spectral_norm_estimate(
    w: &[f64],
    rows: usize,
    cols: usize,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if rows == 0 || cols == 0 || w.is_empty() {
        return Err(SldiError::shape("spectral norm of an empty matrix"));
    }
    crate::error::check_len("matrix data", w.len(), rows * cols)?;
    if iters == 0 {
        return Err(SldiError::InvalidInput("power iteration needs iters >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut v = standard_normals(&mut rng, cols);
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut est = 0.0;
    for _ in 0..iters {
        let u = mat_vec(w, rows, cols, &v);
        let next = mat_t_vec(w, rows, cols, &u);
        let nn = norm(&next);
        if nn == 0.0 {
            // v lies in the null space; either W = 0 or a measure-zero start
            return Ok(norm(&u));
        }
        v = next.into_iter().map(|x| x / nn).collect();
        est = norm(&mat_vec(w, rows, cols, &v));
    }
    Ok(est)
}

/// Largest singular value from a full SVD.
pub fn spectral_norm_exact(w: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows == 0 || cols == 0 || w.is_empty() {
        return Err(SldiError::shape("spectral norm of an empty matrix"));
    }
    crate::error::check_len("matrix data", w.len(), rows * cols)?;
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, w);
    Ok(m.singular_values().max())
}

/// Rescales, in place, every weight matrix of the listed namespaces whose
/// spectral norm exceeds `bound`. Returns how many matrices were rescaled.
///
/// The norm comes from a full SVD rather than power iteration: training
/// pushes several singular values against the bound, and a fixed iteration
/// budget then underestimates the largest one, leaving the projected matrix
/// slightly above the bound.
pub fn spectral_project_in_place(
    store: &mut ParamStore,
    namespaces: &[&str],
    bound: f64,
) -> Result<usize> {
    if !(bound > 0.0) {
        return Err(SldiError::InvalidInput(format!("spectral bound {bound} must be > 0")));
    }
    let targets: Vec<_> = namespaces
        .iter()
        .flat_map(|ns| store.namespace_entries(ns).filter(|e| e.is_weight()).cloned().collect::<Vec<_>>())
        .collect();
    let mut count = 0;
    for e in targets {
        let (rows, cols) = (e.shape[0], e.shape[1]);
        let w = &mut store.flat_mut()[e.range()];
        let sigma = spectral_norm_exact(w, rows, cols)?;
        if sigma > bound {
            let s = bound / sigma;
            w.iter_mut().for_each(|x| *x *= s);
            count += 1;
        }
    }
    Ok(count)
}

pub fn spectral_project(store: &ParamStore, namespaces: &[&str], bound: f64) -> Result<ParamStore> {
    let mut out = store.clone();
    spectral_project_in_place(&mut out, namespaces, bound)?;
    Ok(out)
}

/// Largest estimated spectral norm over the weight matrices of `namespaces`.
pub fn max_spectral_norm(store: &ParamStore, namespaces: &[&str]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ns in namespaces {
        for e in store.namespace_entries(ns).filter(|e| e.is_weight()) {
            let s = spectral_norm_estimate(
                &store.flat()[e.range()],
                e.shape[0],
                e.shape[1],
                PROJECTION_ITERS,
                POWER_ITERATION_SEED,
            )?;
            worst = worst.max(s);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    /// One-sided Jacobi SVD: singular values of a square or tall matrix,
    /// independent of power iteration.
    fn jacobi_singular_values(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        // columns of A, orthogonalized pairwise
        let mut a: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| w[r * cols + c]).collect()).collect();
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..cols {
                for q in p + 1..cols {
                    let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                    let beta: f64 = a[q].iter().map(|x| x * x).sum();
                    let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                    off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..rows {
                        let (x, y) = (a[p][r], a[q][r]);
                        a[p][r] = c * x - s * y;
                        a[q][r] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = a.iter().map(|col| norm(col)).collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sv
    }

    #[test]
    fn identity_and_diagonal() {
        let i3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!((spectral_norm_estimate(&i3, 3, 3, 5, 1).unwrap() - 1.0).abs() < 1e-15);
        let d = [3.0, 0.0, 0.0, 1.0];
        assert!((spectral_norm_estimate(&d, 2, 2, 50, 1).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn empty_matrix_is_shape_error() {
        assert!(matches!(
            spectral_norm_estimate(&[], 0, 0, 3, 1),
            Err(SldiError::ShapeError(_))
        ));
    }

    #[test]
    fn agrees_with_jacobi_svd_on_random_matrices() {
        let mut rng = rng_from_seed(77);
        for _ in 0..5 {
            let w = standard_normals(&mut rng, 64);
            let sv = jacobi_singular_values(&w, 8, 8);
            let est = spectral_norm_estimate(&w, 8, 8, 5000, 3).unwrap();
            assert!((est - sv[0]).abs() < 1e-6, "{est} vs {}", sv[0]);
        }
    }

    #[test]
    fn estimate_is_monotone_in_iterations() {
        let mut rng = rng_from_seed(5);
        let w = standard_normals(&mut rng, 30);
        let mut prev = 0.0;
        for k in 1..40 {
            let est = spectral_norm_estimate(&w, 5, 6, k, 8).unwrap();
            assert!(est >= prev - 1e-12, "iteration {k}: {est} < {prev}");
            prev = est;
        }
    }

    fn store_with(w: Vec<f64>, rows: usize, cols: usize) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("drift.l0.weight", Tensor::new(vec![rows, cols], w).unwrap()).unwrap();
        s.add("drift.l0.bias", Tensor::new(vec![rows], vec![5.0; rows]).unwrap()).unwrap();
        s.add("decoder.l0.weight", Tensor::new(vec![1, 1], vec![10.0]).unwrap()).unwrap();
        s
    }

    #[test]
    fn projection_cases() {
        let s = store_with(vec![0.5, 0.0, 0.0, 0.25], 2, 2);
        assert_eq!(spectral_project(&s, &["drift"], 1.0).unwrap(), s);

        let s = store_with(vec![2.0, 0.0, 0.0, 2.0], 2, 2);
        let p = spectral_project(&s, &["drift"], 1.0).unwrap();
        let w = p.slice("drift.l0.weight").unwrap();
        for (a, b) in w.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // biases and other namespaces untouched
        assert_eq!(p.slice("drift.l0.bias"), s.slice("drift.l0.bias"));
        assert_eq!(p.slice("decoder.l0.weight"), Some(&[10.0][..]));
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = rng_from_seed(21);
        let s = store_with(standard_normals(&mut rng, 12).into_iter().map(|x| 3.0 * x).collect(), 3, 4);
        let once = spectral_project(&s, &["drift"], 1.0).unwrap();
        let twice = spectral_project(&once, &["drift"], 1.0).unwrap();
        let a = once.slice("drift.l0.weight").unwrap();
        let b = twice.slice("drift.l0.weight").unwrap();
        let diff = norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(diff / norm(a) < 1e-6);
        assert!(max_spectral_norm(&once, &["drift"]).unwrap() <= 1.0 * 1.001);
    }

    #[test]
    fn clustered_singular_values_stay_below_the_bound() {
        // two nearly equal top singular values defeat a short power iteration
        let mut rng = rng_from_seed(4);
        let q: Vec<f64> = standard_normals(&mut rng, 16);
        let (u, _) = nalgebra::DMatrix::from_row_slice(4, 4, &q).qr().unpack();
        let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, 1.497, 0.3, 0.1]));
        let w = &u * d * u.transpose();
        let flat: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| w[(r, c)]).collect();
        let p = spectral_project(&store_with(flat, 4, 4), &["drift"], 1.0).unwrap();
        let w = p.slice("drift.l0.weight").unwrap();
        assert!(jacobi_singular_values(w, 4, 4)[0] <= 1.0 + 1e-12);
        assert!(spectral_norm_estimate(w, 4, 4, 5000, 99).unwrap() <= 1.0 + 1e-12);
    }
}
