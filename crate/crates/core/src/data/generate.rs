//! Synthetic datasets with known ground truth.

use rand::Rng;
use rayon::prelude::*;

use super::seq::{assign_splits, Dataset, ObservationSeq};
use crate::error::{Result, SldiError};
use crate::fmt::fmt_f64;
use crate::oracles::LinearGaussianSystem;
use crate::rng::{derive_seed, rng_from_seed, standard_normals};
use crate::sde::{fixtures, sample_brownian, Scheme, SdeModel, TimeGrid};
use crate::variational::{reparam_sample, GaussianDist};

/// Latent paths are simulated with steps no longer than this, with the
/// observation grid merged in.
pub const SIMULATION_DT: f64 = 1.0 / 256.0;

const TRAIN_FRACTION: f64 = 0.8;
const VAL_FRACTION: f64 = 0.1;

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn grid_config(grid: &TimeGrid) -> Vec<(String, String)> {
    vec![
        kv("grid_t0", fmt_f64(grid.t0())),
        kv("grid_t1", fmt_f64(grid.t1())),
        kv("grid_points", grid.knots().len()),
    ]
}

fn finish(seqs: Vec<ObservationSeq>, mut config: Vec<(String, String)>, grid: &TimeGrid, seed: u64) -> Result<Dataset> {
    let splits = assign_splits(seqs.len(), TRAIN_FRACTION, VAL_FRACTION, derive_seed(seed, u64::MAX));
    config.extend(grid_config(grid));
    config.push(kv("n_seq", seqs.len()));
    config.push(kv("seed", seed));
    Dataset::new(seqs, splits, config)
}

/// Simulates `model` from `z0` on a fine grid containing every knot of
/// `obs_grid`, returning the latent state at those knots.
fn latent_at_knots(
    model: &SdeModel,
    params: &[f64],
    z0: &[f64],
    obs_grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (fine, idx) = TimeGrid::merged(obs_grid.t0(), obs_grid.t1(), SIMULATION_DT, obs_grid.knots())?;
    let noise = sample_brownian(&fine, model.noise_dim, seed)?;
    let path = model.bind(params).simulate(z0, &fine, &noise, Scheme::EulerMaruyama)?;
    Ok(idx.into_iter().map(|i| path.states[i].clone()).collect())
}

/// Ornstein–Uhlenbeck sequences `dz = -theta z dt + sigma dW` in as many
/// independent coordinates as `z0` has, observed at every knot of `grid`
/// with additive `N(0, obs_noise^2)` noise.
pub fn gen_ou(
    n_seq: usize,
    theta: f64,
    sigma: f64,
    z0: &GaussianDist,
    obs_noise: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Dataset> {
    if !(theta > 0.0) || !(sigma > 0.0) || !(obs_noise >= 0.0) {
        return Err(SldiError::InvalidInput(
            "OU generator needs theta > 0, sigma > 0, obs_noise >= 0".into(),
        ));
    }
    let d = z0.dim();
    let a: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { -theta } else { 0.0 }).collect())
        .collect();
    let (model, store) = fixtures::linear_diag(&a, &vec![sigma; d]);
    let seqs = (0..n_seq)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut rng = rng_from_seed(derive_seed(s, 1));
            let start = reparam_sample(z0, &standard_normals(&mut rng, d));
            let latent = latent_at_knots(&model, store.flat(), &start, grid, derive_seed(s, 0))?;
            let values = latent
                .into_iter()
                .map(|z| {
                    let e = standard_normals(&mut rng, d);
                    z.iter().zip(e).map(|(z, e)| z + obs_noise * e).collect()
                })
                .collect();
            ObservationSeq::new(
                format!("ou-{i}"),
                grid.knots().to_vec(),
                values,
                vec![
                    kv("generator", "ou"),
                    kv("seed", seed),
                    kv("index", i),
                    kv("theta", fmt_f64(theta)),
                    kv("sigma", fmt_f64(sigma)),
                    kv("obs_noise", fmt_f64(obs_noise)),
                ],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let config = vec![
        kv("generator", "ou"),
        kv("theta", fmt_f64(theta)),
        kv("sigma", fmt_f64(sigma)),
        kv("obs_noise", fmt_f64(obs_noise)),
        kv("z0_mean", z0.mean.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")),
        kv("z0_var", z0.var.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")),
    ];
    finish(seqs, config, grid, seed)
}

/// Geometric Brownian motion sampled exactly in log space:
/// `z(t + h) = z(t) exp((drift - vol^2/2) h + vol sqrt(h) eps)`.
pub fn gen_gbm(n_seq: usize, drift: f64, vol: f64, z0: f64, grid: &TimeGrid, seed: u64) -> Result<Dataset> {
    if !(z0 > 0.0) || !(vol >= 0.0) {
        return Err(SldiError::InvalidInput("GBM generator needs z0 > 0 and vol >= 0".into()));
    }
    let seqs = (0..n_seq)
        .into_par_iter()
        .map(|i| {
            let noise = sample_brownian(grid, 1, derive_seed(seed, i as u64))?;
            let mut z = z0;
            let mut values = vec![vec![z]];
            for ((_, h), w) in grid.steps().zip(&noise.increments) {
                z *= ((drift - 0.5 * vol * vol) * h + vol * w[0]).exp();
                values.push(vec![z]);
            }
            ObservationSeq::new(
                format!("gbm-{i}"),
                grid.knots().to_vec(),
                values,
                vec![
                    kv("generator", "gbm"),
                    kv("seed", seed),
                    kv("index", i),
                    kv("drift", fmt_f64(drift)),
                    kv("vol", fmt_f64(vol)),
                    kv("z0", fmt_f64(z0)),
                ],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let config = vec![
        kv("generator", "gbm"),
        kv("drift", fmt_f64(drift)),
        kv("vol", fmt_f64(vol)),
        kv("z0", fmt_f64(z0)),
    ];
    finish(seqs, config, grid, seed)
}

/// Sequences from a linear-Gaussian state-space system: `z0` from the
/// system prior, latent `dz = A z dt + B dW`, observations `C z + N(0, R)`.
pub fn gen_linear(sys: &LinearGaussianSystem, n_seq: usize, grid: &TimeGrid, seed: u64) -> Result<Dataset> {
    let (model, store) = sys.sde_fixture();
    let d = sys.latent_dim();
    let seqs = (0..n_seq)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut rng = rng_from_seed(derive_seed(s, 1));
            let start = reparam_sample(&sys.z0, &standard_normals(&mut rng, d));
            let latent = latent_at_knots(&model, store.flat(), &start, grid, derive_seed(s, 0))?;
            let values = latent.iter().map(|z| sys.observe(z, &mut rng)).collect();
            ObservationSeq::new(
                format!("linear-{i}"),
                grid.knots().to_vec(),
                values,
                vec![kv("generator", "linear"), kv("seed", seed), kv("index", i)],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    finish(seqs, vec![kv("generator", "linear")], grid, seed)
}

/// Damped stochastic oscillator observed through its first coordinate.
pub fn gen_sinusoid(
    n_seq: usize,
    freq: f64,
    damping: f64,
    sigma: f64,
    obs_noise: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Dataset> {
    let sys = LinearGaussianSystem::new(
        vec![vec![-damping, freq], vec![-freq, -damping]],
        vec![vec![sigma, 0.0], vec![0.0, sigma]],
        vec![vec![1.0, 0.0]],
        vec![obs_noise.max(1e-12).powi(2)],
        GaussianDist::new(vec![1.0, 0.0], vec![0.01, 0.01])?,
    )?;
    let mut ds = gen_linear(&sys, n_seq, grid, seed)?;
    for (i, s) in ds.sequences.iter_mut().enumerate() {
        s.id = format!("sinusoid-{i}");
        s.meta[0].1 = "sinusoid".into();
    }
    ds.config[0].1 = "sinusoid".into();
    Ok(ds)
}

/// Keeps each observation independently with probability `keep_prob`;
/// the first and last are always kept, and dropped points are restored
/// uniformly at random until at least `min_keep` remain.
pub fn subsample_irregular(seq: &ObservationSeq, keep_prob: f64, min_keep: usize, seed: u64) -> Result<ObservationSeq> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) || min_keep == 0 {
        return Err(SldiError::InvalidInput("need 0 < keep_prob <= 1 and min_keep >= 1".into()));
    }
    let n = seq.len();
    let mut rng = rng_from_seed(seed);
    let mut keep: Vec<bool> = (0..n)
        .map(|i| i == 0 || i + 1 == n || rng.gen::<f64>() < keep_prob)
        .collect();
    let target = min_keep.min(n);
    let mut kept = keep.iter().filter(|k| **k).count();
    while kept < target {
        let dropped: Vec<usize> = (0..n).filter(|i| !keep[*i]).collect();
        keep[dropped[rng.gen_range(0..dropped.len())]] = true;
        kept += 1;
    }
    let idx: Vec<usize> = (0..n).filter(|i| keep[*i]).collect();
    Ok(seq.select(&idx))
}
