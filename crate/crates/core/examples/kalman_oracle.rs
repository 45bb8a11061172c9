//! For a linear-Gaussian system, compares the exact Kalman log-likelihood
//! with an importance-sampled estimate and with single-sample ELBO draws
//! of a latent SDE model that uses the true generative model.
//!
//! Usage: cargo run --release --example kalman_oracle [n_samples]

use sldi::data::gen_linear;
use sldi::oracles::{is_loglik, kalman_smoother, LinearGaussianSystem};
use sldi::sde::TimeGrid;
use sldi::train::ladder::ladder_model;
use sldi::variational::{sequence_objective, ElboConfig, GaussianDist};

fn main() -> sldi::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(2000, |s| s.parse().expect("n_samples"));
    let sys = LinearGaussianSystem::new(
        vec![vec![-0.5]],
        vec![vec![0.3]],
        vec![vec![1.0]],
        vec![0.1],
        GaussianDist::standard(1),
    )?;
    let obs = TimeGrid::uniform(0.0, 1.0, 8)?;
    let seq = gen_linear(&sys, 1, &obs, 3)?.sequences.remove(0);
    let exact = kalman_smoother(&sys, &seq, &obs)?.log_likelihood;
    let (model, store) = ladder_model(&sys, 8, 1)?;
    let dt = 1.0 / 64.0;
    let is = is_loglik(&model, store.flat(), &seq, dt, n, 7)?;
    let cfg = ElboConfig { dt, lambda: 0.0, beta: 0.0, n_samples: 1, ..Default::default() };
    let draws: Vec<f64> = (0..200)
        .map(|s| sequence_objective(&model, store.flat(), &seq, &cfg, s, false).map(|r| r.breakdown.total))
        .collect::<sldi::Result<_>>()?;
    let elbo = draws.iter().sum::<f64>() / draws.len() as f64;
    println!("kalman log-likelihood     {exact:.4}");
    println!("importance estimate       {:.4} (se {:.4}, {n} samples)", is.log_lik, is.std_err);
    println!("mean elbo (untrained enc) {elbo:.4}");
    Ok(())
}
