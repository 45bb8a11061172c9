//! Simulates an Ornstein-Uhlenbeck process with Euler-Maruyama and compares
//! the sample mean and variance at the horizon with the closed form.
//!
//! Usage: cargo run --release --example simulate_sde [n_paths]

use sldi::oracles::ou_statistics;
use sldi::rng::derive_seed;
use sldi::sde::{fixtures, sample_brownian, Scheme, TimeGrid};

fn main() -> sldi::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(5000, |s| s.parse().expect("n_paths"));
    let (theta, sigma, z0, horizon) = (0.8, 0.6, 1.5, 2.0);
    let (model, store) = fixtures::ou(theta, sigma);
    let sde = model.bind(store.flat());
    let grid = TimeGrid::uniform(0.0, horizon, 256)?;
    let mut ends = Vec::with_capacity(n);
    for i in 0..n {
        let noise = sample_brownian(&grid, 1, derive_seed(1, i as u64))?;
        ends.push(sde.simulate(&[z0], &grid, &noise, Scheme::EulerMaruyama)?.terminal()[0]);
    }
    let mean = ends.iter().sum::<f64>() / n as f64;
    let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (m, v) = ou_statistics(theta, sigma, z0, horizon)?;
    println!("paths {n}, dt {}", horizon / 256.0);
    println!("mean     sample {mean:.5}  exact {m:.5}  (se {:.5})", (var / n as f64).sqrt());
    println!("variance sample {var:.5}  exact {v:.5}");
    Ok(())
}
