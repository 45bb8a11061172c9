//! Path-space KL between two SDEs that differ by a constant drift offset,
//! estimated along posterior paths and compared with `delta^2 T / (2 s^2)`.
//!
//! Usage: cargo run --release --example girsanov_kl [delta] [n_paths]

use sldi::rng::derive_seed;
use sldi::sde::{fixtures, sample_brownian, Scheme, TimeGrid};
use sldi::variational::girsanov_kl_path;

fn main() -> sldi::Result<()> {
    let mut args = std::env::args().skip(1);
    let delta: f64 = args.next().map_or(0.3, |s| s.parse().expect("delta"));
    let n: usize = args.next().map_or(1000, |s| s.parse().expect("n_paths"));
    let (sigma, horizon) = (0.7, 2.0);
    let (post, ps) = fixtures::constant(delta, sigma);
    let (prior, pp) = fixtures::constant(0.0, sigma);
    let (q, p) = (post.bind(ps.flat()), prior.bind(pp.flat()));
    let grid = TimeGrid::uniform(0.0, horizon, 64)?;
    let mut total = 0.0;
    for i in 0..n {
        let noise = sample_brownian(&grid, 1, derive_seed(4, i as u64))?;
        let path = q.simulate(&[0.0], &grid, &noise, Scheme::EulerMaruyama)?;
        total += girsanov_kl_path(&path, &q, &p)?;
    }
    println!("estimated kl {:.10}", total / n as f64);
    println!("closed form  {:.10}", 0.5 * delta * delta / (sigma * sigma) * horizon);
    Ok(())
}
