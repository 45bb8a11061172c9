//! Strong and weak error of Euler-Maruyama and Milstein on geometric
//! Brownian motion, with fitted log-log slopes.
//!
//! Usage: cargo run --release --example convergence_study [n_paths]

use sldi::sde::{strong_weak_error, AnalyticFixture, Scheme};

fn main() -> sldi::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("n_paths"));
    let fx = AnalyticFixture::Gbm { mu: 1.0, sigma: 0.5, z0: 1.0 };
    let dts: Vec<f64> = (4..=9).map(|l| 0.5f64.powi(l)).collect();
    for scheme in [Scheme::EulerMaruyama, Scheme::Milstein] {
        let t = strong_weak_error(fx, scheme, 1.0, &dts, n, 11)?;
        println!("# {}", scheme.name());
        print!("{}", t.to_csv());
        println!(
            "strong slope {:.3}, weak slope {:.3}\n",
            t.strong_slope.unwrap_or(f64::NAN),
            t.weak_slope.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
