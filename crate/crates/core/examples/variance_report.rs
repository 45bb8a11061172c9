//! Gradient variance of the plain, antithetic and variance-clipped
//! estimators on the OU fixture.
//!
//! Usage: cargo run --release --example variance_report [n_seeds]

use sldi::adjoint::{gradient_variance_report, VarianceConfig};

fn main() -> sldi::Result<()> {
    let n_seeds: usize = std::env::args().nth(1).map_or(100, |s| s.parse().expect("n_seeds"));
    let report = gradient_variance_report(&VarianceConfig { n_seeds, ..Default::default() })?;
    print!("{}", report.to_csv());
    println!("antithetic unbiased: {}", report.antithetic_unbiased());
    Ok(())
}
