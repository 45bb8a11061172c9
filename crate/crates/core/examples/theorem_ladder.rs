//! Widens the encoder and refines the solver step on linear-Gaussian data,
//! printing the initial-state KL to the exact smoother at every rung.
//!
//! Usage: cargo run --release --example theorem_ladder [steps] [n_seeds]

use std::time::Instant;

use sldi::train::{theorem_ladder, LadderConfig};

fn main() -> sldi::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = LadderConfig::default();
    if let Some(s) = args.next() {
        cfg.steps = s.parse().expect("steps must be an integer");
    }
    if let Some(n) = args.next() {
        cfg.seeds = (0..n.parse().expect("n_seeds must be an integer")).collect();
    }
    let t = Instant::now();
    let report = theorem_ladder(&cfg)?;
    print!("{}", report.to_csv());
    print!("{}", report.summary());
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
