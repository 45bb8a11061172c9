//! Runs the gradient check suite (tape vs finite differences, adjoint vs
//! tape). Pass a parameter block name to corrupt its backward pass and see
//! the check name it.
//!
//! Usage: cargo run --release --example gradcheck [fault_block]

use sldi::train::{gradcheck, GradcheckConfig};

fn main() -> sldi::Result<()> {
    let cfg = GradcheckConfig { fault_block: std::env::args().nth(1), ..Default::default() };
    let report = gradcheck(&cfg)?;
    print!("{}", report.to_text());
    for row in report.failures() {
        println!("failed: {} {} {}", row.fixture, row.comparison, row.block);
    }
    Ok(())
}
