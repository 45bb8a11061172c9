//! Gradient of a terminal loss through an OU solve, computed by reverse mode
//! on the tape, by the drift-only adjoint and by the corrected adjoint.
//!
//! Usage: cargo run --release --example adjoint_gradients [steps]

use sldi::adjoint::{terminal_loss_gradient, GradMode};
use sldi::sde::{fixtures, sample_brownian, Scheme, TimeGrid};

fn main() -> sldi::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(256, |s| s.parse().expect("steps"));
    let (model, store) = fixtures::ou(0.7, 0.4);
    let sde = model.bind(store.flat());
    let grid = TimeGrid::uniform(0.0, 1.0, steps)?;
    let noise = sample_brownian(&grid, 1, 5)?;
    let loss = |z: &[f64]| (0.5 * z[0] * z[0], vec![z[0]]);
    let names: Vec<&str> = store.entries().iter().map(|e| e.name.as_str()).collect();
    println!("blocks {names:?}");
    for mode in [GradMode::Tape, GradMode::Adjoint, GradMode::AdjointCorrected] {
        let (value, g) = terminal_loss_gradient(&sde, &[1.0], &grid, &noise, Scheme::EulerMaruyama, mode, loss)?;
        println!("{:>18} loss {value:.6} grad {g:?}", mode.name());
    }
    Ok(())
}
