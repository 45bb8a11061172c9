pub mod adjoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod fmt;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod sde;
pub mod train;
pub mod variational;

pub use error::{Result, SldiError};
