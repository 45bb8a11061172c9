//! Forward simulation of Itô SDEs.

pub mod brownian;
pub mod convergence;
pub mod fixtures;
pub mod grid;
pub mod model;
pub mod moments;

pub use brownian::{sample_brownian, BrownianPath};
pub use convergence::{loglog_slope, strong_weak_error, AnalyticFixture, ErrorRow, ErrorTable};
pub use grid::TimeGrid;
pub use model::{DiffusionMode, LatentPath, Scheme, Sde, SdeModel};
pub use moments::{moment_ode_solve, MomentPath};
