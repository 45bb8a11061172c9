//! Terms of the variational objective and their assembly into the ELBO.

pub mod elbo;
pub mod gaussian;
pub mod model;
pub mod terms;

pub use elbo::{batch_objective, elbo, sequence_objective, BatchResult, ElboBreakdown, ElboConfig, SequenceResult};
pub use gaussian::*;
pub use model::{ModelSpec, PosteriorMode, SldiModel};
pub use terms::*;
