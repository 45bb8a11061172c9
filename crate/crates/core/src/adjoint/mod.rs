//! Gradient machinery: exact reverse mode through the solver, the
//! continuous adjoint, the adjoint consistency penalty, the learned
//! co-adjoint field, gradient smoothing and estimator variance reports.

pub mod backward;
pub mod clip;
pub mod coadjoint;
pub mod variance;

pub use backward::{
    adjoint_backward, backprop_through_solver, terminal_loss_gradient, AdjointMode, AdjointTrace, GradMode,
};
pub use clip::{variance_clip, EwmaSmoother};
pub use coadjoint::{adjoint_consistency_penalty, co_adjoint_step, co_adjoint_train_loss, CoAdjointField};
pub use variance::{
    gradient_variance_report, mean_and_variance, variance_report_with, Estimator, EstimatorStats, VarianceConfig,
    VarianceReport,
};
