//! Independent ground truth: finite differences, exact linear-Gaussian
//! inference, closed-form statistics and importance sampling.

pub mod expm;
pub mod importance;
pub mod linear;
pub mod misc;

pub use expm::{discretize_linear, expm};
pub use importance::{is_loglik, log_importance_weight, ImportanceEstimate};
pub use linear::{kalman_smoother, observation_knots, prior_moments, KalmanResult, LinearGaussianSystem};
pub use misc::{finite_diff_grad, finite_diff_grad_richardson, ou_statistics};
