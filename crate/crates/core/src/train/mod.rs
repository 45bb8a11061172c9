//! Training loop, configuration, evaluation and the diagnostic studies.

pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod ladder;
pub mod metrics;
pub mod optim;
pub mod run;

pub use config::{AnnealKind, DataKind, TrainConfig};
pub use eval::{evaluate, EvalConfig, EvalReport};
pub use gradcheck::{gradcheck, rel_err, GradcheckConfig, GradcheckReport, GradcheckRow};
pub use metrics::MetricsRecord;
pub use optim::Adam;
pub use run::{init_model, train, TrainOutput};
pub use ladder::{theorem_ladder, LadderConfig, LadderReport};
