//! Observation sequences, synthetic generators and the dataset file format.

pub mod generate;
pub mod io;
pub mod seq;

pub use generate::{gen_gbm, gen_linear, gen_ou, gen_sinusoid, subsample_irregular};
pub use io::{dataset_from_strings, dataset_to_strings, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use seq::{assign_splits, Dataset, ObservationSeq, Split};
