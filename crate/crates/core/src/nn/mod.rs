//! Dense networks, the recurrent encoder, and the differentiation tape.

pub mod activation;
pub mod checkpoint;
pub mod encoder;
pub mod field;
pub mod init;
pub mod params;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use activation::Activation;
pub use encoder::{EncoderSpec, RecurrentEncoder};
pub use field::{DenseLayer, FieldSpec, NeuralField};
pub use init::{xavier_bound, xavier_field, xavier_init};
pub use params::{ParamEntry, ParamStore};
pub use spectral::{spectral_norm_estimate, spectral_norm_exact, spectral_project, spectral_project_in_place};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
