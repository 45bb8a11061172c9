//! The full latent SDE model: encoder, prior SDE, optional posterior
//! drift, decoder and optional co-adjoint field, all stored in one
//! [`ParamStore`] under disjoint namespaces.

use crate::error::{Result, SldiError};
use crate::nn::{xavier_init, Activation, EncoderSpec, FieldSpec, NeuralField, ParamStore, RecurrentEncoder};
use crate::sde::{DiffusionMode, SdeModel};

use super::gaussian::GaussianDist;
use super::terms::NoiseModel;

pub const ENCODER: &str = "encoder";
pub const DRIFT: &str = "drift";
pub const DIFFUSION: &str = "diffusion";
pub const POSTERIOR_DRIFT: &str = "posterior_drift";
pub const DECODER: &str = "decoder";
pub const COADJOINT: &str = "coadjoint";

/// Namespaces whose weight matrices are spectrally constrained.
pub const CONSTRAINED: [&str; 3] = [DRIFT, DIFFUSION, POSTERIOR_DRIFT];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorMode {
    /// Posterior paths follow the prior SDE from an encoded `z0`.
    Shared,
    /// Posterior paths follow their own drift with the prior's diffusion.
    Separate,
}

impl PosteriorMode {
    pub fn name(self) -> &'static str {
        match self {
            PosteriorMode::Shared => "shared",
            PosteriorMode::Separate => "separate",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "shared" => Some(PosteriorMode::Shared),
            "separate" => Some(PosteriorMode::Separate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub obs_dim: usize,
    pub drift_hidden: Vec<usize>,
    pub diffusion_hidden: Vec<usize>,
    pub posterior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub encoder_hidden: usize,
    /// `None` disables the co-adjoint field.
    pub coadjoint_hidden: Option<Vec<usize>>,
    pub diffusion_mode: DiffusionMode,
    pub posterior: PosteriorMode,
    pub noise: NoiseModel,
    pub z0_prior: GaussianDist,
}

impl ModelSpec {
    fn diffusion_outputs(&self) -> usize {
        match self.diffusion_mode {
            DiffusionMode::Full => self.latent_dim * self.noise_dim,
            DiffusionMode::Diagonal => self.latent_dim,
            DiffusionMode::Scalar => 1,
        }
    }

    fn field_specs(&self) -> Vec<(&'static str, FieldSpec)> {
        let d = self.latent_dim;
        let mut v = vec![
            (DRIFT, FieldSpec::mlp(d + 1, &self.drift_hidden, d, Activation::Tanh)),
            (
                DIFFUSION,
                FieldSpec::mlp(d + 1, &self.diffusion_hidden, self.diffusion_outputs(), Activation::Tanh)
                    .with_output(Activation::Softplus),
            ),
        ];
        if self.posterior == PosteriorMode::Separate {
            v.push((POSTERIOR_DRIFT, FieldSpec::mlp(d + 1, &self.posterior_hidden, d, Activation::Tanh)));
        }
        v.push((
            DECODER,
            FieldSpec::mlp(d, &self.decoder_hidden, self.noise.decoder_outputs(self.obs_dim), Activation::Tanh),
        ));
        if let Some(h) = &self.coadjoint_hidden {
            v.push((COADJOINT, FieldSpec::mlp(d + 1, h, d, Activation::Tanh)));
        }
        v
    }

    fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            obs_dim: self.obs_dim,
            hidden: self.encoder_hidden,
            latent: self.latent_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.noise_dim == 0 || self.obs_dim == 0 || self.encoder_hidden == 0 {
            return Err(SldiError::ConfigError("model dimensions must be >= 1".into()));
        }
        if self.z0_prior.dim() != self.latent_dim {
            return Err(SldiError::ConfigError("z0 prior dimension differs from latent_dim".into()));
        }
        if self.posterior == PosteriorMode::Separate && self.diffusion_mode == DiffusionMode::Full {
            return Err(SldiError::ConfigError(
                "separate posterior drift needs diagonal or scalar diffusion".into(),
            ));
        }
        if let NoiseModel::Fixed { var } = self.noise {
            if !(var > 0.0) {
                return Err(SldiError::ConfigError("observation variance must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SldiModel {
    pub encoder: RecurrentEncoder,
    pub prior: SdeModel,
    /// Dynamics that generate posterior paths (the prior SDE in shared
    /// mode, the posterior drift with the prior diffusion otherwise).
    pub generator: SdeModel,
    pub posterior_drift: Option<NeuralField>,
    pub decoder: NeuralField,
    pub coadjoint: Option<NeuralField>,
    pub noise: NoiseModel,
    pub z0_prior: GaussianDist,
    pub mode: PosteriorMode,
}

impl SldiModel {
    /// Registers every component and draws Xavier weights from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Self, ParamStore)> {
        spec.validate()?;
        let mut store = ParamStore::new();
        RecurrentEncoder::register(&mut store, ENCODER, spec.encoder_spec())?;
        for (name, fs) in spec.field_specs() {
            NeuralField::register(&mut store, name, &fs)?;
        }
        xavier_init(&mut store, seed);
        let model = Self::attach(spec, &store)?;
        Ok((model, store))
    }

    /// Binds to an existing store (e.g. a loaded checkpoint); mismatched
    /// shapes are a configuration error.
    pub fn attach(spec: &ModelSpec, store: &ParamStore) -> Result<Self> {
        spec.validate()?;
        let encoder = RecurrentEncoder::attach(store, ENCODER, spec.encoder_spec())?;
        let mut fields: Vec<(&str, NeuralField)> = Vec::new();
        for (name, fs) in spec.field_specs() {
            fields.push((name, NeuralField::attach(store, name, &fs)?));
        }
        let take = |n: &str| fields.iter().find(|(k, _)| *k == n).map(|(_, f)| f.clone());
        let prior = SdeModel::new(
            take(DRIFT).unwrap(),
            take(DIFFUSION).unwrap(),
            spec.latent_dim,
            spec.noise_dim,
            spec.diffusion_mode,
        )
        .map_err(|e| SldiError::ConfigError(e.to_string()))?;
        Self::from_parts(
            encoder,
            prior,
            take(POSTERIOR_DRIFT),
            take(DECODER).unwrap(),
            take(COADJOINT),
            spec.noise,
            spec.z0_prior.clone(),
        )
    }

    /// Assembles a model from already-registered components.
    pub fn from_parts(
        encoder: RecurrentEncoder,
        prior: SdeModel,
        posterior_drift: Option<NeuralField>,
        decoder: NeuralField,
        coadjoint: Option<NeuralField>,
        noise: NoiseModel,
        z0_prior: GaussianDist,
    ) -> Result<Self> {
        let d = prior.latent_dim;
        if encoder.spec().latent != d || decoder.input_dim() != d || z0_prior.dim() != d {
            return Err(SldiError::ConfigError("component latent dimensions disagree".into()));
        }
        if encoder.spec().obs_dim * noise.decoder_outputs(1) != decoder.output_dim() {
            return Err(SldiError::ConfigError("decoder output does not match the noise model".into()));
        }
        if let Some(c) = &coadjoint {
            if c.input_dim() != d + 1 || c.output_dim() != d {
                return Err(SldiError::ConfigError("co-adjoint field must map (z, t) to R^d".into()));
            }
        }
        let (generator, mode) = match &posterior_drift {
            Some(f) => (prior.with_drift(f.clone())?, PosteriorMode::Separate),
            None => (prior.clone(), PosteriorMode::Shared),
        };
        if mode == PosteriorMode::Separate && prior.mode == DiffusionMode::Full {
            return Err(SldiError::ConfigError(
                "separate posterior drift needs diagonal or scalar diffusion".into(),
            ));
        }
        Ok(SldiModel {
            encoder,
            prior,
            generator,
            posterior_drift,
            decoder,
            coadjoint,
            noise,
            z0_prior,
            mode,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.latent_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.spec().obs_dim
    }
}
