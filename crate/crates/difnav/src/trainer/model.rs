//! The assembled policy: encoder, denoiser, progress head, action scale.
//!
//! Training and evaluation always operate on this bundle, so its pieces are
//! validated together: the three sub-networks must agree on the state width
//! and the denoiser's action layout must match the planar waypoint actions
//! the simulator executes.

use rand::Rng;

use crate::diffpolicy::{ActionNorm, DenoiserConfig, NoiseSchedule, DEFAULT_S};
use crate::encoder::{init_encoder_params, EncoderConfig};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet};
use crate::progress::{
    classify_logit, init_progress_params, predict_distance, ProgressConfig, StopMode,
};

/// One of the two shipped model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small configuration sized for desk hardware.
    Desk,
    /// The reference configuration with the 15-layer denoiser.
    Full,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; expected desk or full"
            ))),
        }
    }
}

/// Configuration of the complete model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
    pub progress: ProgressConfig,
    /// Waypoint sparsification stride the action scale is derived from.
    pub stride: usize,
}

impl ModelConfig {
    /// Desk-scale model for a given vocabulary and stop mode.
    pub fn desk(vocab_size: usize, mode: StopMode) -> Self {
        let encoder = EncoderConfig::desk(vocab_size);
        ModelConfig {
            denoiser: DenoiserConfig::desk(encoder.d_model),
            progress: ProgressConfig::desk(mode),
            encoder,
            stride: 2,
        }
    }

    /// Reference-scale model for a given vocabulary and stop mode.
    pub fn full(vocab_size: usize, mode: StopMode) -> Self {
        let encoder = EncoderConfig::desk(vocab_size);
        ModelConfig {
            denoiser: DenoiserConfig::full(encoder.d_model),
            progress: ProgressConfig::desk(mode),
            encoder,
            stride: 2,
        }
    }

    pub fn profile(profile: Profile, vocab_size: usize, mode: StopMode) -> Self {
        match profile {
            Profile::Desk => ModelConfig::desk(vocab_size, mode),
            Profile::Full => ModelConfig::full(vocab_size, mode),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.denoiser.validate()?;
        self.progress.validate()?;
        if self.denoiser.d_model != self.encoder.d_model {
            return Err(Error::Config(format!(
                "denoiser conditions on width {} but the encoder produces {}",
                self.denoiser.d_model, self.encoder.d_model
            )));
        }
        if self.progress.d_model != self.encoder.d_model {
            return Err(Error::Config(format!(
                "progress head reads width {} but the encoder produces {}",
                self.progress.d_model, self.encoder.d_model
            )));
        }
        if self.action_dims() != 2 {
            return Err(Error::Config(format!(
                "waypoint actions are planar displacements; denoiser emits {} values",
                self.action_dims()
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("waypoint stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Flat action dimensionality the denoiser works in.
    pub fn action_dims(&self) -> usize {
        self.denoiser.horizon * self.denoiser.action_dim
    }

    /// Action scale for this model's waypoint spacing.
    pub fn action_norm(&self) -> Result<ActionNorm> {
        ActionNorm::from_stride(self.stride)
    }

    /// Diffusion schedule matching the denoiser's step budget.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.denoiser.max_steps, DEFAULT_S)
    }
}

/// Initializes every parameter of the bundle into `params`.
pub fn init_model_params(
    params: &mut ParamSet,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    init_encoder_params(params, &cfg.encoder, rng)?;
    crate::diffpolicy::init_denoiser_params(params, &cfg.denoiser, rng)?;
    init_progress_params(params, &cfg.progress, rng)
}

/// The head output the stop rule consumes for state `s_t`: the predicted
/// normalized distance in distance mode, the raw logit otherwise.
pub fn stop_score(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &ProgressConfig,
    s_t: NodeId,
) -> Result<f64> {
    let node = match cfg.mode {
        StopMode::Distance => predict_distance(g, params, cfg, s_t)?,
        StopMode::Classify | StopMode::ClassifyWeighted => classify_logit(g, params, cfg, s_t)?,
    };
    Ok(g.scalar_value(node))
}

#[cfg(test)]
pub(crate) fn tiny_model(vocab_size: usize) -> ModelConfig {
    let encoder = EncoderConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ffn_hidden: 16,
        vocab_size,
        max_tokens: 32,
        max_steps: 64,
        history: 3,
    };
    let denoiser = DenoiserConfig {
        d_model: 8,
        channels: 8,
        conv_layers: 3,
        time_embed: 8,
        ..DenoiserConfig::desk(8)
    };
    let progress = ProgressConfig {
        d_model: 8,
        hidden: 6,
        ..ProgressConfig::desk(StopMode::Distance)
    };
    ModelConfig {
        encoder,
        denoiser,
        progress,
        stride: 2,
    }
}
