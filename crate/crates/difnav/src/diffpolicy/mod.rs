//! Conditional denoising diffusion policy over continuous waypoint actions.
//!
//! A squared-cosine schedule drives K=10 denoising steps; the noise
//! prediction network is a FiLM-conditioned 1D convolutional trunk over the
//! action sequence, conditioned on the state embedding and the diffusion
//! step. Training minimizes the denoising MSE on expert actions; sampling
//! starts from a Gaussian draw and applies the learned reverse steps. A
//! deterministic regression head provides the uni-modal comparison baseline.

mod denoiser;
mod loss;
mod sampler;
mod schedule;

pub use denoiser::{
    init_denoiser_params, predict_noise, timestep_embedding, DenoiserConfig,
};
pub use loss::{
    bc_loss, bc_loss_frozen, draw_noise, init_regression_params, regress_action,
    regression_loss, BcItem, NoiseDraw,
};
pub use sampler::{
    denoise_step, reverse_update, sample_action, sample_action_traced, ActionNorm, NORM_SAFETY,
};
pub use schedule::{NoiseSchedule, BETA_CLIP, DEFAULT_K, DEFAULT_S};
