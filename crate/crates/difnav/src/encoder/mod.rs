//! Cross-modal state encoder.
//!
//! Fuses three token streams into a single state embedding S_t: panoramic
//! observation tokens, instruction tokens, and recent trajectory history.
//! Observations and instructions pass through small pre-norm transformers,
//! then fusion layers cross-attend the trajectory over the instruction and
//! self-attend over observation plus trajectory tokens. S_t is the final
//! representation of the most recent trajectory token.

pub mod blocks;
pub mod cross;
pub mod embed;
pub mod features;

pub use blocks::{EncoderConfig, LN_EPS};
pub use cross::cross_modal;
pub use embed::{
    embed_observation, encode_history, encode_instruction, panorama_encode, HistoryEntry,
    TYPE_INSTRUCTION, TYPE_OBSERVATION, TYPE_TRAJECTORY,
};
pub use features::{
    depth_features, observation_features, semantic_features, ANGLE_FEATURES, DEPTH_BINS,
    SEMANTIC_CLASSES,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet};

/// Inserts every encoder parameter under the `enc.` prefix.
pub fn init_encoder_params(
    params: &mut ParamSet,
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    embed::init_embedding_params(params, cfg, rng)?;
    cross::init_cross_params(params, cfg, rng)
}

/// Encodes one decision point into S_t as a `[1, d_model]` row.
///
/// `history` lists the most recent waypoints oldest first; the final entry
/// is the current pose, whose panorama also supplies the observation tokens.
pub fn encode_state(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    instruction_ids: &[usize],
    history: &[HistoryEntry],
    instr_mask: Option<&[bool]>,
) -> Result<NodeId> {
    let current = history.last().ok_or_else(|| {
        Error::Contract("history must contain the current observation".into())
    })?;
    let views = embed_observation(g, params, &current.observation)?;
    let observations = panorama_encode(g, params, cfg, views)?;
    let trajectory = encode_history(g, params, cfg, history)?;
    let instruction = encode_instruction(g, params, cfg, instruction_ids)?;
    cross_modal(g, params, cfg, trajectory, instruction, observations, instr_mask)
}
