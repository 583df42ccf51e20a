//! Per-modality encoding stages: observation, panorama, instruction, history.
//!
//! Observation rows follow the additive composition
//! `LN(W_V * semantic) + LN(W_D * depth) + LN(W_L * (sin, cos))`, the
//! panorama and instruction stages are small pre-norm transformers, and each
//! history row is `Avg(O'_i) + LN(W_t * [d_i; h_i]) + u_i` with a learned
//! start token left-padding short histories. Token type rows distinguish the
//! instruction, trajectory, and observation modalities.

use rand::Rng;

use crate::encoder::blocks::{
    apply_layer_norm, encoder_layer, init_encoder_layer, init_layer_norm, EncoderConfig, LN_EPS,
};
use crate::encoder::features::{
    observation_features, ANGLE_FEATURES, DEPTH_BINS, SEMANTIC_CLASSES,
};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet, Tensor};
use crate::navsim::{PanoObservation, NUM_VIEWS};

/// Token type ids for the three modalities.
pub const TYPE_INSTRUCTION: usize = 0;
pub const TYPE_TRAJECTORY: usize = 1;
pub const TYPE_OBSERVATION: usize = 2;
const TYPE_COUNT: usize = 3;

/// One waypoint of recent history: what was seen there and where it sits
/// relative to the current pose.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    /// Panorama observed at that waypoint.
    pub observation: PanoObservation,
    /// Euclidean distance from the current position, in meters.
    pub distance: f64,
    /// Relative heading `(sin, cos)`; unit norm.
    pub heading: (f64, f64),
    /// Decision step index at that waypoint.
    pub step: usize,
}

impl HistoryEntry {
    fn validate(&self) -> Result<()> {
        if self.distance < 0.0 {
            return Err(Error::Parameter(format!(
                "history distance must be nonnegative, got {}",
                self.distance
            )));
        }
        let norm = self.heading.0 * self.heading.0 + self.heading.1 * self.heading.1;
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "history heading must be unit norm, got squared norm {norm}"
            )));
        }
        Ok(())
    }
}

/// Inserts the observation, panorama, instruction, history, and token-type
/// parameters under the `enc.` prefix.
pub fn init_embedding_params(
    params: &mut ParamSet,
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let d = cfg.d_model;
    params.insert(
        "enc.obs.w_v",
        Tensor::uniform_fan_in(vec![SEMANTIC_CLASSES, d], SEMANTIC_CLASSES, rng),
    )?;
    init_layer_norm(params, "enc.obs.ln_v", d)?;
    params.insert(
        "enc.obs.w_d",
        Tensor::uniform_fan_in(vec![DEPTH_BINS, d], DEPTH_BINS, rng),
    )?;
    init_layer_norm(params, "enc.obs.ln_d", d)?;
    params.insert(
        "enc.obs.w_l",
        Tensor::uniform_fan_in(vec![ANGLE_FEATURES, d], ANGLE_FEATURES, rng),
    )?;
    init_layer_norm(params, "enc.obs.ln_l", d)?;
    for layer in 0..cfg.layers {
        init_encoder_layer(params, &format!("enc.pano.l{layer}"), cfg, rng)?;
    }
    params.insert(
        "enc.instr.tok",
        Tensor::normal_embedding(vec![cfg.vocab_size, d], rng),
    )?;
    params.insert(
        "enc.instr.pos",
        Tensor::normal_embedding(vec![cfg.max_tokens, d], rng),
    )?;
    for layer in 0..cfg.layers {
        init_encoder_layer(params, &format!("enc.instr.l{layer}"), cfg, rng)?;
    }
    params.insert("enc.type", Tensor::normal_embedding(vec![TYPE_COUNT, d], rng))?;
    params.insert("enc.hist.w_t", Tensor::uniform_fan_in(vec![3, d], 3, rng))?;
    init_layer_norm(params, "enc.hist.ln_t", d)?;
    params.insert(
        "enc.hist.step",
        Tensor::normal_embedding(vec![cfg.max_steps, d], rng),
    )?;
    params.insert("enc.hist.start", Tensor::normal_embedding(vec![1, d], rng))?;
    Ok(())
}

/// Fetches one row of the token-type table as a rank-1 vector.
pub fn type_row(g: &mut Graph, params: &ParamSet, type_id: usize) -> Result<NodeId> {
    let table = g.param(params, "enc.type")?;
    let d = g.shape(table)[1];
    let row = g.gather_rows(table, &[type_id])?;
    g.reshape(row, vec![d])
}

/// Embeds a panorama into one row per view:
/// `LN(W_V * semantic) + LN(W_D * depth) + LN(W_L * angle)`.
pub fn embed_observation(
    g: &mut Graph,
    params: &ParamSet,
    obs: &PanoObservation,
) -> Result<NodeId> {
    let (sem, depth, angle) = observation_features(obs);
    let mut terms = Vec::with_capacity(3);
    for (data, width, w_name, ln_name) in [
        (sem, SEMANTIC_CLASSES, "enc.obs.w_v", "enc.obs.ln_v"),
        (depth, DEPTH_BINS, "enc.obs.w_d", "enc.obs.ln_d"),
        (angle, ANGLE_FEATURES, "enc.obs.w_l", "enc.obs.ln_l"),
    ] {
        let x = g.input(vec![NUM_VIEWS, width], data)?;
        let w = g.param(params, w_name)?;
        let h = g.matmul(x, w)?;
        terms.push(apply_layer_norm(g, params, ln_name, h)?);
    }
    let vd = g.add(terms[0], terms[1])?;
    g.add(vd, terms[2])
}

/// Runs the panorama transformer over the 12 view rows.
pub fn panorama_encode(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    views: NodeId,
) -> Result<NodeId> {
    let mut x = views;
    for layer in 0..cfg.layers {
        x = encoder_layer(g, params, &format!("enc.pano.l{layer}"), cfg.heads, x)?;
    }
    Ok(x)
}

/// Encodes instruction token ids: token + position + type embeddings through
/// the instruction transformer. Length is preserved.
pub fn encode_instruction(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    ids: &[usize],
) -> Result<NodeId> {
    if ids.is_empty() {
        return Err(Error::Parameter(
            "instruction must contain at least one token".into(),
        ));
    }
    if ids.len() > cfg.max_tokens {
        return Err(Error::Parameter(format!(
            "instruction length {} exceeds the {}-token capacity",
            ids.len(),
            cfg.max_tokens
        )));
    }
    for &id in ids {
        if id >= cfg.vocab_size {
            return Err(Error::UnknownToken(id, cfg.vocab_size));
        }
    }
    let tok_table = g.param(params, "enc.instr.tok")?;
    let pos_table = g.param(params, "enc.instr.pos")?;
    let tok = g.gather_rows(tok_table, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = g.gather_rows(pos_table, &positions)?;
    let ty = type_row(g, params, TYPE_INSTRUCTION)?;
    let x = g.add(tok, pos)?;
    let mut x = g.add_row(x, ty)?;
    for layer in 0..cfg.layers {
        x = encoder_layer(g, params, &format!("enc.instr.l{layer}"), cfg.heads, x)?;
    }
    Ok(x)
}

/// Encodes up to H recent history entries (oldest first, the current step
/// last) into exactly H trajectory rows. Each real entry contributes
/// `Avg(O'_i) + LN(W_t * [d_i; h_i]) + u_i`; histories shorter than H are
/// left-padded with the learned start token. The trajectory type row is
/// added to every row.
pub fn encode_history(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    entries: &[HistoryEntry],
) -> Result<NodeId> {
    if entries.is_empty() {
        return Err(Error::Contract(
            "history must contain the current observation".into(),
        ));
    }
    if entries.len() > cfg.history {
        return Err(Error::Contract(format!(
            "history holds {} entries but the encoder accepts at most {}",
            entries.len(),
            cfg.history
        )));
    }
    let mut rows = Vec::with_capacity(cfg.history);
    let start = g.param(params, "enc.hist.start")?;
    for _ in entries.len()..cfg.history {
        rows.push(start);
    }
    let w_t = g.param(params, "enc.hist.w_t")?;
    let step_table = g.param(params, "enc.hist.step")?;
    for entry in entries {
        entry.validate()?;
        let views = embed_observation(g, params, &entry.observation)?;
        let encoded = panorama_encode(g, params, cfg, views)?;
        let pooled = g.mean_rows(encoded)?;
        let geo = g.input(
            vec![1, 3],
            vec![entry.distance, entry.heading.0, entry.heading.1],
        )?;
        let geo = g.matmul(geo, w_t)?;
        let geo = apply_layer_norm(g, params, "enc.hist.ln_t", geo)?;
        let u = g.gather_rows(step_table, &[entry.step.min(cfg.max_steps - 1)])?;
        let row = g.add(pooled, geo)?;
        rows.push(g.add(row, u)?);
    }
    let stacked = g.concat_rows(&rows)?;
    let ty = type_row(g, params, TYPE_TRAJECTORY)?;
    g.add_row(stacked, ty)
}

/// LN epsilon used by the history geometry normalization; re-exported so
/// oracle tests normalize identically.
pub const HISTORY_LN_EPS: f64 = LN_EPS;
