//! Conditional 1D convolutional noise prediction network.
//!
//! The noisy action enters channels-first as a `[action_dim, horizon]` map.
//! A lift convolution widens it, residual blocks apply a convolution with
//! feature-wise modulation by the conditioning vector (state projection plus
//! timestep embedding) followed by a GELU, and a zero-initialized head
//! convolution maps back to the action shape, so an untrained network
//! predicts zero noise.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet, Tensor};

/// Sizes of the noise prediction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Width of the state embedding S_t.
    pub d_model: usize,
    /// Action horizon T_a (waypoints per sample).
    pub horizon: usize,
    /// Coordinates per waypoint.
    pub action_dim: usize,
    /// Channel width of the convolutional trunk.
    pub channels: usize,
    /// Total convolution count: one lift, the residual blocks, one head.
    pub conv_layers: usize,
    /// Width of the sinusoidal timestep embedding.
    pub time_embed: usize,
    /// Convolution kernel size.
    pub kernel: usize,
    /// Largest diffusion step the embedding must distinguish.
    pub max_steps: usize,
}

impl DenoiserConfig {
    /// Paper-scale trunk: 15 convolutions.
    pub fn full(d_model: usize) -> Self {
        DenoiserConfig {
            d_model,
            horizon: 1,
            action_dim: 2,
            channels: 64,
            conv_layers: 15,
            time_embed: 32,
            kernel: 3,
            max_steps: 10,
        }
    }

    /// Desk-scale trunk: 5 convolutions, trains in seconds.
    pub fn desk(d_model: usize) -> Self {
        DenoiserConfig {
            channels: 32,
            conv_layers: 5,
            ..DenoiserConfig::full(d_model)
        }
    }

    /// Residual blocks between the lift and head convolutions.
    pub fn blocks(&self) -> usize {
        self.conv_layers - 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("horizon", self.horizon),
            ("action_dim", self.action_dim),
            ("channels", self.channels),
            ("time_embed", self.time_embed),
            ("kernel", self.kernel),
            ("max_steps", self.max_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("denoiser {name} must be positive")));
            }
        }
        if self.conv_layers < 3 {
            return Err(Error::Config(format!(
                "denoiser needs lift, one block, and head convolutions; {} layers requested",
                self.conv_layers
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "denoiser kernel must be odd to preserve the horizon, got {}",
                self.kernel
            )));
        }
        if !self.time_embed.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "timestep embedding width must be even, got {}",
                self.time_embed
            )));
        }
        Ok(())
    }
}

/// Inserts every denoiser parameter under the `den.` prefix. The head
/// convolution starts at zero.
pub fn init_denoiser_params(
    params: &mut ParamSet,
    cfg: &DenoiserConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.channels;
    params.insert(
        "den.time.w1",
        Tensor::uniform_fan_in(vec![cfg.time_embed, c], cfg.time_embed, rng),
    )?;
    params.insert("den.time.b1", Tensor::zeros(vec![c]))?;
    params.insert("den.time.w2", Tensor::uniform_fan_in(vec![c, c], c, rng))?;
    params.insert("den.time.b2", Tensor::zeros(vec![c]))?;
    params.insert(
        "den.cond.w",
        Tensor::uniform_fan_in(vec![cfg.d_model, c], cfg.d_model, rng),
    )?;
    params.insert("den.cond.b", Tensor::zeros(vec![c]))?;
    let fan_lift = cfg.action_dim * cfg.kernel;
    params.insert(
        "den.lift.w",
        Tensor::uniform_fan_in(vec![c, cfg.action_dim, cfg.kernel], fan_lift, rng),
    )?;
    params.insert("den.lift.b", Tensor::zeros(vec![c]))?;
    let fan_block = c * cfg.kernel;
    for b in 0..cfg.blocks() {
        params.insert(
            format!("den.block{b}.conv.w"),
            Tensor::uniform_fan_in(vec![c, c, cfg.kernel], fan_block, rng),
        )?;
        params.insert(format!("den.block{b}.conv.b"), Tensor::zeros(vec![c]))?;
        params.insert(
            format!("den.block{b}.film.w"),
            Tensor::uniform_fan_in(vec![c, 2 * c], c, rng),
        )?;
        params.insert(format!("den.block{b}.film.b"), Tensor::zeros(vec![2 * c]))?;
    }
    params.insert(
        "den.head.w",
        Tensor::zeros(vec![cfg.action_dim, c, cfg.kernel]),
    )?;
    params.insert("den.head.b", Tensor::zeros(vec![cfg.action_dim]))?;
    Ok(())
}

/// Sinusoidal embedding of diffusion step `k`, width `cfg.time_embed`.
pub fn timestep_embedding(cfg: &DenoiserConfig, k: usize) -> Vec<f64> {
    let half = cfg.time_embed / 2;
    let mut out = Vec::with_capacity(cfg.time_embed);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let angle = k as f64 * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Conditioning vector: projected S_t plus the projected timestep embedding,
/// as a rank-1 `[channels]` node.
fn conditioning(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    s_t: NodeId,
    k: usize,
) -> Result<NodeId> {
    let w = g.param(params, "den.cond.w")?;
    let b = g.param(params, "den.cond.b")?;
    let s = g.matmul(s_t, w)?;
    let s = g.add_row(s, b)?;
    let emb = g.input(vec![1, cfg.time_embed], timestep_embedding(cfg, k))?;
    let w1 = g.param(params, "den.time.w1")?;
    let b1 = g.param(params, "den.time.b1")?;
    let w2 = g.param(params, "den.time.w2")?;
    let b2 = g.param(params, "den.time.b2")?;
    let t = g.matmul(emb, w1)?;
    let t = g.add_row(t, b1)?;
    let t = g.gelu(t);
    let t = g.matmul(t, w2)?;
    let t = g.add_row(t, b2)?;
    let c = g.add(s, t)?;
    g.reshape(c, vec![cfg.channels])
}

/// Predicts the noise component of `a_k` (a `[horizon, action_dim]` node in
/// normalized units) at diffusion step `k`, conditioned on `s_t`.
pub fn predict_noise(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    s_t: NodeId,
    a_k: NodeId,
    k: usize,
) -> Result<NodeId> {
    if k == 0 || k > cfg.max_steps {
        return Err(Error::Parameter(format!(
            "diffusion step {k} outside 1..={}",
            cfg.max_steps
        )));
    }
    if g.shape(a_k) != [cfg.horizon, cfg.action_dim] {
        return Err(Error::Contract(format!(
            "noisy action has shape {:?}, expected [{}, {}]",
            g.shape(a_k),
            cfg.horizon,
            cfg.action_dim
        )));
    }
    if !g.value(a_k).iter().all(|v| v.is_finite())
        || !g.value(s_t).iter().all(|v| v.is_finite())
    {
        return Err(Error::Contract(
            "denoiser inputs must be finite".into(),
        ));
    }
    let cond = conditioning(g, params, cfg, s_t, k)?;
    let pad = cfg.kernel / 2;

    let channels_first = g.transpose(a_k)?;
    let lift_w = g.param(params, "den.lift.w")?;
    let lift_b = g.param(params, "den.lift.b")?;
    let mut x = g.conv1d(channels_first, lift_w, 1, pad)?;
    x = g.add_chan(x, lift_b)?;
    x = g.gelu(x);

    let film_in = g.reshape(cond, vec![1, cfg.channels])?;
    for block in 0..cfg.blocks() {
        let w = g.param(params, &format!("den.block{block}.conv.w"))?;
        let b = g.param(params, &format!("den.block{block}.conv.b"))?;
        let mut h = g.conv1d(x, w, 1, pad)?;
        h = g.add_chan(h, b)?;
        let fw = g.param(params, &format!("den.block{block}.film.w"))?;
        let fb = g.param(params, &format!("den.block{block}.film.b"))?;
        let film = g.matmul(film_in, fw)?;
        let film = g.add_row(film, fb)?;
        let scale = g.slice_cols(film, 0, cfg.channels)?;
        let scale = g.add_scalar(scale, 1.0);
        let scale = g.reshape(scale, vec![cfg.channels])?;
        let shift = g.slice_cols(film, cfg.channels, 2 * cfg.channels)?;
        let shift = g.reshape(shift, vec![cfg.channels])?;
        h = g.mul_chan(h, scale)?;
        h = g.add_chan(h, shift)?;
        h = g.gelu(h);
        x = g.add(x, h)?;
    }

    let head_w = g.param(params, "den.head.w")?;
    let head_b = g.param(params, "den.head.b")?;
    let out = g.conv1d(x, head_w, 1, pad)?;
    let out = g.add_chan(out, head_b)?;
    g.transpose(out)
}
