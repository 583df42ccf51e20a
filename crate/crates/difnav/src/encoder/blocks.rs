//! Transformer building blocks shared by the encoder stages.
//!
//! All blocks are pre-norm: each sublayer reads a layer-normalized copy of
//! the residual stream and adds its output back, so a sublayer whose output
//! projection is zero leaves the stream untouched. Attention is multi-head
//! with the head dimension sliced from the model width.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet, Tensor};

/// Epsilon for every layer normalization in the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Width, depth, and table sizing for the state encoder.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub max_steps: usize,
    pub history: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: d_model 64, 4 heads, 2 layers per block,
    /// 3-entry history.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_hidden: 256,
            vocab_size,
            max_tokens: 32,
            max_steps: 64,
            history: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.history == 0 {
            return Err(Error::Config(
                "encoder dimensions must all be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by the head count {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_tokens == 0 || self.max_steps == 0 {
            return Err(Error::Config("encoder table sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Inserts the four projection matrices and biases of one attention module.
pub fn init_attention(
    params: &mut ParamSet,
    prefix: &str,
    d_model: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for name in ["wq", "wk", "wv", "wo"] {
        params.insert(
            format!("{prefix}.{name}"),
            Tensor::uniform_fan_in(vec![d_model, d_model], d_model, rng),
        )?;
    }
    for name in ["bq", "bk", "bv", "bo"] {
        params.insert(format!("{prefix}.{name}"), Tensor::zeros(vec![d_model]))?;
    }
    Ok(())
}

/// Inserts gain-one, bias-zero layer-norm parameters.
pub fn init_layer_norm(params: &mut ParamSet, prefix: &str, width: usize) -> Result<()> {
    params.insert(format!("{prefix}.gain"), Tensor::full(vec![width], 1.0))?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![width]))?;
    Ok(())
}

/// Inserts one pre-norm encoder layer: attention + feed-forward.
pub fn init_encoder_layer(
    params: &mut ParamSet,
    prefix: &str,
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    init_layer_norm(params, &format!("{prefix}.ln1"), cfg.d_model)?;
    init_attention(params, &format!("{prefix}.attn"), cfg.d_model, rng)?;
    init_layer_norm(params, &format!("{prefix}.ln2"), cfg.d_model)?;
    params.insert(
        format!("{prefix}.ffn.w1"),
        Tensor::uniform_fan_in(vec![cfg.d_model, cfg.ffn_hidden], cfg.d_model, rng),
    )?;
    params.insert(
        format!("{prefix}.ffn.b1"),
        Tensor::zeros(vec![cfg.ffn_hidden]),
    )?;
    params.insert(
        format!("{prefix}.ffn.w2"),
        Tensor::uniform_fan_in(vec![cfg.ffn_hidden, cfg.d_model], cfg.ffn_hidden, rng),
    )?;
    params.insert(format!("{prefix}.ffn.b2"), Tensor::zeros(vec![cfg.d_model]))?;
    Ok(())
}

fn projected(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = g.param(params, &format!("{prefix}.w{name}"))?;
    let b = g.param(params, &format!("{prefix}.b{name}"))?;
    let h = g.matmul(x, w)?;
    g.add_row(h, b)
}

/// Multi-head attention with queries from `q_src` and keys/values from
/// `kv_src`. `mask[i * nk + j]` keeps key `j` for query `i`; `None` keeps
/// everything.
pub fn multi_head_attention(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    heads: usize,
    q_src: NodeId,
    kv_src: NodeId,
    mask: Option<&[bool]>,
) -> Result<NodeId> {
    let d_model = g.shape(q_src)[1];
    if !d_model.is_multiple_of(heads) {
        return Err(Error::Contract(format!(
            "attention width {d_model} is not divisible by {heads} heads"
        )));
    }
    let d_head = d_model / heads;
    let q = projected(g, params, prefix, "q", q_src)?;
    let k = projected(g, params, prefix, "k", kv_src)?;
    let v = projected(g, params, prefix, "v", kv_src)?;
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        outputs.push(g.attention(qh, kh, vh, mask)?);
    }
    let cat = g.concat_cols(&outputs)?;
    projected(g, params, prefix, "o", cat)
}

fn layer_normed(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

/// One pre-norm self-attention encoder layer:
/// `x += attn(LN(x)); x += ffn(LN(x))` with a GELU feed-forward.
pub fn encoder_layer(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    heads: usize,
    x: NodeId,
) -> Result<NodeId> {
    let normed = layer_normed(g, params, &format!("{prefix}.ln1"), x)?;
    let attn = multi_head_attention(
        g,
        params,
        &format!("{prefix}.attn"),
        heads,
        normed,
        normed,
        None,
    )?;
    let x = g.add(x, attn)?;
    let normed = layer_normed(g, params, &format!("{prefix}.ln2"), x)?;
    let w1 = g.param(params, &format!("{prefix}.ffn.w1"))?;
    let b1 = g.param(params, &format!("{prefix}.ffn.b1"))?;
    let w2 = g.param(params, &format!("{prefix}.ffn.w2"))?;
    let b2 = g.param(params, &format!("{prefix}.ffn.b2"))?;
    let h = g.matmul(normed, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.gelu(h);
    let h = g.matmul(h, w2)?;
    let ffn = g.add_row(h, b2)?;
    g.add(x, ffn)
}

/// Applies layer normalization with this encoder's epsilon; re-exported for
/// the stages that normalize outside a full layer.
pub fn apply_layer_norm(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    layer_normed(g, params, prefix, x)
}
