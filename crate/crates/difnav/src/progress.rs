//! Progress estimation and stop decisions.
//!
//! Navigation ends when the agent decides it has reached the goal, and that
//! decision is owned by a small head over the fused state `S_t`. Three
//! interchangeable modes are supported: `distance` regresses the normalized
//! geodesic distance to the goal through a 3-layer MLP with a sigmoid output
//! and stops when the prediction falls below a threshold; `classify` predicts
//! reached/not-reached directly through a 2-layer MLP with a normalization
//! layer; `classify_weighted` additionally up-weights the rare stop label.
//! The head trains jointly with the policy via a loss scaled by `lambda`.

use rand::Rng;

use crate::encoder::LN_EPS;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet, Tensor};
use crate::navsim::{geodesic_distance, GridWorld, Pose};

/// Default stop threshold on the predicted normalized distance.
pub const DEFAULT_TAU: f64 = 0.1;
/// Default weight on the positive (reached) class in `classify_weighted`.
pub const DEFAULT_POS_WEIGHT: f64 = 5.0;
/// Default weight of the progress loss relative to the waypoint loss.
pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Default cap on sparse decisions per episode; the cap itself forces a stop.
pub const DEFAULT_MAX_DECISIONS: usize = 40;
/// Agents within this geodesic distance of the goal count as "reached".
pub const REACHED_RADIUS: f64 = 3.0;

/// How the head represents progress and derives the stop decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    /// Regress normalized distance; stop when it drops below `tau`.
    Distance,
    /// Binary reached/not-reached classifier.
    Classify,
    /// Classifier with a weighting factor on the reached label.
    ClassifyWeighted,
}

impl StopMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StopMode::Distance => "distance",
            StopMode::Classify => "classify",
            StopMode::ClassifyWeighted => "classify_weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(StopMode::Distance),
            "classify" => Ok(StopMode::Classify),
            "classify_weighted" => Ok(StopMode::ClassifyWeighted),
            other => Err(Error::Config(format!(
                "unknown stop mode {other:?}; expected distance, classify, or classify_weighted"
            ))),
        }
    }
}

/// Configuration of the progress head.
#[derive(Debug, Clone, Copy)]
pub struct ProgressConfig {
    /// Width of the fused state `S_t`.
    pub d_model: usize,
    /// Hidden width of the MLP.
    pub hidden: usize,
    pub mode: StopMode,
    /// Stop threshold on the predicted normalized distance, in (0, 1).
    pub tau: f64,
    /// Positive-class weight; only consulted in `ClassifyWeighted` mode.
    pub pos_weight: f64,
    /// Scale of the progress loss inside the joint objective.
    pub lambda: f64,
    /// Hard cap on decisions per episode.
    pub max_decisions: usize,
}

impl ProgressConfig {
    /// Desk-scale defaults for a given stop mode.
    pub fn desk(mode: StopMode) -> Self {
        ProgressConfig {
            d_model: 64,
            hidden: 64,
            mode,
            tau: DEFAULT_TAU,
            pos_weight: DEFAULT_POS_WEIGHT,
            lambda: DEFAULT_LAMBDA,
            max_decisions: DEFAULT_MAX_DECISIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "progress head widths must be positive".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "stop threshold tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !self.pos_weight.is_finite() || self.pos_weight <= 0.0 {
            return Err(Error::Config(format!(
                "pos_weight must be a positive finite number, got {}",
                self.pos_weight
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.max_decisions == 0 {
            return Err(Error::Config("max_decisions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Registers the head's parameters under the `prog.` prefix.
///
/// The final projection starts at zero in every mode, so an untrained head
/// predicts 0.5 (sigmoid of zero) and never volunteers a stop.
pub fn init_progress_params(
    params: &mut ParamSet,
    cfg: &ProgressConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    let h = cfg.hidden;
    params.insert("prog.w1", Tensor::uniform_fan_in(vec![d, h], d, rng))?;
    params.insert("prog.b1", Tensor::zeros(vec![h]))?;
    match cfg.mode {
        StopMode::Distance => {
            params.insert("prog.w2", Tensor::uniform_fan_in(vec![h, h], h, rng))?;
            params.insert("prog.b2", Tensor::zeros(vec![h]))?;
            params.insert("prog.w3", Tensor::zeros(vec![h, 1]))?;
            params.insert("prog.b3", Tensor::zeros(vec![1]))?;
        }
        StopMode::Classify | StopMode::ClassifyWeighted => {
            params.insert("prog.ln.gain", Tensor::full(vec![h], 1.0))?;
            params.insert("prog.ln.bias", Tensor::zeros(vec![h]))?;
            params.insert("prog.w2", Tensor::zeros(vec![h, 1]))?;
            params.insert("prog.b2", Tensor::zeros(vec![1]))?;
        }
    }
    Ok(())
}

/// Normalized geodesic distance to the goal, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDistance {
    pub value: f64,
    /// Set when the goal cannot be reached from the query pose.
    pub unreachable: bool,
}

/// Measures how far `pose` still is from `goal`, relative to the episode.
///
/// `initial_geodesic` is the geodesic distance from the episode's start to
/// the goal and must be positive. A pose the goal cannot be reached from
/// reports the worst case 1.0 with the `unreachable` flag set.
pub fn normalized_distance(
    grid: &GridWorld,
    pose: &Pose,
    goal: (f64, f64),
    initial_geodesic: f64,
) -> Result<NormalizedDistance> {
    if !initial_geodesic.is_finite() || initial_geodesic <= 0.0 {
        return Err(Error::Parameter(format!(
            "initial geodesic distance must be positive, got {initial_geodesic}"
        )));
    }
    match geodesic_distance(grid, pose.position(), goal)? {
        Some(meters) => Ok(NormalizedDistance {
            value: (meters / initial_geodesic).clamp(0.0, 1.0),
            unreachable: false,
        }),
        None => Ok(NormalizedDistance {
            value: 1.0,
            unreachable: true,
        }),
    }
}

fn linear(g: &mut Graph, params: &ParamSet, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
    let w = g.param(params, w)?;
    let b = g.param(params, b)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Predicted normalized distance `f_d(S_t)`, a sigmoid-bounded scalar.
pub fn predict_distance(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &ProgressConfig,
    s_t: NodeId,
) -> Result<NodeId> {
    if cfg.mode != StopMode::Distance {
        return Err(Error::Contract(format!(
            "predict_distance requires distance mode, head is in {} mode",
            cfg.mode.as_str()
        )));
    }
    let h1 = linear(g, params, s_t, "prog.w1", "prog.b1")?;
    let h1 = g.gelu(h1);
    let h2 = linear(g, params, h1, "prog.w2", "prog.b2")?;
    let h2 = g.gelu(h2);
    let z = linear(g, params, h2, "prog.w3", "prog.b3")?;
    Ok(g.sigmoid(z))
}

/// Raw reached/not-reached logit in the classification modes.
pub fn classify_logit(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &ProgressConfig,
    s_t: NodeId,
) -> Result<NodeId> {
    if cfg.mode == StopMode::Distance {
        return Err(Error::Contract(
            "classify_logit requires a classification mode, head is in distance mode".into(),
        ));
    }
    let h1 = linear(g, params, s_t, "prog.w1", "prog.b1")?;
    let h1 = g.gelu(h1);
    let gain = g.param(params, "prog.ln.gain")?;
    let bias = g.param(params, "prog.ln.bias")?;
    let h1 = g.layer_norm(h1, gain, bias, LN_EPS)?;
    linear(g, params, h1, "prog.w2", "prog.b2")
}

/// Supervision for one decision step.
#[derive(Debug, Clone, Copy)]
pub struct ProgressTarget {
    /// True normalized distance to the goal, in [0, 1].
    pub normalized: f64,
    /// Whether the agent is within [`REACHED_RADIUS`] of the goal.
    pub reached: bool,
}

impl ProgressTarget {
    /// Builds the target from a raw geodesic distance in meters.
    pub fn from_geodesic(meters: f64, initial_geodesic: f64) -> Result<Self> {
        if !initial_geodesic.is_finite() || initial_geodesic <= 0.0 {
            return Err(Error::Parameter(format!(
                "initial geodesic distance must be positive, got {initial_geodesic}"
            )));
        }
        Ok(ProgressTarget {
            normalized: (meters / initial_geodesic).clamp(0.0, 1.0),
            reached: meters < REACHED_RADIUS,
        })
    }
}

/// Progress loss over a batch of fused states, scaled by `lambda`.
///
/// Distance mode pays the batch-mean squared error between the predicted
/// and true normalized distances; the classification modes pay binary
/// cross-entropy on the reached labels, with `pos_weight` applied to the
/// positive class in the weighted mode.
pub fn distance_loss(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &ProgressConfig,
    items: &[(NodeId, ProgressTarget)],
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(Error::Parameter(
            "progress loss needs a non-empty batch".into(),
        ));
    }
    match cfg.mode {
        StopMode::Distance => {
            let preds: Vec<NodeId> = items
                .iter()
                .map(|&(s_t, _)| predict_distance(g, params, cfg, s_t))
                .collect::<Result<_>>()?;
            let stacked = g.concat_rows(&preds)?;
            let targets: Vec<f64> = items.iter().map(|(_, t)| t.normalized).collect();
            let want = g.input(vec![targets.len(), 1], targets)?;
            let err = g.mse(stacked, want)?;
            Ok(g.scale(err, cfg.lambda))
        }
        StopMode::Classify | StopMode::ClassifyWeighted => {
            let logits: Vec<NodeId> = items
                .iter()
                .map(|&(s_t, _)| classify_logit(g, params, cfg, s_t))
                .collect::<Result<_>>()?;
            let stacked = g.concat_rows(&logits)?;
            let labels: Vec<f64> = items
                .iter()
                .map(|(_, t)| if t.reached { 1.0 } else { 0.0 })
                .collect();
            let w = match cfg.mode {
                StopMode::ClassifyWeighted => cfg.pos_weight,
                _ => 1.0,
            };
            let err = g.bce_with_logits(stacked, &labels, w)?;
            Ok(g.scale(err, cfg.lambda))
        }
    }
}

/// Whether to stop after the current decision.
///
/// `score` is the head's output for the current state: the predicted
/// normalized distance in distance mode, the raw logit otherwise. `decision`
/// is the 1-based index of the current decision; reaching `max_decisions`
/// forces a stop regardless of the score. The distance comparison is strict,
/// so a prediction exactly at `tau` continues.
pub fn should_stop(cfg: &ProgressConfig, score: f64, decision: usize) -> bool {
    if decision >= cfg.max_decisions {
        return true;
    }
    match cfg.mode {
        StopMode::Distance => score < cfg.tau,
        StopMode::Classify | StopMode::ClassifyWeighted => score > 0.0,
    }
}
