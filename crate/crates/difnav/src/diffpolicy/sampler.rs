//! Reverse diffusion: denoising steps and full action sampling.
//!
//! Actions live in two unit systems. Training targets are normalized to
//! [−1, 1] by the maximum expected step length (waypoint stride times a 1.5
//! safety factor); `sample_action` denormalizes back to meters at the end.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffpolicy::denoiser::{predict_noise, DenoiserConfig};
use crate::diffpolicy::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, ParamSet};
use crate::navsim::FORWARD_STEP;

/// Safety factor applied to the nominal waypoint stride so slightly longer
/// expert displacements still normalize inside [−1, 1].
pub const NORM_SAFETY: f64 = 1.5;

/// Linear scaling between meter-space waypoints and normalized diffusion
/// targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionNorm {
    max_len: f64,
}

impl ActionNorm {
    /// Normalizer for demonstrations sparsified every `stride` low-level
    /// steps: max length = stride · 0.25 m · 1.5.
    pub fn from_stride(stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Parameter("waypoint stride must be >= 1".into()));
        }
        Ok(ActionNorm {
            max_len: stride as f64 * FORWARD_STEP * NORM_SAFETY,
        })
    }

    /// The displacement magnitude that maps to 1.0.
    pub fn max_len(&self) -> f64 {
        self.max_len
    }

    /// Meters to normalized units.
    pub fn normalize(&self, meters: &[f64]) -> Vec<f64> {
        meters.iter().map(|v| v / self.max_len).collect()
    }

    /// Normalized units back to meters.
    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|v| v * self.max_len).collect()
    }
}

/// The deterministic part of one reverse step:
/// mean = (1/√α_k) · (aᵏ − ((1−α_k)/√(1−ᾱ_k)) · ε̂).
pub fn reverse_update(
    sched: &NoiseSchedule,
    a_k: &[f64],
    eps_hat: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    if eps_hat.len() != a_k.len() {
        return Err(Error::Parameter(format!(
            "noise estimate has {} entries for a {}-entry action",
            eps_hat.len(),
            a_k.len()
        )));
    }
    let alpha = sched.alpha(k)?;
    let alpha_bar = sched.alpha_bar(k);
    let coeff = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
    let inv_root = 1.0 / alpha.sqrt();
    Ok(a_k
        .iter()
        .zip(eps_hat)
        .map(|(a, e)| inv_root * (a - coeff * e))
        .collect())
}

/// One reverse diffusion step aᵏ → aᵏ⁻¹ in normalized units. σ_1 = 0, so
/// the final step consumes no randomness and is deterministic.
pub fn denoise_step(
    params: &ParamSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    s_t: &[f64],
    a_k: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let s_node = g.input(vec![1, cfg.d_model], s_t.to_vec())?;
    let a_node = g.input(vec![cfg.horizon, cfg.action_dim], a_k.to_vec())?;
    let eps = predict_noise(&mut g, params, cfg, s_node, a_node, k)?;
    let mut out = reverse_update(sched, a_k, g.value(eps), k)?;
    let sigma = sched.sigma(k)?;
    if sigma > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    Ok(out)
}

/// Samples one action by denoising a Gaussian draw through all K steps,
/// returning waypoint displacements in meters.
pub fn sample_action(
    params: &ParamSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    norm: &ActionNorm,
    s_t: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    Ok(sample_action_traced(params, cfg, sched, norm, s_t, rng)?.0)
}

/// `sample_action` plus a line-oriented trace of each intermediate action,
/// one record per diffusion level: "k v0 v1 ..." in normalized units.
pub fn sample_action_traced(
    params: &ParamSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    norm: &ActionNorm,
    s_t: &[f64],
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<String>)> {
    let dims = cfg.horizon * cfg.action_dim;
    let mut a: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(rng)).collect();
    let mut trace = Vec::with_capacity(sched.steps() + 1);
    trace.push(trace_line(sched.steps(), &a));
    for k in (1..=sched.steps()).rev() {
        a = denoise_step(params, cfg, sched, s_t, &a, k, rng)?;
        trace.push(trace_line(k - 1, &a));
    }
    Ok((norm.denormalize(&a), trace))
}

fn trace_line(level: usize, a: &[f64]) -> String {
    let mut line = level.to_string();
    for v in a {
        line.push(' ');
        line.push_str(&format!("{v:.9}"));
    }
    line
}
