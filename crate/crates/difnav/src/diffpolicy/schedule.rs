//! Squared-cosine noise schedule and the forward noising process.
//!
//! The schedule follows the squared-cosine construction: with
//! f(k) = cos²(((k/K + s)/(1 + s)) · π/2), per-step betas are
//! β_k = 1 − f(k)/f(k−1) clipped to at most 0.999, α_k = 1 − β_k, and
//! ᾱ_k is the running product of the α. ᾱ_0 is exactly 1, the sequence
//! decreases strictly, and the reverse noise scale σ_1 is exactly 0, so
//! the last denoising step is deterministic.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Default number of denoising steps.
pub const DEFAULT_K: usize = 10;
/// Default cosine-schedule offset.
pub const DEFAULT_S: f64 = 0.008;
/// Per-step betas are clipped to this ceiling so α_k stays positive.
pub const BETA_CLIP: f64 = 0.999;

/// Variance-preserving diffusion schedule over K steps.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the schedule for `k_steps` denoising steps with offset `s`.
    pub fn build(k_steps: usize, s: f64) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::Parameter(
                "noise schedule needs at least one step".into(),
            ));
        }
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Parameter(format!(
                "cosine schedule offset must be positive, got {s}"
            )));
        }
        let f = |k: f64| {
            let u = (k / k_steps as f64 + s) / (1.0 + s) * FRAC_PI_2;
            u.cos() * u.cos()
        };
        let mut alpha = Vec::with_capacity(k_steps);
        let mut alpha_bar = Vec::with_capacity(k_steps + 1);
        alpha_bar.push(1.0);
        for k in 1..=k_steps {
            let beta = (1.0 - f(k as f64) / f((k - 1) as f64)).min(BETA_CLIP);
            let a = 1.0 - beta;
            alpha.push(a);
            alpha_bar.push(alpha_bar[k - 1] * a);
        }
        let mut sigma = Vec::with_capacity(k_steps);
        for k in 1..=k_steps {
            let beta = 1.0 - alpha[k - 1];
            let var = beta * (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k]);
            sigma.push(var.sqrt());
        }
        Ok(NoiseSchedule {
            alpha_bar,
            alpha,
            sigma,
        })
    }

    /// Builds the default 10-step schedule.
    pub fn default_schedule() -> Self {
        NoiseSchedule::build(DEFAULT_K, DEFAULT_S).expect("default constants are valid")
    }

    /// Number of denoising steps K.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Parameter(format!(
                "diffusion step {k} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Cumulative product ᾱ_k for k in 0..=K.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    /// Per-step α_k for k in 1..=K.
    pub fn alpha(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.alpha[k - 1])
    }

    /// Reverse noise scale σ_k for k in 1..=K; σ_1 = 0.
    pub fn sigma(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.sigma[k - 1])
    }

    /// Forward noising: aᵏ = √ᾱ_k · a0 + √(1−ᾱ_k) · noise.
    pub fn q_sample(&self, a0: &[f64], k: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        if noise.len() != a0.len() {
            return Err(Error::Parameter(format!(
                "noise has {} entries for a {}-entry action",
                noise.len(),
                a0.len()
            )));
        }
        let ab = self.alpha_bar[k];
        let signal = ab.sqrt();
        let spread = (1.0 - ab).sqrt();
        Ok(a0
            .iter()
            .zip(noise)
            .map(|(a, n)| signal * a + spread * n)
            .collect())
    }
}
