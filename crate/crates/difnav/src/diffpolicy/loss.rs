//! Denoising behavior-cloning loss and the deterministic regression baseline.
//!
//! The BC loss draws a diffusion step and a Gaussian noise vector per batch
//! element, noises the expert action, and scores the denoiser's noise
//! estimate by mean squared error. A frozen-draw variant takes the (k, ε)
//! draws explicitly so gradient checks can rebuild the identical graph.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffpolicy::denoiser::{predict_noise, DenoiserConfig};
use crate::diffpolicy::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet, Tensor};

/// One batch element: an encoded state and its expert action in normalized
/// units.
#[derive(Debug, Clone, Copy)]
pub struct BcItem<'a> {
    pub s_t: NodeId,
    pub action: &'a [f64],
}

/// One frozen draw of the denoising-loss randomness.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub k: usize,
    pub eps: Vec<f64>,
}

/// Draws k ~ Uniform{1..K} and ε ~ N(0, I) for one batch element.
pub fn draw_noise(
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> NoiseDraw {
    let dims = cfg.horizon * cfg.action_dim;
    NoiseDraw {
        k: rng.gen_range(1..=sched.steps()),
        eps: (0..dims).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

fn bc_loss_with<F>(
    g: &mut Graph,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    items: &[BcItem],
    draws: &[NoiseDraw],
    mut predict: F,
) -> Result<NodeId>
where
    F: FnMut(&mut Graph, NodeId, NodeId, usize) -> Result<NodeId>,
{
    if items.is_empty() {
        return Err(Error::Parameter("BC loss needs a non-empty batch".into()));
    }
    if draws.len() != items.len() {
        return Err(Error::Parameter(format!(
            "{} noise draws for {} batch elements",
            draws.len(),
            items.len()
        )));
    }
    let dims = cfg.horizon * cfg.action_dim;
    let mut total: Option<NodeId> = None;
    for (item, draw) in items.iter().zip(draws) {
        if item.action.len() != dims {
            return Err(Error::Parameter(format!(
                "action has {} entries, expected {dims}",
                item.action.len()
            )));
        }
        let noisy = sched.q_sample(item.action, draw.k, &draw.eps)?;
        let a_k = g.input(vec![cfg.horizon, cfg.action_dim], noisy)?;
        let eps_hat = predict(g, item.s_t, a_k, draw.k)?;
        let target = g.input(vec![cfg.horizon, cfg.action_dim], draw.eps.clone())?;
        let term = g.mse(eps_hat, target)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(g.scale(total.expect("batch is non-empty"), 1.0 / items.len() as f64))
}

/// Denoising BC loss with explicit (k, ε) draws, one per batch element.
pub fn bc_loss_frozen(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    items: &[BcItem],
    draws: &[NoiseDraw],
) -> Result<NodeId> {
    bc_loss_with(g, cfg, sched, items, draws, |g, s_t, a_k, k| {
        predict_noise(g, params, cfg, s_t, a_k, k)
    })
}

/// Denoising BC loss; draws (k, ε) fresh per batch element.
pub fn bc_loss(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    items: &[BcItem],
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let draws: Vec<NoiseDraw> = items.iter().map(|_| draw_noise(cfg, sched, rng)).collect();
    bc_loss_frozen(g, params, cfg, sched, items, &draws)
}

/// Inserts the regression baseline head under `reg.`: a 2-layer MLP with a
/// zero-initialized output layer.
pub fn init_regression_params(
    params: &mut ParamSet,
    cfg: &DenoiserConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let out = cfg.horizon * cfg.action_dim;
    params.insert(
        "reg.w1",
        Tensor::uniform_fan_in(vec![cfg.d_model, cfg.channels], cfg.d_model, rng),
    )?;
    params.insert("reg.b1", Tensor::zeros(vec![cfg.channels]))?;
    params.insert("reg.w2", Tensor::zeros(vec![cfg.channels, out]))?;
    params.insert("reg.b2", Tensor::zeros(vec![out]))?;
    Ok(())
}

/// Deterministic baseline: regresses one action directly from S_t, in
/// normalized units.
pub fn regress_action(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    s_t: NodeId,
) -> Result<NodeId> {
    let w1 = g.param(params, "reg.w1")?;
    let b1 = g.param(params, "reg.b1")?;
    let w2 = g.param(params, "reg.w2")?;
    let b2 = g.param(params, "reg.b2")?;
    let h = g.matmul(s_t, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.gelu(h);
    let out = g.matmul(h, w2)?;
    let out = g.add_row(out, b2)?;
    g.reshape(out, vec![cfg.horizon, cfg.action_dim])
}

/// Batch-mean squared error of the regression baseline against expert
/// actions in normalized units.
pub fn regression_loss(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &DenoiserConfig,
    items: &[BcItem],
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(Error::Parameter(
            "regression loss needs a non-empty batch".into(),
        ));
    }
    let mut total: Option<NodeId> = None;
    for item in items {
        let pred = regress_action(g, params, cfg, item.s_t)?;
        let target = g.input(vec![cfg.horizon, cfg.action_dim], item.action.to_vec())?;
        let term = g.mse(pred, target)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(g.scale(total.expect("batch is non-empty"), 1.0 / items.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpolicy::denoiser::init_denoiser_params;
    use crate::gradcore::{check_gradients, CheckOptions};
    use crate::rng::stream;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            d_model: 4,
            horizon: 1,
            action_dim: 2,
            channels: 8,
            conv_layers: 3,
            time_embed: 8,
            kernel: 3,
            max_steps: 10,
        }
    }

    fn init(cfg: &DenoiserConfig, seed: u64) -> ParamSet {
        let mut params = ParamSet::new();
        let mut rng = stream(seed, "loss-test", 0);
        init_denoiser_params(&mut params, cfg, &mut rng).unwrap();
        params
    }

    fn state_data(cfg: &DenoiserConfig, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "loss-state", 0);
        (0..cfg.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn injecting_the_true_noise_gives_exactly_zero_loss() {
        let cfg = tiny_cfg();
        let sched = NoiseSchedule::default_schedule();
        let mut g = Graph::new();
        let s_t = g.input(vec![1, cfg.d_model], state_data(&cfg, 1)).unwrap();
        let actions = [vec![0.4, -0.2], vec![-0.6, 0.1]];
        let items: Vec<BcItem> = actions
            .iter()
            .map(|a| BcItem { s_t, action: a })
            .collect();
        let mut rng = stream(2, "inject", 0);
        let draws: Vec<NoiseDraw> = items
            .iter()
            .map(|_| draw_noise(&cfg, &sched, &mut rng))
            .collect();
        let mut next = 0usize;
        let loss = bc_loss_with(&mut g, &cfg, &sched, &items, &draws, |g, _s, _a, _k| {
            let eps = draws[next].eps.clone();
            next += 1;
            g.input(vec![cfg.horizon, cfg.action_dim], eps)
        })
        .unwrap();
        assert_eq!(g.scalar_value(loss), 0.0);
    }

    #[test]
    fn zero_head_denoiser_loss_is_one_up_to_monte_carlo_error() {
        let cfg = tiny_cfg();
        let sched = NoiseSchedule::default_schedule();
        let params = init(&cfg, 3);
        let mut g = Graph::new();
        let s_t = g.input(vec![1, cfg.d_model], state_data(&cfg, 4)).unwrap();
        let action = vec![0.25, -0.3];
        let items: Vec<BcItem> = (0..512)
            .map(|_| BcItem {
                s_t,
                action: &action,
            })
            .collect();
        let mut rng = stream(5, "zero-head-loss", 0);
        let loss = bc_loss(&mut g, &params, &cfg, &sched, &items, &mut rng).unwrap();
        let value = g.scalar_value(loss);
        assert!(value >= 0.0);
        let se = (2.0f64 / (512.0 * 2.0)).sqrt();
        assert!(
            (value - 1.0).abs() < 3.0 * se,
            "zero-head loss {value} should be within {} of 1.0",
            3.0 * se
        );
    }

    #[test]
    fn empty_batch_and_mismatched_draws_are_rejected() {
        let cfg = tiny_cfg();
        let sched = NoiseSchedule::default_schedule();
        let params = init(&cfg, 6);
        let mut g = Graph::new();
        let mut rng = stream(7, "empty", 0);
        assert!(matches!(
            bc_loss(&mut g, &params, &cfg, &sched, &[], &mut rng),
            Err(Error::Parameter(_))
        ));
        let s_t = g.input(vec![1, cfg.d_model], state_data(&cfg, 8)).unwrap();
        let action = vec![0.1, 0.1];
        let items = [BcItem {
            s_t,
            action: &action,
        }];
        assert!(matches!(
            bc_loss_frozen(&mut g, &params, &cfg, &sched, &items, &[]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn frozen_draw_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let sched = NoiseSchedule::default_schedule();
        let mut params = init(&cfg, 9);
        {
            let mut rng = stream(10, "head-randomize", 0);
            for name in ["den.head.w", "den.head.b"] {
                for v in params.get_mut(name).unwrap().data_mut() {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
        let states = [state_data(&cfg, 11), state_data(&cfg, 12)];
        let actions = [vec![0.4, -0.1], vec![-0.5, 0.35]];
        let mut rng = stream(13, "frozen-draws", 0);
        let draws: Vec<NoiseDraw> = (0..2).map(|_| draw_noise(&cfg, &sched, &mut rng)).collect();
        let opts = CheckOptions {
            max_coords_per_param: 3,
            seed: 14,
            ..CheckOptions::default()
        };
        let reports = check_gradients(
            &params,
            |p, g| {
                let items: Vec<BcItem> = states
                    .iter()
                    .zip(&actions)
                    .map(|(s, a)| {
                        Ok(BcItem {
                            s_t: g.input(vec![1, cfg.d_model], s.clone())?,
                            action: a,
                        })
                    })
                    .collect::<Result<_>>()?;
                bc_loss_frozen(g, p, &cfg, &sched, &items, &draws)
            },
            &opts,
        )
        .unwrap();
        for report in reports {
            assert!(
                report.passed(opts.tolerance),
                "{}: rel err {} (analytic {}, numeric {})",
                report.name,
                report.max_rel_err,
                report.analytic_at_worst,
                report.numeric_at_worst
            );
        }
    }

    #[test]
    fn untrained_regression_head_outputs_zero() {
        let cfg = tiny_cfg();
        let mut params = ParamSet::new();
        let mut rng = stream(15, "reg-init", 0);
        init_regression_params(&mut params, &cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let s_t = g.input(vec![1, cfg.d_model], state_data(&cfg, 16)).unwrap();
        let out = regress_action(&mut g, &params, &cfg, s_t).unwrap();
        assert_eq!(g.shape(out), &[cfg.horizon, cfg.action_dim]);
        assert!(g.value(out).iter().all(|&v| v == 0.0));
    }
}
