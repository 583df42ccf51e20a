//! Behavior cloning: joint waypoint and progress supervision.
//!
//! One optimizer step covers a minibatch of decision points. Each point is
//! encoded into its fused state, the denoiser pays the noise-prediction loss
//! against the expert action, and the progress head pays its `lambda`-scaled
//! loss on the same states; the sum trains all three networks end to end.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffpolicy::{bc_loss, BcItem};
use crate::error::{Error, Result};
use crate::gradcore::{clear_grads, AdamW, AdamWConfig, Graph, NodeId, ParamSet};
use crate::progress::distance_loss;
use crate::rng::stream;
use crate::trainer::data::DecisionPoint;
use crate::trainer::model::ModelConfig;

/// Optimization hyperparameters shared by every training stage.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 10,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss per batch.
    pub total: f64,
    /// Mean waypoint (noise prediction) term.
    pub waypoint: f64,
    /// Mean progress term, already scaled by `lambda`.
    pub distance: f64,
}

/// Builds the joint loss for one batch inside `g`.
///
/// Returns the loss node along with the forward values of its two terms.
pub(crate) fn batch_loss(
    g: &mut Graph,
    params: &ParamSet,
    model: &ModelConfig,
    batch: &[&DecisionPoint],
    rng: &mut impl Rng,
) -> Result<(NodeId, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Parameter("batch must not be empty".into()));
    }
    let norm = model.action_norm()?;
    let sched = model.schedule()?;
    let actions: Vec<Vec<f64>> = batch
        .iter()
        .map(|p| norm.normalize(&[p.action.0, p.action.1]))
        .collect();

    let mut bc_items = Vec::with_capacity(batch.len());
    let mut prog_items = Vec::with_capacity(batch.len());
    for (point, action) in batch.iter().zip(&actions) {
        let s_t = crate::encoder::encode_state(
            g,
            params,
            &model.encoder,
            &point.instruction,
            &point.history,
            None,
        )?;
        bc_items.push(BcItem {
            s_t,
            action: action.as_slice(),
        });
        prog_items.push((s_t, point.target));
    }

    let waypoint = bc_loss(g, params, &model.denoiser, &sched, &bc_items, rng)?;
    let distance = distance_loss(g, params, &model.progress, &prog_items)?;
    let total = g.add(waypoint, distance)?;
    Ok((total, g.scalar_value(waypoint), g.scalar_value(distance)))
}

/// Trains the bundle on `points` and returns per-epoch loss records.
///
/// `stage` tags the seed streams so distinct stages of a pipeline shuffle
/// and draw noise independently even under one seed.
pub fn train_bc(
    params: &mut ParamSet,
    model: &ModelConfig,
    points: &[DecisionPoint],
    cfg: &TrainConfig,
    stage: &str,
) -> Result<Vec<EpochRecord>> {
    model.validate()?;
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::Parameter(
            "training needs a non-empty set of decision points".into(),
        ));
    }

    let mut opt = AdamW::new(AdamWConfig {
        learning_rate: cfg.learning_rate,
        ..AdamWConfig::default()
    });
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut rng = stream(cfg.seed, stage, epoch as u64);
        order.shuffle(&mut rng);
        let mut sums = [0.0_f64; 3];
        let mut batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DecisionPoint> = chunk.iter().map(|&i| &points[i]).collect();
            let mut g = Graph::new();
            let (total, waypoint, distance) = batch_loss(&mut g, params, model, &batch, &mut rng)?;
            let value = g.scalar_value(total);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "stage {stage}, epoch {epoch}, batch {batches}: loss became {value}"
                )));
            }
            clear_grads(params);
            g.backward(total, params)?;
            opt.step(params)?;
            sums[0] += value;
            sums[1] += waypoint;
            sums[2] += distance;
            batches += 1;
        }

        let n = batches as f64;
        records.push(EpochRecord {
            epoch,
            total: sums[0] / n,
            waypoint: sums[1] / n,
            distance: sums[2] / n,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpolicy::{bc_loss_frozen, draw_noise, NoiseDraw};
    use crate::instructgen::{plan_demo, sparsify};
    use crate::navsim::{grid_from_rows, GridWorld, Pose, SceneCategory, FORWARD_STEP};
    use crate::trainer::data::decision_points;
    use crate::trainer::model::{init_model_params, tiny_model};

    fn corridor() -> GridWorld {
        grid_from_rows(
            &["############", "#..........#", "############"],
            SceneCategory::NarrowSpace,
        )
        .unwrap()
    }

    fn corridor_points(model: &ModelConfig) -> Vec<DecisionPoint> {
        let grid = corridor();
        let start = (1.5 * FORWARD_STEP, 1.5 * FORWARD_STEP);
        let goal = (10.5 * FORWARD_STEP, 1.5 * FORWARD_STEP);
        let dense = plan_demo(&grid, Pose::new(start.0, start.1, 0.0), goal).unwrap();
        let demo = sparsify(&grid, &dense, model.stride).unwrap();
        decision_points(&grid, &demo, &[3, 1, 4, 1], model.encoder.history).unwrap()
    }

    fn frozen_eval(
        params: &ParamSet,
        model: &ModelConfig,
        points: &[DecisionPoint],
        draws: &[NoiseDraw],
    ) -> (f64, f64) {
        let norm = model.action_norm().unwrap();
        let sched = model.schedule().unwrap();
        let actions: Vec<Vec<f64>> = points
            .iter()
            .map(|p| norm.normalize(&[p.action.0, p.action.1]))
            .collect();
        let mut g = Graph::new();
        let mut bc_items = Vec::new();
        let mut prog_items = Vec::new();
        for (point, action) in points.iter().zip(&actions) {
            let s_t = crate::encoder::encode_state(
                &mut g,
                params,
                &model.encoder,
                &point.instruction,
                &point.history,
                None,
            )
            .unwrap();
            bc_items.push(BcItem {
                s_t,
                action: action.as_slice(),
            });
            prog_items.push((s_t, point.target));
        }
        let wp = bc_loss_frozen(&mut g, params, &model.denoiser, &sched, &bc_items, draws).unwrap();
        let dist = distance_loss(&mut g, params, &model.progress, &prog_items).unwrap();
        (g.scalar_value(wp), g.scalar_value(dist))
    }

    #[test]
    fn training_lowers_the_loss_on_the_training_set() {
        let model = tiny_model(12);
        let points = corridor_points(&model);
        let mut params = ParamSet::new();
        init_model_params(&mut params, &model, &mut stream(21, "bc-init", 0)).unwrap();

        let sched = model.schedule().unwrap();
        let mut draw_rng = stream(21, "bc-eval-draws", 0);
        let draws: Vec<NoiseDraw> = points
            .iter()
            .map(|_| draw_noise(&model.denoiser, &sched, &mut draw_rng))
            .collect();

        let (wp0, d0) = frozen_eval(&params, &model, &points, &draws);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 12,
            seed: 21,
        };
        let records = train_bc(&mut params, &model, &points, &cfg, "bc").unwrap();
        assert_eq!(records.len(), cfg.epochs);
        let (wp1, d1) = frozen_eval(&params, &model, &points, &draws);
        assert!(
            wp1 + d1 < wp0 + d0,
            "loss went {} -> {}",
            wp0 + d0,
            wp1 + d1
        );
        assert!(wp1 < wp0, "waypoint term went {wp0} -> {wp1}");
    }

    #[test]
    fn single_example_with_frozen_draws_overfits_to_nothing() {
        let model = tiny_model(12);
        let points = corridor_points(&model);
        let point = points[1].clone();
        let mut params = ParamSet::new();
        init_model_params(&mut params, &model, &mut stream(22, "overfit-init", 0)).unwrap();

        let sched = model.schedule().unwrap();
        let norm = model.action_norm().unwrap();
        let action = norm.normalize(&[point.action.0, point.action.1]);
        let mut draw_rng = stream(22, "overfit-draw", 0);
        let draws = vec![draw_noise(&model.denoiser, &sched, &mut draw_rng)];

        let mut opt = AdamW::new(AdamWConfig {
            learning_rate: 3e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut g = Graph::new();
            let s_t = crate::encoder::encode_state(
                &mut g,
                &params,
                &model.encoder,
                &point.instruction,
                &point.history,
                None,
            )
            .unwrap();
            let items = [BcItem {
                s_t,
                action: action.as_slice(),
            }];
            let wp =
                bc_loss_frozen(&mut g, &params, &model.denoiser, &sched, &items, &draws).unwrap();
            last = g.scalar_value(wp);
            clear_grads(&mut params);
            g.backward(wp, &mut params).unwrap();
            opt.step(&mut params).unwrap();
        }
        assert!(last < 1e-3, "waypoint loss stalled at {last}");
    }

    #[test]
    fn zero_lambda_leaves_the_progress_head_untouched() {
        let mut model = tiny_model(12);
        model.progress.lambda = 0.0;
        let points = corridor_points(&model);
        let mut params = ParamSet::new();
        init_model_params(&mut params, &model, &mut stream(23, "lambda-init", 0)).unwrap();

        let batch: Vec<&DecisionPoint> = points.iter().collect();
        let mut g = Graph::new();
        let mut rng = stream(23, "lambda-draws", 0);
        let (total, _, dist) = batch_loss(&mut g, &params, &model, &batch, &mut rng).unwrap();
        assert_eq!(dist, 0.0);
        clear_grads(&mut params);
        g.backward(total, &mut params).unwrap();

        let mut saw_nonzero_elsewhere = false;
        for (name, tensor) in params.iter() {
            let grad = tensor.grad().expect("gradient missing");
            if name.starts_with("prog.") {
                assert!(
                    grad.iter().all(|&v| v == 0.0),
                    "{name} received gradient despite lambda = 0"
                );
            } else {
                saw_nonzero_elsewhere |= grad.iter().any(|&v| v != 0.0);
            }
        }
        assert!(saw_nonzero_elsewhere);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let model = tiny_model(12);
        let points = corridor_points(&model);
        let mut params = ParamSet::new();
        init_model_params(&mut params, &model, &mut stream(24, "nan-init", 0)).unwrap();
        params.get_mut("prog.w1").unwrap().data_mut()[0] = f64::NAN;

        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let err = train_bc(&mut params, &model, &points, &cfg, "bc").unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)), "got {err:?}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = tiny_model(12);
        let mut params = ParamSet::new();
        init_model_params(&mut params, &model, &mut stream(25, "empty-init", 0)).unwrap();
        let err = train_bc(&mut params, &model, &[], &TrainConfig::default(), "bc").unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        TrainConfig::default().validate().unwrap();
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
