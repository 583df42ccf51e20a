//! Online data aggregation rounds with stochastic expert mixing.
//!
//! Each round rolls the current policy through a batch of episodes. At every
//! decision the expert's waypoint label and the true normalized goal distance
//! are recorded unconditionally; a coin flip with threshold `alpha` then
//! decides whether the expert's action or a freshly sampled policy action is
//! executed. Losses from all decisions of an episode are aggregated into a
//! single optimizer update, and the labeled states accumulate in an
//! [`AggregatedBuffer`] that later stages train on.

use rand::Rng;

use crate::diffpolicy::{bc_loss, sample_action, BcItem};
use crate::error::{Error, Result};
use crate::gradcore::{clear_grads, AdamW, AdamWConfig, Graph, ParamSet};
use crate::instructgen::{Dataset, Split};
use crate::navsim::{
    execute_waypoint, render_panorama, DistanceField, GridWorld, PanoObservation, Pose,
    DEFAULT_MAX_WAYPOINT,
};
use crate::progress::{distance_loss, should_stop, ProgressTarget};
use crate::rng::stream;
use crate::trainer::bc::TrainConfig;
use crate::trainer::data::{relative_history, AggregatedBuffer, BufferRecord, DecisionPoint};
use crate::trainer::expert::{expert_action, validate_candidates};
use crate::trainer::model::{stop_score, ModelConfig};

/// Knobs for the expert-mixing rounds.
#[derive(Debug, Clone)]
pub struct DAggerConfig {
    /// Expert-intervention threshold: the expert executes when p <= alpha.
    pub alpha: f64,
    /// Number of aggregation rounds.
    pub rounds: usize,
    /// Episodes rolled out per round.
    pub episodes_per_round: usize,
    /// Expert search radius in meters; candidate radii may not exceed it.
    pub expert_radius: f64,
    /// Number of evenly spaced candidate headings.
    pub candidate_headings: usize,
    /// Candidate waypoint radii in meters.
    pub candidate_radii: Vec<f64>,
    /// Fine-tune on original demonstrations plus the buffer, not buffer only.
    pub finetune_on_union: bool,
}

impl Default for DAggerConfig {
    fn default() -> Self {
        DAggerConfig {
            alpha: 0.25,
            rounds: 5,
            episodes_per_round: 8,
            expert_radius: 1.0,
            candidate_headings: 16,
            candidate_radii: vec![0.25, 0.5, 1.0],
            finetune_on_union: true,
        }
    }
}

impl DAggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("round count must be at least 1".into()));
        }
        if self.episodes_per_round == 0 {
            return Err(Error::Config("episodes per round must be at least 1".into()));
        }
        if !self.expert_radius.is_finite() || self.expert_radius <= 0.0 {
            return Err(Error::Config(format!(
                "expert radius must be positive, got {}",
                self.expert_radius
            )));
        }
        validate_candidates(self)
    }
}

/// The expert executes exactly when the uniform draw does not exceed alpha.
pub fn expert_intervenes(p: f64, alpha: f64) -> bool {
    p <= alpha
}

/// One rollout task: scene, start, goal, instruction, and the demo to track.
#[derive(Debug, Clone, Copy)]
pub struct RolloutEpisode<'a> {
    pub grid: &'a GridWorld,
    pub start: Pose,
    pub goal: (f64, f64),
    pub instruction: &'a [usize],
    pub expert_sparse: &'a [Pose],
}

/// Rollout episodes for one dataset split, in generation order.
pub fn rollout_episodes(dataset: &Dataset, split: Split) -> Result<Vec<RolloutEpisode<'_>>> {
    dataset
        .split(split)
        .map(|example| {
            let scene = dataset.scene(&example.scene_id).ok_or_else(|| {
                Error::Contract(format!("dataset lacks scene {}", example.scene_id))
            })?;
            Ok(RolloutEpisode {
                grid: &scene.grid,
                start: example.episode.start,
                goal: example.episode.goal,
                instruction: &example.instruction.ids,
                expert_sparse: &example.demo.sparse,
            })
        })
        .collect()
}

/// Aggregate counters and losses for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub episodes: usize,
    /// Decision states labeled and appended to the buffer.
    pub decisions: usize,
    pub expert_executed: usize,
    pub policy_executed: usize,
    /// Episodes ended by the stop rule rather than the decision cap.
    pub stopped: usize,
    /// Per-episode loss means.
    pub mean_total: f64,
    pub mean_waypoint: f64,
    pub mean_distance: f64,
    /// Euclidean distance from each episode's final pose to its goal.
    pub final_goal_distances: Vec<f64>,
}

/// Caps a displacement's magnitude at the simulator's waypoint limit.
fn clamp_waypoint(d: (f64, f64)) -> (f64, f64) {
    let norm = (d.0 * d.0 + d.1 * d.1).sqrt();
    if norm > DEFAULT_MAX_WAYPOINT {
        let s = DEFAULT_MAX_WAYPOINT / norm;
        (d.0 * s, d.1 * s)
    } else {
        d
    }
}

/// Rolls out one round of episodes, labeling states and updating the policy.
///
/// Every decision state is labeled with the expert action and appended to
/// `buffer` tagged with `round`; one optimizer update is applied per episode.
pub fn dagger_round(
    params: &mut ParamSet,
    model: &ModelConfig,
    episodes: &[RolloutEpisode<'_>],
    dcfg: &DAggerConfig,
    tcfg: &TrainConfig,
    round: usize,
    buffer: &mut AggregatedBuffer,
) -> Result<RoundStats> {
    model.validate()?;
    dcfg.validate()?;
    tcfg.validate()?;
    if episodes.is_empty() {
        return Err(Error::Parameter("a round needs at least one episode".into()));
    }

    let norm = model.action_norm()?;
    let sched = model.schedule()?;
    let history_len = model.encoder.history;
    let mut opt = AdamW::new(AdamWConfig {
        learning_rate: tcfg.learning_rate,
        ..AdamWConfig::default()
    });

    let mut stats = RoundStats {
        round,
        episodes: episodes.len(),
        decisions: 0,
        expert_executed: 0,
        policy_executed: 0,
        stopped: 0,
        mean_total: 0.0,
        mean_waypoint: 0.0,
        mean_distance: 0.0,
        final_goal_distances: Vec::with_capacity(episodes.len()),
    };

    for (index, episode) in episodes.iter().enumerate() {
        let mut rng = stream(
            tcfg.seed,
            "dagger-rollout",
            ((round as u64) << 32) | index as u64,
        );
        let goal_field = DistanceField::new(episode.grid, episode.goal)?;
        let start = episode.start.position();
        let initial = goal_field.distance(start.0, start.1).ok_or_else(|| {
            Error::EpisodeGeneration("rollout start cannot reach the goal".into())
        })?;

        let mut pose = episode.start;
        let mut trail: Vec<(Pose, PanoObservation, usize)> =
            vec![(pose, render_panorama(episode.grid, pose), 0)];
        let mut g = Graph::new();
        let mut s_nodes = Vec::new();
        let mut norm_actions: Vec<Vec<f64>> = Vec::new();
        let mut prog_items = Vec::new();

        for decision in 1..=model.progress.max_decisions {
            let window = &trail[trail.len().saturating_sub(history_len)..];
            let history = relative_history(window)?;
            let s_t = crate::encoder::encode_state(
                &mut g,
                params,
                &model.encoder,
                episode.instruction,
                &history,
                None,
            )?;

            let expert = expert_action(
                episode.grid,
                &pose,
                episode.expert_sparse,
                episode.goal,
                dcfg,
            )?;
            let here = pose.position();
            let target = match goal_field.distance(here.0, here.1) {
                Some(meters) => ProgressTarget::from_geodesic(meters, initial)?,
                None => ProgressTarget {
                    normalized: 1.0,
                    reached: false,
                },
            };
            buffer.append(BufferRecord {
                point: DecisionPoint {
                    instruction: episode.instruction.to_vec(),
                    history: history.clone(),
                    action: expert.displacement,
                    target,
                },
                round,
            });
            s_nodes.push(s_t);
            norm_actions.push(norm.normalize(&[expert.displacement.0, expert.displacement.1]));
            prog_items.push((s_t, target));
            stats.decisions += 1;

            let score = stop_score(&mut g, params, &model.progress, s_t)?;
            if should_stop(&model.progress, score, decision) {
                stats.stopped += 1;
                break;
            }

            let p: f64 = rng.gen();
            let displacement = if expert_intervenes(p, dcfg.alpha) {
                stats.expert_executed += 1;
                expert.displacement
            } else {
                stats.policy_executed += 1;
                let sampled =
                    sample_action(params, &model.denoiser, &sched, &norm, g.value(s_t), &mut rng)?;
                if sampled.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss(format!(
                        "round {round}, episode {index}: sampled waypoint is not finite"
                    )));
                }
                clamp_waypoint((sampled[0], sampled[1]))
            };
            let outcome = execute_waypoint(episode.grid, pose, displacement)?;
            pose = outcome.pose;
            trail.push((pose, render_panorama(episode.grid, pose), decision));
        }

        let bc_items: Vec<BcItem> = s_nodes
            .iter()
            .zip(&norm_actions)
            .map(|(&s_t, action)| BcItem {
                s_t,
                action: action.as_slice(),
            })
            .collect();
        let waypoint = bc_loss(&mut g, params, &model.denoiser, &sched, &bc_items, &mut rng)?;
        let distance = distance_loss(&mut g, params, &model.progress, &prog_items)?;
        let total = g.add(waypoint, distance)?;
        let value = g.scalar_value(total);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "round {round}, episode {index}: loss became {value}"
            )));
        }
        clear_grads(params);
        g.backward(total, params)?;
        opt.step(params)?;

        stats.mean_total += value;
        stats.mean_waypoint += g.scalar_value(waypoint);
        stats.mean_distance += g.scalar_value(distance);
        let here = pose.position();
        stats
            .final_goal_distances
            .push(((here.0 - episode.goal.0).powi(2) + (here.1 - episode.goal.1).powi(2)).sqrt());
    }

    let n = episodes.len() as f64;
    stats.mean_total /= n;
    stats.mean_waypoint /= n;
    stats.mean_distance /= n;
    Ok(stats)
}
