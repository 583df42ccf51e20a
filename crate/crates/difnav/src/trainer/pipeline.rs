//! Full training pipeline: pretrain, aggregation rounds, fine-tune.
//!
//! The pipeline owns stage sequencing, checkpointing, and the run report.
//! The report is line oriented and digestible; wall-clock times appear in the
//! lines for operators but are excluded from the digest so that two runs of
//! the same build and seed compare equal.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gradcore::{checkpoint, ParamSet};
use crate::instructgen::{Dataset, Split};
use crate::rng::{stream, Digest};
use crate::trainer::bc::{train_bc, EpochRecord, TrainConfig};
use crate::trainer::dagger::{dagger_round, rollout_episodes, DAggerConfig, RoundStats};
use crate::trainer::data::{decision_points, AggregatedBuffer, DecisionPoint};
use crate::trainer::model::{init_model_params, ModelConfig};

/// One pipeline stage's outcome: losses, rollout stats, and timing.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub stage: String,
    /// Per-epoch losses for gradient-descent stages; empty for rounds.
    pub epochs: Vec<EpochRecord>,
    /// Rollout counters for aggregation rounds; `None` for BC stages.
    pub stats: Option<RoundStats>,
    /// Buffer size when the stage finished.
    pub buffer_len: usize,
    pub wall_seconds: f64,
}

/// Machine-readable record of a full pipeline run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunReport {
    /// Renders the report as line-oriented records.
    pub fn to_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("run seed={} stages={}", self.seed, self.stages.len())];
        for record in &self.stages {
            lines.push(format!(
                "stage name={} buffer={} wall={:.3}",
                record.stage, record.buffer_len, record.wall_seconds
            ));
            for epoch in &record.epochs {
                lines.push(format!(
                    "epoch stage={} epoch={} total={:.6} waypoint={:.6} distance={:.6}",
                    record.stage, epoch.epoch, epoch.total, epoch.waypoint, epoch.distance
                ));
            }
            if let Some(stats) = &record.stats {
                lines.push(format!(
                    "round stage={} round={} episodes={} decisions={} expert={} policy={} \
                     stopped={} total={:.6} waypoint={:.6} distance={:.6}",
                    record.stage,
                    stats.round,
                    stats.episodes,
                    stats.decisions,
                    stats.expert_executed,
                    stats.policy_executed,
                    stats.stopped,
                    stats.mean_total,
                    stats.mean_waypoint,
                    stats.mean_distance
                ));
            }
        }
        lines
    }

    /// Writes the report to `path`, one record per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_lines().join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Content fingerprint excluding wall-clock times.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        d.update_u64(self.seed);
        for record in &self.stages {
            d.update_str(&record.stage);
            d.update_u64(record.buffer_len as u64);
            for epoch in &record.epochs {
                d.update_u64(epoch.epoch as u64);
                d.update_f64(epoch.total);
                d.update_f64(epoch.waypoint);
                d.update_f64(epoch.distance);
            }
            if let Some(stats) = &record.stats {
                d.update_u64(stats.round as u64);
                d.update_u64(stats.episodes as u64);
                d.update_u64(stats.decisions as u64);
                d.update_u64(stats.expert_executed as u64);
                d.update_u64(stats.policy_executed as u64);
                d.update_u64(stats.stopped as u64);
                d.update_f64(stats.mean_total);
                d.update_f64(stats.mean_waypoint);
                d.update_f64(stats.mean_distance);
                for &v in &stats.final_goal_distances {
                    d.update_f64(v);
                }
            }
        }
        d.finish()
    }
}

/// Decision points for every training-split demonstration.
pub fn training_points(dataset: &Dataset, model: &ModelConfig) -> Result<Vec<DecisionPoint>> {
    let mut points = Vec::new();
    for example in dataset.split(Split::Train) {
        let scene = dataset
            .scene(&example.scene_id)
            .ok_or_else(|| Error::Contract(format!("dataset lacks scene {}", example.scene_id)))?;
        points.extend(decision_points(
            &scene.grid,
            &example.demo,
            &example.instruction.ids,
            model.encoder.history,
        )?);
    }
    if points.is_empty() {
        return Err(Error::Parameter(
            "dataset has no training-split demonstrations".into(),
        ));
    }
    Ok(points)
}

fn save_stage(params: &ParamSet, out_dir: Option<&Path>, name: &str) -> Result<()> {
    if let Some(dir) = out_dir {
        checkpoint::save(params, &dir.join(format!("model-{name}.ckpt")))?;
    }
    Ok(())
}

/// Runs pretraining, `rounds` aggregation rounds, and the final fine-tune.
///
/// Returns the trained parameters and the run report; when `out_dir` is set,
/// a checkpoint is written after every stage with a stage suffix.
pub fn run_pipeline(
    dataset: &Dataset,
    model: &ModelConfig,
    dcfg: &DAggerConfig,
    tcfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ParamSet, RunReport)> {
    model.validate()?;
    dcfg.validate()?;
    tcfg.validate()?;

    let mut params = ParamSet::new();
    init_model_params(&mut params, model, &mut stream(tcfg.seed, "init", 0))?;
    let original = training_points(dataset, model)?;
    let mut report = RunReport {
        seed: tcfg.seed,
        stages: Vec::with_capacity(dcfg.rounds + 2),
    };

    let clock = Instant::now();
    let epochs = train_bc(&mut params, model, &original, tcfg, "bc")?;
    report.stages.push(StageRecord {
        stage: "bc".into(),
        epochs,
        stats: None,
        buffer_len: 0,
        wall_seconds: clock.elapsed().as_secs_f64(),
    });
    save_stage(&params, out_dir, "bc")?;

    let episodes = rollout_episodes(dataset, Split::Train)?;
    let mut buffer = AggregatedBuffer::new();
    for round in 1..=dcfg.rounds {
        let clock = Instant::now();
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        order.shuffle(&mut stream(tcfg.seed, "dagger-order", round as u64));
        order.truncate(dcfg.episodes_per_round.min(episodes.len()));
        let chosen: Vec<_> = order.iter().map(|&i| episodes[i]).collect();
        let stats = dagger_round(&mut params, model, &chosen, dcfg, tcfg, round, &mut buffer)?;
        report.stages.push(StageRecord {
            stage: format!("dagger-{round}"),
            epochs: Vec::new(),
            stats: Some(stats),
            buffer_len: buffer.len(),
            wall_seconds: clock.elapsed().as_secs_f64(),
        });
        save_stage(&params, out_dir, &format!("dagger-{round}"))?;
    }

    let clock = Instant::now();
    let mut finetune_points: Vec<DecisionPoint> = if dcfg.finetune_on_union {
        original
    } else {
        Vec::new()
    };
    finetune_points.extend(buffer.records().iter().map(|r| r.point.clone()));
    let epochs = train_bc(&mut params, model, &finetune_points, tcfg, "finetune")?;
    report.stages.push(StageRecord {
        stage: "finetune".into(),
        epochs,
        stats: None,
        buffer_len: buffer.len(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    });
    save_stage(&params, out_dir, "finetune")?;

    Ok((params, report))
}
