//! Supervision extraction: demonstrations to decision points, DAgger buffer.
//!
//! Every training stage consumes the same unit, a [`DecisionPoint`]: the
//! instruction, the relative observation history the encoder reads, the
//! expert waypoint displacement in the agent frame, and the progress target.
//! Points come from two sources that share this representation: sparse
//! demonstrations (behavior cloning) and states visited during DAgger
//! rollouts (the aggregated buffer).

use crate::encoder::HistoryEntry;
use crate::error::{Error, Result};
use crate::instructgen::DemoTrajectory;
use crate::navsim::{geodesic_distance, GridWorld, PanoObservation, Pose, ViewSemantic};
use crate::progress::ProgressTarget;
use crate::rng::Digest;

/// One supervised decision: state inputs plus expert labels.
#[derive(Debug, Clone)]
pub struct DecisionPoint {
    /// Instruction token ids.
    pub instruction: Vec<usize>,
    /// Relative history window ending at the current observation.
    pub history: Vec<HistoryEntry>,
    /// Expert waypoint displacement in the agent frame, meters.
    pub action: (f64, f64),
    /// Progress supervision at this state.
    pub target: ProgressTarget,
}

/// Expresses a world-frame displacement in the agent frame of `pose`
/// (+x ahead, +y to the left).
pub fn to_agent_frame(pose: &Pose, world: (f64, f64)) -> (f64, f64) {
    let (s, c) = pose.heading().sin_cos();
    (c * world.0 + s * world.1, -s * world.0 + c * world.1)
}

/// Inverse of [`to_agent_frame`].
pub fn to_world_frame(pose: &Pose, agent: (f64, f64)) -> (f64, f64) {
    let (s, c) = pose.heading().sin_cos();
    (c * agent.0 - s * agent.1, s * agent.0 + c * agent.1)
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (dx * dx + dy * dy).sqrt()
}

/// Turns a window of visited waypoints into the relative entries the encoder
/// consumes. The window's last element is the current pose; distances and
/// headings are measured relative to it.
pub fn relative_history(window: &[(Pose, PanoObservation, usize)]) -> Result<Vec<HistoryEntry>> {
    let (current, _, _) = window
        .last()
        .ok_or_else(|| Error::Contract("history window must not be empty".into()))?;
    Ok(window
        .iter()
        .map(|(pose, obs, step)| {
            let delta = pose.heading() - current.heading();
            HistoryEntry {
                observation: obs.clone(),
                distance: euclid(pose.position(), current.position()),
                heading: (delta.sin(), delta.cos()),
                step: *step,
            }
        })
        .collect())
}

/// Extracts every decision point of one demonstrated episode.
///
/// Decision `t` sees the last `history_window` sparse waypoints up to and
/// including waypoint `t` and is labeled with the displacement to waypoint
/// `t+1`; the final waypoint carries the zero (stop) action. Progress
/// targets divide the remaining geodesic distance by the episode's initial
/// geodesic distance.
pub fn decision_points(
    grid: &GridWorld,
    demo: &DemoTrajectory,
    instruction: &[usize],
    history_window: usize,
) -> Result<Vec<DecisionPoint>> {
    if history_window == 0 {
        return Err(Error::Parameter("history window must be at least 1".into()));
    }
    if demo.sparse.len() != demo.observations.len() {
        return Err(Error::Contract(format!(
            "demo has {} sparse poses but {} observations",
            demo.sparse.len(),
            demo.observations.len()
        )));
    }
    if demo.sparse.is_empty() {
        return Err(Error::Contract("demo has no sparse waypoints".into()));
    }
    let start = demo.sparse[0];
    let initial = geodesic_distance(grid, start.position(), demo.goal)?.ok_or_else(|| {
        Error::EpisodeGeneration("demo start cannot reach its goal".into())
    })?;

    let mut points = Vec::with_capacity(demo.sparse.len());
    for t in 0..demo.sparse.len() {
        let from = (t + 1).saturating_sub(history_window);
        let window: Vec<(Pose, PanoObservation, usize)> = (from..=t)
            .map(|i| (demo.sparse[i], demo.observations[i].clone(), i))
            .collect();
        let history = relative_history(&window)?;

        let pose = demo.sparse[t];
        let action = if t + 1 < demo.sparse.len() {
            let next = demo.sparse[t + 1];
            to_agent_frame(&pose, (next.x - pose.x, next.y - pose.y))
        } else {
            (0.0, 0.0)
        };

        let meters = geodesic_distance(grid, pose.position(), demo.goal)?.ok_or_else(|| {
            Error::EpisodeGeneration(format!("demo waypoint {t} cannot reach the goal"))
        })?;
        let target = ProgressTarget::from_geodesic(meters, initial)?;

        points.push(DecisionPoint {
            instruction: instruction.to_vec(),
            history,
            action,
            target,
        });
    }
    Ok(points)
}

/// One DAgger buffer record: a visited state with its expert labels.
#[derive(Debug, Clone)]
pub struct BufferRecord {
    pub point: DecisionPoint,
    /// 1-based DAgger round that visited the state.
    pub round: usize,
}

/// Append-only store of expert-labeled states collected across rounds.
#[derive(Debug, Clone, Default)]
pub struct AggregatedBuffer {
    records: Vec<BufferRecord>,
}

impl AggregatedBuffer {
    pub fn new() -> Self {
        AggregatedBuffer::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, record: BufferRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[BufferRecord] {
        &self.records
    }

    /// Content fingerprint covering every record. Equal buffers have equal
    /// digests.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        d.update_u64(self.records.len() as u64);
        for rec in &self.records {
            d.update_u64(rec.round as u64);
            for &id in &rec.point.instruction {
                d.update_u64(id as u64);
            }
            d.update_f64(rec.point.action.0);
            d.update_f64(rec.point.action.1);
            d.update_f64(rec.point.target.normalized);
            d.update_u64(rec.point.target.reached as u64);
            for entry in &rec.point.history {
                d.update_f64(entry.distance);
                d.update_f64(entry.heading.0);
                d.update_f64(entry.heading.1);
                d.update_u64(entry.step as u64);
                for view in &entry.observation.views {
                    d.update_f64(view.depth);
                    d.update_f64(view.sin);
                    d.update_f64(view.cos);
                    d.update_u64(match view.semantic {
                        ViewSemantic::Open => 0,
                        ViewSemantic::Wall => 1,
                        ViewSemantic::Landmark(id) => 2 + id as u64,
                    });
                }
            }
        }
        d.finish()
    }
}
