//! Expert demonstrations: dense low-level walks and sparse waypoint labels.
//!
//! [`plan_demo`] turns a start pose and a goal point into a collision-free
//! walk executed with the simulator's own low-level actions, so every
//! demonstrated trajectory is reproducible by the agent. The walk follows the
//! 8-connected shortest path with a carrot controller: aim at the next
//! unreached path vertex, rotate onto the quantized heading, then take one
//! FORWARD step. Dense poses are recorded after each FORWARD, giving exactly
//! 0.25 m spacing between consecutive entries.
//!
//! [`sparsify`] keeps every `n`-th dense pose plus the final one as waypoint
//! labels and renders a panorama at each kept pose. Consecutive sparse poses
//! are the supervision targets for waypoint prediction.

use crate::error::{Error, Result};
use crate::navsim::{
    render_panorama, shortest_path, step_low, GridWorld, LowLevelAction, PanoObservation, Pose,
    FORWARD_STEP, HEADING_STEPS,
};

/// Distance at which a path vertex counts as reached by the carrot controller.
const VERTEX_REACH: f64 = 0.13;
/// Distance at which the walk terminates at the goal.
const GOAL_REACH: f64 = 0.2;
/// Upper bound on low-level actions per demonstration.
const MAX_DEMO_ACTIONS: usize = 4000;

/// A demonstrated trajectory: the dense executed walk plus sparse waypoint
/// labels with one panorama per kept pose.
#[derive(Debug, Clone)]
pub struct DemoTrajectory {
    /// Poses after each FORWARD step, starting with the initial pose.
    pub dense: Vec<Pose>,
    /// Every `n`-th dense pose plus the final pose.
    pub sparse: Vec<Pose>,
    /// Panorama rendered at each sparse pose.
    pub observations: Vec<PanoObservation>,
    /// The episode goal point.
    pub goal: (f64, f64),
}

impl DemoTrajectory {
    /// Total distance walked along the dense trajectory.
    pub fn dense_length(&self) -> f64 {
        self.dense
            .windows(2)
            .map(|w| {
                let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (dx * dx + dy * dy).sqrt()
}

/// Signed shortest rotation from heading step `from` to `to`, in steps.
/// Positive means counterclockwise; an exact half turn resolves to positive.
fn signed_step_diff(from: i32, to: i32) -> i32 {
    let half = HEADING_STEPS / 2;
    let mut d = (to - from).rem_euclid(HEADING_STEPS);
    if d > half {
        d -= HEADING_STEPS;
    }
    d
}

/// Plans a collision-free expert walk from `start` to `goal`.
///
/// The walk is executed with `step_low`, so the returned dense poses are for
/// the avatar the policy controls: consecutive entries are exactly one
/// FORWARD step (0.25 m) apart and the final entry lies within 0.25 m of the
/// goal. A start already within reach yields the single-entry trajectory.
/// Unreachable or blocked goals produce an `EpisodeGeneration` error.
pub fn plan_demo(grid: &GridWorld, start: Pose, goal: (f64, f64)) -> Result<DemoTrajectory> {
    let Some(path) = shortest_path(grid, start.position(), goal)? else {
        return Err(Error::EpisodeGeneration(format!(
            "goal ({:.2}, {:.2}) is unreachable from ({:.2}, {:.2})",
            goal.0, goal.1, start.x, start.y
        )));
    };
    let mut vertices = path;
    vertices.push(goal);

    let mut pose = start;
    let mut dense = vec![pose];
    let mut target = 1.min(vertices.len() - 1);
    let mut actions = 0usize;
    while euclid(pose.position(), goal) > GOAL_REACH {
        actions += 1;
        if actions > MAX_DEMO_ACTIONS {
            return Err(Error::EpisodeGeneration(
                "expert walk exceeded the action budget".into(),
            ));
        }
        while target + 1 < vertices.len()
            && (euclid(pose.position(), vertices[target]) < VERTEX_REACH
                || euclid(pose.position(), vertices[target + 1])
                    <= euclid(pose.position(), vertices[target]))
        {
            target += 1;
        }
        let (tx, ty) = vertices[target];
        let desired = Pose::new(pose.x, pose.y, (ty - pose.y).atan2(tx - pose.x)).heading_steps();
        let turn = signed_step_diff(pose.heading_steps(), desired);
        if turn != 0 {
            let rotate = if turn > 0 {
                LowLevelAction::RotateLeft
            } else {
                LowLevelAction::RotateRight
            };
            pose = step_low(grid, pose, rotate).0;
            continue;
        }
        let (next, collided) = step_low(grid, pose, LowLevelAction::Forward);
        if collided {
            if target + 1 < vertices.len() {
                target += 1;
                continue;
            }
            return Err(Error::EpisodeGeneration(
                "expert walk was blocked short of the goal".into(),
            ));
        }
        pose = next;
        dense.push(pose);
    }
    let last = dense[dense.len() - 1];
    if euclid(last.position(), goal) > FORWARD_STEP {
        return Err(Error::EpisodeGeneration(
            "expert walk stopped more than one step from the goal".into(),
        ));
    }
    Ok(DemoTrajectory {
        dense,
        sparse: Vec::new(),
        observations: Vec::new(),
        goal,
    })
}

/// Keeps every `n`-th dense pose plus the final pose as sparse waypoints and
/// renders a panorama at each kept pose. `n = 1` keeps the whole dense
/// trajectory. `n < 1` is a parameter error.
pub fn sparsify(grid: &GridWorld, traj: &DemoTrajectory, n: usize) -> Result<DemoTrajectory> {
    if n < 1 {
        return Err(Error::Parameter(
            "sparsification stride must be at least 1".into(),
        ));
    }
    if traj.dense.is_empty() {
        return Err(Error::Contract("cannot sparsify an empty trajectory".into()));
    }
    let mut sparse: Vec<Pose> = traj.dense.iter().copied().step_by(n).collect();
    let last = traj.dense[traj.dense.len() - 1];
    if !(traj.dense.len() - 1).is_multiple_of(n) {
        sparse.push(last);
    }
    let observations = sparse.iter().map(|&p| render_panorama(grid, p)).collect();
    Ok(DemoTrajectory {
        dense: traj.dense.clone(),
        sparse,
        observations,
        goal: traj.goal,
    })
}
