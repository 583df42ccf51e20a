//! Low-level actions and the waypoint-following controller.

use crate::error::{Error, Result};
use crate::navsim::grid::{GridWorld, Pose, HEADING_STEPS};

pub const FORWARD_STEP: f64 = 0.25;
pub const DEFAULT_MAX_WAYPOINT: f64 = 1.25;
const ZERO_DISPLACEMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowLevelAction {
    Forward,
    RotateLeft,
    RotateRight,
    Stop,
}

impl std::fmt::Display for LowLevelAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LowLevelAction::Forward => "FORWARD",
            LowLevelAction::RotateLeft => "ROTATE_LEFT",
            LowLevelAction::RotateRight => "ROTATE_RIGHT",
            LowLevelAction::Stop => "STOP",
        })
    }
}

/// Execute one low-level action. FORWARD advances 0.25 m along the heading
/// when the target cell is free; a blocked FORWARD leaves the pose unchanged
/// and reports a collision. Rotations always succeed, STOP is the identity.
pub fn step_low(grid: &GridWorld, pose: Pose, action: LowLevelAction) -> (Pose, bool) {
    match action {
        LowLevelAction::Stop => (pose, false),
        LowLevelAction::RotateLeft => (
            Pose::from_steps(pose.x, pose.y, pose.heading_steps() + 1),
            false,
        ),
        LowLevelAction::RotateRight => (
            Pose::from_steps(pose.x, pose.y, pose.heading_steps() - 1),
            false,
        ),
        LowLevelAction::Forward => {
            let h = pose.heading();
            let nx = pose.x + FORWARD_STEP * h.cos();
            let ny = pose.y + FORWARD_STEP * h.sin();
            if grid.is_free_position(nx, ny) {
                (Pose::from_steps(nx, ny, pose.heading_steps()), false)
            } else {
                (pose, true)
            }
        }
    }
}

/// Result of following one waypoint displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointOutcome {
    pub pose: Pose,
    pub path: Vec<LowLevelAction>,
    pub collisions: usize,
}

/// Follow a displacement given in the agent frame (+x ahead, +y to the
/// left): rotate by the fewest 15° increments toward the displacement
/// direction, then issue ⌈|d| / 0.25⌉ FORWARDs, halting after the first
/// blocked one. An exact half-turn is taken counterclockwise.
pub fn execute_waypoint(
    grid: &GridWorld,
    pose: Pose,
    displacement: (f64, f64),
) -> Result<WaypointOutcome> {
    let (dx, dy) = displacement;
    let norm = (dx * dx + dy * dy).sqrt();
    if norm > DEFAULT_MAX_WAYPOINT + 1e-9 {
        return Err(Error::Parameter(format!(
            "waypoint displacement {norm:.3} m exceeds the {DEFAULT_MAX_WAYPOINT} m limit"
        )));
    }
    if norm < ZERO_DISPLACEMENT {
        return Ok(WaypointOutcome {
            pose,
            path: Vec::new(),
            collisions: 0,
        });
    }

    // Agent-frame angle → world heading, quantized to the nearest step.
    let world_angle = pose.heading() + dy.atan2(dx);
    let target_steps =
        ((world_angle / crate::navsim::grid::HEADING_STEP_RAD).round() as i32).rem_euclid(HEADING_STEPS);
    let mut diff = (target_steps - pose.heading_steps()).rem_euclid(HEADING_STEPS);
    let turn = if diff <= HEADING_STEPS / 2 {
        LowLevelAction::RotateLeft
    } else {
        diff = HEADING_STEPS - diff;
        LowLevelAction::RotateRight
    };

    let mut path = Vec::new();
    let mut current = pose;
    for _ in 0..diff {
        let (next, _) = step_low(grid, current, turn);
        current = next;
        path.push(turn);
    }

    let forwards = (norm / FORWARD_STEP).ceil() as usize;
    let mut collisions = 0;
    for _ in 0..forwards {
        let (next, collided) = step_low(grid, current, LowLevelAction::Forward);
        path.push(LowLevelAction::Forward);
        if collided {
            collisions += 1;
            break;
        }
        current = next;
    }

    Ok(WaypointOutcome {
        pose: current,
        path,
        collisions,
    })
}
