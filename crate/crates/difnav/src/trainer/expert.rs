//! The geodesic expert that labels visited states during DAgger.
//!
//! Given the agent's pose and the episode's sparse demonstration, the expert
//! first picks a target: the earliest demo waypoint strictly closer to the
//! goal (geodesically) than the agent, or the goal itself once none is.
//! Waypoints the agent already stands within the smallest candidate radius
//! of count as reached and are skipped; the candidate disc cannot resolve
//! anything closer. The expert then enumerates a fixed disc of candidate
//! displacements around the agent and returns the collision-free candidate
//! whose endpoint minimizes the geodesic distance to the target, breaking
//! ties by smaller rotation and then smaller radius. Staying put is always a
//! candidate, so an agent already at the goal gets the zero displacement.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::navsim::{DistanceField, GridWorld, Pose, DEFAULT_MAX_WAYPOINT};
use crate::trainer::data::to_world_frame;
use crate::trainer::DAggerConfig;

/// Geodesic score ties closer than this count as equal and fall through to
/// the rotation and radius tie-breakers.
const TIE_EPS: f64 = 1e-9;

/// The expert's answer for one visited state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertAction {
    /// Waypoint displacement in the agent frame, meters.
    pub displacement: (f64, f64),
    /// Set when every non-zero candidate endpoint was blocked.
    pub boxed_in: bool,
}

/// Smallest absolute rotation (radians) needed to face an agent-frame angle.
fn rotation_cost(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    a.min(TAU - a)
}

/// Labels the agent's state with the expert waypoint displacement.
pub fn expert_action(
    grid: &GridWorld,
    pose: &Pose,
    expert_sparse: &[Pose],
    goal: (f64, f64),
    cfg: &DAggerConfig,
) -> Result<ExpertAction> {
    cfg.validate()?;
    let goal_field = DistanceField::new(grid, goal)?;
    let here = pose.position();
    let agent_to_goal = goal_field
        .distance(here.0, here.1)
        .unwrap_or(f64::INFINITY);

    let acceptance = cfg
        .candidate_radii
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let target = expert_sparse
        .iter()
        .find(|w| {
            let reached = ((w.x - here.0).powi(2) + (w.y - here.1).powi(2)).sqrt() < acceptance;
            !reached
                && goal_field
                    .distance(w.x, w.y)
                    .is_some_and(|d| d < agent_to_goal)
        })
        .map(|w| w.position())
        .unwrap_or(goal);
    let target_field = DistanceField::new(grid, target)?;

    // Staying put is the baseline candidate: zero displacement, zero
    // rotation, zero radius.
    let mut best = (
        target_field
            .distance(here.0, here.1)
            .unwrap_or(f64::INFINITY),
        0.0,
        0.0,
    );
    let mut best_disp = (0.0, 0.0);
    let mut any_free = false;

    for j in 0..cfg.candidate_headings {
        let angle = j as f64 / cfg.candidate_headings as f64 * TAU;
        let (s, c) = angle.sin_cos();
        for &radius in &cfg.candidate_radii {
            let disp = (radius * c, radius * s);
            let world = to_world_frame(pose, disp);
            let endpoint = (here.0 + world.0, here.1 + world.1);
            let Some(score) = target_field.distance(endpoint.0, endpoint.1) else {
                continue;
            };
            any_free = true;
            let key = (score, rotation_cost(angle), radius);
            let better = key.0 < best.0 - TIE_EPS
                || (key.0 <= best.0 + TIE_EPS
                    && (key.1, key.2) < (best.1, best.2));
            if better {
                best = key;
                best_disp = disp;
            }
        }
    }

    Ok(ExpertAction {
        displacement: best_disp,
        boxed_in: !any_free,
    })
}

/// Validates the candidate disc against the simulator's waypoint limit.
pub(crate) fn validate_candidates(cfg: &DAggerConfig) -> Result<()> {
    if cfg.candidate_headings == 0 {
        return Err(Error::Config("candidate disc needs at least 1 heading".into()));
    }
    if cfg.candidate_radii.is_empty() {
        return Err(Error::Config("candidate disc needs at least 1 radius".into()));
    }
    for &r in &cfg.candidate_radii {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::Config(format!("candidate radius {r} must be positive")));
        }
        if r > cfg.expert_radius + TIE_EPS {
            return Err(Error::Config(format!(
                "candidate radius {r} exceeds the expert search radius {}",
                cfg.expert_radius
            )));
        }
        if r > DEFAULT_MAX_WAYPOINT + TIE_EPS {
            return Err(Error::Config(format!(
                "candidate radius {r} exceeds the {DEFAULT_MAX_WAYPOINT} m waypoint limit"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructgen::{plan_demo, sparsify, DemoTrajectory};
    use crate::navsim::{
        execute_waypoint, geodesic_distance, grid_from_rows, SceneCategory, FORWARD_STEP,
    };

    fn cell_center(col: usize, row: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * FORWARD_STEP,
            (row as f64 + 0.5) * FORWARD_STEP,
        )
    }

    fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
        (b.0 - a.0).hypot(b.1 - a.1)
    }

    fn corridor() -> GridWorld {
        grid_from_rows(
            &["############", "#..........#", "############"],
            SceneCategory::NarrowSpace,
        )
        .unwrap()
    }

    fn open_area() -> GridWorld {
        let row = format!("#{}#", ".".repeat(14));
        let wall = "#".repeat(16);
        let mut rows = vec![wall.clone()];
        rows.extend((0..10).map(|_| row.clone()));
        rows.push(wall);
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        grid_from_rows(&refs, SceneCategory::OpenArea).unwrap()
    }

    fn demo_on(grid: &GridWorld, start: (f64, f64), goal: (f64, f64)) -> DemoTrajectory {
        let dense = plan_demo(grid, Pose::new(start.0, start.1, 0.0), goal).unwrap();
        sparsify(grid, &dense, 2).unwrap()
    }

    #[test]
    fn on_path_agent_is_sent_to_the_next_waypoint() {
        let grid = corridor();
        let goal = cell_center(10, 1);
        let demo = demo_on(&grid, cell_center(1, 1), goal);
        let cfg = DAggerConfig::default();

        let pose = demo.sparse[1];
        let next = demo.sparse[2];
        assert!((euclid(pose.position(), next.position()) - 0.5).abs() < 1e-9);

        let expert = expert_action(&grid, &pose, &demo.sparse, goal, &cfg).unwrap();
        assert!(!expert.boxed_in);
        let world = to_world_frame(&pose, expert.displacement);
        let endpoint = (pose.x + world.0, pose.y + world.1);
        assert!(euclid(endpoint, next.position()) < 1e-9);
    }

    #[test]
    fn laterally_displaced_agent_strictly_improves_on_staying() {
        let grid = open_area();
        let start = cell_center(2, 5);
        let goal = cell_center(13, 5);
        let demo = demo_on(&grid, start, goal);
        let cfg = DAggerConfig::default();

        let on_path = demo.sparse[2];
        let pose = Pose::from_steps(on_path.x, on_path.y + 0.5, on_path.heading_steps());
        let expert = expert_action(&grid, &pose, &demo.sparse, goal, &cfg).unwrap();
        assert!(!expert.boxed_in);

        let agent_to_goal = geodesic_distance(&grid, pose.position(), goal)
            .unwrap()
            .unwrap();
        let target = demo
            .sparse
            .iter()
            .find(|w| {
                geodesic_distance(&grid, w.position(), goal)
                    .unwrap()
                    .is_some_and(|d| d < agent_to_goal)
            })
            .unwrap()
            .position();

        let world = to_world_frame(&pose, expert.displacement);
        let endpoint = (pose.x + world.0, pose.y + world.1);
        let moved = geodesic_distance(&grid, endpoint, target).unwrap().unwrap();
        let stayed = geodesic_distance(&grid, pose.position(), target)
            .unwrap()
            .unwrap();
        assert!(moved < stayed - 1e-9, "moved {moved} vs stayed {stayed}");
    }

    #[test]
    fn waypoint_within_the_smallest_radius_is_skipped_not_stalled_on() {
        let grid = open_area();
        let start = cell_center(2, 5);
        let goal = cell_center(13, 5);
        let demo = demo_on(&grid, start, goal);
        let cfg = DAggerConfig::default();

        let w = demo.sparse[3];
        let pose = Pose::new(w.x - 0.05, w.y + 0.07, 0.0);
        let agent_to_goal = geodesic_distance(&grid, pose.position(), goal)
            .unwrap()
            .unwrap();
        let w_to_goal = geodesic_distance(&grid, w.position(), goal)
            .unwrap()
            .unwrap();
        assert!(w_to_goal < agent_to_goal);
        assert!(euclid(pose.position(), w.position()) < 0.25);

        let expert = expert_action(&grid, &pose, &demo.sparse, goal, &cfg).unwrap();
        assert_ne!(expert.displacement, (0.0, 0.0), "expert stalled on a reached waypoint");

        let world = to_world_frame(&pose, expert.displacement);
        let endpoint = (pose.x + world.0, pose.y + world.1);
        let after = geodesic_distance(&grid, endpoint, goal).unwrap().unwrap();
        assert!(after < agent_to_goal - 1e-9, "no goal progress: {after} vs {agent_to_goal}");
    }

    #[test]
    fn agent_at_the_goal_gets_the_zero_displacement() {
        let grid = corridor();
        let goal = cell_center(10, 1);
        let demo = demo_on(&grid, cell_center(1, 1), goal);
        let cfg = DAggerConfig::default();
        let pose = Pose::new(goal.0, goal.1, 0.0);
        let expert = expert_action(&grid, &pose, &demo.sparse, goal, &cfg).unwrap();
        assert_eq!(expert.displacement, (0.0, 0.0));
        assert!(!expert.boxed_in);
    }

    #[test]
    fn pocketed_agent_is_boxed_in() {
        let grid = grid_from_rows(&["###", "#.#", "###"], SceneCategory::Maze).unwrap();
        let pose_xy = cell_center(1, 1);
        let pose = Pose::new(pose_xy.0, pose_xy.1, 0.0);
        let cfg = DAggerConfig::default();
        let expert = expert_action(&grid, &pose, &[pose], pose_xy, &cfg).unwrap();
        assert_eq!(expert.displacement, (0.0, 0.0));
        assert!(expert.boxed_in);
    }

    #[test]
    fn expert_rollout_reaches_every_generated_goal() {
        use crate::instructgen::{build_dataset, DatasetConfig, Vocab};

        let vocab = Vocab::builtin();
        let dataset = build_dataset(
            &DatasetConfig {
                scenes_per_category: 1,
                episodes_per_scene: 2,
                ..DatasetConfig::default()
            },
            &vocab,
        )
        .unwrap();
        let cfg = DAggerConfig::default();

        for example in &dataset.examples {
            let grid = &dataset.scene(&example.scene_id).unwrap().grid;
            let goal = example.episode.goal;
            let mut pose = example.episode.start;
            let mut best = euclid(pose.position(), goal);
            for _ in 0..120 {
                let expert =
                    expert_action(grid, &pose, &example.demo.sparse, goal, &cfg).unwrap();
                let norm = expert.displacement.0.hypot(expert.displacement.1);
                if norm < 1e-9 {
                    break;
                }
                pose = execute_waypoint(grid, pose, expert.displacement)
                    .unwrap()
                    .pose;
                best = best.min(euclid(pose.position(), goal));
            }
            assert!(
                best <= 0.5,
                "expert stalled {best:.3} m from the goal on {}",
                example.scene_id
            );
        }
    }

    #[test]
    fn candidate_disc_validation_catches_bad_radii() {
        let cfg = DAggerConfig {
            candidate_radii: vec![0.25, 2.0],
            ..DAggerConfig::default()
        };
        assert!(expert_action(
            &corridor(),
            &Pose::new(0.375, 0.375, 0.0),
            &[],
            (0.625, 0.375),
            &cfg
        )
        .is_err());
    }
}
