//! Template-grammar instruction generation from demonstrated trajectories.
//!
//! A demonstration is summarized as a clause sequence. Route-level
//! instructions emit one clause per direction change, naming the nearest
//! landmark within 2 m of the turn point or falling back to an ordinal
//! junction reference, and always end with a stop clause. Goal-only
//! instructions keep just the terminal clause, yielding deliberately
//! underspecified commands like "go to b".

use crate::error::{Error, Result};
use crate::instructgen::demo::DemoTrajectory;
use crate::instructgen::vocab::Vocab;
use crate::navsim::{GridWorld, HEADING_STEPS};

/// Maximum distance from a turn point or goal to a referenced landmark.
pub const LANDMARK_RADIUS: f64 = 2.0;
/// Maximum instruction length in tokens.
pub const MAX_INSTRUCTION_TOKENS: usize = 32;

/// How much route structure an instruction reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmbiguityMode {
    /// One clause per direction change plus a stop clause.
    RouteLevel,
    /// Only the terminal clause; the route is left unspecified.
    GoalOnly,
}

impl AmbiguityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AmbiguityMode::RouteLevel => "route_level",
            AmbiguityMode::GoalOnly => "goal_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "route_level" => Ok(AmbiguityMode::RouteLevel),
            "goal_only" => Ok(AmbiguityMode::GoalOnly),
            other => Err(Error::Parameter(format!(
                "unknown ambiguity mode {other:?} (expected route_level or goal_only)"
            ))),
        }
    }
}

/// A generated instruction as token strings plus vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
}

impl Instruction {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A direction change along the dense trajectory.
struct TurnEvent {
    position: (f64, f64),
    left: bool,
}

fn signed_step_diff(from: i32, to: i32) -> i32 {
    let half = HEADING_STEPS / 2;
    let mut d = (to - from).rem_euclid(HEADING_STEPS);
    if d > half {
        d -= HEADING_STEPS;
    }
    d
}

/// Extracts direction changes from the dense pose sequence. Heading changes
/// between consecutive FORWARD steps are merged into one event per turn, and
/// single-step (15 degree) corrections are ignored as steering noise.
fn detect_turns(traj: &DemoTrajectory) -> Vec<TurnEvent> {
    let mut events = Vec::new();
    let mut accum = 0i32;
    let mut turn_pos = (0.0, 0.0);
    for w in traj.dense.windows(2) {
        let diff = signed_step_diff(w[0].heading_steps(), w[1].heading_steps());
        if diff != 0 {
            if accum == 0 {
                turn_pos = w[0].position();
            }
            accum += diff;
        } else if accum != 0 {
            if accum.abs() >= 2 {
                events.push(TurnEvent {
                    position: turn_pos,
                    left: accum > 0,
                });
            }
            accum = 0;
        }
    }
    if accum.abs() >= 2 {
        events.push(TurnEvent {
            position: turn_pos,
            left: accum > 0,
        });
    }
    events
}

/// Nearest landmark to a point, if any lies within `radius` meters.
fn nearest_landmark_within(grid: &GridWorld, point: (f64, f64), radius: f64) -> Option<u8> {
    let mut best: Option<(f64, u8)> = None;
    for ((cx, cy), id) in grid.landmarks() {
        let center = grid.cell_center(cx, cy);
        let d = ((center.0 - point.0).powi(2) + (center.1 - point.1).powi(2)).sqrt();
        if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

fn turn_clause(grid: &GridWorld, event: &TurnEvent, ordinal: usize) -> Vec<String> {
    let dir = if event.left { "left" } else { "right" };
    match nearest_landmark_within(grid, event.position, LANDMARK_RADIUS) {
        Some(id) => vec![
            dir.to_string(),
            "at".to_string(),
            Vocab::landmark_token(id),
        ],
        None => vec![
            dir.to_string(),
            "at".to_string(),
            Vocab::ordinal_token(ordinal).to_string(),
            "junction".to_string(),
        ],
    }
}

fn stop_clause(grid: &GridWorld, goal: (f64, f64)) -> Vec<String> {
    match nearest_landmark_within(grid, goal, LANDMARK_RADIUS) {
        Some(id) => vec!["stop_at".to_string(), Vocab::landmark_token(id)],
        None => vec!["stop".to_string()],
    }
}

/// Generates an instruction for a demonstrated trajectory.
///
/// Route-level instructions read "forward, [left|right] at <ref>, ...,
/// stop_at <landmark>" where each turn references the nearest landmark
/// within 2 m or an ordinal junction when none is close enough. Goal-only
/// instructions are "go_to <landmark> stop" using the landmark nearest the
/// goal. Instructions always end with a stop clause and never exceed
/// [`MAX_INSTRUCTION_TOKENS`] tokens; excess turn clauses are dropped from
/// the tail while the stop clause is kept.
pub fn describe(
    grid: &GridWorld,
    traj: &DemoTrajectory,
    mode: AmbiguityMode,
    vocab: &Vocab,
) -> Result<Instruction> {
    let tokens = match mode {
        AmbiguityMode::GoalOnly => {
            let id = nearest_landmark_within(grid, traj.goal, f64::INFINITY).ok_or_else(|| {
                Error::EpisodeGeneration(
                    "goal-only instructions need at least one landmark in the scene".into(),
                )
            })?;
            vec![
                "go_to".to_string(),
                Vocab::landmark_token(id),
                "stop".to_string(),
            ]
        }
        AmbiguityMode::RouteLevel => {
            let stop = stop_clause(grid, traj.goal);
            let mut tokens = vec!["forward".to_string()];
            for (i, event) in detect_turns(traj).iter().enumerate() {
                let clause = turn_clause(grid, event, i);
                if tokens.len() + clause.len() + stop.len() > MAX_INSTRUCTION_TOKENS {
                    break;
                }
                tokens.extend(clause);
            }
            tokens.extend(stop);
            tokens
        }
    };
    let ids = vocab.encode(&tokens)?;
    Ok(Instruction { tokens, ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructgen::demo::plan_demo;
    use crate::navsim::{grid_from_rows, Pose, SceneCategory};

    fn contains_run(tokens: &[String], run: &[&str]) -> bool {
        tokens
            .windows(run.len())
            .any(|w| w.iter().map(String::as_str).eq(run.iter().copied()))
    }

    #[test]
    fn straight_path_to_landmark_reads_forward_stop_at() {
        let grid = grid_from_rows(
            &["#############", "#..........B#", "#############"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let goal = grid.cell_center(11, 1);
        let traj = plan_demo(&grid, Pose::new(0.375, 0.375, 0.0), goal).unwrap();
        let instr = describe(&grid, &traj, AmbiguityMode::RouteLevel, &Vocab::builtin()).unwrap();
        assert!(
            contains_run(&instr.tokens, &["forward", "stop_at", "b"]),
            "got {:?}",
            instr.tokens
        );
    }

    #[test]
    fn left_turn_near_landmark_reads_left_at_a() {
        let grid = grid_from_rows(
            &["######", "#...A#", "####.#", "####.#", "######"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let goal = grid.cell_center(4, 3);
        let traj = plan_demo(&grid, Pose::new(0.375, 0.375, 0.0), goal).unwrap();
        let instr = describe(&grid, &traj, AmbiguityMode::RouteLevel, &Vocab::builtin()).unwrap();
        assert!(
            contains_run(&instr.tokens, &["left", "at", "a"]),
            "got {:?}",
            instr.tokens
        );
    }

    #[test]
    fn right_turns_are_distinguished_from_left() {
        let grid = grid_from_rows(
            &["######", "####.#", "####.#", "#....#", "######"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let traj =
            plan_demo(&grid, Pose::new(0.375, 0.875, 0.0), grid.cell_center(4, 1)).unwrap();
        let instr = describe(&grid, &traj, AmbiguityMode::RouteLevel, &Vocab::builtin()).unwrap();
        assert!(
            contains_run(&instr.tokens, &["right", "at"]),
            "bending from +x toward smaller y is clockwise, got {:?}",
            instr.tokens
        );
        let back =
            plan_demo(&grid, Pose::from_steps(1.125, 0.375, 6), grid.cell_center(1, 3)).unwrap();
        let instr = describe(&grid, &back, AmbiguityMode::RouteLevel, &Vocab::builtin()).unwrap();
        assert!(
            contains_run(&instr.tokens, &["left", "at"]),
            "got {:?}",
            instr.tokens
        );
    }

    #[test]
    fn turn_without_nearby_landmark_uses_ordinal_junction() {
        let mut rows = vec!["##########".to_string()];
        rows.push("#........#".to_string());
        for _ in 0..8 {
            rows.push("########.#".to_string());
        }
        rows.push("#A.......#".to_string());
        rows.push("##########".to_string());
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        let grid = grid_from_rows(&rows, SceneCategory::NarrowSpace).unwrap();
        let goal = grid.cell_center(8, 9);
        let traj = plan_demo(&grid, Pose::new(0.375, 0.375, 0.0), goal).unwrap();
        let instr = describe(&grid, &traj, AmbiguityMode::RouteLevel, &Vocab::builtin()).unwrap();
        assert!(
            contains_run(&instr.tokens, &["at", "first", "junction"]),
            "turn is beyond 2 m from the only landmark, got {:?}",
            instr.tokens
        );
    }

    #[test]
    fn goal_only_is_short_and_names_the_goal_landmark() {
        let grid = grid_from_rows(
            &["#############", "#..........B#", "#############"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let goal = grid.cell_center(11, 1);
        let traj = plan_demo(&grid, Pose::new(0.375, 0.375, 0.0), goal).unwrap();
        let instr = describe(&grid, &traj, AmbiguityMode::GoalOnly, &Vocab::builtin()).unwrap();
        assert_eq!(instr.tokens, ["go_to", "b", "stop"]);
        assert!(instr.tokens.len() <= 4);
    }

    #[test]
    fn instructions_end_with_a_stop_clause_and_fit_the_length_cap() {
        let grid = grid_from_rows(
            &["######", "#...A#", "####.#", "####.#", "######"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let goal = grid.cell_center(4, 3);
        let traj = plan_demo(&grid, Pose::new(0.375, 0.375, 0.0), goal).unwrap();
        let vocab = Vocab::builtin();
        for mode in [AmbiguityMode::RouteLevel, AmbiguityMode::GoalOnly] {
            let instr = describe(&grid, &traj, mode, &vocab).unwrap();
            assert!(instr.tokens.len() <= MAX_INSTRUCTION_TOKENS);
            let last = instr.tokens.last().unwrap().as_str();
            let tail: Vec<&str> = instr.tokens.iter().rev().take(2).map(String::as_str).collect();
            assert!(
                last == "stop" || (tail.len() == 2 && tail[1] == "stop_at"),
                "got {:?}",
                instr.tokens
            );
            assert_eq!(vocab.decode(&instr.ids).unwrap(), instr.tokens);
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [AmbiguityMode::RouteLevel, AmbiguityMode::GoalOnly] {
            assert_eq!(AmbiguityMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert!(AmbiguityMode::parse("vague").is_err());
    }
}
