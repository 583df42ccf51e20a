//! Episode specifications and their line-oriented file format.

use crate::error::{Error, Result};
use crate::navsim::grid::Pose;
use std::fs;
use std::path::Path;

/// One navigation episode. The dense expert trajectory is populated during
/// demonstration planning; the on-disk format carries only the fields needed
/// to regenerate it deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub scene_path: String,
    pub start: Pose,
    pub goal: (f64, f64),
    pub tokens: Vec<String>,
    pub expert_dense: Vec<Pose>,
}

impl EpisodeSpec {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scene_path,
            self.start.x,
            self.start.y,
            self.start.heading_degrees(),
            self.goal.0,
            self.goal.1,
            self.tokens.join(" ")
        )
    }

    fn from_line(line: &str, origin: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::malformed(
                origin,
                format!("line {lineno}: expected 7 comma-separated fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| {
                Error::malformed(origin, format!("line {lineno}: bad {what} '{s}'"))
            })
        };
        let scene_path = fields[0].trim().to_string();
        if scene_path.is_empty() {
            return Err(Error::malformed(
                origin,
                format!("line {lineno}: empty scene path"),
            ));
        }
        let start_x = num(fields[1], "start_x")?;
        let start_y = num(fields[2], "start_y")?;
        let heading = num(fields[3], "start_heading_deg")?;
        let goal_x = num(fields[4], "goal_x")?;
        let goal_y = num(fields[5], "goal_y")?;
        let tokens: Vec<String> = fields[6]
            .split_whitespace()
            .map(|t| t.to_string())
            .collect();
        if tokens.is_empty() {
            return Err(Error::malformed(
                origin,
                format!("line {lineno}: empty instruction"),
            ));
        }
        Ok(EpisodeSpec {
            scene_path,
            start: Pose::from_degrees(start_x, start_y, heading),
            goal: (goal_x, goal_y),
            tokens,
            expert_dense: Vec::new(),
        })
    }
}

pub fn save_episodes(episodes: &[EpisodeSpec], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in episodes {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeSpec>> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut episodes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(EpisodeSpec::from_line(line, &origin, i + 1)?);
    }
    Ok(episodes)
}
