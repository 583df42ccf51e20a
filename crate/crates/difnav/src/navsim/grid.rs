//! Occupancy-grid world and poses.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

pub const DEFAULT_CELL_SIZE: f64 = 0.25;
/// Heading is quantized to 15° steps; 24 of them make a full turn.
pub const HEADING_STEPS: i32 = 24;
pub const HEADING_STEP_RAD: f64 = PI / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneCategory {
    OpenArea,
    NarrowSpace,
    Maze,
}

impl SceneCategory {
    pub const ALL: [SceneCategory; 3] = [
        SceneCategory::OpenArea,
        SceneCategory::NarrowSpace,
        SceneCategory::Maze,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneCategory::OpenArea => "open_area",
            SceneCategory::NarrowSpace => "narrow_space",
            SceneCategory::Maze => "maze",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "open_area" => Ok(SceneCategory::OpenArea),
            "narrow_space" => Ok(SceneCategory::NarrowSpace),
            "maze" => Ok(SceneCategory::Maze),
            other => Err(Error::Config(format!(
                "unknown scene category '{other}' (expected open_area, narrow_space, or maze)"
            ))),
        }
    }
}

impl std::fmt::Display for SceneCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Continuous position with a heading quantized to 15° steps.
/// Step 0 points along +x; positive steps turn counterclockwise (toward +y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    steps: i32,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading_rad: f64) -> Self {
        let steps = (heading_rad / HEADING_STEP_RAD).round() as i32;
        Pose::from_steps(x, y, steps)
    }

    pub fn from_steps(x: f64, y: f64, steps: i32) -> Self {
        Pose {
            x,
            y,
            steps: steps.rem_euclid(HEADING_STEPS),
        }
    }

    pub fn from_degrees(x: f64, y: f64, heading_deg: f64) -> Self {
        Pose::from_steps(x, y, (heading_deg / 15.0).round() as i32)
    }

    /// Heading in radians, normalized to [0, 2π).
    pub fn heading(&self) -> f64 {
        self.steps as f64 * HEADING_STEP_RAD
    }

    pub fn heading_steps(&self) -> i32 {
        self.steps
    }

    pub fn heading_degrees(&self) -> f64 {
        self.steps as f64 * 15.0
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Normalize an angle to [0, 2π).
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r == TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cell_size: f64,
    occupancy: Vec<bool>,
    landmarks: BTreeMap<(usize, usize), u8>,
    category: SceneCategory,
}

impl GridWorld {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        occupancy: Vec<bool>,
        landmarks: BTreeMap<(usize, usize), u8>,
        category: SceneCategory,
    ) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::Parameter(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        if cell_size <= 0.0 {
            return Err(Error::Parameter(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if occupancy.len() != width * height {
            return Err(Error::Parameter(format!(
                "occupancy has {} cells for a {width}x{height} grid",
                occupancy.len()
            )));
        }
        let grid = GridWorld {
            width,
            height,
            cell_size,
            occupancy,
            landmarks,
            category,
        };
        for x in 0..width {
            if !grid.is_occupied(x as i64, 0) || !grid.is_occupied(x as i64, height as i64 - 1) {
                return Err(Error::Parameter("border cells must be occupied".into()));
            }
        }
        for y in 0..height {
            if !grid.is_occupied(0, y as i64) || !grid.is_occupied(width as i64 - 1, y as i64) {
                return Err(Error::Parameter("border cells must be occupied".into()));
            }
        }
        if !grid.occupancy.iter().any(|&o| !o) {
            return Err(Error::Parameter("grid has no free cell".into()));
        }
        for (&(cx, cy), &id) in &grid.landmarks {
            if grid.is_occupied(cx as i64, cy as i64) {
                return Err(Error::Parameter(format!(
                    "landmark '{}' at ({cx}, {cy}) sits on an occupied cell",
                    (b'A' + id) as char
                )));
            }
            if id >= 26 {
                return Err(Error::Parameter(format!("landmark id {id} out of range")));
            }
        }
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn category(&self) -> SceneCategory {
        self.category
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.width + cx
    }

    /// Out-of-bounds counts as occupied.
    pub fn is_occupied(&self, cx: i64, cy: i64) -> bool {
        if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
            return true;
        }
        self.occupancy[cy as usize * self.width + cx as usize]
    }

    /// Cell containing a continuous position, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as usize;
        let cy = (y / self.cell_size).floor() as usize;
        if cx >= self.width || cy >= self.height {
            return None;
        }
        Some((cx, cy))
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        (
            (cx as f64 + 0.5) * self.cell_size,
            (cy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free_position(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((cx, cy)) => !self.is_occupied(cx as i64, cy as i64),
            None => false,
        }
    }

    pub fn landmark_at(&self, cx: usize, cy: usize) -> Option<u8> {
        self.landmarks.get(&(cx, cy)).copied()
    }

    /// Landmarks in deterministic (cell-sorted) order.
    pub fn landmarks(&self) -> impl Iterator<Item = ((usize, usize), u8)> + '_ {
        self.landmarks.iter().map(|(&cell, &id)| (cell, id))
    }

    pub fn landmark_cell(&self, id: u8) -> Option<(usize, usize)> {
        self.landmarks
            .iter()
            .find(|&(_, &lid)| lid == id)
            .map(|(&cell, _)| cell)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |cy| {
            (0..self.width).filter_map(move |cx| {
                if self.occupancy[cy * self.width + cx] {
                    None
                } else {
                    Some((cx, cy))
                }
            })
        })
    }

    /// Serialize to the scene text format:
    /// header "cells W H cell_size", then H rows of '#', '.', 'A'-'Z'.
    pub fn to_scene_text(&self) -> String {
        let mut out = format!("cells {} {} {}\n", self.width, self.height, self.cell_size);
        for cy in 0..self.height {
            for cx in 0..self.width {
                let ch = if self.occupancy[cy * self.width + cx] {
                    '#'
                } else if let Some(id) = self.landmark_at(cx, cy) {
                    (b'A' + id) as char
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_scene_text())?;
        Ok(())
    }

    pub fn from_scene_text(text: &str, origin: &str, category: SceneCategory) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed(origin, "empty scene file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "cells" {
            return Err(Error::malformed(
                origin,
                "header must be 'cells W H cell_size'",
            ));
        }
        let width: usize = fields[1]
            .parse()
            .map_err(|_| Error::malformed(origin, "bad width in header"))?;
        let height: usize = fields[2]
            .parse()
            .map_err(|_| Error::malformed(origin, "bad height in header"))?;
        let cell_size: f64 = fields[3]
            .parse()
            .map_err(|_| Error::malformed(origin, "bad cell size in header"))?;

        let mut occupancy = vec![false; width * height];
        let mut landmarks = BTreeMap::new();
        let mut rows = 0;
        for (cy, line) in lines.enumerate() {
            if cy >= height {
                return Err(Error::malformed(origin, "more rows than header declares"));
            }
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(Error::malformed(
                    origin,
                    format!("row {cy} has {} cells, expected {width}", chars.len()),
                ));
            }
            for (cx, &ch) in chars.iter().enumerate() {
                match ch {
                    '#' => occupancy[cy * width + cx] = true,
                    '.' => {}
                    'A'..='Z' => {
                        landmarks.insert((cx, cy), ch as u8 - b'A');
                    }
                    other => {
                        return Err(Error::malformed(
                            origin,
                            format!("unexpected cell character '{other}' at ({cx}, {cy})"),
                        ));
                    }
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(Error::malformed(
                origin,
                format!("scene has {rows} rows, header declares {height}"),
            ));
        }
        GridWorld::new(width, height, cell_size, occupancy, landmarks, category)
    }

    /// Load a scene file. The format does not carry the category, so the
    /// caller supplies it (datasets track it in their manifest).
    pub fn load(path: &Path, category: SceneCategory) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_scene_text(&text, &path.display().to_string(), category)
    }
}

/// Build a grid from ASCII art rows (no header), mainly for tests.
pub fn grid_from_rows(rows: &[&str], category: SceneCategory) -> Result<GridWorld> {
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.chars().count());
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    let text = format!("cells {width} {height} {DEFAULT_CELL_SIZE}\n{body}");
    GridWorld::from_scene_text(&text, "<inline>", category)
}
