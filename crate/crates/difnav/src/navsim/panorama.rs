//! Panoramic depth/semantic observations via grid ray casting.

use crate::navsim::grid::{GridWorld, Pose, HEADING_STEPS, HEADING_STEP_RAD};

pub const NUM_VIEWS: usize = 12;
pub const DEFAULT_MAX_RANGE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSemantic {
    Open,
    Wall,
    Landmark(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    /// Distance to the first occupied cell boundary, capped at max range.
    pub depth: f64,
    pub semantic: ViewSemantic,
    /// Unit-norm encoding (sin θ, cos θ) of the absolute view heading.
    pub sin: f64,
    pub cos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoObservation {
    pub views: [View; NUM_VIEWS],
}

pub fn render_panorama(grid: &GridWorld, pose: Pose) -> PanoObservation {
    render_panorama_with_range(grid, pose, DEFAULT_MAX_RANGE)
}

pub fn render_panorama_with_range(
    grid: &GridWorld,
    pose: Pose,
    max_range: f64,
) -> PanoObservation {
    let views = std::array::from_fn(|k| {
        // Views sit 30° apart, i.e. two heading steps. Deriving the angle
        // from the combined step index keeps a 30° pose rotation exactly a
        // cyclic shift of the views, bit for bit.
        let step_index = (pose.heading_steps() + 2 * k as i32).rem_euclid(HEADING_STEPS);
        let angle = step_index as f64 * HEADING_STEP_RAD;
        let (depth, semantic) = cast_ray(grid, pose.x, pose.y, angle, max_range);
        View {
            depth,
            semantic,
            sin: angle.sin(),
            cos: angle.cos(),
        }
    });
    PanoObservation { views }
}

/// March a ray through the grid (DDA over cell boundaries) and return the
/// distance to the first occupied cell plus its semantic class.
fn cast_ray(grid: &GridWorld, x: f64, y: f64, angle: f64, max_range: f64) -> (f64, ViewSemantic) {
    let cell = grid.cell_size();
    // Work in cell units.
    let px = x / cell;
    let py = y / cell;
    let dx = angle.cos();
    let dy = angle.sin();
    let max_t = max_range / cell;

    let mut cx = px.floor() as i64;
    let mut cy = py.floor() as i64;

    let (step_x, mut t_max_x, t_delta_x) = if dx > 0.0 {
        (1i64, (cx as f64 + 1.0 - px) / dx, 1.0 / dx)
    } else if dx < 0.0 {
        (-1i64, (px - cx as f64) / -dx, 1.0 / -dx)
    } else {
        (0i64, f64::INFINITY, f64::INFINITY)
    };
    let (step_y, mut t_max_y, t_delta_y) = if dy > 0.0 {
        (1i64, (cy as f64 + 1.0 - py) / dy, 1.0 / dy)
    } else if dy < 0.0 {
        (-1i64, (py - cy as f64) / -dy, 1.0 / -dy)
    } else {
        (0i64, f64::INFINITY, f64::INFINITY)
    };

    loop {
        let t = t_max_x.min(t_max_y);
        if t > max_t {
            return (max_range, ViewSemantic::Open);
        }
        if t_max_x <= t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        if grid.is_occupied(cx, cy) {
            return (t * cell, hit_semantic(grid, cx, cy));
        }
    }
}

/// A wall cell 8-adjacent to a landmark cell reports that landmark; ties go
/// to the smallest id.
fn hit_semantic(grid: &GridWorld, cx: i64, cy: i64) -> ViewSemantic {
    let mut best: Option<u8> = None;
    for ny in cy - 1..=cy + 1 {
        for nx in cx - 1..=cx + 1 {
            if nx < 0 || ny < 0 {
                continue;
            }
            if let Some(id) = grid.landmark_at(nx as usize, ny as usize) {
                best = Some(best.map_or(id, |b| b.min(id)));
            }
        }
    }
    match best {
        Some(id) => ViewSemantic::Landmark(id),
        None => ViewSemantic::Wall,
    }
}
