//! Planar continuous-navigation simulator: occupancy grids, low-level
//! actions, panoramic ray observations, and a geodesic-distance oracle.

pub mod action;
pub mod episode;
pub mod geodesic;
pub mod grid;
pub mod panorama;
pub mod scenegen;

pub use action::{
    execute_waypoint, step_low, LowLevelAction, WaypointOutcome, DEFAULT_MAX_WAYPOINT,
    FORWARD_STEP,
};
pub use episode::{load_episodes, save_episodes, EpisodeSpec};
pub use geodesic::{geodesic_distance, shortest_path, DistanceField};
pub use grid::{
    grid_from_rows, normalize_angle, GridWorld, Pose, SceneCategory, DEFAULT_CELL_SIZE,
    HEADING_STEPS, HEADING_STEP_RAD,
};
pub use panorama::{
    render_panorama, render_panorama_with_range, PanoObservation, View, ViewSemantic,
    DEFAULT_MAX_RANGE, NUM_VIEWS,
};
pub use scenegen::generate_scene;
