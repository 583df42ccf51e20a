//! Dataset assembly: scenes, demonstrations, instructions, and splits.
//!
//! [`build_dataset`] generates scenes per category, samples episodes on each
//! scene, plans expert demonstrations, sparsifies them into waypoint labels,
//! and describes each trajectory with the template grammar. Scenes are
//! partitioned into train and val-unseen sets (the last scene of every
//! category is held out), and the last episode on every training scene is
//! held out as val-seen, so evaluation covers both familiar and novel
//! layouts. Everything is a pure function of the configuration, so the same
//! seed always yields a bit-identical dataset.
//!
//! On disk a dataset is a manifest file of line-oriented records pointing at
//! scene files and per-split episode files, plus a copy of the vocabulary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::instructgen::demo::{plan_demo, sparsify, DemoTrajectory};
use crate::instructgen::describe::{describe, AmbiguityMode, Instruction};
use crate::instructgen::vocab::Vocab;
use crate::navsim::{
    generate_scene, load_episodes, save_episodes, EpisodeSpec, GridWorld, Pose, SceneCategory,
    HEADING_STEPS,
};
use crate::rng::{derive_seed, stream, Digest};

/// Geodesic start-goal distance window for sampled episodes, in meters.
const MIN_GEODESIC: f64 = 1.0;
const MAX_GEODESIC: f64 = 4.5;
/// Sampling attempts per episode before giving up.
const MAX_EPISODE_ATTEMPTS: usize = 100;

/// Dataset split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValSeen, Split::ValUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val_seen" => Ok(Split::ValSeen),
            "val_unseen" => Ok(Split::ValUnseen),
            other => Err(Error::Parameter(format!(
                "unknown split {other:?} (expected train, val_seen, or val_unseen)"
            ))),
        }
    }
}

/// Sizing and seeding for dataset generation.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub categories: Vec<SceneCategory>,
    pub scenes_per_category: usize,
    pub episodes_per_scene: usize,
    /// Waypoint sparsification stride.
    pub n: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            categories: SceneCategory::ALL.to_vec(),
            scenes_per_category: 4,
            episodes_per_scene: 6,
            n: 2,
            seed: 7,
        }
    }
}

/// A generated scene with its stable identifier.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub category: SceneCategory,
    pub grid: GridWorld,
    pub unseen: bool,
}

/// One dataset entry: the episode, its demonstration, and its instruction.
#[derive(Debug, Clone)]
pub struct DatasetExample {
    pub scene_id: String,
    pub split: Split,
    pub mode: AmbiguityMode,
    pub episode: EpisodeSpec,
    pub demo: DemoTrajectory,
    pub instruction: Instruction,
}

/// A complete generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<SceneRecord>,
    pub examples: Vec<DatasetExample>,
    pub n: usize,
    pub seed: u64,
}

impl Dataset {
    /// Examples belonging to one split, in generation order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    /// Scene record by id.
    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    /// Content fingerprint covering scenes, episodes, demonstrations, and
    /// instructions. Equal datasets have equal digests.
    pub fn digest(&self) -> u64 {
        let mut d = Digest::new();
        d.update_u64(self.seed);
        d.update_u64(self.n as u64);
        for scene in &self.scenes {
            d.update_str(&scene.id);
            d.update_str(scene.category.as_str());
            d.update_str(&scene.grid.to_scene_text());
            d.update_u64(scene.unseen as u64);
        }
        for ex in &self.examples {
            d.update_str(&ex.scene_id);
            d.update_str(ex.split.as_str());
            d.update_str(ex.mode.as_str());
            for pose in &ex.demo.sparse {
                d.update_f64(pose.x);
                d.update_f64(pose.y);
                d.update_u64(pose.heading_steps() as u64);
            }
            d.update_f64(ex.episode.goal.0);
            d.update_f64(ex.episode.goal.1);
            for id in &ex.instruction.ids {
                d.update_u64(*id as u64);
            }
        }
        d.finish()
    }
}

fn scene_id(category: SceneCategory, index: usize) -> String {
    format!("{}-{:02}", category.as_str(), index)
}

/// Samples one episode on a scene: a free start pose and a reachable goal
/// whose geodesic distance falls in the episode window, then plans, labels,
/// and describes the demonstration. Bounded retries absorb unreachable or
/// out-of-window draws.
fn sample_episode(
    scene: &SceneRecord,
    split: Split,
    n: usize,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<DatasetExample> {
    let grid = &scene.grid;
    let free: Vec<(usize, usize)> = grid.free_cells().collect();
    let landmarks: Vec<(usize, usize)> = grid.landmarks().map(|(cell, _)| cell).collect();
    let mode = if rng.gen_bool(0.5) {
        AmbiguityMode::RouteLevel
    } else {
        AmbiguityMode::GoalOnly
    };
    for _ in 0..MAX_EPISODE_ATTEMPTS {
        let (sx, sy) = free[rng.gen_range(0..free.len())];
        let heading = rng.gen_range(0..HEADING_STEPS);
        let (px, py) = grid.cell_center(sx, sy);
        let start = Pose::from_steps(px, py, heading);
        let goal_cell = match mode {
            AmbiguityMode::GoalOnly => landmarks[rng.gen_range(0..landmarks.len())],
            AmbiguityMode::RouteLevel => free[rng.gen_range(0..free.len())],
        };
        if goal_cell == (sx, sy) {
            continue;
        }
        let goal = grid.cell_center(goal_cell.0, goal_cell.1);
        let Ok(traj) = plan_demo(grid, start, goal) else {
            continue;
        };
        let walked = traj.dense_length();
        if !(MIN_GEODESIC..=MAX_GEODESIC).contains(&walked) {
            continue;
        }
        let demo = sparsify(grid, &traj, n)?;
        let instruction = describe(grid, &demo, mode, vocab)?;
        let episode = EpisodeSpec {
            scene_path: format!("scenes/{}.scene", scene.id),
            start,
            goal,
            tokens: instruction.tokens.clone(),
            expert_dense: demo.dense.clone(),
        };
        return Ok(DatasetExample {
            scene_id: scene.id.clone(),
            split,
            mode,
            episode,
            demo,
            instruction,
        });
    }
    Err(Error::EpisodeGeneration(format!(
        "no valid episode found on scene {} after {MAX_EPISODE_ATTEMPTS} attempts",
        scene.id
    )))
}

/// Builds a complete dataset from the configuration.
///
/// The last scene of every category is held out as val-unseen (when the
/// category has at least two scenes), and the last episode on every training
/// scene is held out as val-seen (when scenes have at least two episodes).
/// The dataset holds exactly `categories * scenes_per_category *
/// episodes_per_scene` examples and is bit-identical for equal
/// configurations.
pub fn build_dataset(config: &DatasetConfig, vocab: &Vocab) -> Result<Dataset> {
    if config.categories.is_empty() {
        return Err(Error::Parameter("at least one scene category is required".into()));
    }
    if config.scenes_per_category < 1 || config.episodes_per_scene < 1 {
        return Err(Error::Parameter(
            "scenes_per_category and episodes_per_scene must be at least 1".into(),
        ));
    }
    if config.n < 1 {
        return Err(Error::Parameter("waypoint stride must be at least 1".into()));
    }
    let mut scenes = Vec::new();
    let mut examples = Vec::new();
    for (cat_idx, &category) in config.categories.iter().enumerate() {
        for scene_idx in 0..config.scenes_per_category {
            let scene_seed = derive_seed(
                config.seed,
                "dataset-scene",
                (cat_idx as u64) * 1_000 + scene_idx as u64,
            );
            let unseen =
                config.scenes_per_category >= 2 && scene_idx == config.scenes_per_category - 1;
            let scene = SceneRecord {
                id: scene_id(category, scene_idx),
                category,
                grid: generate_scene(category, scene_seed),
                unseen,
            };
            for ep_idx in 0..config.episodes_per_scene {
                let split = if scene.unseen {
                    Split::ValUnseen
                } else if config.episodes_per_scene >= 2 && ep_idx == config.episodes_per_scene - 1
                {
                    Split::ValSeen
                } else {
                    Split::Train
                };
                let stream_index =
                    ((cat_idx as u64) * 1_000 + scene_idx as u64) * 1_000 + ep_idx as u64;
                let mut rng = stream(config.seed, "dataset-episode", stream_index);
                examples.push(sample_episode(&scene, split, config.n, vocab, &mut rng)?);
            }
            scenes.push(scene);
        }
    }
    Ok(Dataset {
        scenes,
        examples,
        n: config.n,
        seed: config.seed,
    })
}

/// Writes a dataset to `dir` and returns the manifest path.
///
/// Layout: `manifest.txt`, `vocab.txt`, one scene file per scene under
/// `scenes/`, and one episode file per split under `episodes/`. The manifest
/// is line oriented: a header line, `seed`/`stride` records, one `scene`
/// record per scene (category, id, unseen flag, path), and one `episodes`
/// record per split.
pub fn save_dataset(dataset: &Dataset, vocab: &Vocab, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("scenes"))?;
    std::fs::create_dir_all(dir.join("episodes"))?;
    vocab.save(&dir.join("vocab.txt"))?;
    let mut manifest = String::from("difnav-dataset v1\n");
    let _ = writeln!(manifest, "seed {}", dataset.seed);
    let _ = writeln!(manifest, "stride {}", dataset.n);
    let _ = writeln!(manifest, "vocab vocab.txt");
    for scene in &dataset.scenes {
        let rel = format!("scenes/{}.scene", scene.id);
        scene.grid.save(&dir.join(&rel))?;
        let _ = writeln!(
            manifest,
            "scene {} {} {} {}",
            scene.category.as_str(),
            scene.id,
            if scene.unseen { "unseen" } else { "seen" },
            rel
        );
    }
    for split in Split::ALL {
        let episodes: Vec<EpisodeSpec> =
            dataset.split(split).map(|e| e.episode.clone()).collect();
        let rel = format!("episodes/{}.episodes", split.as_str());
        save_episodes(&episodes, &dir.join(&rel))?;
        let _ = writeln!(manifest, "episodes {} {}", split.as_str(), rel);
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

/// Reloads a dataset from its manifest, re-planning demonstrations from the
/// stored episodes. Regeneration is deterministic, so the reloaded dataset
/// matches the saved one exactly.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let origin = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines();
    match lines.next() {
        Some("difnav-dataset v1") => {}
        other => {
            return Err(Error::malformed(
                &origin,
                format!("unexpected manifest header {other:?}"),
            ))
        }
    }
    let mut seed = None;
    let mut stride = None;
    let mut vocab = None;
    let mut scenes = Vec::new();
    let mut episode_files = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => {}
            ["seed", v] => {
                seed = Some(v.parse::<u64>().map_err(|_| {
                    Error::malformed(&origin, format!("line {}: bad seed", lineno + 1))
                })?)
            }
            ["stride", v] => {
                stride = Some(v.parse::<usize>().map_err(|_| {
                    Error::malformed(&origin, format!("line {}: bad stride", lineno + 1))
                })?)
            }
            ["vocab", rel] => vocab = Some(Vocab::load(&dir.join(rel))?),
            ["scene", category, id, flag, rel] => {
                let category = SceneCategory::parse(category)?;
                let grid = GridWorld::load(&dir.join(rel), category)?;
                scenes.push(SceneRecord {
                    id: id.to_string(),
                    category,
                    grid,
                    unseen: *flag == "unseen",
                });
            }
            ["episodes", split, rel] => {
                episode_files.push((Split::parse(split)?, dir.join(rel)));
            }
            _ => {
                return Err(Error::malformed(
                    &origin,
                    format!("line {}: unrecognized record {line:?}", lineno + 1),
                ))
            }
        }
    }
    let seed = seed.ok_or_else(|| Error::malformed(&origin, "missing seed record"))?;
    let n = stride.ok_or_else(|| Error::malformed(&origin, "missing stride record"))?;
    let vocab = vocab.ok_or_else(|| Error::malformed(&origin, "missing vocab record"))?;

    let mut examples = Vec::new();
    for (split, path) in episode_files {
        for episode in load_episodes(&path)? {
            let id = episode
                .scene_path
                .strip_prefix("scenes/")
                .and_then(|p| p.strip_suffix(".scene"))
                .unwrap_or(&episode.scene_path);
            let scene = scenes.iter().find(|s| s.id == id).ok_or_else(|| {
                Error::malformed(&origin, format!("episode references unknown scene {id:?}"))
            })?;
            let traj = plan_demo(&scene.grid, episode.start, episode.goal)?;
            let demo = sparsify(&scene.grid, &traj, n)?;
            let mode = if episode.tokens.first().map(String::as_str) == Some("go_to") {
                AmbiguityMode::GoalOnly
            } else {
                AmbiguityMode::RouteLevel
            };
            let ids = vocab.encode(&episode.tokens)?;
            let instruction = Instruction {
                tokens: episode.tokens.clone(),
                ids,
            };
            let episode = EpisodeSpec {
                expert_dense: demo.dense.clone(),
                ..episode
            };
            examples.push(DatasetExample {
                scene_id: scene.id.clone(),
                split,
                mode,
                episode,
                demo,
                instruction,
            });
        }
    }
    Ok(Dataset {
        scenes,
        examples,
        n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navsim::execute_waypoint;

    fn small_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            categories: SceneCategory::ALL.to_vec(),
            scenes_per_category: 2,
            episodes_per_scene: 3,
            n: 2,
            seed,
        }
    }

    #[test]
    fn same_seed_gives_identical_digest() {
        let vocab = Vocab::builtin();
        let a = build_dataset(&small_config(11), &vocab).unwrap();
        let b = build_dataset(&small_config(11), &vocab).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = build_dataset(&small_config(12), &vocab).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn dataset_size_is_the_configured_product() {
        let vocab = Vocab::builtin();
        let config = small_config(3);
        let dataset = build_dataset(&config, &vocab).unwrap();
        assert_eq!(
            dataset.examples.len(),
            config.categories.len() * config.scenes_per_category * config.episodes_per_scene
        );
        assert_eq!(
            dataset.scenes.len(),
            config.categories.len() * config.scenes_per_category
        );
    }

    #[test]
    fn val_unseen_scenes_are_disjoint_from_train() {
        let vocab = Vocab::builtin();
        let dataset = build_dataset(&small_config(5), &vocab).unwrap();
        let train: Vec<&str> = dataset
            .split(Split::Train)
            .map(|e| e.scene_id.as_str())
            .collect();
        let unseen: Vec<&str> = dataset
            .split(Split::ValUnseen)
            .map(|e| e.scene_id.as_str())
            .collect();
        assert!(!train.is_empty() && !unseen.is_empty());
        for id in &unseen {
            assert!(!train.contains(id), "unseen scene {id} appears in training");
        }
        for e in dataset.split(Split::ValSeen) {
            assert!(
                train.contains(&e.scene_id.as_str()),
                "val_seen must reuse training scenes"
            );
        }
    }

    #[test]
    fn sparse_displacements_stay_in_bounds() {
        let vocab = Vocab::builtin();
        let dataset = build_dataset(&small_config(9), &vocab).unwrap();
        let bound = dataset.n as f64 * 0.25 + 0.125;
        for ex in &dataset.examples {
            for w in ex.demo.sparse.windows(2) {
                let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
                assert!(d > 0.0, "zero-length sparse displacement");
                assert!(d <= bound, "displacement {d} exceeds {bound}");
            }
        }
    }

    #[test]
    fn waypoint_replay_succeeds_on_at_least_95_percent_of_episodes() {
        let vocab = Vocab::builtin();
        let config = DatasetConfig {
            categories: SceneCategory::ALL.to_vec(),
            scenes_per_category: 3,
            episodes_per_scene: 3,
            n: 2,
            seed: 21,
        };
        let dataset = build_dataset(&config, &vocab).unwrap();
        let mut ok = 0usize;
        for ex in &dataset.examples {
            let grid = &dataset.scene(&ex.scene_id).unwrap().grid;
            let mut pose = ex.episode.start;
            let mut collisions = 0usize;
            for wp in &ex.demo.sparse[1..] {
                let (dx, dy) = (wp.x - pose.x, wp.y - pose.y);
                let h = pose.heading();
                let local = (dx * h.cos() + dy * h.sin(), -dx * h.sin() + dy * h.cos());
                let out = execute_waypoint(grid, pose, local).unwrap();
                collisions += out.collisions;
                pose = out.pose;
            }
            let d = ((pose.x - ex.episode.goal.0).powi(2)
                + (pose.y - ex.episode.goal.1).powi(2))
            .sqrt();
            if collisions == 0 && d <= 0.5 {
                ok += 1;
            }
        }
        let frac = ok as f64 / dataset.examples.len() as f64;
        assert!(frac >= 0.95, "replay success fraction {frac}");
    }

    #[test]
    fn instructions_are_well_formed_across_the_dataset() {
        let vocab = Vocab::builtin();
        let dataset = build_dataset(&small_config(17), &vocab).unwrap();
        for ex in &dataset.examples {
            assert!(!ex.instruction.tokens.is_empty());
            assert!(ex.instruction.tokens.len() <= 32);
            let last = ex.instruction.tokens.last().unwrap().as_str();
            let stop_at = ex.instruction.tokens.len() >= 2
                && ex.instruction.tokens[ex.instruction.tokens.len() - 2] == "stop_at";
            assert!(last == "stop" || stop_at, "instruction {:?}", ex.instruction.tokens);
            assert_eq!(vocab.decode(&ex.instruction.ids).unwrap(), ex.instruction.tokens);
        }
    }

    #[test]
    fn zero_counts_are_rejected() {
        let vocab = Vocab::builtin();
        let mut config = small_config(1);
        config.scenes_per_category = 0;
        assert!(matches!(
            build_dataset(&config, &vocab),
            Err(Error::Parameter(_))
        ));
        let mut config = small_config(1);
        config.n = 0;
        assert!(matches!(
            build_dataset(&config, &vocab),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn manifest_round_trip_preserves_the_dataset() {
        let vocab = Vocab::builtin();
        let dataset = build_dataset(&small_config(19), &vocab).unwrap();
        let dir = std::env::temp_dir().join("difnav-dataset-roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        let manifest = save_dataset(&dataset, &vocab, &dir).unwrap();
        let reloaded = load_dataset(&manifest).unwrap();
        assert_eq!(reloaded.scenes.len(), dataset.scenes.len());
        assert_eq!(reloaded.examples.len(), dataset.examples.len());
        for a in &dataset.examples {
            let b = reloaded
                .examples
                .iter()
                .find(|e| {
                    e.scene_id == a.scene_id
                        && e.episode.start == a.episode.start
                        && e.episode.goal == a.episode.goal
                })
                .expect("every saved example reloads");
            assert_eq!(a.split, b.split);
            assert_eq!(a.mode, b.mode);
            assert_eq!(a.episode.tokens, b.episode.tokens);
            assert_eq!(a.demo.sparse, b.demo.sparse);
            assert_eq!(a.instruction.ids, b.instruction.ids);
        }
    }
}
