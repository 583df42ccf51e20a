//! Training orchestration: behavior cloning, expert mixing, fine-tuning.
//!
//! The trainer ties the other modules together. `model` bundles the encoder,
//! denoiser, and progress head into one configurable policy; `data` turns
//! demonstrations into supervised decision points; `expert` labels arbitrary
//! states with geodesic waypoint actions; `bc` runs gradient descent over
//! decision points; `dagger` rolls the policy out under stochastic expert
//! mixing and aggregates new labels; `pipeline` sequences the stages and
//! writes checkpoints and the run report.

pub mod bc;
pub mod dagger;
pub mod data;
pub mod expert;
pub mod model;
pub mod pipeline;

pub use bc::{train_bc, EpochRecord, TrainConfig};
pub use dagger::{
    dagger_round, expert_intervenes, rollout_episodes, DAggerConfig, RolloutEpisode, RoundStats,
};
pub use data::{
    decision_points, relative_history, to_agent_frame, to_world_frame, AggregatedBuffer,
    BufferRecord, DecisionPoint,
};
pub use expert::{expert_action, ExpertAction};
pub use model::{init_model_params, stop_score, ModelConfig, Profile};
pub use pipeline::{run_pipeline, training_points, RunReport, StageRecord};
