//! Expert demonstrations, symbolic instructions, and dataset assembly.

pub mod dataset;
pub mod demo;
pub mod describe;
pub mod vocab;

pub use dataset::{
    build_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, DatasetExample,
    SceneRecord, Split,
};
pub use demo::{plan_demo, sparsify, DemoTrajectory};
pub use describe::{describe, AmbiguityMode, Instruction, MAX_INSTRUCTION_TOKENS};
pub use vocab::Vocab;
