//! Desk-scale training harness: synthetic scenes, a linear detector head
//! trained with manual gradients, and the experiments built on top.

pub mod boost;
pub mod experiments;
pub mod head;
pub mod report;
pub mod scene;
pub mod train;

pub use head::DetectorHead;
pub use scene::{gen_scenes, Split, SyntheticScene};
pub use train::{evaluate, train, EpochStats, RunRecord};
