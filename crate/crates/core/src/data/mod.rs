//! Dataset container, preprocessing, few-shot sampling and synthetic fixtures.

pub mod container;
pub mod resize;
pub mod sample;
pub mod synthetic;

pub use container::{DatasetSplit, TaskKind};
pub use resize::resize_bilinear;
pub use sample::{few_shot_indices, few_shot_sample, FewShotSample};
pub use synthetic::{make_synthetic, SyntheticMode, SyntheticSpec};
