//! Synthetic benchmark: scenes, seed corruption, datasets and the toy encoder.

pub mod corrupt;
pub mod dataset;
pub mod encoder;
pub mod scene;

pub use corrupt::{corrupt_to_seed, CorruptionSpec};
pub use dataset::{Dataset, DatasetSpec, Sample};
pub use scene::{generate_scene, Scene, SceneSpec};
