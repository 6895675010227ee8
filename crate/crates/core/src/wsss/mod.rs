//! Weakly supervised training: ignore masks, optimiser, EMA teacher,
//! relabeling and the loop that ties them together.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod infer;
pub mod optim;
pub mod schedule;
pub mod teacher;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Components, TrainConfig};
pub use infer::{predict, Prediction};
pub use schedule::{anneal_q, build_ignore_mask};
pub use teacher::{ema_update, relabel, Teacher};
pub use train::{train, TrainOutcome};
