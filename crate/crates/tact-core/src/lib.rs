//! Shared domain types and on-disk formats for the planar loco-manipulation
//! workbench: tracker samples, arm targets, tactile frames, camera images,
//! and the episode / dataset-manifest files exchanged between the collector,
//! the trainer and the evaluation harness.

pub mod episode;
pub mod hash;
pub mod manifest;
pub mod types;

pub use episode::{Episode, EpisodeHeader, Frame};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use types::{
    ArmSide, ArmTarget, ArmTargets, CameraImage, TactileFrame, TaskKind, TrackerSample, Vec2,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl CoreError {
    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        CoreError::Schema(msg.into())
    }
}
