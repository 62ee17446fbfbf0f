//! Temporal synchronization of unsynchronized multi-view videos of a dynamic
//! scene, by minimizing epipolar (Sampson) error over candidate time offsets.
//!
//! The pipeline has two stages. Stage 1 ([`pairwise`]) exhaustively searches
//! a discrete offset grid per camera pair, scoring each candidate offset by
//! the mean epipolar energy of matched dynamic tracklets, and rejects pairs
//! whose energy landscape is ambiguous. Stage 2 ([`global_sync`]) fuses the
//! surviving pairwise offsets into per-video offsets with a Huber-robust
//! IRLS solve over the pair graph.
//!
//! [`synth`] generates seeded multi-camera scenes with known offsets, which
//! back every accuracy claim in the test suite; [`io`] defines the JSON
//! formats that also let real upstream outputs (pose estimation, point
//! tracking, cross-view matching) enter the pipeline.

pub mod energy;
pub mod geometry;
pub mod global_sync;
pub mod io;
pub mod metrics;
pub mod pairwise;
pub mod synth;
pub mod tracklets;

pub use energy::EnergyKind;
pub use geometry::{CameraTrack, FundamentalMatrix, Intrinsics, Pose};
pub use global_sync::{GlobalOffsets, IrlsOptions, OffsetMeasurement};
pub use pairwise::{OffsetGrid, PairwiseResult, SearchOptions};
pub use synth::{SceneBundle, ScenarioSpec};
pub use tracklets::{CorrespondenceSet, Scene, Tracklet, TrackletPair};
