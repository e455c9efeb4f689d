//! Classroom action recognition and behavioral engagement estimation from
//! 2D skeleton streams.
//!
//! The pipeline runs skeleton ingestion ([`ingest`]), per-student tracking
//! ([`tracker`]), pseudo-heatmap volumes ([`heatmap`]), a 3D-CNN action
//! classifier ([`net3d`]), head-yaw gaze estimation ([`gaze`]), windowed
//! histogram-of-actions features ([`features`]) and an SVM engagement
//! classifier with its evaluation ([`engagement`]). [`synth`] generates
//! labelled synthetic classrooms.

pub mod dataset;
pub mod engagement;
pub mod features;
pub mod gaze;
pub mod heatmap;
pub mod ingest;
pub mod net3d;
pub mod synth;
pub mod tracker;
