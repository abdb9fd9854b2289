//! Pose-prompted video segmentation streams for isolated sign language recognition.

pub mod dataset;
pub mod frame_selection;
pub mod pose;
pub mod prompting;
pub mod segmentation;
pub mod video;
pub mod streams;
pub mod classify;
pub mod eval;
pub mod cache;
pub mod pipeline;
