//! Whole-body keypoints: taxonomy, per-frame records, and the estimator seam.

mod estimators;
mod io;
mod taxonomy;

pub use estimators::{ColorBlobEstimator, ConstantEstimator};
pub use io::{load_pose_track, read_pose_track, save_pose_track, write_pose_track};
pub use taxonomy::{Hand, KeypointTaxonomy, TaxonomyGroups};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::Frame;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("estimator returned {got} keypoints for frame {frame_index}, taxonomy expects {expected}")]
    TaxonomyMismatch {
        frame_index: usize,
        got: usize,
        expected: usize,
    },
    #[error("cannot estimate pose on an empty video")]
    EmptyVideo,
    #[error("invalid pose track: {0}")]
    InvalidTrack(String),
    #[error("pose track parse error at line {line} (frame {frame_index}): {message}")]
    Parse {
        line: usize,
        frame_index: usize,
        message: String,
    },
    #[error("pose track io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failure reported by a pose backend for a single frame.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct EstimatorError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f32, f32, f32, bool)", into = "(f32, f32, f32, bool)")]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub confidence: f32,
    pub detected: bool,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, confidence: f32) -> Self {
        Self {
            x,
            y,
            confidence,
            detected: true,
        }
    }

    pub const fn undetected() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            confidence: 0.0,
            detected: false,
        }
    }
}

impl From<(f32, f32, f32, bool)> for Keypoint {
    fn from((x, y, confidence, detected): (f32, f32, f32, bool)) -> Self {
        Self {
            x,
            y,
            confidence,
            detected,
        }
    }
}

impl From<Keypoint> for (f32, f32, f32, bool) {
    fn from(k: Keypoint) -> Self {
        (k.x, k.y, k.confidence, k.detected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame_index: usize,
    pub points: Vec<Keypoint>,
}

impl KeypointFrame {
    pub fn undetected(frame_index: usize, count: usize) -> Self {
        Self {
            frame_index,
            points: vec![Keypoint::undetected(); count],
        }
    }

    /// Detected keypoints among `indices`, in the order given.
    pub fn detected_in<'a>(
        &'a self,
        indices: &'a [usize],
    ) -> impl Iterator<Item = (usize, &'a Keypoint)> + 'a {
        indices
            .iter()
            .filter_map(|&i| self.points.get(i).map(|k| (i, k)))
            .filter(|(_, k)| k.detected)
    }

    pub fn detected(&self) -> impl Iterator<Item = &Keypoint> {
        self.points.iter().filter(|k| k.detected)
    }

    pub fn validate(&self, tax: &KeypointTaxonomy) -> Result<(), PoseError> {
        if self.points.len() != tax.total_count {
            return Err(PoseError::TaxonomyMismatch {
                frame_index: self.frame_index,
                got: self.points.len(),
                expected: tax.total_count,
            });
        }
        for (i, k) in self.points.iter().enumerate() {
            if k.detected && !(0.0..=1.0).contains(&k.confidence) {
                return Err(PoseError::InvalidTrack(format!(
                    "frame {}: keypoint {i} confidence {} outside [0, 1]",
                    self.frame_index, k.confidence
                )));
            }
        }
        Ok(())
    }
}

/// Keypoints for every source frame of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPoseTrack {
    pub video_id: String,
    pub frames: Vec<KeypointFrame>,
}

impl VideoPoseTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, tax: &KeypointTaxonomy) -> Result<(), PoseError> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(PoseError::InvalidTrack(format!(
                    "frame at position {i} has index {}",
                    f.frame_index
                )));
            }
            f.validate(tax)?;
        }
        Ok(())
    }
}

/// A pose backend: one RGB frame in, `total_count` keypoints out.
pub trait PoseEstimator: Sync {
    fn backend_id(&self) -> String;

    fn estimate(&self, frame: &Frame) -> Result<Vec<Keypoint>, EstimatorError>;
}

/// Runs `estimator` over every frame.
///
/// A frame the backend fails on is kept with all keypoints undetected so the
/// track stays index-aligned with the video. Detected points are clamped into
/// the image and their confidences into `[0, 1]`; non-finite output counts as
/// undetected.
pub fn estimate_pose(
    video_id: &str,
    frames: &[Frame],
    estimator: &dyn PoseEstimator,
    tax: &KeypointTaxonomy,
) -> Result<VideoPoseTrack, PoseError> {
    if frames.is_empty() {
        return Err(PoseError::EmptyVideo);
    }
    let mut out = Vec::with_capacity(frames.len());
    for (frame_index, frame) in frames.iter().enumerate() {
        let (h, w, _) = frame.dim();
        let points = match estimator.estimate(frame) {
            Ok(points) => points,
            Err(e) => {
                log::warn!("{video_id}: pose backend failed on frame {frame_index}: {e}");
                out.push(KeypointFrame::undetected(frame_index, tax.total_count));
                continue;
            }
        };
        if points.len() != tax.total_count {
            return Err(PoseError::TaxonomyMismatch {
                frame_index,
                got: points.len(),
                expected: tax.total_count,
            });
        }
        let max_x = w.saturating_sub(1) as f32;
        let max_y = h.saturating_sub(1) as f32;
        let points = points
            .into_iter()
            .map(|k| {
                if !k.detected || !(k.x.is_finite() && k.y.is_finite() && k.confidence.is_finite()) {
                    return Keypoint::undetected();
                }
                Keypoint {
                    x: k.x.clamp(0.0, max_x),
                    y: k.y.clamp(0.0, max_y),
                    confidence: k.confidence.clamp(0.0, 1.0),
                    detected: true,
                }
            })
            .collect();
        out.push(KeypointFrame {
            frame_index,
            points,
        });
    }
    Ok(VideoPoseTrack {
        video_id: video_id.to_string(),
        frames: out,
    })
}
