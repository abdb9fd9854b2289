//! Bidirectional masklet generation over a promptable video segmenter.
//!
//! The segmenter is prompted once, on the anchor frame, and then propagated
//! forward to the last frame and backward to frame 0. Every frame gets
//! exactly one mask and one logit map.

mod backends;
mod store;

pub use backends::{
    Binarized, ColorTrackSegmenter, DiskSegmenter, LogitsFromMask, MaskBackend, MaskSession,
};
pub use store::{load_masklet, save_masklet, LOGIT_SCALE};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{Point, PromptSet, Target};
use crate::video::Frame;

/// Logit written for every pixel of an empty masklet; also the clamp bound.
pub const EMPTY_LOGIT: f32 = -32.0;
pub const LOGIT_BOUND: f32 = 32.0;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("segmenter session failed for {video_id}/{}: {message}", target.name())]
    Session {
        video_id: String,
        target: Target,
        message: String,
    },
    #[error("segmenter broke the propagation contract for {video_id}/{}: {message}", target.name())]
    Coverage {
        video_id: String,
        target: Target,
        message: String,
    },
    #[error("anchor frame {anchor} outside video of {len} frames")]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("cannot segment an empty video")]
    EmptyVideo,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("masklet store: {0}")]
    Format(String),
    #[error("masklet io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::video::VideoError),
}

impl SegmentError {
    /// Session failures may succeed on a fresh session.
    pub fn is_retriable(&self) -> bool {
        matches!(self, SegmentError::Session { .. })
    }
}

/// Failure raised inside a segmenter backend.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct AdapterError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// One propagated frame: `(frame_index, logits)`.
pub type PropagatedFrame = (usize, Array2<f32>);

/// A promptable video segmenter.
pub trait SegmenterAdapter: Sync {
    fn backend_id(&self) -> String;

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn SegmenterSession + 'a>, AdapterError>;
}

/// A single-object tracking session over one video.
///
/// `propagate(Forward)` yields frames `anchor..len`, `propagate(Backward)`
/// yields `anchor-1` down to `0` (repeating the anchor is tolerated).
pub trait SegmenterSession {
    fn add_points(
        &mut self,
        frame_index: usize,
        positives: &[Point],
        negatives: &[Point],
        object_id: u32,
    ) -> Result<(), AdapterError>;

    fn propagate(&mut self, direction: Direction) -> Result<Vec<PropagatedFrame>, AdapterError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub frame_index: usize,
    pub mask: Array2<bool>,
    pub logits: Array2<f32>,
}

impl MaskFrame {
    pub fn from_logits(frame_index: usize, logits: Array2<f32>) -> Self {
        Self {
            frame_index,
            mask: logits.mapv(|l| l > 0.0),
            logits,
        }
    }
}

/// Masks and logits for one tracked target across a whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct Masklet {
    pub target: Target,
    pub anchor_frame: usize,
    pub height: usize,
    pub width: usize,
    pub backend: String,
    pub frames: Vec<MaskFrame>,
}

impl Masklet {
    pub fn empty(target: Target, anchor_frame: usize, len: usize, height: usize, width: usize, backend: &str) -> Self {
        Self {
            target,
            anchor_frame,
            height,
            width,
            backend: backend.to_string(),
            frames: (0..len)
                .map(|i| MaskFrame::from_logits(i, Array2::from_elem((height, width), EMPTY_LOGIT)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks coverage, shared dimensions and `mask == logits > 0`.
    pub fn validate(&self) -> Result<(), SegmentError> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(SegmentError::Format(format!("entry {i} has frame index {}", f.frame_index)));
            }
            let dims = (self.height, self.width);
            if f.mask.dim() != dims || f.logits.dim() != dims {
                return Err(SegmentError::Dimensions(format!(
                    "frame {i}: mask {:?} / logits {:?}, masklet is {dims:?}",
                    f.mask.dim(),
                    f.logits.dim()
                )));
            }
            if f.mask.iter().zip(f.logits.iter()).any(|(&m, &l)| m != (l > 0.0)) {
                return Err(SegmentError::Format(format!("frame {i}: mask disagrees with logits > 0")));
            }
        }
        Ok(())
    }

    pub fn mask_area(&self, frame: usize) -> usize {
        self.frames[frame].mask.iter().filter(|&&m| m).count()
    }
}

/// Prompts `adapter` on the anchor frame and propagates both ways.
///
/// Unpromptable prompt sets produce an all-empty masklet and a warning.
pub fn segment_video(
    video_id: &str,
    frames: &[Frame],
    prompts: &PromptSet,
    adapter: &dyn SegmenterAdapter,
) -> Result<Masklet, SegmentError> {
    let len = frames.len();
    if len == 0 {
        return Err(SegmentError::EmptyVideo);
    }
    let (height, width, _) = frames[0].dim();
    let anchor = prompts.anchor_frame;
    if anchor >= len {
        return Err(SegmentError::AnchorOutOfRange { anchor, len });
    }
    let target = prompts.target;
    let backend = adapter.backend_id();
    if prompts.is_unpromptable() {
        log::warn!("{video_id}/{}: no qualifying keypoints, emitting empty masklet", target.name());
        return Ok(Masklet::empty(target, anchor, len, height, width, &backend));
    }
    let session_err = |e: AdapterError| SegmentError::Session {
        video_id: video_id.to_string(),
        target,
        message: e.0,
    };
    let coverage_err = |message: String| SegmentError::Coverage {
        video_id: video_id.to_string(),
        target,
        message,
    };

    let mut session = adapter.open_session(frames).map_err(session_err)?;
    session
        .add_points(anchor, &prompts.positives, &prompts.negatives, target.object_id())
        .map_err(session_err)?;
    let forward = session.propagate(Direction::Forward).map_err(session_err)?;
    let backward = session.propagate(Direction::Backward).map_err(session_err)?;

    let mut slots: Vec<Option<Array2<f32>>> = vec![None; len];
    for (index, logits) in forward {
        if index < anchor || index >= len {
            return Err(coverage_err(format!("forward pass emitted frame {index}")));
        }
        if slots[index].is_some() {
            return Err(coverage_err(format!("frame {index} emitted twice")));
        }
        slots[index] = Some(logits);
    }
    for (index, logits) in backward {
        if index > anchor {
            return Err(coverage_err(format!("backward pass emitted frame {index}")));
        }
        if slots[index].is_some() {
            if index == anchor {
                continue;
            }
            return Err(coverage_err(format!("frame {index} emitted twice")));
        }
        slots[index] = Some(logits);
    }
    let mut out = Vec::with_capacity(len);
    for (index, slot) in slots.into_iter().enumerate() {
        let logits = slot.ok_or_else(|| coverage_err(format!("frame {index} never emitted")))?;
        if logits.dim() != (height, width) {
            return Err(SegmentError::Dimensions(format!(
                "backend returned {:?} logits for a {height}x{width} video",
                logits.dim()
            )));
        }
        out.push(MaskFrame::from_logits(index, logits));
    }
    let masklet = Masklet {
        target,
        anchor_frame: anchor,
        height,
        width,
        backend,
        frames: out,
    };
    let anchor_mask = &masklet.frames[anchor].mask;
    let missed = prompts
        .positives
        .iter()
        .filter(|(x, y)| {
            let (xi, yi) = ((x.round() as usize).min(width - 1), (y.round() as usize).min(height - 1));
            !anchor_mask[[yi, xi]]
        })
        .count();
    if missed > 0 {
        log::debug!(
            "{video_id}/{}: {missed} positive prompt(s) outside the anchor mask",
            target.name()
        );
    }
    Ok(masklet)
}
