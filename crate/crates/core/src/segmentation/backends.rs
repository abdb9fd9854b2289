use std::collections::VecDeque;

use ndarray::Array2;

use super::{AdapterError, Direction, PropagatedFrame, SegmenterAdapter, SegmenterSession, LOGIT_BOUND};
use crate::prompting::Point;
use crate::video::Frame;

fn pixel_of(p: Point, height: usize, width: usize) -> (usize, usize) {
    let x = p.0.round().clamp(0.0, (width - 1) as f32) as usize;
    let y = p.1.round().clamp(0.0, (height - 1) as f32) as usize;
    (y, x)
}

fn frame_order(direction: Direction, anchor: usize, len: usize) -> Vec<usize> {
    match direction {
        Direction::Forward => (anchor..len).collect(),
        Direction::Backward => (0..anchor).rev().collect(),
    }
}

/// Test backend: every frame gets the same disks of radius `radius` around
/// the positive prompts, with `logits = radius - distance`. Ignores pixels
/// and negatives.
#[derive(Debug, Clone)]
pub struct DiskSegmenter {
    pub radius: f32,
}

impl DiskSegmenter {
    pub fn new(radius: f32) -> Self {
        Self { radius }
    }
}

struct DiskSession {
    radius: f32,
    len: usize,
    dims: (usize, usize),
    anchor: Option<usize>,
    logits: Option<Array2<f32>>,
}

impl SegmenterAdapter for DiskSegmenter {
    fn backend_id(&self) -> String {
        format!("disk:r={}", self.radius)
    }

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn SegmenterSession + 'a>, AdapterError> {
        let first = frames.first().ok_or_else(|| AdapterError("no frames".into()))?;
        let (h, w, _) = first.dim();
        Ok(Box::new(DiskSession {
            radius: self.radius,
            len: frames.len(),
            dims: (h, w),
            anchor: None,
            logits: None,
        }))
    }
}

impl SegmenterSession for DiskSession {
    fn add_points(&mut self, frame_index: usize, positives: &[Point], _negatives: &[Point], _object_id: u32) -> Result<(), AdapterError> {
        if frame_index >= self.len {
            return Err(AdapterError(format!("frame {frame_index} out of range")));
        }
        let r = self.radius;
        let logits = Array2::from_shape_fn(self.dims, |(y, x)| {
            let d = positives
                .iter()
                .map(|p| (x as f32 - p.0).hypot(y as f32 - p.1))
                .fold(f32::INFINITY, f32::min);
            (r - d).clamp(-LOGIT_BOUND, LOGIT_BOUND)
        });
        self.anchor = Some(frame_index);
        self.logits = Some(logits);
        Ok(())
    }

    fn propagate(&mut self, direction: Direction) -> Result<Vec<PropagatedFrame>, AdapterError> {
        let (Some(anchor), Some(logits)) = (self.anchor, &self.logits) else {
            return Err(AdapterError("propagate before add_points".into()));
        };
        Ok(frame_order(direction, anchor, self.len)
            .into_iter()
            .map(|i| (i, logits.clone()))
            .collect())
    }
}

/// Colour-memory tracker used as a stand-in for a promptable video model on
/// flat-shaded footage.
///
/// Prompt pixels define positive and negative colour palettes. A pixel is a
/// candidate when it is within `tolerance` (RGB distance, 0..255 scale) of the
/// positive palette and strictly closer to it than to the negative palette.
/// The object is the 4-connected candidate region grown from the prompts on
/// the anchor frame and, on later frames, from the previous mask. When the
/// object has moved clear of its previous mask, candidates inside the previous
/// bounding box, widened by its own size on every side, reseed it.
#[derive(Debug, Clone)]
pub struct ColorTrackSegmenter {
    pub tolerance: f32,
}

impl ColorTrackSegmenter {
    pub fn new(tolerance: f32) -> Self {
        Self { tolerance }
    }
}

impl Default for ColorTrackSegmenter {
    fn default() -> Self {
        Self::new(48.0)
    }
}

struct ColorTrackSession<'a> {
    tolerance: f32,
    frames: &'a [Frame],
    dims: (usize, usize),
    anchor: Option<usize>,
    seeds: Vec<(usize, usize)>,
    positives: Vec<[f32; 3]>,
    negatives: Vec<[f32; 3]>,
}

impl SegmenterAdapter for ColorTrackSegmenter {
    fn backend_id(&self) -> String {
        format!("color-track:tol={}", self.tolerance)
    }

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn SegmenterSession + 'a>, AdapterError> {
        let first = frames.first().ok_or_else(|| AdapterError("no frames".into()))?;
        let (h, w, _) = first.dim();
        Ok(Box::new(ColorTrackSession {
            tolerance: self.tolerance,
            frames,
            dims: (h, w),
            anchor: None,
            seeds: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        }))
    }
}

fn rgb_at(frame: &Frame, y: usize, x: usize) -> [f32; 3] {
    [
        frame[[y, x, 0]] * 255.0,
        frame[[y, x, 1]] * 255.0,
        frame[[y, x, 2]] * 255.0,
    ]
}

fn nearest(palette: &[[f32; 3]], c: [f32; 3]) -> f32 {
    palette
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(f32::INFINITY, f32::min)
}

impl ColorTrackSession<'_> {
    /// Candidate map and distance to the positive palette for one frame.
    fn candidates(&self, frame: &Frame) -> (Array2<bool>, Array2<f32>) {
        let mut cand = Array2::from_elem(self.dims, false);
        let mut dpos = Array2::zeros(self.dims);
        for y in 0..self.dims.0 {
            for x in 0..self.dims.1 {
                let c = rgb_at(frame, y, x);
                let dp = nearest(&self.positives, c);
                let dn = nearest(&self.negatives, c);
                dpos[[y, x]] = dp;
                cand[[y, x]] = dp < self.tolerance && dp < dn;
            }
        }
        (cand, dpos)
    }

    fn grow(cand: &Array2<bool>, seeds: impl IntoIterator<Item = (usize, usize)>) -> Array2<bool> {
        let (h, w) = cand.dim();
        let mut region = Array2::from_elem((h, w), false);
        let mut queue = VecDeque::new();
        for (y, x) in seeds {
            if cand[[y, x]] && !region[[y, x]] {
                region[[y, x]] = true;
                queue.push_back((y, x));
            }
        }
        while let Some((y, x)) = queue.pop_front() {
            let neighbours = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbours {
                if ny < h && nx < w && cand[[ny, nx]] && !region[[ny, nx]] {
                    region[[ny, nx]] = true;
                    queue.push_back((ny, nx));
                }
            }
        }
        region
    }

    fn reacquire_seeds(cand: &Array2<bool>, prev: &Array2<bool>) -> Vec<(usize, usize)> {
        let (h, w) = prev.dim();
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), _) in prev.indexed_iter().filter(|(_, &m)| m) {
            bbox = Some(match bbox {
                None => (y, y, x, x),
                Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y), x0.min(x), x1.max(x)),
            });
        }
        let Some((y0, y1, x0, x1)) = bbox else {
            return Vec::new();
        };
        let (dy, dx) = (y1 - y0 + 1, x1 - x0 + 1);
        let (ya, yb) = (y0.saturating_sub(dy), (y1 + dy).min(h - 1));
        let (xa, xb) = (x0.saturating_sub(dx), (x1 + dx).min(w - 1));
        let mut seeds = Vec::new();
        for y in ya..=yb {
            for x in xa..=xb {
                if cand[[y, x]] {
                    seeds.push((y, x));
                }
            }
        }
        seeds
    }

    fn logits(&self, region: &Array2<bool>, dpos: &Array2<f32>) -> Array2<f32> {
        let tol = self.tolerance;
        Array2::from_shape_fn(self.dims, |(y, x)| {
            let d = dpos[[y, x]];
            if region[[y, x]] {
                4.0 + 4.0 * (1.0 - d / tol)
            } else {
                -(1.0 + d / 8.0).min(LOGIT_BOUND)
            }
        })
    }
}

impl SegmenterSession for ColorTrackSession<'_> {
    fn add_points(&mut self, frame_index: usize, positives: &[Point], negatives: &[Point], _object_id: u32) -> Result<(), AdapterError> {
        let frame = self
            .frames
            .get(frame_index)
            .ok_or_else(|| AdapterError(format!("frame {frame_index} out of range")))?;
        let (h, w) = self.dims;
        self.seeds = positives.iter().map(|&p| pixel_of(p, h, w)).collect();
        self.positives = self.seeds.iter().map(|&(y, x)| rgb_at(frame, y, x)).collect();
        self.negatives = negatives
            .iter()
            .map(|&p| {
                let (y, x) = pixel_of(p, h, w);
                rgb_at(frame, y, x)
            })
            .collect();
        self.anchor = Some(frame_index);
        Ok(())
    }

    fn propagate(&mut self, direction: Direction) -> Result<Vec<PropagatedFrame>, AdapterError> {
        let anchor = self
            .anchor
            .ok_or_else(|| AdapterError("propagate before add_points".into()))?;
        let (cand, dpos) = self.candidates(&self.frames[anchor]);
        let mut prev = Self::grow(&cand, self.seeds.iter().copied());
        let mut out = Vec::new();
        if direction == Direction::Forward {
            out.push((anchor, self.logits(&prev, &dpos)));
        }
        for t in frame_order(direction, anchor, self.frames.len()) {
            if t == anchor {
                continue;
            }
            let (cand, dpos) = self.candidates(&self.frames[t]);
            let seeds: Vec<(usize, usize)> = prev.indexed_iter().filter(|(_, &m)| m).map(|(p, _)| p).collect();
            let mut region = Self::grow(&cand, seeds);
            if !region.iter().any(|&m| m) {
                region = Self::grow(&cand, Self::reacquire_seeds(&cand, &prev));
                if region.iter().any(|&m| m) {
                    log::debug!("colour track reacquired target on frame {t}");
                }
            }
            out.push((t, self.logits(&region, &dpos)));
            prev = region;
        }
        Ok(out)
    }
}

/// A segmenter that only reports binary masks.
pub trait MaskBackend: Sync {
    fn backend_id(&self) -> String;

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn MaskSession + 'a>, AdapterError>;
}

pub trait MaskSession {
    fn add_points(&mut self, frame_index: usize, positives: &[Point], negatives: &[Point], object_id: u32) -> Result<(), AdapterError>;

    fn propagate(&mut self, direction: Direction) -> Result<Vec<(usize, Array2<bool>)>, AdapterError>;
}

/// Lifts a mask-only backend to the logits contract: `+32` inside, `-32` outside.
#[derive(Debug, Clone)]
pub struct LogitsFromMask<B>(pub B);

struct LogitsFromMaskSession<'a>(Box<dyn MaskSession + 'a>);

impl<B: MaskBackend> SegmenterAdapter for LogitsFromMask<B> {
    fn backend_id(&self) -> String {
        format!("mask-only:{}", self.0.backend_id())
    }

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn SegmenterSession + 'a>, AdapterError> {
        Ok(Box::new(LogitsFromMaskSession(self.0.open_session(frames)?)))
    }
}

impl SegmenterSession for LogitsFromMaskSession<'_> {
    fn add_points(&mut self, frame_index: usize, positives: &[Point], negatives: &[Point], object_id: u32) -> Result<(), AdapterError> {
        self.0.add_points(frame_index, positives, negatives, object_id)
    }

    fn propagate(&mut self, direction: Direction) -> Result<Vec<PropagatedFrame>, AdapterError> {
        Ok(self
            .0
            .propagate(direction)?
            .into_iter()
            .map(|(i, m)| (i, m.mapv(|on| if on { LOGIT_BOUND } else { -LOGIT_BOUND })))
            .collect())
    }
}

/// Thresholds a logits backend at 0, discarding its logits.
#[derive(Debug, Clone)]
pub struct Binarized<A>(pub A);

struct BinarizedSession<'a>(Box<dyn SegmenterSession + 'a>);

impl<A: SegmenterAdapter> MaskBackend for Binarized<A> {
    fn backend_id(&self) -> String {
        self.0.backend_id()
    }

    fn open_session<'a>(&'a self, frames: &'a [Frame]) -> Result<Box<dyn MaskSession + 'a>, AdapterError> {
        Ok(Box::new(BinarizedSession(self.0.open_session(frames)?)))
    }
}

impl MaskSession for BinarizedSession<'_> {
    fn add_points(&mut self, frame_index: usize, positives: &[Point], negatives: &[Point], object_id: u32) -> Result<(), AdapterError> {
        self.0.add_points(frame_index, positives, negatives, object_id)
    }

    fn propagate(&mut self, direction: Direction) -> Result<Vec<(usize, Array2<bool>)>, AdapterError> {
        Ok(self
            .0
            .propagate(direction)?
            .into_iter()
            .map(|(i, l)| (i, l.mapv(|v| v > 0.0)))
            .collect())
    }
}
