//! The six classification inputs: optical flow, RGB, body-masked RGB, body
//! logits, hands-masked RGB and hands logits.
//!
//! Every clip is 40 uniformly sampled frames, centre-cropped to 224×224, three
//! channels, values in `[0, 1]`. Masklets stay at source resolution and are
//! sampled and cropped exactly like the frames.

mod augment;
mod flow;
mod store;

pub use augment::{augment, AugmentConfig, AugmentParams, Mode};
pub use flow::{flow_clip, normalize_flow, FlowAdapter, FlowError, GlobalTranslation, HornSchunck, DEFAULT_MAX_FLOW};
pub use store::{load_clip, load_clip_manifest, save_clips, ClipManifest, QuantizedClip, CLIP_QUANT_SCALE};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{MaskFrame, Masklet, LOGIT_BOUND};
use crate::video::Frame;

pub const CLIP_LEN: usize = 40;
pub const CROP_SIZE: usize = 224;
pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("cannot build a clip from an empty video")]
    EmptyVideo,
    #[error("flow backend failed: {0}")]
    Flow(#[from] FlowError),
    #[error("clip store: {0}")]
    Format(String),
    #[error("clip io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Flow,
    Rgb,
    BodyRgb,
    BodyLogits,
    HandsRgb,
    HandsLogits,
}

impl StreamKind {
    pub const ALL: [StreamKind; 6] = [
        StreamKind::Flow,
        StreamKind::Rgb,
        StreamKind::BodyRgb,
        StreamKind::BodyLogits,
        StreamKind::HandsRgb,
        StreamKind::HandsLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Flow => "flow",
            StreamKind::Rgb => "rgb",
            StreamKind::BodyRgb => "body_rgb",
            StreamKind::BodyLogits => "body_logits",
            StreamKind::HandsRgb => "hands_rgb",
            StreamKind::HandsLogits => "hands_logits",
        }
    }

    /// Brightness jitter only makes sense for pixel intensities.
    pub fn takes_brightness(self) -> bool {
        matches!(self, StreamKind::Rgb | StreamKind::BodyRgb | StreamKind::HandsRgb)
    }

    /// Value used for pixels shifted in from outside the clip.
    pub fn fill(self) -> [f32; 3] {
        match self {
            StreamKind::Flow => [0.5, 0.5, 0.0],
            _ => [0.0; 3],
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKind {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StreamError::UnknownStream(s.to_string()))
    }
}

/// One stream's input: `(CLIP_LEN, CROP_SIZE, CROP_SIZE, 3)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamClip {
    pub stream: StreamKind,
    pub data: Array4<f32>,
}

impl StreamClip {
    pub fn shape_ok(&self) -> bool {
        self.data.dim() == (CLIP_LEN, CROP_SIZE, CROP_SIZE, CHANNELS)
    }

    pub fn check(&self) -> Result<(), StreamError> {
        if !self.shape_ok() {
            return Err(StreamError::Dimensions(format!(
                "{} clip has shape {:?}",
                self.stream,
                self.data.dim()
            )));
        }
        Ok(())
    }
}

/// `floor(i * len / 40)` for `i in 0..40`.
pub fn sample_indices(video_len: usize) -> Vec<usize> {
    assert!(video_len >= 1, "sample_indices needs at least one frame");
    (0..CLIP_LEN).map(|i| i * video_len / CLIP_LEN).collect()
}

/// For one axis: (source start, destination start, copied length).
fn crop_span(src: usize, size: usize) -> (usize, usize, usize) {
    if src >= size {
        ((src - size) / 2, 0, size)
    } else {
        (0, (size - src) / 2, src)
    }
}

/// Central `size`×`size` crop; smaller inputs are zero-padded symmetrically.
pub fn center_crop(frame: ArrayView3<f32>, size: usize) -> Array3<f32> {
    let (h, w, c) = frame.dim();
    let (sy, dy, ny) = crop_span(h, size);
    let (sx, dx, nx) = crop_span(w, size);
    let mut out = Array3::zeros((size, size, c));
    out.slice_mut(s![dy..dy + ny, dx..dx + nx, ..])
        .assign(&frame.slice(s![sy..sy + ny, sx..sx + nx, ..]));
    out
}

fn center_crop_2d<T: Clone>(plane: ArrayView2<T>, size: usize, fill: T) -> Array2<T> {
    let (h, w) = plane.dim();
    let (sy, dy, ny) = crop_span(h, size);
    let (sx, dx, nx) = crop_span(w, size);
    let mut out = Array2::from_elem((size, size), fill);
    out.slice_mut(s![dy..dy + ny, dx..dx + nx])
        .assign(&plane.slice(s![sy..sy + ny, sx..sx + nx]));
    out
}

fn check_frames(frames: &[Frame]) -> Result<(usize, usize), StreamError> {
    let first = frames.first().ok_or(StreamError::EmptyVideo)?;
    let (h, w, c) = first.dim();
    if c != CHANNELS {
        return Err(StreamError::Dimensions(format!("frames have {c} channels")));
    }
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dim() != (h, w, c)) {
        return Err(StreamError::Dimensions(format!(
            "frame {i} is {:?}, frame 0 is {:?}",
            f.dim(),
            (h, w, c)
        )));
    }
    Ok((h, w))
}

fn check_masklet(m: &Masklet, len: usize, h: usize, w: usize) -> Result<(), StreamError> {
    if m.len() != len || m.height != h || m.width != w {
        return Err(StreamError::Dimensions(format!(
            "{} masklet is {} frames of {}x{}, video is {len} frames of {h}x{w}",
            m.target.name(),
            m.len(),
            m.height,
            m.width
        )));
    }
    Ok(())
}

fn stack(stream: StreamKind, frames: Vec<Array3<f32>>) -> StreamClip {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    StreamClip {
        stream,
        data: ndarray::stack(Axis(0), &views).expect("frames share the crop shape"),
    }
}

pub fn rgb_clip(frames: &[Frame]) -> Result<StreamClip, StreamError> {
    check_frames(frames)?;
    let out = sample_indices(frames.len())
        .into_iter()
        .map(|i| center_crop(frames[i].view(), CROP_SIZE))
        .collect();
    Ok(stack(StreamKind::Rgb, out))
}

/// Frames multiplied by the mask, per pixel and channel.
pub fn mask_rgb(stream: StreamKind, frames: &[Frame], masklet: &Masklet) -> Result<StreamClip, StreamError> {
    let (h, w) = check_frames(frames)?;
    check_masklet(masklet, frames.len(), h, w)?;
    let out = sample_indices(frames.len())
        .into_iter()
        .map(|i| {
            let mut f = center_crop(frames[i].view(), CROP_SIZE);
            let m = center_crop_2d(masklet.frames[i].mask.view(), CROP_SIZE, false);
            Zip::from(f.lanes_mut(Axis(2))).and(&m).for_each(|mut px, &on| {
                if !on {
                    px.fill(0.0);
                }
            });
            f
        })
        .collect();
    Ok(stack(stream, out))
}

/// `(clamp(l, -32, 32) + 32) / 64`.
pub fn logit_to_unit(l: f32) -> f32 {
    (l.clamp(-LOGIT_BOUND, LOGIT_BOUND) + LOGIT_BOUND) / (2.0 * LOGIT_BOUND)
}

/// Logits mapped to `[0, 1]` and replicated over three channels. Padding
/// corresponds to the most negative logit.
pub fn logits_clip(stream: StreamKind, masklet: &Masklet) -> Result<StreamClip, StreamError> {
    if masklet.is_empty() {
        return Err(StreamError::EmptyVideo);
    }
    let out = sample_indices(masklet.len())
        .into_iter()
        .map(|i| {
            let unit = masklet.frames[i].logits.mapv(logit_to_unit);
            let plane = center_crop_2d(unit.view(), CROP_SIZE, 0.0);
            let mut f = Array3::zeros((CROP_SIZE, CROP_SIZE, CHANNELS));
            for c in 0..CHANNELS {
                f.index_axis_mut(Axis(2), c).assign(&plane);
            }
            f
        })
        .collect();
    Ok(stack(stream, out))
}

/// Union of masks and elementwise max of logits. Metadata comes from `left`.
pub fn merge_hands(left: &Masklet, right: &Masklet) -> Result<Masklet, StreamError> {
    if left.len() != right.len() || left.height != right.height || left.width != right.width {
        return Err(StreamError::Dimensions(format!(
            "cannot merge {} frames of {}x{} with {} frames of {}x{}",
            left.len(),
            left.height,
            left.width,
            right.len(),
            right.height,
            right.width
        )));
    }
    let frames = left
        .frames
        .iter()
        .zip(&right.frames)
        .map(|(a, b)| MaskFrame {
            frame_index: a.frame_index,
            mask: Zip::from(&a.mask).and(&b.mask).map_collect(|&x, &y| x || y),
            logits: Zip::from(&a.logits).and(&b.logits).map_collect(|&x, &y| x.max(y)),
        })
        .collect();
    Ok(Masklet {
        frames,
        ..left.clone_header()
    })
}

impl Masklet {
    fn clone_header(&self) -> Masklet {
        Masklet {
            target: self.target,
            anchor_frame: self.anchor_frame,
            height: self.height,
            width: self.width,
            backend: self.backend.clone(),
            frames: Vec::new(),
        }
    }
}

/// Source material for one video.
pub struct VideoInputs<'a> {
    pub frames: &'a [Frame],
    pub body: &'a Masklet,
    pub left_hand: &'a Masklet,
    pub right_hand: &'a Masklet,
}

/// Builds the requested streams, in the order given.
pub fn build_clips(
    inputs: &VideoInputs<'_>,
    streams: &[StreamKind],
    flow: &dyn FlowAdapter,
    max_flow: f32,
) -> Result<Vec<StreamClip>, StreamError> {
    let needs_hands = streams
        .iter()
        .any(|s| matches!(s, StreamKind::HandsRgb | StreamKind::HandsLogits));
    let hands = if needs_hands {
        Some(merge_hands(inputs.left_hand, inputs.right_hand)?)
    } else {
        None
    };
    let hands = || hands.as_ref().expect("merged when a hands stream is requested");
    streams
        .iter()
        .map(|&s| {
            let clip = match s {
                StreamKind::Flow => flow_clip(inputs.frames, flow, max_flow)?,
                StreamKind::Rgb => rgb_clip(inputs.frames)?,
                StreamKind::BodyRgb => mask_rgb(s, inputs.frames, inputs.body)?,
                StreamKind::BodyLogits => logits_clip(s, inputs.body)?,
                StreamKind::HandsRgb => mask_rgb(s, inputs.frames, hands())?,
                StreamKind::HandsLogits => logits_clip(s, hands())?,
            };
            clip.check()?;
            Ok(clip)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Target;
    use crate::segmentation::EMPTY_LOGIT;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_indices(40), (0..40).collect::<Vec<_>>());
        assert_eq!(sample_indices(80), (0..40).map(|i| 2 * i).collect::<Vec<_>>());
        let s = sample_indices(10);
        for (i, &v) in s.iter().enumerate() {
            assert_eq!(v, i / 4);
        }
        assert_eq!(sample_indices(1), vec![0; 40]);
    }

    proptest! {
        #[test]
        fn sampling_is_monotone_and_in_range(len in 1usize..2000) {
            let s = sample_indices(len);
            prop_assert_eq!(s.len(), 40);
            prop_assert_eq!(s[0], 0);
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(s.iter().all(|&i| i < len));
        }
    }

    fn ramp(h: usize, w: usize) -> Frame {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 1000 + x) * 3 + c) as f32)
    }

    #[test]
    fn crop_identity_offset_and_padding() {
        let f = ramp(224, 224);
        assert_eq!(center_crop(f.view(), 224), f);

        let f = ramp(240, 320);
        let c = center_crop(f.view(), 224);
        assert_eq!(c[[0, 0, 0]], f[[8, 48, 0]]);
        assert_eq!(c[[223, 223, 2]], f[[231, 271, 2]]);

        let f = Array3::from_elem((200, 200, 3), 1.0f32);
        let c = center_crop(f.view(), 224);
        assert_eq!(c[[11, 100, 0]], 0.0);
        assert_eq!(c[[12, 12, 0]], 1.0);
        assert_eq!(c[[211, 211, 0]], 1.0);
        assert_eq!(c[[212, 100, 0]], 0.0);
        assert_eq!(c.iter().filter(|&&v| v == 1.0).count(), 200 * 200 * 3);
    }

    fn masklet_from(masks: Vec<Array2<bool>>, target: Target) -> Masklet {
        let (h, w) = masks[0].dim();
        Masklet {
            target,
            anchor_frame: 0,
            height: h,
            width: w,
            backend: "test".into(),
            frames: masks
                .into_iter()
                .enumerate()
                .map(|(i, m)| MaskFrame::from_logits(i, m.mapv(|b| if b { 5.0 } else { -5.0 })))
                .collect(),
        }
    }

    fn random_frames(len: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<Frame> {
        (0..len)
            .map(|_| Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>()))
            .collect()
    }

    #[test]
    fn full_and_empty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random_frames(7, 30, 50, &mut rng);
        let full = masklet_from(vec![Array2::from_elem((30, 50), true); 7], Target::Body);
        let clip = mask_rgb(StreamKind::BodyRgb, &frames, &full).unwrap();
        assert_eq!(clip.data, rgb_clip(&frames).unwrap().data);
        let empty = Masklet::empty(Target::Body, 0, 7, 30, 50, "x");
        let clip = mask_rgb(StreamKind::BodyRgb, &frames, &empty).unwrap();
        assert!(clip.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_mask_matches_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (240, 230);
        let frames = random_frames(3, h, w, &mut rng);
        let masks: Vec<_> = (0..3).map(|_| Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.5))).collect();
        let m = masklet_from(masks.clone(), Target::Body);
        let clip = mask_rgb(StreamKind::BodyRgb, &frames, &m).unwrap();
        let idx = sample_indices(3);
        for (t, &src) in idx.iter().enumerate() {
            for y in 0..224 {
                for x in 0..224 {
                    // rows 8.., cols 3..
                    let (sy, sx) = (y + 8, x + 3);
                    let keep = if masks[src][[sy, sx]] { 1.0 } else { 0.0 };
                    for c in 0..3 {
                        assert_eq!(clip.data[[t, y, x, c]], frames[src][[sy, sx, c]] * keep);
                    }
                }
            }
        }
    }

    #[test]
    fn mask_dimension_mismatch_is_an_error() {
        let frames = vec![Array3::zeros((10, 10, 3)); 2];
        let m = Masklet::empty(Target::Body, 0, 2, 10, 11, "x");
        assert!(matches!(
            mask_rgb(StreamKind::BodyRgb, &frames, &m),
            Err(StreamError::Dimensions(_))
        ));
    }

    #[test]
    fn logit_map_endpoints() {
        assert_eq!(logit_to_unit(0.0), 0.5);
        assert_eq!(logit_to_unit(32.0), 1.0);
        assert_eq!(logit_to_unit(-32.0), 0.0);
        assert_eq!(logit_to_unit(100.0), 1.0);
        let m = Masklet::empty(Target::Body, 0, 3, 10, 10, "x");
        let clip = logits_clip(StreamKind::BodyLogits, &m).unwrap();
        assert!(clip.shape_ok());
        assert!(clip.data.iter().all(|&v| v == 0.0));
    }

    fn random_masklet(len: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Masklet {
        Masklet {
            target: Target::LeftHand,
            anchor_frame: 0,
            height: h,
            width: w,
            backend: "r".into(),
            frames: (0..len)
                .map(|i| MaskFrame::from_logits(i, Array2::from_shape_fn((h, w), |_| rng.gen_range(-32.0f32..=32.0))))
                .collect(),
        }
    }

    #[test]
    fn merge_identity_commutative_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_masklet(4, 9, 8, &mut rng);
        let b = random_masklet(4, 9, 8, &mut rng);
        let c = random_masklet(4, 9, 8, &mut rng);
        let empty = Masklet::empty(Target::RightHand, 0, 4, 9, 8, "r");
        assert_eq!(merge_hands(&a, &empty).unwrap(), a);
        assert_eq!(merge_hands(&a, &b).unwrap().frames, merge_hands(&b, &a).unwrap().frames);
        assert_eq!(
            merge_hands(&merge_hands(&a, &b).unwrap(), &c).unwrap(),
            merge_hands(&a, &merge_hands(&b, &c).unwrap()).unwrap()
        );
        merge_hands(&a, &b).unwrap().validate().unwrap();
        assert!(EMPTY_LOGIT <= -LOGIT_BOUND);
    }

    #[test]
    fn overlapping_disks_union_area() {
        let disk = |cx: f32, cy: f32| Array2::from_shape_fn((40, 40), |(y, x)| (x as f32 - cx).hypot(y as f32 - cy) <= 8.0);
        let (da, db) = (disk(15.0, 20.0), disk(24.0, 20.0));
        let count = |m: &Array2<bool>| m.iter().filter(|&&b| b).count();
        let inter = Zip::from(&da).and(&db).map_collect(|&x, &y| x && y);
        let expected = count(&da) + count(&db) - count(&inter);
        let merged = merge_hands(
            &masklet_from(vec![da], Target::LeftHand),
            &masklet_from(vec![db], Target::RightHand),
        )
        .unwrap();
        assert_eq!(merged.mask_area(0), expected);
    }

    #[test]
    fn stream_names_round_trip() {
        for s in StreamKind::ALL {
            assert_eq!(s.name().parse::<StreamKind>().unwrap(), s);
        }
        assert!("depth".parse::<StreamKind>().is_err());
    }
}
