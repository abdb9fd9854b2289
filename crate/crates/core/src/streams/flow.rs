use std::collections::HashMap;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use thiserror::Error;

use super::{center_crop, check_frames, sample_indices, stack, StreamClip, StreamError, StreamKind, CROP_SIZE};
use crate::video::Frame;

/// Flow magnitude (pixels per frame) that maps to the ends of `[0, 1]`.
pub const DEFAULT_MAX_FLOW: f32 = 16.0;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct FlowError(pub String);

/// Dense optical flow between two frames, returned as `(H, W, 2)` with
/// channel 0 = horizontal and channel 1 = vertical displacement in pixels.
pub trait FlowAdapter: Sync {
    fn backend_id(&self) -> String;

    fn flow(&self, prev: &Frame, next: &Frame) -> Result<Array3<f32>, FlowError>;
}

fn gray(frame: &Frame) -> Array2<f32> {
    frame.map_axis(Axis(2), |px| px.iter().sum::<f32>() * (255.0 / 3.0))
}

/// Single-scale Horn–Schunck on grayscale intensities in 0..255.
#[derive(Debug, Clone)]
pub struct HornSchunck {
    pub alpha: f32,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            iterations: 30,
        }
    }
}

fn neighbour_mean(f: &Array2<f32>) -> Array2<f32> {
    let (h, w) = f.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let up = f[[y.saturating_sub(1), x]];
        let down = f[[(y + 1).min(h - 1), x]];
        let left = f[[y, x.saturating_sub(1)]];
        let right = f[[y, (x + 1).min(w - 1)]];
        0.25 * (up + down + left + right)
    })
}

impl FlowAdapter for HornSchunck {
    fn backend_id(&self) -> String {
        format!("horn-schunck:a={},n={}", self.alpha, self.iterations)
    }

    fn flow(&self, prev: &Frame, next: &Frame) -> Result<Array3<f32>, FlowError> {
        if prev.dim() != next.dim() {
            return Err(FlowError(format!("frame shapes differ: {:?} vs {:?}", prev.dim(), next.dim())));
        }
        let (a, b) = (gray(prev), gray(next));
        let (h, w) = a.dim();
        let avg = |y: usize, x: usize| 0.5 * (a[[y, x]] + b[[y, x]]);
        let ix = Array2::from_shape_fn((h, w), |(y, x)| {
            0.5 * (avg(y, (x + 1).min(w - 1)) - avg(y, x.saturating_sub(1)))
        });
        let iy = Array2::from_shape_fn((h, w), |(y, x)| {
            0.5 * (avg((y + 1).min(h - 1), x) - avg(y.saturating_sub(1), x))
        });
        let it = &b - &a;
        let a2 = self.alpha * self.alpha;
        let denom = Array2::from_shape_fn((h, w), |p| a2 + ix[p] * ix[p] + iy[p] * iy[p]);
        let mut u = Array2::<f32>::zeros((h, w));
        let mut v = Array2::<f32>::zeros((h, w));
        for _ in 0..self.iterations {
            let (ub, vb) = (neighbour_mean(&u), neighbour_mean(&v));
            for y in 0..h {
                for x in 0..w {
                    let p = [y, x];
                    let t = (ix[p] * ub[p] + iy[p] * vb[p] + it[p]) / denom[p];
                    u[p] = ub[p] - ix[p] * t;
                    v[p] = vb[p] - iy[p] * t;
                }
            }
        }
        let mut out = Array3::zeros((h, w, 2));
        out.index_axis_mut(Axis(2), 0).assign(&u);
        out.index_axis_mut(Axis(2), 1).assign(&v);
        Ok(out)
    }
}

/// Exhaustive search for the integer shift that best explains `next` as a
/// translated `prev`; the result is constant flow.
#[derive(Debug, Clone)]
pub struct GlobalTranslation {
    pub max_shift: i32,
}

impl Default for GlobalTranslation {
    fn default() -> Self {
        Self { max_shift: 4 }
    }
}

impl FlowAdapter for GlobalTranslation {
    fn backend_id(&self) -> String {
        format!("global-translation:{}", self.max_shift)
    }

    fn flow(&self, prev: &Frame, next: &Frame) -> Result<Array3<f32>, FlowError> {
        if prev.dim() != next.dim() {
            return Err(FlowError(format!("frame shapes differ: {:?} vs {:?}", prev.dim(), next.dim())));
        }
        let (a, b) = (gray(prev), gray(next));
        let (h, w) = (a.nrows() as i32, a.ncols() as i32);
        let r = self.max_shift;
        let mut best = (f32::INFINITY, 0, 0);
        let mut shifts: Vec<(i32, i32)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
        shifts.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
        for (dx, dy) in shifts {
            let (mut sum, mut n) = (0.0f32, 0usize);
            for y in dy.max(0)..(h + dy.min(0)) {
                for x in dx.max(0)..(w + dx.min(0)) {
                    sum += (b[[y as usize, x as usize]] - a[[(y - dy) as usize, (x - dx) as usize]]).abs();
                    n += 1;
                }
            }
            if n > 0 && sum / (n as f32) < best.0 {
                best = (sum / n as f32, dx, dy);
            }
        }
        let mut out = Array3::zeros((h as usize, w as usize, 2));
        out.index_axis_mut(Axis(2), 0).fill(best.1 as f32);
        out.index_axis_mut(Axis(2), 1).fill(best.2 as f32);
        Ok(out)
    }
}

/// `(H, W, 2)` pixel flow to three channels in `[0, 1]`: both components
/// centred on 0.5, then magnitude.
pub fn normalize_flow(flow: ArrayView3<f32>, max_flow: f32) -> Array3<f32> {
    let (h, w, _) = flow.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (flow[[y, x, 0]], flow[[y, x, 1]]);
            out[[y, x, 0]] = 0.5 + (u / max_flow).clamp(-1.0, 1.0) / 2.0;
            out[[y, x, 1]] = 0.5 + (v / max_flow).clamp(-1.0, 1.0) / 2.0;
            out[[y, x, 2]] = (u.hypot(v) / max_flow).min(1.0);
        }
    }
    out
}

/// Flow for frame `t` is `flow(t-1 -> t)`, frame 0 reuses frame 1, and a
/// single-frame video has zero flow. Padding is zero motion.
pub fn flow_clip(frames: &[Frame], adapter: &dyn FlowAdapter, max_flow: f32) -> Result<StreamClip, StreamError> {
    let (h, w) = check_frames(frames)?;
    let mut memo: HashMap<usize, Array3<f32>> = HashMap::new();
    let mut out = Vec::new();
    for i in sample_indices(frames.len()) {
        let t = i.max(1);
        if !memo.contains_key(&t) {
            let raw = if frames.len() == 1 {
                Array3::zeros((h, w, 2))
            } else {
                let f = adapter.flow(&frames[t - 1], &frames[t])?;
                if f.dim() != (h, w, 2) {
                    return Err(StreamError::Dimensions(format!("flow backend returned {:?}", f.dim())));
                }
                f
            };
            let cropped = center_crop(raw.view(), CROP_SIZE);
            memo.insert(t, normalize_flow(cropped.view(), max_flow));
        }
        out.push(memo[&t].clone());
    }
    Ok(stack(StreamKind::Flow, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>())
    }

    fn shift_right(f: &Frame, by: usize) -> Frame {
        let (h, w, c) = f.dim();
        Array3::from_shape_fn((h, w, c), |(y, x, ch)| if x >= by { f[[y, x - by, ch]] } else { 0.0 })
    }

    #[test]
    fn static_video_is_neutral() {
        let f = textured(30, 40, 1);
        let frames = vec![f.clone(), f.clone(), f];
        let clip = flow_clip(&frames, &HornSchunck::default(), DEFAULT_MAX_FLOW).unwrap();
        assert!(clip.shape_ok());
        for px in clip.data.lanes(Axis(3)) {
            assert_eq!(px[0], 0.5);
            assert_eq!(px[1], 0.5);
            assert_eq!(px[2], 0.0);
        }
    }

    #[test]
    fn unit_horizontal_shift_gives_unit_x_flow() {
        let a = textured(40, 50, 2);
        let b = shift_right(&a, 1);
        let f = GlobalTranslation::default().flow(&a, &b).unwrap();
        assert!(f.index_axis(Axis(2), 0).iter().all(|&u| u == 1.0));
        assert!(f.index_axis(Axis(2), 1).iter().all(|&v| v == 0.0));
        let clip = flow_clip(&[a, b], &GlobalTranslation::default(), 16.0).unwrap();
        // inside the 40x50 source region
        let px = |c: usize| clip.data[[0, 112, 112, c]];
        assert!((px(0) - (0.5 + 1.0 / 32.0)).abs() < 1e-6);
        assert_eq!(px(1), 0.5);
        assert!((px(2) - 1.0 / 16.0).abs() < 1e-6);
    }

    #[test]
    fn horn_schunck_recovers_direction_of_small_shift() {
        let base = Array3::from_shape_fn((40, 60, 3), |(y, x, _)| {
            0.5 + 0.25 * ((x as f32 * 0.3).sin() + (y as f32 * 0.2).cos())
        });
        let next = Array3::from_shape_fn((40, 60, 3), |(y, x, _)| {
            0.5 + 0.25 * (((x as f32 - 1.0) * 0.3).sin() + (y as f32 * 0.2).cos())
        });
        let f = HornSchunck::default().flow(&base, &next).unwrap();
        let mean_u = f.slice(ndarray::s![10..30, 10..50, 0]).mean().unwrap();
        let mean_v = f.slice(ndarray::s![10..30, 10..50, 1]).mean().unwrap();
        assert!(mean_u > 0.3, "{mean_u}");
        assert!(mean_v.abs() < 0.2, "{mean_v}");
    }

    #[test]
    fn single_frame_has_zero_flow() {
        let clip = flow_clip(&[textured(10, 10, 3)], &HornSchunck::default(), 16.0).unwrap();
        assert!(clip.shape_ok());
        assert!(clip.data.iter().all(|&v| v == 0.5 || v == 0.0));
    }

    #[test]
    fn normalization_clamps() {
        let mut f = Array3::zeros((1, 2, 2));
        f[[0, 0, 0]] = 100.0;
        f[[0, 1, 1]] = -8.0;
        let n = normalize_flow(f.view(), 16.0);
        assert_eq!(n[[0, 0, 0]], 1.0);
        assert_eq!(n[[0, 0, 2]], 1.0);
        assert_eq!(n[[0, 1, 1]], 0.25);
        assert_eq!(n[[0, 1, 2]], 0.5);
    }
}
