use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StreamClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub dx: i32,
    pub dy: i32,
    pub brightness: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        dx: 0,
        dy: 0,
        brightness: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub max_shift: i32,
    pub brightness_min: f32,
    pub brightness_max: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_shift: 16,
            brightness_min: 0.8,
            brightness_max: 1.2,
        }
    }
}

impl AugmentConfig {
    /// One draw per (seed, run, epoch, video); every stream of that sample
    /// receives the same parameters. Eval mode always gets the identity.
    pub fn params(&self, mode: Mode, seed: u64, run: usize, epoch: usize, video_id: &str) -> AugmentParams {
        if mode == Mode::Eval || !self.enabled {
            return AugmentParams::IDENTITY;
        }
        let digest = Sha256::digest(format!("augment/{seed}/{run}/{epoch}/{video_id}").as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let r = self.max_shift.abs();
        let brightness = if self.brightness_max > self.brightness_min {
            rng.gen_range(self.brightness_min..=self.brightness_max)
        } else {
            self.brightness_min
        };
        AugmentParams {
            dx: rng.gen_range(-r..=r),
            dy: rng.gen_range(-r..=r),
            brightness,
        }
    }
}

/// Source and destination ranges `(src_y, dst_y, rows, src_x, dst_x, cols)`
/// for a shift; `None` when nothing of the source remains visible.
pub(super) fn shift_spans(dx: i32, dy: i32, h: usize, w: usize) -> Option<(usize, usize, usize, usize, usize, usize)> {
    let axis = |d: i32, n: usize| {
        let m = d.unsigned_abs() as usize;
        if m >= n {
            None
        } else if d >= 0 {
            Some((0, m, n - m))
        } else {
            Some((m, 0, n - m))
        }
    };
    let (sy, ty, ny) = axis(dy, h)?;
    let (sx, tx, nx) = axis(dx, w)?;
    Some((sy, ty, ny, sx, tx, nx))
}

/// Writes the shifted, brightness-adjusted image of `src` into `out`, which
/// must be pre-filled with the stream's fill value.
pub(super) fn shift_into<T: Copy>(
    src: ndarray::ArrayView4<T>,
    out: &mut Array4<f32>,
    p: AugmentParams,
    brightness: bool,
    value: impl Fn(T) -> f32,
) {
    let (_, h, w, _) = src.dim();
    let Some((sy, ty, ny, sx, tx, nx)) = shift_spans(p.dx, p.dy, h, w) else {
        return;
    };
    let b = if brightness { p.brightness } else { 1.0 };
    let scaled = b != 1.0;
    out.slice_mut(s![.., ty..ty + ny, tx..tx + nx, ..])
        .zip_mut_with(&src.slice(s![.., sy..sy + ny, sx..sx + nx, ..]), |o, &v| {
            let v = value(v);
            *o = if scaled { (v * b).clamp(0.0, 1.0) } else { v };
        });
}

pub(super) fn filled(stream: super::StreamKind, dim: (usize, usize, usize, usize)) -> Array4<f32> {
    let fill = stream.fill();
    let mut out = Array4::zeros(dim);
    for ch in 0..dim.3 {
        out.slice_mut(s![.., .., .., ch]).fill(fill[ch.min(2)]);
    }
    out
}

/// Translates every frame by `(dx, dy)` (positive = right/down), filling
/// vacated pixels with the stream's fill value, then scales and clamps
/// intensities for RGB-type streams.
pub fn augment(clip: &StreamClip, p: AugmentParams) -> StreamClip {
    if p.is_identity() {
        return clip.clone();
    }
    let mut out = filled(clip.stream, clip.data.dim());
    shift_into(clip.data.view(), &mut out, p, clip.stream.takes_brightness(), |v| v);
    StreamClip {
        stream: clip.stream,
        data: out,
    }
}
