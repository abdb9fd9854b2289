//! Mask overlays: body in green, hands in blue.

use ndarray::ArrayView2;

use crate::video::Frame;

pub const BODY_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const HANDS_COLOR: [f32; 3] = [0.0, 0.0, 1.0];
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Blends `color` into the masked pixels; the rest of the frame is untouched.
pub fn overlay(frame: &Frame, mask: ArrayView2<bool>, color: [f32; 3]) -> Frame {
    let mut out = frame.clone();
    for ((y, x, c), v) in out.indexed_iter_mut() {
        if mask[[y, x]] {
            *v = (1.0 - OVERLAY_ALPHA) * *v + OVERLAY_ALPHA * color[c];
        }
    }
    out
}

/// `count` indices spread evenly over `sampled`.
pub fn pick_evenly(sampled: &[usize], count: usize) -> Vec<usize> {
    let n = count.min(sampled.len());
    (0..n).map(|j| sampled[j * sampled.len() / n]).collect()
}
