//! On-disk masklet layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/mask_00000.png      1-bit grayscale
//! <dir>/logits_00000.bin    deflated little-endian i16, value = round(logit * LOGIT_SCALE)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MaskFrame, Masklet, SegmentError, LOGIT_BOUND};
use crate::prompting::Target;
use crate::video::{read_mask_png, write_mask_png};

/// Fixed-point steps per logit unit. Quantization error is at most `0.5 / LOGIT_SCALE`.
pub const LOGIT_SCALE: f32 = 1000.0;

const MANIFEST: &str = "manifest.json";
const ENCODING: &str = "i16le-deflate";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    target: Target,
    anchor_frame: usize,
    height: usize,
    width: usize,
    backend: String,
    num_frames: usize,
    logit_encoding: String,
    logit_scale: f32,
}

fn quantize(l: f32) -> i16 {
    let q = (l.clamp(-LOGIT_BOUND, LOGIT_BOUND) * LOGIT_SCALE).round() as i16;
    // keep the sign so that `mask == logits > 0` survives the round trip
    if l > 0.0 && q <= 0 {
        1
    } else if l <= 0.0 && q > 0 {
        0
    } else {
        q
    }
}

fn encode_logits(logits: &Array2<f32>) -> std::io::Result<Vec<u8>> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::fast());
    let mut buf = Vec::with_capacity(logits.len() * 2);
    for &l in logits.iter() {
        buf.extend_from_slice(&quantize(l).to_le_bytes());
    }
    enc.write_all(&buf)?;
    enc.finish()
}

fn decode_logits(bytes: &[u8], height: usize, width: usize) -> Result<Array2<f32>, SegmentError> {
    let mut raw = Vec::new();
    DeflateDecoder::new(bytes).read_to_end(&mut raw)?;
    if raw.len() != height * width * 2 {
        return Err(SegmentError::Dimensions(format!(
            "logit array holds {} values, expected {height}x{width}",
            raw.len() / 2
        )));
    }
    let values: Vec<f32> = raw
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / LOGIT_SCALE)
        .collect();
    Ok(Array2::from_shape_vec((height, width), values).expect("length checked"))
}

/// Writes `m` into `dir`, replacing any previous contents of the same names.
///
/// Logits are clamped to `±LOGIT_BOUND` before quantization.
pub fn save_masklet(m: &Masklet, dir: &Path) -> Result<(), SegmentError> {
    m.validate()?;
    fs::create_dir_all(dir)?;
    for f in &m.frames {
        write_mask_png(&dir.join(format!("mask_{:05}.png", f.frame_index)), f.mask.view())?;
        fs::write(
            dir.join(format!("logits_{:05}.bin", f.frame_index)),
            encode_logits(&f.logits)?,
        )?;
    }
    let manifest = Manifest {
        target: m.target,
        anchor_frame: m.anchor_frame,
        height: m.height,
        width: m.width,
        backend: m.backend.clone(),
        num_frames: m.frames.len(),
        logit_encoding: ENCODING.into(),
        logit_scale: LOGIT_SCALE,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SegmentError::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

pub fn load_masklet(dir: &Path) -> Result<Masklet, SegmentError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let man: Manifest = serde_json::from_str(&text).map_err(|e| SegmentError::Format(format!("manifest: {e}")))?;
    if man.logit_encoding != ENCODING || man.logit_scale != LOGIT_SCALE {
        return Err(SegmentError::Format(format!(
            "unsupported logit encoding {} (scale {})",
            man.logit_encoding, man.logit_scale
        )));
    }
    let mut frames = Vec::with_capacity(man.num_frames);
    for i in 0..man.num_frames {
        let mask = read_mask_png(&dir.join(format!("mask_{i:05}.png")))?;
        if mask.dim() != (man.height, man.width) {
            return Err(SegmentError::Dimensions(format!(
                "mask {i} is {:?}, manifest says {}x{}",
                mask.dim(),
                man.height,
                man.width
            )));
        }
        let bytes = fs::read(dir.join(format!("logits_{i:05}.bin")))?;
        let logits = decode_logits(&bytes, man.height, man.width)?;
        frames.push(MaskFrame {
            frame_index: i,
            mask,
            logits,
        });
    }
    let m = Masklet {
        target: man.target,
        anchor_frame: man.anchor_frame,
        height: man.height,
        width: man.width,
        backend: man.backend,
        frames,
    };
    m.validate()?;
    Ok(m)
}
