//! Per-video clip cache: `manifest.json` plus one deflated `u8` tensor per
//! stream, `value = round(v * 255)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::augment::{filled, shift_into};
use super::{AugmentParams, StreamClip, StreamError, StreamKind, CHANNELS, CLIP_LEN, CROP_SIZE};
use crate::segmentation::LOGIT_BOUND;

pub const CLIP_QUANT_SCALE: f32 = 255.0;

/// A clip held as bytes; `to_clip` restores values within `0.5 / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedClip {
    pub stream: StreamKind,
    pub data: Array4<u8>,
}

impl QuantizedClip {
    pub fn from_clip(clip: &StreamClip) -> Self {
        Self {
            stream: clip.stream,
            data: clip.data.mapv(|v| (v.clamp(0.0, 1.0) * CLIP_QUANT_SCALE).round() as u8),
        }
    }

    pub fn to_clip(&self) -> StreamClip {
        StreamClip {
            stream: self.stream,
            data: self.data.mapv(|b| b as f32 / CLIP_QUANT_SCALE),
        }
    }

    /// Same as `augment(&self.to_clip(), p)` in a single pass.
    pub fn augmented(&self, p: AugmentParams) -> StreamClip {
        if p.is_identity() {
            return self.to_clip();
        }
        let mut out = filled(self.stream, self.data.dim());
        shift_into(self.data.view(), &mut out, p, self.stream.takes_brightness(), |b| {
            b as f32 / CLIP_QUANT_SCALE
        });
        StreamClip {
            stream: self.stream,
            data: out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub video_id: String,
    pub shape: [usize; 4],
    pub quant_scale: f32,
    pub logit_bound: f32,
    pub max_flow: f32,
    /// Stream name -> file name.
    pub streams: BTreeMap<String, String>,
}

const MANIFEST: &str = "manifest.json";

pub fn save_clips(dir: &Path, video_id: &str, clips: &[StreamClip], max_flow: f32) -> Result<ClipManifest, StreamError> {
    fs::create_dir_all(dir)?;
    let mut streams = BTreeMap::new();
    for clip in clips {
        clip.check()?;
        let q = QuantizedClip::from_clip(clip);
        let file = format!("{}.bin", clip.stream.name());
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(q.data.as_standard_layout().as_slice().expect("standard layout"))?;
        fs::write(dir.join(&file), enc.finish()?)?;
        streams.insert(clip.stream.name().to_string(), file);
    }
    let manifest = ClipManifest {
        video_id: video_id.to_string(),
        shape: [CLIP_LEN, CROP_SIZE, CROP_SIZE, CHANNELS],
        quant_scale: CLIP_QUANT_SCALE,
        logit_bound: LOGIT_BOUND,
        max_flow,
        streams,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| StreamError::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

pub fn load_clip_manifest(dir: &Path) -> Result<ClipManifest, StreamError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: ClipManifest = serde_json::from_str(&text).map_err(|e| StreamError::Format(format!("manifest: {e}")))?;
    if m.shape != [CLIP_LEN, CROP_SIZE, CROP_SIZE, CHANNELS] || m.quant_scale != CLIP_QUANT_SCALE {
        return Err(StreamError::Format(format!(
            "clip cache for {} has shape {:?} and scale {}",
            m.video_id, m.shape, m.quant_scale
        )));
    }
    Ok(m)
}

pub fn load_clip(dir: &Path, stream: StreamKind) -> Result<QuantizedClip, StreamError> {
    let m = load_clip_manifest(dir)?;
    let file = m
        .streams
        .get(stream.name())
        .ok_or_else(|| StreamError::Format(format!("{} has no {stream} clip", m.video_id)))?;
    let bytes = fs::read(dir.join(file))?;
    let mut raw = Vec::new();
    DeflateDecoder::new(bytes.as_slice()).read_to_end(&mut raw)?;
    let [t, h, w, c] = m.shape;
    let data = Array4::from_shape_vec((t, h, w, c), raw)
        .map_err(|e| StreamError::Dimensions(format!("{stream} clip of {}: {e}", m.video_id)))?;
    Ok(QuantizedClip { stream, data })
}
