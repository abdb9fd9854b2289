//! Anchor-frame selection for segmentation.
//!
//! Each frame is scored by mean keypoint confidence, the area of the box around
//! all detected keypoints, and the largest hand/face box overlap. Confidence
//! and area are divided by their per-video maxima, overlap enters as
//! `1 - overlap`, and the three factors are multiplied.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pose::{Hand, KeypointFrame, KeypointTaxonomy, VideoPoseTrack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub avg_conf: f64,
    pub bbox_area: f64,
    pub overlap: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.max_x.min(other.max_x) - self.min_x.max(other.min_x);
        let h = self.max_y.min(other.max_y) - self.min_y.max(other.min_y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Box around the detected keypoints among `indices`; `None` if there are none.
pub fn keypoint_bbox(kf: &KeypointFrame, indices: &[usize]) -> Option<BBox> {
    kf.detected_in(indices).fold(None, |acc, (_, k)| {
        let (x, y) = (k.x as f64, k.y as f64);
        Some(match acc {
            None => BBox {
                min_x: x,
                min_y: y,
                max_x: x,
                max_y: y,
            },
            Some(b) => BBox {
                min_x: b.min_x.min(x),
                min_y: b.min_y.min(y),
                max_x: b.max_x.max(x),
                max_y: b.max_y.max(y),
            },
        })
    })
}

pub fn keypoint_bbox_area(kf: &KeypointFrame, indices: &[usize]) -> f64 {
    keypoint_bbox(kf, indices).map_or(0.0, |b| b.area())
}

/// Mean confidence over detected keypoints, 0 when none are detected.
pub fn avg_confidence(kf: &KeypointFrame) -> f64 {
    let (sum, n) = kf
        .detected()
        .fold((0.0f64, 0usize), |(s, n), k| (s + k.confidence as f64, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Largest `intersection / min(hand area, face area)` over both hands.
/// A hand whose box (or the face box) is degenerate contributes 0.
pub fn face_hand_overlap(kf: &KeypointFrame, tax: &KeypointTaxonomy) -> f64 {
    let Some(face) = keypoint_bbox(kf, &tax.groups.face_detail) else {
        return 0.0;
    };
    let face_area = face.area();
    if face_area <= 0.0 {
        return 0.0;
    }
    [Hand::Left, Hand::Right]
        .into_iter()
        .filter_map(|h| keypoint_bbox(kf, tax.hand_all(h)))
        .map(|hb| {
            let a = hb.area();
            if a <= 0.0 {
                0.0
            } else {
                hb.intersection_area(&face) / a.min(face_area)
            }
        })
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0)
}

fn ratio(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

pub fn score_frames(track: &VideoPoseTrack, tax: &KeypointTaxonomy) -> Vec<FrameScore> {
    let all: Vec<usize> = (0..tax.total_count).collect();
    let raw: Vec<(f64, f64, f64)> = track
        .frames
        .iter()
        .map(|kf| {
            (
                avg_confidence(kf),
                keypoint_bbox_area(kf, &all),
                face_hand_overlap(kf, tax),
            )
        })
        .collect();
    let max_conf = raw.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_area = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    track
        .frames
        .iter()
        .zip(raw)
        .map(|(kf, (c, a, o))| FrameScore {
            frame_index: kf.frame_index,
            avg_conf: c,
            bbox_area: a,
            overlap: o,
            combined: ratio(c, max_conf) * ratio(a, max_area) * (1.0 - o),
        })
        .collect()
}

/// Index of the highest combined score, earliest frame on ties; frame 0 when
/// every score is zero.
pub fn best_of(scores: &[FrameScore]) -> usize {
    let mut best = 0;
    let mut best_score = 0.0;
    for (i, s) in scores.iter().enumerate() {
        if s.combined > best_score {
            best = i;
            best_score = s.combined;
        }
    }
    scores.get(best).map_or(0, |s| s.frame_index)
}

pub fn select_best_frame(track: &VideoPoseTrack, tax: &KeypointTaxonomy) -> usize {
    best_of(&score_frames(track, tax))
}

/// Tab-separated audit table with a header row.
pub fn score_table(scores: &[FrameScore]) -> String {
    let mut out = String::from("frame_index\tavg_conf\tbbox_area\toverlap\tcombined\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.3}\t{:.6}\t{:.6}",
            s.frame_index, s.avg_conf, s.bbox_area, s.overlap, s.combined
        );
    }
    out
}
