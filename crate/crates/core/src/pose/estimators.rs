//! Reference pose backends.
//!
//! Real deployments plug a whole-body network in behind [`PoseEstimator`];
//! these two exist for tests and for the synthetic fixture.

use super::{EstimatorError, Keypoint, PoseEstimator};
use crate::dataset::{BodyPart, SignerPalette};
use crate::video::Frame;

/// Returns the same keypoints for every frame.
#[derive(Debug, Clone)]
pub struct ConstantEstimator {
    points: Vec<Keypoint>,
}

impl ConstantEstimator {
    pub fn new(points: Vec<Keypoint>) -> Self {
        Self { points }
    }
}

impl PoseEstimator for ConstantEstimator {
    fn backend_id(&self) -> String {
        "constant".into()
    }

    fn estimate(&self, _frame: &Frame) -> Result<Vec<Keypoint>, EstimatorError> {
        Ok(self.points.clone())
    }
}

// Default 116-point layout (see config/taxonomy_default.toml).
const NOSE: usize = 0;
const LEFT_EYE: usize = 1;
const RIGHT_EYE: usize = 2;
const LEFT_EAR: usize = 3;
const RIGHT_EAR: usize = 4;
const LEFT_SHOULDER: usize = 5;
const RIGHT_SHOULDER: usize = 6;
const LEFT_ELBOW: usize = 7;
const RIGHT_ELBOW: usize = 8;
const LEFT_WRIST: usize = 9;
const RIGHT_WRIST: usize = 10;
const LEFT_HIP: usize = 11;
const RIGHT_HIP: usize = 12;
const FACE_START: usize = 23;
const LEFT_HAND_START: usize = 74;
const RIGHT_HAND_START: usize = 95;
const LAYOUT_COUNT: usize = 116;

const MIN_BLOB_PIXELS: usize = 5;
const CORNER_INSET: f32 = 3.0;

#[derive(Debug, Clone, Copy, Default)]
struct Blob {
    count: usize,
    sum_x: f64,
    sum_y: f64,
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
}

impl Blob {
    fn add(&mut self, x: usize, y: usize) {
        if self.count == 0 {
            (self.min_x, self.max_x, self.min_y, self.max_y) = (x, x, y, y);
        } else {
            self.min_x = self.min_x.min(x);
            self.max_x = self.max_x.max(x);
            self.min_y = self.min_y.min(y);
            self.max_y = self.max_y.max(y);
        }
        self.count += 1;
        self.sum_x += x as f64;
        self.sum_y += y as f64;
    }

    fn found(&self) -> bool {
        self.count >= MIN_BLOB_PIXELS
    }

    fn centroid(&self) -> (f32, f32) {
        (
            (self.sum_x / self.count as f64) as f32,
            (self.sum_y / self.count as f64) as f32,
        )
    }

    fn half_extent(&self) -> (f32, f32) {
        (
            (self.max_x - self.min_x + 1) as f32 / 2.0,
            (self.max_y - self.min_y + 1) as f32 / 2.0,
        )
    }

    /// Fraction of the bounding ellipse covered by blob pixels.
    fn ellipse_fill(&self) -> f32 {
        let (rx, ry) = self.half_extent();
        (self.count as f32 / (std::f32::consts::PI * rx * ry)).min(1.0)
    }

    fn box_fill(&self) -> f32 {
        let (rx, ry) = self.half_extent();
        (self.count as f32 / (4.0 * rx * ry)).min(1.0)
    }
}

/// Face landmark template in head-radius units, iBUG 17..=67 order.
fn face_template() -> Vec<(f32, f32)> {
    let mut t = Vec::with_capacity(51);
    // brows
    for i in 0..5 {
        t.push((-0.8 + 0.15 * i as f32, -0.45));
    }
    for i in 0..5 {
        t.push((0.2 + 0.15 * i as f32, -0.45));
    }
    // nose bridge and base
    for i in 0..4 {
        t.push((0.0, -0.3 + 0.13 * i as f32));
    }
    for i in 0..5 {
        t.push((-0.2 + 0.1 * i as f32, 0.2));
    }
    // eyes
    for cx in [-0.4f32, 0.4] {
        for k in 0..6 {
            let a = std::f32::consts::PI - k as f32 * std::f32::consts::PI / 3.0;
            t.push((cx + 0.15 * a.cos(), -0.2 - 0.07 * a.sin()));
        }
    }
    // outer then inner lip, starting at the image-left corner
    for k in 0..12 {
        let a = std::f32::consts::PI - k as f32 * std::f32::consts::PI / 6.0;
        t.push((0.35 * a.cos(), 0.5 - 0.15 * a.sin()));
    }
    for k in 0..8 {
        let a = std::f32::consts::PI - k as f32 * std::f32::consts::PI / 4.0;
        t.push((0.2 * a.cos(), 0.5 - 0.07 * a.sin()));
    }
    t
}

/// Colour-segmentation pose estimator for signers rendered with a known
/// [`SignerPalette`].
///
/// Head, torso, and gloves are located as colour blobs; joints are placed on
/// them with a fixed template. Lower-body points are never detected, matching
/// a waist-up camera. Only valid for the default 116-point layout.
#[derive(Debug, Clone)]
pub struct ColorBlobEstimator {
    palette: SignerPalette,
    face_template: Vec<(f32, f32)>,
}

impl ColorBlobEstimator {
    pub fn new(palette: SignerPalette) -> Self {
        Self {
            palette,
            face_template: face_template(),
        }
    }

    fn place_hand(
        points: &mut [Keypoint],
        start: usize,
        wrist_slot: usize,
        blob: &Blob,
        shoulder: Option<(f32, f32)>,
    ) {
        let (cx, cy) = blob.centroid();
        let r = (blob.count as f32 / std::f32::consts::PI).sqrt();
        let (mut ux, mut uy) = match shoulder {
            Some((sx, sy)) => (cx - sx, cy - sy),
            None => (0.0, -1.0),
        };
        let norm = (ux * ux + uy * uy).sqrt();
        if norm > 1e-3 {
            ux /= norm;
            uy /= norm;
        } else {
            (ux, uy) = (0.0, -1.0);
        }
        let (px, py) = (-uy, ux);
        let conf = 0.5 + 0.45 * blob.ellipse_fill();
        let wrist = Keypoint::new(cx - 0.6 * r * ux, cy - 0.6 * r * uy, conf);
        points[start] = wrist;
        points[wrist_slot] = wrist;
        for finger in 0..5 {
            let spread = (finger as f32 - 2.0) * 0.25;
            for joint in 0..4 {
                let along = (-0.1 + 0.35 * joint as f32) * r;
                let side = spread * (1.0 + 0.3 * joint as f32) * r;
                points[start + 1 + finger * 4 + joint] = Keypoint::new(
                    cx + along * ux + side * px,
                    cy + along * uy + side * py,
                    conf * (1.0 - 0.08 * joint as f32),
                );
            }
        }
    }
}

impl PoseEstimator for ColorBlobEstimator {
    fn backend_id(&self) -> String {
        format!("color-blob:{}", self.palette.fingerprint())
    }

    fn estimate(&self, frame: &Frame) -> Result<Vec<Keypoint>, EstimatorError> {
        let (h, w, c) = frame.dim();
        if c != 3 {
            return Err(EstimatorError(format!("expected 3 channels, got {c}")));
        }
        let mut blobs = [Blob::default(); 5];
        for y in 0..h {
            for x in 0..w {
                let rgb = [frame[[y, x, 0]], frame[[y, x, 1]], frame[[y, x, 2]]];
                if let Some(part) = self.palette.classify(rgb) {
                    blobs[part as usize].add(x, y);
                }
            }
        }
        let mut points = vec![Keypoint::undetected(); LAYOUT_COUNT];

        let head = blobs[BodyPart::Face as usize];
        if head.found() {
            let (cx, cy) = head.centroid();
            let (rx, ry) = head.half_extent();
            let conf = 0.6 + 0.35 * head.ellipse_fill();
            let at = |u: f32, v: f32| Keypoint::new(cx + 0.85 * u * rx, cy + 0.85 * v * ry, conf);
            points[NOSE] = at(0.0, 0.1);
            points[LEFT_EYE] = at(0.4, -0.2);
            points[RIGHT_EYE] = at(-0.4, -0.2);
            points[LEFT_EAR] = at(0.8, 0.0);
            points[RIGHT_EAR] = at(-0.8, 0.0);
            for (i, &(u, v)) in self.face_template.iter().enumerate() {
                points[FACE_START + i] = at(u, v);
            }
        }

        let torso = blobs[BodyPart::Shirt as usize];
        let mut left_shoulder = None;
        let mut right_shoulder = None;
        if torso.found() {
            let conf = 0.55 + 0.4 * torso.box_fill();
            let (x0, x1) = (torso.min_x as f32 + CORNER_INSET, torso.max_x as f32 - CORNER_INSET);
            let (y0, y1) = (torso.min_y as f32 + CORNER_INSET, torso.max_y as f32 - CORNER_INSET);
            points[LEFT_SHOULDER] = Keypoint::new(x1, y0, conf);
            points[RIGHT_SHOULDER] = Keypoint::new(x0, y0, conf);
            points[LEFT_HIP] = Keypoint::new(x1, y1, conf * 0.9);
            points[RIGHT_HIP] = Keypoint::new(x0, y1, conf * 0.9);
            left_shoulder = Some((x1, y0));
            right_shoulder = Some((x0, y0));
        }

        for (part, start, wrist, elbow, shoulder) in [
            (BodyPart::LeftGlove, LEFT_HAND_START, LEFT_WRIST, LEFT_ELBOW, left_shoulder),
            (BodyPart::RightGlove, RIGHT_HAND_START, RIGHT_WRIST, RIGHT_ELBOW, right_shoulder),
        ] {
            let blob = blobs[part as usize];
            if !blob.found() {
                continue;
            }
            Self::place_hand(&mut points, start, wrist, &blob, shoulder);
            if let Some((sx, sy)) = shoulder {
                let (cx, cy) = blob.centroid();
                let conf = points[wrist].confidence.min(points[LEFT_SHOULDER].confidence);
                points[elbow] = Keypoint::new((sx + cx) / 2.0, (sy + cy) / 2.0, conf);
            }
        }
        Ok(points)
    }
}
