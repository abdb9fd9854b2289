//! Synthetic signer videos for desk-scale end-to-end runs.
//!
//! A signer is a flat-coloured head, torso, two sleeves and two gloves over a
//! noisy grey background. Each class is a distinct hand trajectory, so the
//! label is recoverable from motion alone and per-part ground-truth masks fall
//! out of the renderer.

use std::f32::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::video::{save_video, write_mask_png, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyPart {
    Face = 0,
    Shirt = 1,
    Sleeve = 2,
    LeftGlove = 3,
    RightGlove = 4,
}

impl BodyPart {
    pub const ALL: [BodyPart; 5] = [
        BodyPart::Face,
        BodyPart::Shirt,
        BodyPart::Sleeve,
        BodyPart::LeftGlove,
        BodyPart::RightGlove,
    ];
}

/// Colours used to render the synthetic signer, in 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignerPalette {
    pub face: [u8; 3],
    pub shirt: [u8; 3],
    pub sleeve: [u8; 3],
    pub left_glove: [u8; 3],
    pub right_glove: [u8; 3],
    /// Maximum RGB distance (0..255 scale) for a pixel to count as a part.
    pub tolerance: f32,
}

impl Default for SignerPalette {
    fn default() -> Self {
        Self {
            face: [225, 185, 150],
            shirt: [40, 60, 150],
            sleeve: [70, 40, 110],
            left_glove: [235, 90, 60],
            right_glove: [60, 200, 90],
            tolerance: 48.0,
        }
    }
}

impl SignerPalette {
    pub fn color(&self, part: BodyPart) -> [u8; 3] {
        match part {
            BodyPart::Face => self.face,
            BodyPart::Shirt => self.shirt,
            BodyPart::Sleeve => self.sleeve,
            BodyPart::LeftGlove => self.left_glove,
            BodyPart::RightGlove => self.right_glove,
        }
    }

    /// Nearest part colour within `tolerance`, if any.
    pub fn classify(&self, rgb: [f32; 3]) -> Option<BodyPart> {
        let mut best = None;
        let mut best_d = self.tolerance * self.tolerance;
        for part in BodyPart::ALL {
            let c = self.color(part);
            let d: f32 = (0..3)
                .map(|i| {
                    let diff = rgb[i] * 255.0 - c[i] as f32;
                    diff * diff
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = Some(part);
            }
        }
        best
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("palette serializes");
        hex::encode(&Sha256::digest(json)[..6])
    }
}

/// Geometry of one rendered frame, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignerPose {
    pub head: (f32, f32),
    pub head_radius: f32,
    /// x0, y0, x1, y1 (inclusive)
    pub torso: (f32, f32, f32, f32),
    pub left_hand: (f32, f32),
    pub right_hand: (f32, f32),
    pub hand_radius: f32,
    pub arm_width: f32,
}

impl SignerPose {
    pub fn neutral(height: usize, width: usize) -> Self {
        let (h, w) = (height as f32, width as f32);
        let cx = w / 2.0;
        Self {
            head: (cx, 0.25 * h),
            head_radius: 0.1 * h,
            torso: (cx - 0.16 * w, 0.4 * h, cx + 0.16 * w, h - 1.0),
            left_hand: (cx + 0.12 * w, 0.85 * h),
            right_hand: (cx - 0.12 * w, 0.85 * h),
            hand_radius: 0.065 * h,
            arm_width: 0.045 * h,
        }
    }

    /// Signer's left shoulder (image right), where the left sleeve starts.
    pub fn left_shoulder(&self) -> (f32, f32) {
        (self.torso.2 - 3.0, self.torso.1 + 3.0)
    }

    pub fn right_shoulder(&self) -> (f32, f32) {
        (self.torso.0 + 3.0, self.torso.1 + 3.0)
    }
}

/// Ground-truth part masks for one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMasks {
    pub body: Array2<bool>,
    pub left_hand: Array2<bool>,
    pub right_hand: Array2<bool>,
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Renders one frame. `background` is the base RGB in `[0, 1]`; with `noise`
/// every channel gets uniform jitter of up to 4/255.
pub fn render_signer(
    palette: &SignerPalette,
    pose: &SignerPose,
    height: usize,
    width: usize,
    background: [f32; 3],
    mut noise: Option<&mut ChaCha8Rng>,
) -> (Frame, PartMasks) {
    let mut labels = Array2::<u8>::from_elem((height, width), u8::MAX);
    let r2 = |c: (f32, f32), r: f32, x: f32, y: f32| (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r;
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f32, y as f32);
            let mut label = u8::MAX;
            let (x0, y0, x1, y1) = pose.torso;
            if fx >= x0 && fx <= x1 && fy >= y0 && fy <= y1 {
                label = BodyPart::Shirt as u8;
            }
            if r2(pose.head, pose.head_radius, fx, fy) {
                label = BodyPart::Face as u8;
            }
            let half = pose.arm_width / 2.0;
            if segment_distance((fx, fy), pose.left_shoulder(), pose.left_hand) <= half
                || segment_distance((fx, fy), pose.right_shoulder(), pose.right_hand) <= half
            {
                label = BodyPart::Sleeve as u8;
            }
            if r2(pose.left_hand, pose.hand_radius, fx, fy) {
                label = BodyPart::LeftGlove as u8;
            }
            if r2(pose.right_hand, pose.hand_radius, fx, fy) {
                label = BodyPart::RightGlove as u8;
            }
            labels[[y, x]] = label;
        }
    }
    let mut frame = Array3::<f32>::zeros((height, width, 3));
    for y in 0..height {
        for x in 0..width {
            let base = match labels[[y, x]] {
                u8::MAX => background,
                l => {
                    let c = palette.color(BodyPart::ALL[l as usize]);
                    [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]
                }
            };
            for c in 0..3 {
                let jitter = match noise.as_deref_mut() {
                    Some(rng) => rng.gen_range(-4.0f32..=4.0) / 255.0,
                    None => 0.0,
                };
                frame[[y, x, c]] = (base[c] + jitter).clamp(0.0, 1.0);
            }
        }
    }
    let masks = PartMasks {
        body: labels.mapv(|l| l != u8::MAX),
        left_hand: labels.mapv(|l| l == BodyPart::LeftGlove as u8),
        right_hand: labels.mapv(|l| l == BodyPart::RightGlove as u8),
    };
    (frame, masks)
}

/// One hand-trajectory pattern per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    Wave,
    Sweep,
    Circles,
    Raise,
    Clap,
    Point,
}

impl Gesture {
    pub const ALL: [Gesture; 6] = [
        Gesture::Wave,
        Gesture::Sweep,
        Gesture::Circles,
        Gesture::Raise,
        Gesture::Clap,
        Gesture::Point,
    ];
}

/// Per-video jitter applied on top of a gesture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub amplitude: f32,
    pub speed: f32,
    pub phase: f32,
    pub offset: (f32, f32),
}

impl Variation {
    pub fn none() -> Self {
        Self {
            amplitude: 1.0,
            speed: 1.0,
            phase: 0.0,
            offset: (0.0, 0.0),
        }
    }

    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            amplitude: rng.gen_range(0.85..1.15),
            speed: rng.gen_range(0.9..1.1),
            phase: rng.gen_range(0.0..0.5),
            offset: (rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..3.0)),
        }
    }
}

fn triangle(u: f32) -> f32 {
    1.0 - (2.0 * u.rem_euclid(1.0) - 1.0).abs()
}

fn lerp(a: (f32, f32), b: (f32, f32), t: f32) -> (f32, f32) {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

/// Signer geometry at frame `t` of a `len`-frame video.
pub fn gesture_pose(
    gesture: Gesture,
    var: &Variation,
    t: usize,
    len: usize,
    height: usize,
    width: usize,
) -> SignerPose {
    let (h, w) = (height as f32, width as f32);
    let mut pose = SignerPose::neutral(height, width);
    let (ox, oy) = var.offset;
    pose.head.0 += ox;
    pose.head.1 += oy;
    pose.torso.0 += ox;
    pose.torso.2 += ox;
    pose.torso.1 += oy;
    pose.left_hand.0 += ox;
    pose.right_hand.0 += ox;
    let cx = w / 2.0 + ox;
    let s = t as f32 / (len.max(2) - 1) as f32;
    let a = var.amplitude;
    let f = var.speed;
    let ph = var.phase * 2.0 * PI;
    let rest_l = pose.left_hand;
    let rest_r = pose.right_hand;
    match gesture {
        Gesture::Wave => {
            pose.right_hand = (cx - 0.24 * w, 0.5 * h + 0.15 * h * a * (2.0 * PI * 2.0 * f * s + ph).sin());
        }
        Gesture::Sweep => {
            pose.right_hand = (cx - 0.3 * w + 0.55 * w * a * triangle(f * s), 0.58 * h);
        }
        Gesture::Circles => {
            let ang = 2.0 * PI * f * s + ph;
            let r = 0.12 * h * a;
            pose.right_hand = (cx - 0.2 * w + r * ang.cos(), 0.6 * h + r * ang.sin());
            pose.left_hand = (cx + 0.2 * w - r * ang.cos(), 0.6 * h + r * ang.sin());
        }
        Gesture::Raise => {
            let k = (1.6 * s * f).min(1.0);
            let k = k * k * (3.0 - 2.0 * k);
            pose.right_hand = lerp(rest_r, (cx - 0.08 * w * a, 0.3 * h), k);
            pose.left_hand = lerp(rest_l, (cx + 0.08 * w * a, 0.3 * h), k);
        }
        Gesture::Clap => {
            let d = 0.05 * w + 0.2 * w * a * (2.0 * PI * 1.5 * f * s + ph).cos().abs();
            pose.right_hand = (cx - d, 0.55 * h);
            pose.left_hand = (cx + d, 0.55 * h);
        }
        Gesture::Point => {
            pose.right_hand = lerp(rest_r, (cx - 0.4 * w, 0.2 * h), triangle(f * s) * a.min(1.0));
        }
    }
    let r = pose.hand_radius;
    for hand in [&mut pose.left_hand, &mut pose.right_hand] {
        hand.0 = hand.0.clamp(r + 1.0, w - r - 2.0);
        hand.1 = hand.1.clamp(r + 1.0, h - r - 2.0);
    }
    pose
}

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    #[serde(default)]
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_per_class: 10,
            val_per_class: 3,
            test_per_class: 0,
            height: 120,
            width: 160,
            min_len: 28,
            max_len: 48,
            seed: 0,
        }
    }
}

/// A rendered video with its per-frame ground truth.
pub struct SynthVideo {
    pub gesture: Gesture,
    pub frames: Vec<Frame>,
    pub masks: Vec<PartMasks>,
}

pub fn render_video(
    palette: &SignerPalette,
    gesture: Gesture,
    var: &Variation,
    len: usize,
    height: usize,
    width: usize,
    background: [f32; 3],
    mut noise: Option<&mut ChaCha8Rng>,
) -> SynthVideo {
    let mut frames = Vec::with_capacity(len);
    let mut masks = Vec::with_capacity(len);
    for t in 0..len {
        let pose = gesture_pose(gesture, var, t, len, height, width);
        let (f, m) = render_signer(palette, &pose, height, width, background, noise.as_deref_mut());
        frames.push(f);
        masks.push(m);
    }
    SynthVideo {
        gesture,
        frames,
        masks,
    }
}

/// Writes a synthetic dataset under `root`: frame directories, IsoGD-style
/// split lists, and `gt/<video_id>/<part>/NNNNN.png` masks.
///
/// Output depends only on `spec` and `palette`.
pub fn synth_dataset(spec: &SynthSpec, palette: &SignerPalette, root: &Path) -> Result<(), DatasetError> {
    if spec.num_classes == 0 || spec.num_classes > Gesture::ALL.len() {
        return Err(DatasetError::Synth(format!(
            "num_classes must be in 1..={}, got {}",
            Gesture::ALL.len(),
            spec.num_classes
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(DatasetError::Synth(format!(
            "bad length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    fs::create_dir_all(root).map_err(DatasetError::io(root))?;
    let splits = [
        ("train", "train_list.txt", spec.train_per_class),
        ("valid", "valid_list.txt", spec.val_per_class),
        ("test", "test_list.txt", spec.test_per_class),
    ];
    let mut ordinal: u64 = 0;
    for (dir, list_name, per_class) in splits {
        if per_class == 0 {
            continue;
        }
        let mut list = String::new();
        for i in 0..per_class {
            for class in 0..spec.num_classes {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (ordinal.wrapping_mul(0x9E37_79B9_7F4A_7C15) + 1));
                ordinal += 1;
                let name = format!("v{:04}", i * spec.num_classes + class);
                let rel = format!("{dir}/{name}");
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let var = Variation::sample(&mut rng);
                let tint: f32 = rng.gen_range(-15.0..15.0);
                let bg = [
                    (128.0 + tint) / 255.0,
                    (128.0 + 0.5 * tint) / 255.0,
                    (128.0 - 0.5 * tint) / 255.0,
                ];
                let video = render_video(
                    palette,
                    Gesture::ALL[class],
                    &var,
                    len,
                    spec.height,
                    spec.width,
                    bg,
                    Some(&mut rng),
                );
                let vdir = root.join(&rel);
                save_video(&vdir, &video.frames)?;
                let gt = root.join("gt").join(super::video_id_from_path(&rel));
                for part in ["body", "left_hand", "right_hand"] {
                    fs::create_dir_all(gt.join(part)).map_err(DatasetError::io(&gt))?;
                }
                for (t, m) in video.masks.iter().enumerate() {
                    let name = format!("{t:05}.png");
                    write_mask_png(&gt.join("body").join(&name), m.body.view())?;
                    write_mask_png(&gt.join("left_hand").join(&name), m.left_hand.view())?;
                    write_mask_png(&gt.join("right_hand").join(&name), m.right_hand.view())?;
                }
                if dir == "test" {
                    list.push_str(&format!("{rel} {rel}_depth\n"));
                } else {
                    list.push_str(&format!("{rel} {rel}_depth {class}\n"));
                }
            }
        }
        let path = root.join(list_name);
        let mut f = fs::File::create(&path).map_err(DatasetError::io(&path))?;
        f.write_all(list.as_bytes()).map_err(DatasetError::io(&path))?;
    }
    Ok(())
}
