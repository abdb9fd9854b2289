//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segslr::cache::COMPLETE_MARKER;
use segslr::classify::{fit, fuse_scores, ClassifyError, EpochModel, ScoreVector};
use segslr::dataset::{synth_dataset, SignerPalette, SynthSpec};
use segslr::eval::ablation_rows;
use segslr::frame_selection::{score_frames, select_best_frame};
use segslr::pipeline::{Pipeline, PipelineConfig, PipelineReport, RunSummary, Stage, REPORT_JSON};
use segslr::pose::{Hand, Keypoint, KeypointFrame, KeypointTaxonomy, VideoPoseTrack};
use segslr::prompting::{body_prompts, hand_prompts, PromptSet, Target};
use segslr::segmentation::{segment_video, DiskSegmenter, MaskFrame, Masklet};
use segslr::streams::{build_clips, HornSchunck, StreamClip, StreamKind, VideoInputs, CLIP_LEN, CROP_SIZE, DEFAULT_MAX_FLOW};
use segslr::video::Frame;

const SELECTION_TRACKS: usize = 200;
const SELECTION_BUDGET: Duration = Duration::from_secs(10);
const SCORE_TOLERANCE: f64 = 1e-9;
const SCALE_TRACKS: usize = 100;
const PROMPT_PATTERNS: usize = 100;
const MAX_HAND_POSITIVES: usize = 5;
const COVERAGE_LENGTHS: [usize; 5] = [1, 2, 5, 40, 100];
const STREAM_LENGTHS: [usize; 4] = [1, 10, 40, 80];
const LOGITS_TOLERANCE: f32 = 1e-6;
const FUSION_TUPLES: usize = 1000;
const SIMPLEX_TOLERANCE: f64 = 1e-6;
const MEAN_TOLERANCE: f64 = 1e-12;
const LOSS_TRACES: usize = 500;
const PATIENCE: usize = 3;
const FIXTURE_MIN_ACCURACY: f64 = 0.90;
const FIXTURE_BUDGET: Duration = Duration::from_secs(600);

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn run_criterion(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS {id:>2} {name} ({secs:.1}s): {detail}"),
        Err(detail) => println!("FAIL {id:>2} {name} ({secs:.1}s): {detail}"),
    }
    outcome.is_ok()
}

// ---------------------------------------------------------------- pose data

fn taxonomy() -> KeypointTaxonomy {
    KeypointTaxonomy::default()
}

/// A frame with a face cluster, two hand clusters and scattered body points,
/// each point detected with probability `p_detect`.
fn random_frame(rng: &mut ChaCha8Rng, frame_index: usize, p_detect: f64) -> KeypointFrame {
    let face_c = (rng.gen_range(150.0..450.0f32), rng.gen_range(80.0..200.0f32));
    let near_face = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.4) {
            (face_c.0 + rng.gen_range(-40.0..40.0), face_c.1 + rng.gen_range(-40.0..40.0))
        } else {
            (rng.gen_range(40.0..600.0), rng.gen_range(40.0..440.0))
        }
    };
    let hands = [near_face(rng), near_face(rng)];
    let points = (0..116)
        .map(|i| {
            let (cx, cy, spread) = match i {
                23..=73 => (face_c.0, face_c.1, 35.0),
                74..=94 => (hands[0].0, hands[0].1, 25.0),
                95..=115 => (hands[1].0, hands[1].1, 25.0),
                _ => (320.0, 260.0, 200.0),
            };
            let x = (cx + rng.gen_range(-spread..spread)).clamp(0.0, 639.0);
            let y = (cy + rng.gen_range(-spread..spread)).clamp(0.0, 479.0);
            let confidence = rng.gen_range(0.01..1.0f32);
            Keypoint {
                x,
                y,
                confidence,
                detected: rng.gen_bool(p_detect),
            }
        })
        .collect();
    KeypointFrame { frame_index, points }
}

fn random_track(rng: &mut ChaCha8Rng) -> VideoPoseTrack {
    let len = rng.gen_range(5..=60);
    let p = rng.gen_range(0.05..1.0);
    let mut frames: Vec<KeypointFrame> = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 && rng.gen_bool(0.1) {
            let mut dup = frames[rng.gen_range(0..t)].clone();
            dup.frame_index = t;
            frames.push(dup);
        } else if rng.gen_bool(0.05) {
            frames.push(KeypointFrame::undetected(t, 116));
        } else {
            frames.push(random_frame(rng, t, p));
        }
    }
    VideoPoseTrack {
        video_id: "random".into(),
        frames,
    }
}

// ------------------------------------------------- 1. frame-selection oracle

struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn rect_of(points: &[(f64, f64)]) -> Option<Rect> {
    let first = points.first()?;
    let mut r = Rect {
        x0: first.0,
        y0: first.1,
        x1: first.0,
        y1: first.1,
    };
    for &(x, y) in points {
        r.x0 = r.x0.min(x);
        r.y0 = r.y0.min(y);
        r.x1 = r.x1.max(x);
        r.y1 = r.y1.max(y);
    }
    Some(r)
}

fn rect_area(r: &Rect) -> f64 {
    (r.x1 - r.x0) * (r.y1 - r.y0)
}

fn detected_points(kf: &KeypointFrame, range: std::ops::RangeInclusive<usize>) -> Vec<(f64, f64)> {
    range
        .filter(|&i| kf.points[i].detected)
        .map(|i| (kf.points[i].x as f64, kf.points[i].y as f64))
        .collect()
}

/// Per-frame (confidence, area, overlap) straight from the score definition.
fn brute_components(kf: &KeypointFrame) -> (f64, f64, f64) {
    let confs: Vec<f64> = kf.points.iter().filter(|k| k.detected).map(|k| k.confidence as f64).collect();
    let conf = if confs.is_empty() { 0.0 } else { confs.iter().sum::<f64>() / confs.len() as f64 };
    let area = rect_of(&detected_points(kf, 0..=115)).map_or(0.0, |r| rect_area(&r));
    let mut overlap: f64 = 0.0;
    if let Some(face) = rect_of(&detected_points(kf, 23..=73)) {
        for hand in [74..=94, 95..=115] {
            if let Some(h) = rect_of(&detected_points(kf, hand)) {
                let (fa, ha) = (rect_area(&face), rect_area(&h));
                if fa > 0.0 && ha > 0.0 {
                    let w = (face.x1.min(h.x1) - face.x0.max(h.x0)).max(0.0);
                    let hgt = (face.y1.min(h.y1) - face.y0.max(h.y0)).max(0.0);
                    overlap = overlap.max(w * hgt / fa.min(ha));
                }
            }
        }
    }
    (conf, area, overlap.min(1.0))
}

fn brute_scores(track: &VideoPoseTrack) -> Vec<f64> {
    let comps: Vec<_> = track.frames.iter().map(brute_components).collect();
    let mc = comps.iter().map(|c| c.0).fold(0.0, f64::max);
    let ma = comps.iter().map(|c| c.1).fold(0.0, f64::max);
    comps
        .iter()
        .map(|&(c, a, o)| {
            let nc = if mc > 0.0 { c / mc } else { 0.0 };
            let na = if ma > 0.0 { a / ma } else { 0.0 };
            nc * na * (1.0 - o)
        })
        .collect()
}

fn brute_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn frame_selection_oracle() -> Check {
    let tax = taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut tie_tracks = 0;
    for n in 0..SELECTION_TRACKS {
        let track = random_track(&mut rng);
        let expected = brute_scores(&track);
        let got = score_frames(&track, &tax);
        for (e, g) in expected.iter().zip(&got) {
            ensure!((e - g.combined).abs() <= SCORE_TOLERANCE, "track {n} frame {}: {} vs oracle {e}", g.frame_index, g.combined);
        }
        let best = brute_best(&expected);
        let sel = select_best_frame(&track, &tax);
        ensure!(sel == best, "track {n}: selected {sel}, oracle {best}");
        if expected.iter().filter(|&&s| s == expected[best]).count() > 1 {
            tie_tracks += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < SELECTION_BUDGET, "took {elapsed:?}");
    Ok(format!("{SELECTION_TRACKS} tracks agree ({tie_tracks} with tied maxima), {elapsed:.2?}"))
}

// ------------------------------------------------------- 2. scale invariance

fn scale_invariance() -> Check {
    let tax = taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for n in 0..SCALE_TRACKS {
        let track = random_track(&mut rng);
        let base = select_best_frame(&track, &tax);
        let c: f32 = rng.gen_range(0.05..20.0);
        let s: f32 = rng.gen_range(0.05..20.0);
        let mut scaled = track.clone();
        for kf in &mut scaled.frames {
            for k in &mut kf.points {
                k.confidence *= c;
                k.x *= s;
                k.y *= s;
            }
        }
        let got = select_best_frame(&scaled, &tax);
        ensure!(got == base, "track {n}: c={c} s={s} moved selection {base} -> {got}");
    }
    Ok(format!("{SCALE_TRACKS} tracks keep their selected frame"))
}

// ------------------------------------------------------ 3. prompt correctness

/// Group lists read straight from the bundled taxonomy file.
struct Groups {
    body_core: Vec<usize>,
    first_joints: [Vec<usize>; 2],
    negatives: Vec<usize>,
}

fn groups_from_config() -> Groups {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/taxonomy_default.toml");
    let value: toml::Value = toml::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let list = |name: &str| -> Vec<usize> {
        value["groups"][name]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_integer().unwrap() as usize)
            .collect()
    };
    let mut negatives = list("body_negatives");
    negatives.extend(list("face_negatives"));
    Groups {
        body_core: list("body_core"),
        first_joints: [list("left_hand_first_joints"), list("right_hand_first_joints")],
        negatives,
    }
}

fn sorted(points: &[(f32, f32)]) -> Vec<(u32, u32)> {
    let mut v: Vec<(u32, u32)> = points.iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
    v.sort();
    v
}

fn coords(kf: &KeypointFrame, indices: &[usize]) -> Vec<(f32, f32)> {
    let unique: BTreeSet<usize> = indices.iter().copied().collect();
    unique
        .into_iter()
        .filter(|&i| kf.points[i].detected)
        .map(|i| (kf.points[i].x, kf.points[i].y))
        .collect()
}

fn prompt_correctness() -> Check {
    let tax = taxonomy();
    let g = groups_from_config();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut unpromptable = 0;
    for n in 0..PROMPT_PATTERNS {
        let p = [0.0, 0.1, 0.5, 0.9, 1.0][n % 5];
        // distinct coordinates per keypoint so leaks are detectable
        let points: Vec<Keypoint> = (0..116)
            .map(|i| Keypoint {
                x: i as f32 + rng.gen_range(0.0..0.5),
                y: rng.gen_range(0.0..400.0),
                confidence: rng.gen_range(0.0..1.0),
                detected: rng.gen_bool(p),
            })
            .collect();
        let kf = KeypointFrame { frame_index: n, points };
        let undetected: BTreeSet<(u32, u32)> = kf
            .points
            .iter()
            .filter(|k| !k.detected)
            .map(|k| (k.x.to_bits(), k.y.to_bits()))
            .collect();
        let leaks = |ps: &PromptSet| {
            ps.positives
                .iter()
                .chain(&ps.negatives)
                .any(|q| undetected.contains(&(q.0.to_bits(), q.1.to_bits())))
        };

        let body = body_prompts(&kf, &tax);
        ensure!(body.target == Target::Body && body.anchor_frame == n, "pattern {n}: body header");
        ensure!(sorted(&body.positives) == sorted(&coords(&kf, &g.body_core)), "pattern {n}: body positives");
        ensure!(body.negatives.is_empty(), "pattern {n}: body negatives not empty");
        ensure!(!leaks(&body), "pattern {n}: undetected point in body prompts");
        unpromptable += body.is_unpromptable() as usize;

        for (hand, joints) in [Hand::Left, Hand::Right].into_iter().zip(&g.first_joints) {
            let ps = hand_prompts(&kf, &tax, hand);
            let pos = coords(&kf, joints);
            let neg: Vec<(f32, f32)> = coords(&kf, &g.negatives).into_iter().filter(|q| !pos.contains(q)).collect();
            ensure!(sorted(&ps.positives) == sorted(&pos), "pattern {n}: {hand:?} positives");
            ensure!(sorted(&ps.negatives) == sorted(&neg), "pattern {n}: {hand:?} negatives");
            ensure!(ps.positives.len() <= MAX_HAND_POSITIVES, "pattern {n}: {} hand positives", ps.positives.len());
            ensure!(ps.is_unpromptable() == pos.is_empty(), "pattern {n}: {hand:?} unpromptable flag");
            ensure!(!leaks(&ps), "pattern {n}: undetected point in {hand:?} prompts");
            unpromptable += ps.is_unpromptable() as usize;
        }
    }
    Ok(format!("{PROMPT_PATTERNS} patterns match the set filter ({unpromptable} unpromptable sets)"))
}

// ---------------------------------------------------- 4. bidirectional coverage

fn noise_frames(rng: &mut ChaCha8Rng, len: usize, h: usize, w: usize) -> Vec<Frame> {
    (0..len).map(|_| Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>())).collect()
}

fn bidirectional_coverage() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let adapter = DiskSegmenter::new(4.0);
    let mut checked = 0;
    for len in COVERAGE_LENGTHS {
        let frames = noise_frames(&mut rng, len, 24, 32);
        let mut anchors = vec![0, len / 2, len - 1];
        anchors.dedup();
        for anchor in anchors {
            for target in [Target::Body, Target::LeftHand, Target::RightHand] {
                let prompts = PromptSet {
                    target,
                    anchor_frame: anchor,
                    positives: vec![(rng.gen_range(0.0..32.0), rng.gen_range(0.0..24.0))],
                    negatives: vec![],
                };
                let m = segment_video("cov", &frames, &prompts, &adapter).map_err(|e| e.to_string())?;
                let idx: Vec<usize> = m.frames.iter().map(|f| f.frame_index).collect();
                ensure!(idx == (0..len).collect::<Vec<_>>(), "len {len} anchor {anchor}: indices {idx:?}");
                ensure!(m.target == target && m.anchor_frame == anchor, "len {len}: masklet header");
                ensure!(m.frames.iter().all(|f| f.mask.iter().any(|&b| b)), "len {len} anchor {anchor}: empty mask");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (video, anchor, target) masklets cover every frame once"))
}

// ----------------------------------------------------------- 5. stream contracts

fn random_masklet(rng: &mut ChaCha8Rng, target: Target, len: usize, h: usize, w: usize) -> Masklet {
    let frames = (0..len)
        .map(|t| {
            let logits = Array2::from_shape_fn((h, w), |_| rng.gen_range(-50.0..50.0f32));
            MaskFrame {
                frame_index: t,
                mask: Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.5)),
                logits,
            }
        })
        .collect();
    Masklet {
        target,
        anchor_frame: 0,
        height: h,
        width: w,
        backend: "random".into(),
        frames,
    }
}

/// Source pixel for crop coordinate `d`, if it is not padding.
fn src_coord(d: usize, src: usize) -> Option<usize> {
    if src >= CROP_SIZE {
        Some(d + (src - CROP_SIZE) / 2)
    } else {
        let pad = (CROP_SIZE - src) / 2;
        (d >= pad && d - pad < src).then(|| d - pad)
    }
}

fn stream_contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let flow = HornSchunck::default();
    let mut clips_checked = 0;
    for (n, len) in STREAM_LENGTHS.into_iter().enumerate() {
        let (h, w) = if n % 2 == 0 { (60, 81) } else { (231, 250) };
        let frames = noise_frames(&mut rng, len, h, w);
        let body = random_masklet(&mut rng, Target::Body, len, h, w);
        let left = random_masklet(&mut rng, Target::LeftHand, len, h, w);
        let right = random_masklet(&mut rng, Target::RightHand, len, h, w);
        let inputs = VideoInputs {
            frames: &frames,
            body: &body,
            left_hand: &left,
            right_hand: &right,
        };
        let clips = build_clips(&inputs, &StreamKind::ALL, &flow, DEFAULT_MAX_FLOW).map_err(|e| e.to_string())?;
        ensure!(clips.len() == 6, "len {len}: {} clips", clips.len());
        for clip in &clips {
            ensure!(
                clip.data.dim() == (CLIP_LEN, CROP_SIZE, CROP_SIZE, 3),
                "len {len} {}: shape {:?}",
                clip.stream,
                clip.data.dim()
            );
            ensure!(clip.data.iter().all(|v| (0.0..=1.0).contains(v)), "len {len} {}: value outside [0,1]", clip.stream);
            check_oracle(clip, &frames, &body, &left, &right)?;
            clips_checked += 1;
        }
    }
    Ok(format!("{clips_checked} clips have shape 40x224x224x3 in [0,1]; masks exact, logits within {LOGITS_TOLERANCE}"))
}

fn check_oracle(clip: &StreamClip, frames: &[Frame], body: &Masklet, left: &Masklet, right: &Masklet) -> Result<(), String> {
    let len = frames.len();
    let (h, w, _) = frames[0].dim();
    for t in 0..CLIP_LEN {
        let src_t = t * len / CLIP_LEN;
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                let src = src_coord(y, h).zip(src_coord(x, w));
                for c in 0..3 {
                    let got = clip.data[[t, y, x, c]];
                    let in_mask = |sy: usize, sx: usize| match clip.stream {
                        StreamKind::BodyRgb => body.frames[src_t].mask[[sy, sx]],
                        _ => left.frames[src_t].mask[[sy, sx]] || right.frames[src_t].mask[[sy, sx]],
                    };
                    let logit = |sy: usize, sx: usize| match clip.stream {
                        StreamKind::BodyLogits => body.frames[src_t].logits[[sy, sx]],
                        _ => left.frames[src_t].logits[[sy, sx]].max(right.frames[src_t].logits[[sy, sx]]),
                    };
                    match clip.stream {
                        StreamKind::BodyRgb | StreamKind::HandsRgb => {
                            let want = match src {
                                Some((sy, sx)) if in_mask(sy, sx) => frames[src_t][[sy, sx, c]],
                                _ => 0.0,
                            };
                            ensure!(got == want, "{} t={t} y={y} x={x}: {got} vs {want}", clip.stream);
                        }
                        StreamKind::BodyLogits | StreamKind::HandsLogits => {
                            let want = match src {
                                Some((sy, sx)) => (logit(sy, sx).clamp(-32.0, 32.0) + 32.0) / 64.0,
                                None => 0.0,
                            };
                            ensure!(
                                (got - want).abs() <= LOGITS_TOLERANCE,
                                "{} t={t} y={y} x={x}: {got} vs {want}",
                                clip.stream
                            );
                        }
                        _ => return Ok(()),
                    }
                }
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------ 6. fusion properties

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-4..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn sv(p: Vec<f64>) -> ScoreVector {
    ScoreVector::new(Some(StreamKind::Rgb), p).expect("valid simplex vector")
}

fn fusion_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for n in 0..FUSION_TUPLES {
        let k = rng.gen_range(2..=12);
        let m = rng.gen_range(1..=6);
        let vs: Vec<Vec<f64>> = (0..m).map(|_| simplex(&mut rng, k)).collect();
        let (fused, pred) = fuse_scores(&vs.iter().cloned().map(sv).collect::<Vec<_>>(), None).map_err(|e| e.to_string())?;
        let sum: f64 = fused.probs.iter().sum();
        ensure!((sum - 1.0).abs() <= SIMPLEX_TOLERANCE, "tuple {n}: sum {sum}");
        ensure!(fused.probs.iter().all(|&p| p >= 0.0), "tuple {n}: negative entry");
        for c in 0..k {
            let mean = vs.iter().map(|v| v[c]).sum::<f64>() / m as f64;
            ensure!((fused.probs[c] - mean).abs() <= MEAN_TOLERANCE, "tuple {n}: class {c} {} vs mean {mean}", fused.probs[c]);
        }
        let mut perm = vs.clone();
        perm.shuffle(&mut rng);
        let (pf, pp) = fuse_scores(&perm.into_iter().map(sv).collect::<Vec<_>>(), None).map_err(|e| e.to_string())?;
        ensure!(pp == pred, "tuple {n}: permutation changed the class");
        ensure!(
            pf.probs.iter().zip(&fused.probs).all(|(a, b)| (a - b).abs() <= MEAN_TOLERANCE),
            "tuple {n}: permutation changed the fused vector"
        );
        // agreeing streams: move each vector's maximum onto class c
        let c = rng.gen_range(0..k);
        let agreeing: Vec<ScoreVector> = vs
            .iter()
            .map(|v| {
                let mut v = v.clone();
                let top = (0..k).fold(0, |b, i| if v[i] > v[b] { i } else { b });
                v.swap(top, c);
                v[c] += 1e-3;
                let s: f64 = v.iter().sum();
                sv(v.into_iter().map(|x| x / s).collect())
            })
            .collect();
        ensure!(agreeing.iter().all(|v| v.argmax() == c), "tuple {n}: agreeing construction");
        let (_, ap) = fuse_scores(&agreeing, None).map_err(|e| e.to_string())?;
        ensure!(ap == c, "tuple {n}: all streams say {c}, fusion says {ap}");
    }
    Ok(format!("{FUSION_TUPLES} tuples: permutation-invariant, agreement-preserving, on the simplex, equal to the mean"))
}

// ---------------------------------------------------------- 7. early stopping

/// Replays a fixed validation-loss trace; the checkpoint is the epoch number.
struct Trace {
    losses: Vec<f64>,
    epoch: usize,
}

impl EpochModel for Trace {
    type Checkpoint = usize;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifyError> {
        self.epoch = epoch;
        Ok(1.0)
    }

    fn validate(&mut self) -> Result<(f64, Option<f64>), ClassifyError> {
        Ok((self.losses[self.epoch - 1], None))
    }

    fn checkpoint(&self) -> usize {
        self.epoch
    }
}

fn early_stopping() -> Check {
    let example = vec![1.0, 0.9, 0.91, 0.92, 0.93, 0.1, 0.05, 0.01];
    let out = fit(&mut Trace { losses: example, epoch: 0 }, PATIENCE, 8).map_err(|e| e.to_string())?;
    ensure!(
        out.epochs_trained == 5 && out.best_epoch == 2 && out.best == 2,
        "worked example: trained {}, best {}",
        out.epochs_trained,
        out.best_epoch
    );
    let falling: Vec<f64> = (0..10).map(|i| 1.0 - i as f64 * 0.05).collect();
    let out = fit(&mut Trace { losses: falling, epoch: 0 }, PATIENCE, 10).map_err(|e| e.to_string())?;
    ensure!(out.epochs_trained == 10 && out.best_epoch == 10, "falling trace stopped early");

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for n in 0..LOSS_TRACES {
        let max_epochs = rng.gen_range(1..=40);
        let mut losses = Vec::with_capacity(max_epochs);
        let mut level: f64 = rng.gen_range(0.5..3.0);
        for _ in 0..max_epochs {
            match rng.gen_range(0..4) {
                0 => {}
                1 => level *= rng.gen_range(0.7..1.0),
                2 => level *= rng.gen_range(1.0..1.3),
                _ => level = (level + rng.gen_range(-0.2..0.2f64)).abs(),
            }
            losses.push(level);
        }
        let out = fit(&mut Trace { losses: losses.clone(), epoch: 0 }, PATIENCE, max_epochs).map_err(|e| e.to_string())?;
        let seen = &losses[..out.epochs_trained];
        let min = seen.iter().copied().fold(f64::INFINITY, f64::min);
        let first_min = seen.iter().position(|&l| l == min).unwrap() + 1;
        ensure!(out.epochs_trained <= out.best_epoch + PATIENCE, "trace {n}: trained {} best {}", out.epochs_trained, out.best_epoch);
        ensure!(out.best_epoch == first_min && out.best == first_min, "trace {n}: best {} vs first minimum {first_min}", out.best_epoch);
        let expect_len = (first_min + PATIENCE).min(max_epochs);
        ensure!(out.epochs_trained == expect_len, "trace {n}: trained {} expected {expect_len}", out.epochs_trained);
    }
    Ok(format!("worked example reproduced; {LOSS_TRACES} traces stop within best + {PATIENCE} and return the best checkpoint"))
}

// ------------------------------------------------------ 8-10. fixture pipeline

struct FixtureRuns {
    _root: tempfile::TempDir,
    first: RunSummary,
    first_time: Duration,
    first_json: Vec<u8>,
    fresh_json: Vec<u8>,
    fresh_time: Duration,
    rerun: RunSummary,
    entries_on_disk: usize,
    ablation: Result<PipelineReport, String>,
}

fn count_entries(cache: &Path) -> usize {
    let mut n = 0;
    for stage in fs::read_dir(cache).into_iter().flatten().flatten() {
        for key in fs::read_dir(stage.path()).into_iter().flatten().flatten() {
            for hash in fs::read_dir(key.path()).into_iter().flatten().flatten() {
                n += hash.path().join(COMPLETE_MARKER).is_file() as usize;
            }
        }
    }
    n
}

fn run_fixture() -> Result<FixtureRuns, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    synth_dataset(&SynthSpec::default(), &SignerPalette::default(), &data).map_err(|e| e.to_string())?;
    let cfg = |name: &str| PipelineConfig::fixture(&data, root.path().join(name).join("cache"), root.path().join(name).join("out"));
    let go = |c: PipelineConfig, stages: &[Stage], ablation: bool| -> Result<(RunSummary, Duration), String> {
        let start = Instant::now();
        let p = Pipeline::new(c).map_err(|e| e.to_string())?;
        let s = p.run(stages, ablation).map_err(|e| e.to_string())?;
        Ok((s, start.elapsed()))
    };
    let read = |name: &str| fs::read(root.path().join(name).join("out").join(REPORT_JSON)).map_err(|e| e.to_string());

    let (first, first_time) = go(cfg("a"), &Stage::ALL, false)?;
    let first_json = read("a")?;
    let (rerun, _) = go(cfg("a"), &Stage::ALL, false)?;
    let entries_on_disk = count_entries(&root.path().join("a").join("cache"));
    let (_, fresh_time) = go(cfg("b"), &Stage::ALL, false)?;
    let fresh_json = read("b")?;
    let ablation = go(cfg("a"), &[Stage::Eval], true).and_then(|(s, _)| s.report.ok_or_else(|| "no report".to_string()));
    Ok(FixtureRuns {
        _root: root,
        first,
        first_time,
        first_json,
        fresh_json,
        fresh_time,
        rerun,
        entries_on_disk,
        ablation,
    })
}

fn end_to_end(f: &FixtureRuns) -> Check {
    let report = f.first.report.as_ref().ok_or("first run produced no report")?;
    let val = report.reports.iter().find(|r| r.split == "val").ok_or("no validation report")?;
    ensure!(val.num_videos == 12, "{} validation videos", val.num_videos);
    ensure!(val.fused >= FIXTURE_MIN_ACCURACY, "fused validation accuracy {:.4}", val.fused);
    ensure!(f.first_time <= FIXTURE_BUDGET, "pipeline took {:?}", f.first_time);
    ensure!(f.fresh_time <= FIXTURE_BUDGET, "fresh rerun took {:?}", f.fresh_time);
    ensure!(f.first_json == f.fresh_json, "fresh-cache rerun produced a different report");
    let streams: Vec<String> = val.per_stream.iter().map(|(s, a)| format!("{s} {a:.4}")).collect();
    Ok(format!(
        "fused val {:.4} [{}]; {:.0}s and {:.0}s; fresh rerun report identical ({} bytes)",
        val.fused,
        streams.join(", "),
        f.first_time.as_secs_f64(),
        f.fresh_time.as_secs_f64(),
        f.first_json.len()
    ))
}

fn cache_idempotence(f: &FixtureRuns) -> Check {
    let first = f.first.totals();
    let again = f.rerun.totals();
    ensure!(again.computed == 0, "rerun recomputed {} artifacts", again.computed);
    ensure!(
        again.hits == f.entries_on_disk && again.hits == first.computed,
        "hits {} vs {} entries on disk ({} built first time)",
        again.hits,
        f.entries_on_disk,
        first.computed
    );
    let per_stage: Vec<String> = f.rerun.stages.iter().map(|s| format!("{} {}", s.stage, s.hits)).collect();
    Ok(format!("{} hits, 0 computed [{}]", again.hits, per_stage.join(", ")))
}

fn ablation_harness(f: &FixtureRuns) -> Check {
    let report = f.ablation.as_ref().map_err(|e| e.clone())?;
    let val = report.reports.iter().find(|r| r.split == "val").ok_or("no validation report")?;
    let table = val.ablation.as_ref().ok_or("report has no ablation table")?;
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    ensure!(
        labels == ["Base", "+ Body_RGB", "+ Body_RGB + Body_Logits", "+ Body_RGB + Body_Logits + Hands_RGB + Hands_Logits"],
        "rows {labels:?}"
    );
    let streams: Vec<Vec<StreamKind>> = table.rows.iter().map(|r| r.streams.clone()).collect();
    ensure!(
        streams == ablation_rows().into_iter().map(|(_, s)| s).collect::<Vec<_>>(),
        "row stream sets differ"
    );
    ensure!(
        streams.windows(2).all(|w| w[0].iter().all(|s| w[1].contains(s))),
        "rows are not cumulative"
    );
    ensure!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.fused_accuracy)), "accuracy out of range");
    let rows: Vec<String> = table.rows.iter().map(|r| format!("{} = {:.4}", r.label, r.fused_accuracy)).collect();
    Ok(format!("{} (monotone: {})", rows.join("; "), table.monotone))
}

fn main() {
    let mut ok = true;
    ok &= run_criterion(1, "frame-selection oracle equivalence", frame_selection_oracle);
    ok &= run_criterion(2, "selection scale invariance", scale_invariance);
    ok &= run_criterion(3, "prompt correctness", prompt_correctness);
    ok &= run_criterion(4, "bidirectional coverage", bidirectional_coverage);
    ok &= run_criterion(5, "stream contracts", stream_contracts);
    ok &= run_criterion(6, "fusion properties", fusion_properties);
    ok &= run_criterion(7, "early-stopping contract", early_stopping);
    let fixture = panic::catch_unwind(run_fixture).unwrap_or_else(|_| Err("fixture run panicked".into()));
    let with_fixture = |check: fn(&FixtureRuns) -> Check| {
        let fixture = &fixture;
        move || match fixture {
            Ok(f) => check(f),
            Err(e) => Err(format!("fixture pipeline failed: {e}")),
        }
    };
    ok &= run_criterion(8, "end-to-end fixture", with_fixture(end_to_end));
    ok &= run_criterion(9, "cache idempotence", with_fixture(cache_idempotence));
    ok &= run_criterion(10, "ablation harness", with_fixture(ablation_harness));
    if !ok {
        std::process::exit(1);
    }
}
