//! Stand-in stream classifier: frozen average pooling into an
//! 8 × 7 × 7 × 3 grid followed by a softmax-linear head trained with Adam.

use serde::{Deserialize, Serialize};

use super::{softmax, ClassifyError};
use crate::streams::{StreamClip, CHANNELS, CLIP_LEN, CROP_SIZE};

const T_BINS: usize = 8;
const S_BINS: usize = 7;
pub const FEATURE_DIM: usize = T_BINS * S_BINS * S_BINS * CHANNELS;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyClassifier {
    pub num_classes: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Row-major `num_classes × (FEATURE_DIM + 1)`; the last column is the bias.
    weights: Vec<f64>,
    #[serde(default)]
    m: Vec<f64>,
    #[serde(default)]
    v: Vec<f64>,
    #[serde(default)]
    steps: u64,
}

impl TinyClassifier {
    pub fn new(num_classes: usize, learning_rate: f64, weight_decay: f64) -> Self {
        let n = num_classes * (FEATURE_DIM + 1);
        Self {
            num_classes,
            learning_rate,
            weight_decay,
            weights: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn backbone_id(&self) -> &'static str {
        "pooled-linear"
    }

    /// Drops optimizer state, leaving an inference-only model.
    pub fn frozen(&self) -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
            ..self.clone()
        }
    }

    pub fn features(&self, clip: &StreamClip) -> Result<Vec<f32>, ClassifyError> {
        if !clip.shape_ok() {
            return Err(ClassifyError::Shape(format!(
                "expected {:?}, got {:?}",
                (CLIP_LEN, CROP_SIZE, CROP_SIZE, CHANNELS),
                clip.data.dim()
            )));
        }
        let t_per = CLIP_LEN / T_BINS;
        let s_per = CROP_SIZE / S_BINS;
        let mut acc = vec![0.0f64; FEATURE_DIM];
        for (t, frame) in clip.data.outer_iter().enumerate() {
            let tb = t / t_per;
            for (y, row) in frame.outer_iter().enumerate() {
                let yb = y / s_per;
                let base = (tb * S_BINS + yb) * S_BINS;
                let mut row_acc = [[0.0f32; CHANNELS]; S_BINS];
                for (x, px) in row.outer_iter().enumerate() {
                    let cell = &mut row_acc[x / s_per];
                    for c in 0..CHANNELS {
                        cell[c] += px[c];
                    }
                }
                for (xb, cell) in row_acc.iter().enumerate() {
                    for c in 0..CHANNELS {
                        acc[(base + xb) * CHANNELS + c] += cell[c] as f64;
                    }
                }
            }
        }
        let n = (t_per * s_per * s_per) as f64;
        Ok(acc.into_iter().map(|s| (s / n) as f32).collect())
    }

    pub fn logits_from_features(&self, f: &[f32]) -> Vec<f64> {
        let stride = FEATURE_DIM + 1;
        (0..self.num_classes)
            .map(|k| {
                let row = &self.weights[k * stride..(k + 1) * stride];
                row[FEATURE_DIM] + row[..FEATURE_DIM].iter().zip(f).map(|(w, &x)| w * x as f64).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, clip: &StreamClip) -> Result<Vec<f64>, ClassifyError> {
        Ok(self.logits_from_features(&self.features(clip)?))
    }

    pub fn logits_batch(&self, clips: &[&StreamClip]) -> Result<Vec<Vec<f64>>, ClassifyError> {
        clips.iter().map(|c| self.logits(c)).collect()
    }

    /// Mean cross-entropy.
    pub fn loss(&self, feats: &[Vec<f32>], labels: &[usize]) -> f64 {
        let total: f64 = feats
            .iter()
            .zip(labels)
            .map(|(f, &y)| -softmax(&self.logits_from_features(f))[y].max(1e-300).ln())
            .sum();
        total / feats.len().max(1) as f64
    }

    /// One Adam step on the batch; returns the batch's mean cross-entropy
    /// before the update.
    pub fn step(&mut self, feats: &[Vec<f32>], labels: &[usize]) -> f64 {
        if self.m.len() != self.weights.len() {
            self.m = vec![0.0; self.weights.len()];
            self.v = vec![0.0; self.weights.len()];
        }
        let stride = FEATURE_DIM + 1;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        let n = feats.len() as f64;
        for (f, &y) in feats.iter().zip(labels) {
            let p = softmax(&self.logits_from_features(f));
            loss -= p[y].max(1e-300).ln();
            for k in 0..self.num_classes {
                let d = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                let g = &mut grad[k * stride..(k + 1) * stride];
                for (gi, &x) in g[..FEATURE_DIM].iter_mut().zip(f) {
                    *gi += d * x as f64;
                }
                g[FEATURE_DIM] += d;
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for i in 0..self.weights.len() {
            let g = grad[i] + self.weight_decay * self.weights[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            self.weights[i] -= self.learning_rate * mh / (vh.sqrt() + EPS);
        }
        loss / n
    }
}
