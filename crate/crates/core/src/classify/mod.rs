//! Per-stream classifiers and score-level fusion.

mod tiny;
mod train;

pub use tiny::{TinyClassifier, FEATURE_DIM};
pub use train::{
    fit, train_stream, EarlyStopping, EpochModel, EpochRecord, FitOutcome, LabeledClip, TrainConfig, TrainedStream,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::streams::{StreamClip, StreamKind};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("score vectors have different lengths: {0}")]
    LengthMismatch(String),
    #[error("invalid fusion weights: {0}")]
    Weights(String),
    #[error("invalid score vector: {0}")]
    InvalidScores(String),
    #[error("training configuration: {0}")]
    Config(String),
    #[error("non-finite {which} loss {value} at epoch {epoch} (stream {stream}, lr {learning_rate})")]
    NonFinite {
        stream: String,
        epoch: usize,
        which: &'static str,
        value: f64,
        learning_rate: f64,
    },
    #[error("clip shape: {0}")]
    Shape(String),
}

/// A probability vector over classes for one stream, or for the fusion when
/// `stream` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub stream: Option<StreamKind>,
    pub probs: Vec<f64>,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

impl ScoreVector {
    pub fn new(stream: Option<StreamKind>, probs: Vec<f64>) -> Result<Self, ClassifyError> {
        if probs.is_empty() {
            return Err(ClassifyError::InvalidScores("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(ClassifyError::InvalidScores(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ClassifyError::InvalidScores(format!("entries sum to {sum}")));
        }
        Ok(Self { stream, probs })
    }

    /// Numerically stable softmax.
    pub fn from_logits(stream: Option<StreamKind>, logits: &[f64]) -> Self {
        Self {
            stream,
            probs: softmax(logits),
        }
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Weighted arithmetic mean of probabilities.
    #[default]
    Probabilities,
    /// Weighted mean of log-probabilities, renormalized (a geometric mean).
    Logits,
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>, ClassifyError> {
    let w = match weights {
        None => vec![1.0; n],
        Some(w) => w.to_vec(),
    };
    if w.len() != n {
        return Err(ClassifyError::Weights(format!("{} weights for {n} streams", w.len())));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(ClassifyError::Weights("weights must be finite and non-negative".into()));
    }
    if w.iter().all(|&x| x == 0.0) {
        return Err(ClassifyError::Weights("all weights are zero".into()));
    }
    Ok(w)
}

/// Weighted mean of probability vectors, renormalized; returns the fused
/// vector and its argmax (smallest index on ties).
pub fn fuse_scores(vectors: &[ScoreVector], weights: Option<&[f64]>) -> Result<(ScoreVector, usize), ClassifyError> {
    fuse_scores_with(FusionMode::Probabilities, vectors, weights)
}

pub fn fuse_scores_with(
    mode: FusionMode,
    vectors: &[ScoreVector],
    weights: Option<&[f64]>,
) -> Result<(ScoreVector, usize), ClassifyError> {
    let first = vectors
        .first()
        .ok_or_else(|| ClassifyError::LengthMismatch("no score vectors to fuse".into()))?;
    let k = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != k) {
        return Err(ClassifyError::LengthMismatch(format!("{} vs {k}", v.len())));
    }
    let w = check_weights(vectors.len(), weights)?;
    let total: f64 = w.iter().sum();
    let mut acc = vec![0.0; k];
    for (v, &wi) in vectors.iter().zip(&w) {
        for (a, &p) in acc.iter_mut().zip(&v.probs) {
            *a += wi
                * match mode {
                    FusionMode::Probabilities => p,
                    FusionMode::Logits => p.max(1e-300).ln(),
                };
        }
    }
    let probs = match mode {
        FusionMode::Probabilities => {
            let s: f64 = acc.iter().sum();
            acc.iter().map(|a| a / s).collect()
        }
        FusionMode::Logits => softmax(&acc.iter().map(|a| a / total).collect::<Vec<_>>()),
    };
    let fused = ScoreVector { stream: None, probs };
    let pred = fused.argmax();
    Ok((fused, pred))
}

/// Class probabilities for one clip.
pub fn predict_scores(model: &TinyClassifier, clip: &StreamClip) -> Result<ScoreVector, ClassifyError> {
    let logits = model.logits(clip)?;
    Ok(ScoreVector::from_logits(Some(clip.stream), &logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(p: &[f64]) -> ScoreVector {
        ScoreVector::new(Some(StreamKind::Rgb), p.to_vec()).unwrap()
    }

    #[test]
    fn single_stream_is_identity() {
        let a = sv(&[0.2, 0.5, 0.3]);
        let (f, c) = fuse_scores(std::slice::from_ref(&a), None).unwrap();
        assert_eq!(f.probs, a.probs);
        assert_eq!(c, 1);
    }

    #[test]
    fn identical_streams_fuse_to_themselves() {
        let p = sv(&[0.1, 0.1, 0.8]);
        let (f, _) = fuse_scores(&[p.clone(), p.clone(), p.clone()], None).unwrap();
        for (a, b) in f.probs.iter().zip(&p.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let (_, c) = fuse_scores(&[sv(&[0.5, 0.5]), sv(&[0.5, 0.5])], None).unwrap();
        assert_eq!(c, 0);
        let (_, c) = fuse_scores(&[sv(&[0.6, 0.4]), sv(&[0.4, 0.6])], None).unwrap();
        assert_eq!(c, 0);
    }

    #[test]
    fn weights_and_errors() {
        let (f, c) = fuse_scores(&[sv(&[1.0, 0.0]), sv(&[0.0, 1.0])], Some(&[1.0, 3.0])).unwrap();
        assert!((f.probs[1] - 0.75).abs() < 1e-12);
        assert_eq!(c, 1);
        assert!(matches!(
            fuse_scores(&[sv(&[1.0, 0.0]), sv(&[0.2, 0.3, 0.5])], None),
            Err(ClassifyError::LengthMismatch(_))
        ));
        assert!(fuse_scores(&[sv(&[1.0, 0.0])], Some(&[0.0])).is_err());
        assert!(fuse_scores(&[sv(&[1.0, 0.0])], Some(&[-1.0])).is_err());
        assert!(fuse_scores(&[], None).is_err());
    }

    #[test]
    fn geometric_mode_is_normalized() {
        let (f, c) = fuse_scores_with(FusionMode::Logits, &[sv(&[0.7, 0.3]), sv(&[0.4, 0.6])], None).unwrap();
        let expected = (0.7f64 * 0.4).sqrt() / ((0.7f64 * 0.4).sqrt() + (0.3f64 * 0.6).sqrt());
        assert!((f.probs[0] - expected).abs() < 1e-12);
        assert_eq!(c, 0);
    }

    #[test]
    fn score_vector_validation() {
        assert!(ScoreVector::new(None, vec![0.5, 0.4]).is_err());
        assert!(ScoreVector::new(None, vec![1.5, -0.5]).is_err());
        let s = ScoreVector::from_logits(None, &[1000.0, 0.0, -1000.0]);
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn fusion_is_permutation_invariant(a in simplex(5), b in simplex(5), c in simplex(5)) {
            let (f1, c1) = fuse_scores(&[sv(&a), sv(&b), sv(&c)], None).unwrap();
            let (f2, c2) = fuse_scores(&[sv(&c), sv(&a), sv(&b)], None).unwrap();
            prop_assert_eq!(c1, c2);
            for (x, y) in f1.probs.iter().zip(&f2.probs) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((f1.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
