//! Accuracy, the median-of-five run protocol, and the cumulative stream ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{fuse_scores_with, ClassifyError, FusionMode, ScoreVector};
use crate::streams::StreamKind;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("median-of-five needs exactly 5 runs, got {0}")]
    RunCount(usize),
    #[error("ablation row `{row}` needs a trained {stream} model; run stage `train` with `--streams {stream}`")]
    MissingModel { row: String, stream: StreamKind },
    #[error(transparent)]
    Fusion(#[from] ClassifyError),
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub count: usize,
    pub accuracy: f64,
}

/// Accuracy per class that appears in `labels`, in class order.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize]) -> Result<Vec<ClassAccuracy>, EvalError> {
    accuracy(preds, labels)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(labels) {
        let e = tally.entry(l).or_default();
        e.0 += 1;
        e.1 += usize::from(p == l);
    }
    Ok(tally
        .into_iter()
        .map(|(class, (count, hits))| ClassAccuracy {
            class,
            count,
            accuracy: hits as f64 / count as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub selected: RunResult,
    pub mean: f64,
    /// Population standard deviation over the five validation accuracies.
    pub std: f64,
    pub val_accuracies: Vec<f64>,
}

/// Picks the run whose validation accuracy is the third smallest of five;
/// among equal values, the smallest seed wins.
pub fn median_of_five(runs: &[RunResult]) -> Result<MedianSummary, EvalError> {
    if runs.len() != 5 {
        return Err(EvalError::RunCount(runs.len()));
    }
    let mut sorted: Vec<&RunResult> = runs.iter().collect();
    sorted.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.run.cmp(&b.run)));
    let mut vals: Vec<f64> = runs.iter().map(|r| r.val_accuracy).collect();
    vals.sort_by(f64::total_cmp);
    let median = vals[2];
    let selected = sorted
        .iter()
        .find(|r| r.val_accuracy == median)
        .map(|r| (*r).clone())
        .expect("median value comes from a run");
    let mean = vals.iter().sum::<f64>() / 5.0;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    Ok(MedianSummary {
        selected,
        mean,
        std,
        val_accuracies: sorted.iter().map(|r| r.val_accuracy).collect(),
    })
}

/// The cumulative ablation rows and the streams each one fuses.
pub fn ablation_rows() -> Vec<(&'static str, Vec<StreamKind>)> {
    use StreamKind::*;
    vec![
        ("Base", vec![Flow, Rgb]),
        ("+ Body_RGB", vec![Flow, Rgb, BodyRgb]),
        ("+ Body_RGB + Body_Logits", vec![Flow, Rgb, BodyRgb, BodyLogits]),
        (
            "+ Body_RGB + Body_Logits + Hands_RGB + Hands_Logits",
            vec![Flow, Rgb, BodyRgb, BodyLogits, HandsRgb, HandsLogits],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub streams: Vec<StreamKind>,
    pub fused_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Whether every row is at least as accurate as the one before.
    pub monotone: bool,
}

/// Per-stream score vectors for the same videos, aligned with `labels`.
pub type StreamScores = BTreeMap<StreamKind, Vec<ScoreVector>>;

/// Fuses the given streams video by video and returns the predictions.
pub fn fused_predictions(
    scores: &StreamScores,
    streams: &[StreamKind],
    weights: &BTreeMap<StreamKind, f64>,
    mode: FusionMode,
    n: usize,
) -> Result<Vec<usize>, EvalError> {
    let w: Vec<f64> = streams.iter().map(|s| weights.get(s).copied().unwrap_or(1.0)).collect();
    (0..n)
        .map(|i| {
            let vs: Vec<ScoreVector> = streams.iter().map(|s| scores[s][i].clone()).collect();
            Ok(fuse_scores_with(mode, &vs, Some(&w))?.1)
        })
        .collect()
}

pub fn ablation_table(
    scores: &StreamScores,
    labels: &[usize],
    weights: &BTreeMap<StreamKind, f64>,
    mode: FusionMode,
) -> Result<AblationTable, EvalError> {
    let mut rows = Vec::new();
    for (label, streams) in ablation_rows() {
        if let Some(&stream) = streams.iter().find(|s| !scores.contains_key(s)) {
            return Err(EvalError::MissingModel {
                row: label.to_string(),
                stream,
            });
        }
        let preds = fused_predictions(scores, &streams, weights, mode, labels.len())?;
        rows.push(AblationRow {
            label: label.to_string(),
            streams,
            fused_accuracy: round4(accuracy(&preds, labels)?),
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].fused_accuracy >= w[0].fused_accuracy);
    Ok(AblationTable { rows, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub run: usize,
    pub split: String,
    pub num_videos: usize,
    pub per_stream: BTreeMap<String, f64>,
    pub fused: f64,
    pub per_class: Vec<ClassAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_of_five: Option<MedianSummary>,
}

/// Accuracies for one set of stream scores, rounded to 4 decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_stream: BTreeMap<String, f64>,
    pub fused: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub ablation: Option<AblationTable>,
}

pub fn evaluate(
    scores: &StreamScores,
    labels: &[usize],
    weights: &BTreeMap<StreamKind, f64>,
    mode: FusionMode,
    with_ablation: bool,
) -> Result<Evaluation, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_stream = BTreeMap::new();
    for (s, vs) in scores {
        let preds: Vec<usize> = vs.iter().map(|v| v.argmax()).collect();
        per_stream.insert(s.to_string(), round4(accuracy(&preds, labels)?));
    }
    let streams: Vec<StreamKind> = scores.keys().copied().collect();
    let preds = fused_predictions(scores, &streams, weights, mode, labels.len())?;
    let fused = round4(accuracy(&preds, labels)?);
    let per_class = per_class_accuracy(&preds, labels)?
        .into_iter()
        .map(|c| ClassAccuracy {
            accuracy: round4(c.accuracy),
            ..c
        })
        .collect();
    let ablation = if with_ablation {
        Some(ablation_table(scores, labels, weights, mode)?)
    } else {
        None
    };
    Ok(Evaluation {
        per_stream,
        fused,
        per_class,
        ablation,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split: {}  videos: {}  seed: {}  run: {}", self.split, self.num_videos, self.seed, self.run);
        let _ = writeln!(out, "config: {}", self.config_hash);
        for (s, a) in &self.per_stream {
            let _ = writeln!(out, "  {s:<14} {a:.4}");
        }
        let _ = writeln!(out, "  {:<14} {:.4}", "fused", self.fused);
        if let Some(t) = &self.ablation {
            let _ = writeln!(out, "ablation (monotone: {}):", t.monotone);
            for r in &t.rows {
                let _ = writeln!(out, "  {:<52} {:.4}", r.label, r.fused_accuracy);
            }
        }
        if let Some(m) = &self.median_of_five {
            let _ = writeln!(
                out,
                "median of five: run {} (seed {}) val {:.4}  mean {:.4}  std {:.4}",
                m.selected.run, m.selected.seed, m.selected.val_accuracy, m.mean, m.std
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ReferenceMethod {
    pub name: String,
    pub validation: f64,
    pub test: f64,
    #[serde(default)]
    pub validation_mean: Option<f64>,
    #[serde(default)]
    pub validation_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ReferenceAblation {
    pub label: String,
    pub validation: f64,
    pub test: f64,
    #[serde(default)]
    pub note: Option<String>,
}

/// Published numbers shipped for side-by-side display.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ReferenceResults {
    pub methods: Vec<ReferenceMethod>,
    pub ablation: Vec<ReferenceAblation>,
}

impl ReferenceResults {
    pub fn bundled() -> Self {
        toml::from_str(include_str!("../config/reference_results.toml")).expect("bundled reference file parses")
    }
}
