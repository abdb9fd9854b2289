use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{argmax, ClassifyError, TinyClassifier};
use crate::streams::{AugmentConfig, Mode, QuantizedClip, StreamKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub backbone: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            patience: 3,
            max_epochs: 30,
            learning_rate: 0.01,
            weight_decay: 0.0,
            backbone: "pooled-linear".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.batch_size == 0 {
            return Err(ClassifyError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(ClassifyError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(ClassifyError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClassifyError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.backbone != "pooled-linear" {
            return Err(ClassifyError::Config(format!("unknown backbone `{}`", self.backbone)));
        }
        Ok(())
    }
}

/// Tracks the best validation loss; an epoch improves only if strictly lower.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records `val_loss` for a 1-based `epoch`; returns whether it improved.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Something that can be trained one epoch at a time.
pub trait EpochModel {
    type Checkpoint;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifyError>;

    /// Validation loss and, when available, accuracy.
    fn validate(&mut self) -> Result<(f64, Option<f64>), ClassifyError>;

    fn checkpoint(&self) -> Self::Checkpoint;

    fn label(&self) -> String {
        String::new()
    }

    fn learning_rate(&self) -> f64 {
        f64::NAN
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<C> {
    pub best: C,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

/// Trains until validation loss has not improved for `patience` consecutive
/// epochs or `max_epochs` is reached, and returns the best checkpoint.
pub fn fit<M: EpochModel>(model: &mut M, patience: usize, max_epochs: usize) -> Result<FitOutcome<M::Checkpoint>, ClassifyError> {
    if patience == 0 || max_epochs == 0 {
        return Err(ClassifyError::Config("patience and max_epochs must be at least 1".into()));
    }
    let mut stopper = EarlyStopping::new(patience);
    let mut best = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let non_finite = |m: &M, epoch, which, value| ClassifyError::NonFinite {
        stream: m.label(),
        epoch,
        which,
        value,
        learning_rate: m.learning_rate(),
    };
    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        if !train_loss.is_finite() {
            return Err(non_finite(model, epoch, "training", train_loss));
        }
        let (val_loss, val_accuracy) = model.validate()?;
        if !val_loss.is_finite() {
            return Err(non_finite(model, epoch, "validation", val_loss));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        log::debug!("{} epoch {epoch}: train {train_loss:.4} val {val_loss:.4}", model.label());
        if stopper.observe(epoch, val_loss) {
            best = Some(model.checkpoint());
        }
        if stopper.should_stop() {
            stopped_early = epoch < max_epochs;
            break;
        }
    }
    Ok(FitOutcome {
        best: best.expect("the first finite epoch always improves"),
        best_epoch: stopper.best_epoch(),
        epochs_trained: history.len(),
        stopped_early,
        history,
    })
}

/// A training or validation sample for one stream.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub video_id: String,
    pub clip: QuantizedClip,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedStream {
    pub stream: StreamKind,
    pub model: TinyClassifier,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub history: Vec<EpochRecord>,
}

struct StreamTrainer<'a> {
    stream: StreamKind,
    model: TinyClassifier,
    train: &'a [LabeledClip],
    val_features: Vec<Vec<f32>>,
    val_labels: Vec<usize>,
    cfg: &'a TrainConfig,
    augment: &'a AugmentConfig,
    seed: u64,
    run: usize,
}

fn shuffle_rng(seed: u64, run: usize, stream: StreamKind, epoch: usize) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("shuffle/{seed}/{run}/{stream}/{epoch}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

impl EpochModel for StreamTrainer<'_> {
    type Checkpoint = TinyClassifier;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifyError> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut shuffle_rng(self.seed, self.run, self.stream, epoch));
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let feats: Vec<Vec<f32>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &self.train[i];
                    let p = self.augment.params(Mode::Train, self.seed, self.run, epoch, &s.video_id);
                    self.model.features(&s.clip.augmented(p))
                })
                .collect::<Result<_, _>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| self.train[i].label).collect();
            total += self.model.step(&feats, &labels) * batch.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<(f64, Option<f64>), ClassifyError> {
        let loss = self.model.loss(&self.val_features, &self.val_labels);
        let correct = self
            .val_features
            .iter()
            .zip(&self.val_labels)
            .filter(|(f, &l)| argmax(&self.model.logits_from_features(f)) == l)
            .count();
        Ok((loss, Some(correct as f64 / self.val_labels.len() as f64)))
    }

    fn checkpoint(&self) -> TinyClassifier {
        self.model.clone()
    }

    fn label(&self) -> String {
        self.stream.to_string()
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }
}

/// Trains one stream's classifier with early stopping on validation loss.
///
/// Training clips are augmented per (seed, run, epoch, video); validation
/// clips never are.
#[allow(clippy::too_many_arguments)]
pub fn train_stream(
    stream: StreamKind,
    train: &[LabeledClip],
    val: &[LabeledClip],
    num_classes: usize,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    seed: u64,
    run: usize,
) -> Result<TrainedStream, ClassifyError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(ClassifyError::Config(format!(
            "{stream}: empty split (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= num_classes) {
        return Err(ClassifyError::Config(format!(
            "{}: label {} outside 0..{num_classes}",
            s.video_id, s.label
        )));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.clip.stream != stream) {
        return Err(ClassifyError::Config(format!("{}: {} clip given to {stream}", s.video_id, s.clip.stream)));
    }
    let train_ids: HashSet<&str> = train.iter().map(|s| s.video_id.as_str()).collect();
    if let Some(s) = val.iter().find(|s| train_ids.contains(s.video_id.as_str())) {
        return Err(ClassifyError::Config(format!("{} is in both train and val", s.video_id)));
    }
    let model = TinyClassifier::new(num_classes, cfg.learning_rate, cfg.weight_decay);
    let val_features = val
        .par_iter()
        .map(|s| model.features(&s.clip.to_clip()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut trainer = StreamTrainer {
        stream,
        model,
        train,
        val_features,
        val_labels: val.iter().map(|s| s.label).collect(),
        cfg,
        augment,
        seed,
        run,
    };
    let out = fit(&mut trainer, cfg.patience, cfg.max_epochs)?;
    Ok(TrainedStream {
        stream,
        model: out.best,
        best_epoch: out.best_epoch,
        epochs_trained: out.epochs_trained,
        history: out.history,
    })
}
