//! TOML pipeline configuration.
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classify::{FusionMode, TrainConfig};
use crate::dataset::SignerPalette;
use crate::pose::{ColorBlobEstimator, KeypointTaxonomy, PoseEstimator};
use crate::segmentation::{ColorTrackSegmenter, DiskSegmenter, SegmenterAdapter};
use crate::streams::{AugmentConfig, FlowAdapter, GlobalTranslation, HornSchunck, StreamKind, CLIP_LEN, DEFAULT_MAX_FLOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset_root: PathBuf,
    pub cache_root: PathBuf,
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseBackend {
    #[default]
    ColorBlob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmenterBackend {
    #[default]
    ColorTrack,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowBackend {
    #[default]
    HornSchunck,
    GlobalTranslation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub pose: PoseBackend,
    pub segmenter: SegmenterBackend,
    pub flow: FlowBackend,
    /// Overrides `train.backbone`.
    pub classifier: String,
    /// Colour model for the blob estimator.
    pub palette: SignerPalette,
    pub color_tolerance: f32,
    pub disk_radius: f32,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            pose: PoseBackend::default(),
            segmenter: SegmenterBackend::default(),
            flow: FlowBackend::default(),
            classifier: TrainConfig::default().backbone,
            palette: SignerPalette::default(),
            color_tolerance: 48.0,
            disk_radius: 8.0,
        }
    }
}

impl Backends {
    pub fn pose_estimator(&self) -> Box<dyn PoseEstimator> {
        match self.pose {
            PoseBackend::ColorBlob => Box::new(ColorBlobEstimator::new(self.palette.clone())),
        }
    }

    pub fn segmenter(&self) -> Box<dyn SegmenterAdapter> {
        match self.segmenter {
            SegmenterBackend::ColorTrack => Box::new(ColorTrackSegmenter::new(self.color_tolerance)),
            SegmenterBackend::Disk => Box::new(DiskSegmenter::new(self.disk_radius)),
        }
    }

    pub fn flow(&self) -> Box<dyn FlowAdapter> {
        match self.flow {
            FlowBackend::HornSchunck => Box::new(HornSchunck::default()),
            FlowBackend::GlobalTranslation => Box::new(GlobalTranslation::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Missing streams weigh 1.
    pub weights: BTreeMap<StreamKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizeConfig {
    /// Number of validation videos to render.
    pub videos: usize,
    /// Frames per video, spread evenly over the sampled clip.
    pub frames: usize,
}

impl Default for VisualizeConfig {
    fn default() -> Self {
        Self { videos: 4, frames: 8 }
    }
}

fn default_num_classes() -> usize {
    crate::dataset::DEFAULT_NUM_CLASSES
}

fn default_streams() -> Vec<StreamKind> {
    StreamKind::ALL.to_vec()
}

fn default_max_flow() -> f32 {
    DEFAULT_MAX_FLOW
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Keypoint taxonomy file; the bundled 116-point layout when absent.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default = "default_streams")]
    pub streams: Vec<StreamKind>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_max_flow")]
    pub max_flow: f32,
    #[serde(default)]
    pub seed: u64,
    /// 1, or 5 for the median-of-five protocol.
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub visualize: VisualizeConfig,
}

/// The parts of a config that can change results. Paths and worker count
/// are excluded so relocated or re-parallelized runs share cache entries.
#[derive(Serialize)]
pub(super) struct Experiment<'a> {
    taxonomy: String,
    num_classes: usize,
    backends: &'a Backends,
    streams: &'a [StreamKind],
    fusion: &'a FusionConfig,
    train: TrainConfig,
    augment: &'a AugmentConfig,
    max_flow: f32,
    seed: u64,
    runs: usize,
}

impl PipelineConfig {
    /// Settings for the synthetic fixture produced by `synth_dataset`.
    pub fn fixture(dataset_root: impl Into<PathBuf>, cache_root: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            paths: Paths {
                dataset_root: dataset_root.into(),
                cache_root: cache_root.into(),
                output_root: output_root.into(),
            },
            taxonomy: None,
            num_classes: 4,
            backends: Backends::default(),
            streams: default_streams(),
            fusion: FusionConfig::default(),
            train: TrainConfig {
                max_epochs: 12,
                ..TrainConfig::default()
            },
            augment: AugmentConfig::default(),
            max_flow: DEFAULT_MAX_FLOW,
            seed: 0,
            runs: 1,
            workers: 1,
            visualize: VisualizeConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.dataset_root);
        fix(&mut self.paths.cache_root);
        fix(&mut self.paths.output_root);
        if let Some(t) = &mut self.taxonomy {
            fix(t);
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            backbone: self.backends.classifier.clone(),
            ..self.train.clone()
        }
    }

    pub fn load_taxonomy(&self) -> Result<KeypointTaxonomy, PipelineError> {
        let tax = match &self.taxonomy {
            Some(p) => KeypointTaxonomy::load(p)?,
            None => KeypointTaxonomy::default(),
        };
        tax.validate()?;
        Ok(tax)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !self.paths.dataset_root.is_dir() {
            return bad(format!("dataset root {} is not a directory", self.paths.dataset_root.display()));
        }
        if let Some(t) = &self.taxonomy {
            if !t.is_file() {
                return bad(format!("taxonomy file {} does not exist", t.display()));
            }
        }
        if self.streams.is_empty() {
            return bad("stream subset is empty".into());
        }
        let unique: BTreeSet<_> = self.streams.iter().collect();
        if unique.len() != self.streams.len() {
            return bad("stream subset lists a stream twice".into());
        }
        if let Some((s, w)) = self.fusion.weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return bad(format!("fusion weight {w} for {s} must be finite and non-negative"));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.runs != 1 && self.runs != 5 {
            return bad(format!("runs must be 1 or 5, got {}", self.runs));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.max_flow.is_finite() && self.max_flow > 0.0) {
            return bad(format!("max_flow {} must be positive", self.max_flow));
        }
        if self.visualize.frames == 0 || self.visualize.frames > CLIP_LEN {
            return bad(format!("visualize.frames must be in 1..={CLIP_LEN}"));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub(super) fn experiment(&self, tax: &KeypointTaxonomy) -> Experiment<'_> {
        Experiment {
            taxonomy: tax.to_toml_string(),
            num_classes: self.num_classes,
            backends: &self.backends,
            streams: &self.streams,
            fusion: &self.fusion,
            train: self.train_config(),
            augment: &self.augment,
            max_flow: self.max_flow,
            seed: self.seed,
            runs: self.runs,
        }
    }
}
