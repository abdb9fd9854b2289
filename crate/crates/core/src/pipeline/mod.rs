//! Stage orchestration over the cache.
//!
//! Stages run in the fixed order of [`Stage::ALL`] and exchange data only
//! through cache entries. A stage that is not requested is never run; a
//! requested stage whose inputs are missing fails with the name of the stage
//! that produces them.

mod config;
mod visualize;

pub use config::{Backends, FlowBackend, FusionConfig, Paths, PipelineConfig, PoseBackend, SegmenterBackend, VisualizeConfig};
pub use visualize::{overlay, pick_evenly, BODY_COLOR, HANDS_COLOR, OVERLAY_ALPHA};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{stage_hash, Cache, CacheError, CacheStats, COMPLETE_MARKER};
use crate::classify::{predict_scores, train_stream, ClassifyError, EpochRecord, LabeledClip, ScoreVector, TinyClassifier};
use crate::dataset::{load_manifest, DatasetError, DatasetManifest, Split, VideoRecord};
use crate::eval::{evaluate, median_of_five, EvalError, EvalReport, MedianSummary, ReferenceResults, RunResult, StreamScores};
use crate::frame_selection::{best_of, score_frames, score_table};
use crate::pose::{estimate_pose, load_pose_track, save_pose_track, KeypointTaxonomy, PoseError, PoseEstimator};
use crate::prompting::{all_prompts, PromptSet, Target};
use crate::segmentation::{load_masklet, save_masklet, segment_video, Masklet, SegmentError, SegmenterAdapter};
use crate::streams::{
    build_clips, flow_clip, load_clip, merge_hands, rgb_clip, sample_indices, save_clips, FlowAdapter, StreamError,
    StreamKind, VideoInputs,
};
use crate::video::{frame_paths, load_video, write_rgb_png, Frame, VideoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pose,
    SelectFrame,
    Prompt,
    Segment,
    PrepareStreams,
    Train,
    Eval,
    Visualize,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Pose,
        Stage::SelectFrame,
        Stage::Prompt,
        Stage::Segment,
        Stage::PrepareStreams,
        Stage::Train,
        Stage::Eval,
        Stage::Visualize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pose => "pose",
            Stage::SelectFrame => "select-frame",
            Stage::Prompt => "prompt",
            Stage::Segment => "segment",
            Stage::PrepareStreams => "prepare-streams",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Visualize => "visualize",
        }
    }

    /// Parses `a,b,c`, returning the stages deduplicated in execution order.
    pub fn parse_list(list: &str) -> Result<Vec<Stage>, PipelineError> {
        let mut out: Vec<Stage> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        if out.is_empty() {
            return Err(PipelineError::Config("empty stage list".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            PipelineError::Config(format!("unknown stage `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} failed for {key}: {cause}")]
    Item {
        stage: Stage,
        key: String,
        cause: Box<PipelineError>,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

const POSE_FILE: &str = "pose.jsonl";
const SELECTION_FILE: &str = "selection.json";
const SCORES_TABLE_FILE: &str = "scores.tsv";
const PROMPTS_FILE: &str = "prompts.json";
const MODEL_FILE: &str = "model.json";
const HISTORY_FILE: &str = "history.json";
const STREAM_SCORES_FILE: &str = "scores.json";
pub const REPORT_JSON: &str = "eval_report.json";
pub const REPORT_TEXT: &str = "eval_report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Selection {
    video_id: String,
    anchor_frame: usize,
    combined: f64,
}

/// A trained stream checkpoint, tagged with the hash of everything that
/// produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stream: StreamKind,
    pub run: usize,
    pub seed: u64,
    pub train_hash: String,
    pub model: TinyClassifier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub stream: StreamKind,
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub hits: usize,
    pub computed: usize,
}

/// Everything `eval` reports for one pipeline invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub seed: u64,
    pub streams: Vec<StreamKind>,
    pub reports: Vec<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_of_five: Option<MedianSummary>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Human-readable report with the published numbers appended for
    /// side-by-side reading.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&r.to_text());
            out.push('\n');
        }
        if let Some(m) = &self.median_of_five {
            let _ = writeln!(
                out,
                "median of five: run {} (seed {}) val {:.4}  mean {:.4}  std {:.4}\n",
                m.selected.run, m.selected.seed, m.selected.val_accuracy, m.mean, m.std
            );
        }
        let refs = ReferenceResults::bundled();
        let _ = writeln!(out, "published results on IsoGD (val / test %):");
        for m in &refs.methods {
            let _ = writeln!(out, "  {:<10} {:>6.2} / {:>6.2}", m.name, m.validation, m.test);
        }
        let _ = writeln!(out, "published ablation (val / test %):");
        for r in &refs.ablation {
            let _ = write!(out, "  {:<52} {:>6.2} / {:>6.2}", r.label, r.validation, r.test);
            if let Some(n) = &r.note {
                let _ = write!(out, "  ({n})");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub stages: Vec<StageSummary>,
    pub report: Option<PipelineReport>,
}

impl RunSummary {
    pub fn totals(&self) -> CacheStats {
        self.stages.iter().fold(CacheStats::default(), |acc, s| CacheStats {
            hits: acc.hits + s.hits,
            computed: acc.computed + s.computed,
        })
    }
}

#[derive(Debug, Clone)]
struct VideoKeys {
    pose: String,
    select: String,
    prompt: String,
    segment: String,
    clips: BTreeMap<StreamKind, String>,
    visualize: String,
}

/// A configured pipeline over one dataset and cache root.
pub struct Pipeline {
    cfg: PipelineConfig,
    tax: KeypointTaxonomy,
    manifest: DatasetManifest,
    cache: Cache,
    pool: rayon::ThreadPool,
    estimator: Box<dyn PoseEstimator>,
    segmenter: Box<dyn SegmenterAdapter>,
    flow: Box<dyn FlowAdapter>,
    config_hash: String,
    videos: BTreeMap<String, VideoKeys>,
    train_keys: BTreeMap<(usize, StreamKind), String>,
}

/// Hash of a video's frame files, names included.
fn fingerprint(dir: &Path) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    for p in frame_paths(dir)? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn train_key(run: usize, stream: StreamKind) -> String {
    format!("run{run}-{stream}")
}

fn item<T>(stage: Stage, key: &str, r: Result<T, PipelineError>) -> Result<T, PipelineError> {
    r.map_err(|e| match e {
        e @ PipelineError::Item { .. } => e,
        e => PipelineError::Item {
            stage,
            key: key.to_string(),
            cause: Box::new(e),
        },
    })
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let tax = cfg.load_taxonomy()?;
        let manifest = load_manifest(&cfg.paths.dataset_root, cfg.num_classes)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        let estimator = cfg.backends.pose_estimator();
        let segmenter = cfg.backends.segmenter();
        let flow = cfg.backends.flow();
        let config_hash = stage_hash("", "experiment", &cfg.experiment(&tax));
        let tax_text = tax.to_toml_string();

        let prints: Vec<(String, String)> = pool.install(|| {
            manifest
                .records
                .par_iter()
                .map(|r| Ok((r.video_id.clone(), fingerprint(&manifest.video_path(r))?)))
                .collect::<Result<_, PipelineError>>()
        })?;
        let mut videos = BTreeMap::new();
        for (id, print) in prints {
            let pose = stage_hash(&print, Stage::Pose.name(), &(estimator.backend_id(), &tax_text));
            let select = stage_hash(&pose, Stage::SelectFrame.name(), &());
            let prompt = stage_hash(&select, Stage::Prompt.name(), &());
            let segment = stage_hash(&prompt, Stage::Segment.name(), &segmenter.backend_id());
            let clips = cfg
                .streams
                .iter()
                .map(|&s| {
                    let upstream = match s {
                        StreamKind::Flow | StreamKind::Rgb => &print,
                        _ => &segment,
                    };
                    let settings = (s, flow.backend_id(), cfg.max_flow);
                    (s, stage_hash(upstream, Stage::PrepareStreams.name(), &settings))
                })
                .collect();
            let visualize = stage_hash(&segment, Stage::Visualize.name(), &cfg.visualize);
            videos.insert(
                id,
                VideoKeys {
                    pose,
                    select,
                    prompt,
                    segment,
                    clips,
                    visualize,
                },
            );
        }

        let tcfg = cfg.train_config();
        let mut train_keys = BTreeMap::new();
        for &s in &cfg.streams {
            let mut upstream = String::new();
            for r in manifest.split(Split::Train).chain(manifest.split(Split::Val)) {
                let _ = writeln!(upstream, "{} {:?} {:?} {}", r.video_id, r.split, r.label, videos[&r.video_id].clips[&s]);
            }
            for run in 0..cfg.runs {
                let settings = (s, run, cfg.seed, cfg.num_classes, &tcfg, &cfg.augment);
                train_keys.insert((run, s), stage_hash(&upstream, Stage::Train.name(), &settings));
            }
        }

        Ok(Self {
            cache: Cache::new(&cfg.paths.cache_root),
            cfg,
            tax,
            manifest,
            pool,
            estimator,
            segmenter,
            flow,
            config_hash,
            videos,
            train_keys,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Runs the requested stages in execution order. `ablation` adds the
    /// cumulative stream table to the eval report.
    pub fn run(&self, stages: &[Stage], ablation: bool) -> Result<RunSummary, PipelineError> {
        let mut ordered = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        let mut summaries = Vec::new();
        let mut report = None;
        for stage in ordered {
            let before = self.cache.stats();
            log::info!("stage {stage}: start");
            match stage {
                Stage::Pose => self.per_video(stage, |r| self.pose(r))?,
                Stage::SelectFrame => self.per_video(stage, |r| self.select_frame(r))?,
                Stage::Prompt => self.per_video(stage, |r| self.prompt(r))?,
                Stage::Segment => self.per_video(stage, |r| self.segment(r))?,
                Stage::PrepareStreams => self.per_video(stage, |r| self.prepare_streams(r))?,
                Stage::Train => self.train()?,
                Stage::Eval => report = Some(self.eval(ablation)?),
                Stage::Visualize => self.visualize()?,
            }
            let after = self.cache.stats();
            let s = StageSummary {
                stage,
                hits: after.hits - before.hits,
                computed: after.computed - before.computed,
            };
            log::info!("stage {stage}: {} computed, {} cached", s.computed, s.hits);
            summaries.push(s);
        }
        Ok(RunSummary {
            stages: summaries,
            report,
        })
    }

    fn per_video<F>(&self, stage: Stage, f: F) -> Result<(), PipelineError>
    where
        F: Fn(&VideoRecord) -> Result<(), PipelineError> + Sync,
    {
        self.pool.install(|| {
            self.manifest
                .records
                .par_iter()
                .try_for_each(|r| item(stage, &r.video_id, f(r)))
        })
    }

    fn keys(&self, r: &VideoRecord) -> &VideoKeys {
        &self.videos[&r.video_id]
    }

    fn frames(&self, r: &VideoRecord) -> Result<Vec<Frame>, PipelineError> {
        Ok(load_video(&self.manifest.video_path(r))?)
    }

    fn pose(&self, r: &VideoRecord) -> Result<(), PipelineError> {
        let k = self.keys(r);
        self.cache.get_or_build(Stage::Pose.name(), &r.video_id, &k.pose, |tmp| {
            let frames = self.frames(r)?;
            let track = estimate_pose(&r.video_id, &frames, self.estimator.as_ref(), &self.tax)?;
            save_pose_track(&track, &tmp.join(POSE_FILE))?;
            Ok::<_, PipelineError>(())
        })?;
        Ok(())
    }

    fn select_frame(&self, r: &VideoRecord) -> Result<(), PipelineError> {
        let k = self.keys(r);
        self.cache.get_or_build(Stage::SelectFrame.name(), &r.video_id, &k.select, |tmp| {
            let pose_dir = self.cache.require(Stage::Pose.name(), &r.video_id, &k.pose)?;
            let track = load_pose_track(&pose_dir.join(POSE_FILE))?;
            let scores = score_frames(&track, &self.tax);
            let anchor = best_of(&scores);
            let path = tmp.join(SCORES_TABLE_FILE);
            fs::write(&path, score_table(&scores)).map_err(io_err(&path))?;
            let combined = scores.iter().find(|s| s.frame_index == anchor).map_or(0.0, |s| s.combined);
            write_json(
                &tmp.join(SELECTION_FILE),
                &Selection {
                    video_id: r.video_id.clone(),
                    anchor_frame: anchor,
                    combined,
                },
            )
        })?;
        Ok(())
    }

    fn prompt(&self, r: &VideoRecord) -> Result<(), PipelineError> {
        let k = self.keys(r);
        self.cache.get_or_build(Stage::Prompt.name(), &r.video_id, &k.prompt, |tmp| {
            let pose_dir = self.cache.require(Stage::Pose.name(), &r.video_id, &k.pose)?;
            let sel_dir = self.cache.require(Stage::SelectFrame.name(), &r.video_id, &k.select)?;
            let track = load_pose_track(&pose_dir.join(POSE_FILE))?;
            let sel: Selection = read_json(&sel_dir.join(SELECTION_FILE))?;
            let kf = track.frames.get(sel.anchor_frame).ok_or_else(|| PipelineError::Artifact {
                path: sel_dir.join(SELECTION_FILE),
                message: format!("anchor {} outside a {}-frame track", sel.anchor_frame, track.len()),
            })?;
            write_json(&tmp.join(PROMPTS_FILE), &all_prompts(kf, &self.tax))
        })?;
        Ok(())
    }

    fn segment(&self, r: &VideoRecord) -> Result<(), PipelineError> {
        let k = self.keys(r);
        self.cache.get_or_build(Stage::Segment.name(), &r.video_id, &k.segment, |tmp| {
            let prompt_dir = self.cache.require(Stage::Prompt.name(), &r.video_id, &k.prompt)?;
            let prompts: Vec<PromptSet> = read_json(&prompt_dir.join(PROMPTS_FILE))?;
            let frames = self.frames(r)?;
            for p in &prompts {
                let m = segment_video(&r.video_id, &frames, p, self.segmenter.as_ref())?;
                save_masklet(&m, &tmp.join(p.target.name()))?;
            }
            Ok::<_, PipelineError>(())
        })?;
        Ok(())
    }

    fn masklets(&self, r: &VideoRecord) -> Result<[Masklet; 3], PipelineError> {
        let k = self.keys(r);
        let dir = self.cache.require(Stage::Segment.name(), &r.video_id, &k.segment)?;
        Ok([
            load_masklet(&dir.join(Target::Body.name()))?,
            load_masklet(&dir.join(Target::LeftHand.name()))?,
            load_masklet(&dir.join(Target::RightHand.name()))?,
        ])
    }

    fn prepare_streams(&self, r: &VideoRecord) -> Result<(), PipelineError> {
        let k = self.keys(r);
        let mut frames: Option<Vec<Frame>> = None;
        let mut masklets: Option<[Masklet; 3]> = None;
        for (&s, hash) in &k.clips {
            self.cache.get_or_build(Stage::PrepareStreams.name(), &r.video_id, hash, |tmp| {
                if frames.is_none() {
                    frames = Some(self.frames(r)?);
                }
                let fr = frames.as_deref().expect("loaded above");
                let clip = match s {
                    StreamKind::Flow => flow_clip(fr, self.flow.as_ref(), self.cfg.max_flow)?,
                    StreamKind::Rgb => rgb_clip(fr)?,
                    _ => {
                        if masklets.is_none() {
                            masklets = Some(self.masklets(r)?);
                        }
                        let [body, left_hand, right_hand] = masklets.as_ref().expect("loaded above");
                        let inputs = VideoInputs {
                            frames: fr,
                            body,
                            left_hand,
                            right_hand,
                        };
                        build_clips(&inputs, &[s], self.flow.as_ref(), self.cfg.max_flow)?.remove(0)
                    }
                };
                save_clips(tmp, &r.video_id, &[clip], self.cfg.max_flow)?;
                Ok::<_, PipelineError>(())
            })?;
        }
        Ok(())
    }

    fn labeled(&self, records: &[&VideoRecord], stream: StreamKind) -> Result<Vec<LabeledClip>, PipelineError> {
        records
            .par_iter()
            .map(|r| {
                let dir = self
                    .cache
                    .require(Stage::PrepareStreams.name(), &r.video_id, &self.keys(r).clips[&stream])?;
                let label = r
                    .label
                    .ok_or_else(|| PipelineError::Config(format!("{} has no label", r.video_id)))?;
                Ok(LabeledClip {
                    video_id: r.video_id.clone(),
                    clip: load_clip(&dir, stream)?,
                    label,
                })
            })
            .collect()
    }

    fn run_seed(&self, run: usize) -> u64 {
        self.cfg.seed + run as u64
    }

    fn train(&self) -> Result<(), PipelineError> {
        let train: Vec<&VideoRecord> = self.manifest.split(Split::Train).collect();
        let val: Vec<&VideoRecord> = self.manifest.split(Split::Val).collect();
        let tcfg = self.cfg.train_config();
        for run in 0..self.cfg.runs {
            for &s in &self.cfg.streams {
                let key = train_key(run, s);
                let hash = &self.train_keys[&(run, s)];
                let seed = self.run_seed(run);
                let built = self.cache.get_or_build(Stage::Train.name(), &key, hash, |tmp| {
                    self.pool.install(|| {
                        let train_clips = self.labeled(&train, s)?;
                        let val_clips = self.labeled(&val, s)?;
                        log::info!("training {s} (run {run}) on {} clips", train_clips.len());
                        let out = train_stream(
                            s,
                            &train_clips,
                            &val_clips,
                            self.cfg.num_classes,
                            &tcfg,
                            &self.cfg.augment,
                            seed,
                            run,
                        )?;
                        write_json(
                            &tmp.join(MODEL_FILE),
                            &Checkpoint {
                                stream: s,
                                run,
                                seed,
                                train_hash: hash.clone(),
                                model: out.model.frozen(),
                            },
                        )?;
                        write_json(
                            &tmp.join(HISTORY_FILE),
                            &TrainHistory {
                                stream: s,
                                run,
                                seed,
                                best_epoch: out.best_epoch,
                                epochs_trained: out.epochs_trained,
                                history: out.history,
                            },
                        )
                    })
                });
                item(Stage::Train, &key, built)?;
            }
        }
        Ok(())
    }

    fn eval_records(&self) -> Vec<(Split, Vec<&VideoRecord>)> {
        let mut out = vec![(Split::Val, self.manifest.split(Split::Val).collect::<Vec<_>>())];
        let test: Vec<&VideoRecord> = self.manifest.split(Split::Test).collect();
        if !test.is_empty() && test.iter().all(|r| r.label.is_some()) {
            out.push((Split::Test, test));
        }
        out
    }

    fn eval_hash(&self, run: usize, r: &VideoRecord) -> String {
        let mut upstream = String::new();
        for &s in &self.cfg.streams {
            let _ = writeln!(upstream, "{s} {} {}", self.train_keys[&(run, s)], self.keys(r).clips[&s]);
        }
        stage_hash(&upstream, Stage::Eval.name(), &run)
    }

    fn load_models(&self, run: usize) -> Result<BTreeMap<StreamKind, TinyClassifier>, PipelineError> {
        self.cfg
            .streams
            .iter()
            .map(|&s| {
                let dir = self.cache.require(Stage::Train.name(), &train_key(run, s), &self.train_keys[&(run, s)])?;
                let ck: Checkpoint = read_json(&dir.join(MODEL_FILE))?;
                Ok((s, ck.model))
            })
            .collect()
    }

    fn eval(&self, ablation: bool) -> Result<PipelineReport, PipelineError> {
        let splits = self.eval_records();
        let mut reports = Vec::new();
        let mut runs = Vec::new();
        for run in 0..self.cfg.runs {
            let all: Vec<&VideoRecord> = splits.iter().flat_map(|(_, rs)| rs.iter().copied()).collect();
            let missing = all
                .iter()
                .any(|r| !self.cache.is_complete(Stage::Eval.name(), &r.video_id, &self.eval_hash(run, r)));
            let models = if missing { Some(self.load_models(run)?) } else { None };
            self.pool.install(|| {
                all.par_iter().try_for_each(|r| {
                    let built = self.cache.get_or_build(Stage::Eval.name(), &r.video_id, &self.eval_hash(run, r), |tmp| {
                        let models = models.as_ref().expect("models are loaded when an entry is missing");
                        let mut scores = BTreeMap::new();
                        for (&s, model) in models {
                            let dir = self
                                .cache
                                .require(Stage::PrepareStreams.name(), &r.video_id, &self.keys(r).clips[&s])?;
                            let clip = load_clip(&dir, s)?.to_clip();
                            scores.insert(s, predict_scores(model, &clip)?.probs);
                        }
                        write_json(&tmp.join(STREAM_SCORES_FILE), &scores)
                    });
                    item(Stage::Eval, &r.video_id, built).map(|_| ())
                })
            })?;

            let mut val_acc = None;
            let mut test_acc = None;
            for (split, records) in &splits {
                let mut scores: StreamScores = BTreeMap::new();
                let mut labels = Vec::new();
                for r in records {
                    let dir = self.cache.require(Stage::Eval.name(), &r.video_id, &self.eval_hash(run, r))?;
                    let per: BTreeMap<StreamKind, Vec<f64>> = read_json(&dir.join(STREAM_SCORES_FILE))?;
                    for (s, probs) in per {
                        scores.entry(s).or_default().push(ScoreVector::new(Some(s), probs)?);
                    }
                    labels.push(r.label.expect("eval splits are labelled"));
                }
                let ev = evaluate(&scores, &labels, &self.cfg.fusion.weights, self.cfg.fusion.mode, ablation)?;
                match split {
                    Split::Test => test_acc = Some(ev.fused),
                    _ => val_acc = Some(ev.fused),
                }
                reports.push(EvalReport {
                    config_hash: self.config_hash.clone(),
                    seed: self.run_seed(run),
                    run,
                    split: split_name(*split).to_string(),
                    num_videos: labels.len(),
                    per_stream: ev.per_stream,
                    fused: ev.fused,
                    per_class: ev.per_class,
                    ablation: ev.ablation,
                    median_of_five: None,
                });
            }
            runs.push(RunResult {
                run,
                seed: self.run_seed(run),
                val_accuracy: val_acc.expect("validation split is always evaluated"),
                test_accuracy: test_acc,
            });
        }
        let median = if runs.len() == 5 { Some(median_of_five(&runs)?) } else { None };
        let report = PipelineReport {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            streams: self.cfg.streams.clone(),
            reports,
            median_of_five: median,
        };
        let out = &self.cfg.paths.output_root;
        fs::create_dir_all(out).map_err(io_err(out))?;
        let json = out.join(REPORT_JSON);
        fs::write(&json, report.to_json()).map_err(io_err(&json))?;
        let text = out.join(REPORT_TEXT);
        fs::write(&text, report.to_text()).map_err(io_err(&text))?;
        Ok(report)
    }

    fn visualize(&self) -> Result<(), PipelineError> {
        let records: Vec<&VideoRecord> = self.manifest.split(Split::Val).take(self.cfg.visualize.videos).collect();
        let out_root = self.cfg.paths.output_root.join(Stage::Visualize.name());
        self.pool.install(|| {
            records.par_iter().try_for_each(|r| {
                let k = self.keys(r);
                let built = self.cache.get_or_build(Stage::Visualize.name(), &r.video_id, &k.visualize, |tmp| {
                    let frames = self.frames(r)?;
                    let [body, left, right] = self.masklets(r)?;
                    let hands = merge_hands(&left, &right)?;
                    let picks = pick_evenly(&sample_indices(frames.len()), self.cfg.visualize.frames);
                    for (j, &t) in picks.iter().enumerate() {
                        let b = overlay(&frames[t], body.frames[t].mask.view(), BODY_COLOR);
                        write_rgb_png(&tmp.join(format!("body_{j:02}.png")), b.view())?;
                        let h = overlay(&frames[t], hands.frames[t].mask.view(), HANDS_COLOR);
                        write_rgb_png(&tmp.join(format!("hands_{j:02}.png")), h.view())?;
                    }
                    Ok(())
                });
                let dir = item(Stage::Visualize, &r.video_id, built)?;
                copy_visible(&dir, &out_root.join(&r.video_id))
            })
        })
    }
}

/// Mirrors a cache entry into the output tree, skipping the marker.
fn copy_visible(from: &Path, to: &Path) -> Result<(), PipelineError> {
    if to.exists() {
        fs::remove_dir_all(to).map_err(io_err(to))?;
    }
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        if entry.file_name() == COMPLETE_MARKER {
            continue;
        }
        let dest = to.join(entry.file_name());
        fs::copy(entry.path(), &dest).map_err(io_err(&dest))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists_parse_in_execution_order() {
        assert_eq!(
            Stage::parse_list("eval, pose,segment,pose").unwrap(),
            vec![Stage::Pose, Stage::Segment, Stage::Eval]
        );
        assert_eq!(Stage::parse_list("select-frame").unwrap(), vec![Stage::SelectFrame]);
        let err = Stage::parse_list("pose,segmnt").unwrap_err().to_string();
        assert!(err.contains("segmnt") && err.contains("prepare-streams"), "{err}");
        assert!(Stage::parse_list(" , ").is_err());
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }
}
