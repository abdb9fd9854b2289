//! Dataset manifests in the IsoGD list-file convention, plus the synthetic
//! fixture generator.
//!
//! A dataset root holds `train_list.txt`, `valid_list.txt` and optionally
//! `test_list.txt`. Each line is `rgb_path depth_path [label]`, paths relative
//! to the root. The depth column is accepted and discarded. Labels are
//! zero-based.

mod synth;

pub use synth::{
    gesture_pose, render_signer, render_video, synth_dataset, BodyPart, Gesture, PartMasks,
    SignerPalette, SignerPose, SynthSpec, SynthVideo, Variation,
};

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::VideoError;

pub const DEFAULT_NUM_CLASSES: usize = 249;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("synthetic dataset: {0}")]
    Synth(String),
    #[error(transparent)]
    Video(#[from] VideoError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
        move |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            writeln!(f, "  {}:{}: {}", i.file, i.line, i.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn list_file(self) -> &'static str {
        match self {
            Split::Train => "train_list.txt",
            Split::Val => "valid_list.txt",
            Split::Test => "test_list.txt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    /// Relative to the dataset root.
    pub rgb_path: PathBuf,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub num_classes: usize,
    pub records: Vec<VideoRecord>,
}

/// `train/001/M_00001.avi` -> `train_001_M_00001`.
pub fn video_id_from_path(rel: &str) -> String {
    let p = Path::new(rel);
    let stem = p.with_extension("");
    stem.to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> HashMap<Split, usize> {
        let mut counts = HashMap::new();
        for r in &self.records {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn video_path(&self, record: &VideoRecord) -> PathBuf {
        self.root.join(&record.rgb_path)
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Writes the split lists back under `root`. Depth columns are written as `-`.
    pub fn save(&self, root: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(root).map_err(DatasetError::io(root))?;
        for split in Split::ALL {
            let lines: Vec<String> = self
                .split(split)
                .map(|r| {
                    let rgb = r.rgb_path.to_string_lossy();
                    match r.label {
                        Some(l) => format!("{rgb} - {l}"),
                        None => format!("{rgb} -"),
                    }
                })
                .collect();
            if lines.is_empty() {
                continue;
            }
            let path = root.join(split.list_file());
            fs::write(&path, lines.join("\n") + "\n").map_err(DatasetError::io(&path))?;
        }
        Ok(())
    }
}

/// Reads and validates every split list present under `root`.
///
/// All problems are collected into one report: malformed lines, labels
/// outside `0..num_classes`, missing labels on train/val, ids seen twice
/// (within or across splits), and `rgb_path`s that do not exist.
pub fn load_manifest(root: &Path, num_classes: usize) -> Result<DatasetManifest, DatasetError> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen: HashMap<String, (String, usize)> = HashMap::new();
    let mut any_list = false;
    for split in Split::ALL {
        let file = split.list_file();
        let path = root.join(file);
        if !path.exists() {
            continue;
        }
        any_list = true;
        let text = fs::read_to_string(&path).map_err(DatasetError::io(&path))?;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let mut issue = |message: String| {
                issues.push(ValidationIssue {
                    file: file.to_string(),
                    line,
                    message,
                })
            };
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() > 3 {
                issue(format!("expected `rgb_path depth_path [label]`, got {} fields", tokens.len()));
                continue;
            }
            let label = match tokens.get(2) {
                Some(tok) => match tok.parse::<usize>() {
                    Ok(l) if l < num_classes => Some(l),
                    Ok(l) => {
                        issue(format!("label {l} out of range 0..{num_classes}"));
                        continue;
                    }
                    Err(_) => {
                        issue(format!("label `{tok}` is not a non-negative integer"));
                        continue;
                    }
                },
                None => None,
            };
            if label.is_none() && split != Split::Test {
                issue("missing label".into());
                continue;
            }
            let rgb = tokens[0];
            let video_id = video_id_from_path(rgb);
            if let Some((f, l)) = seen.get(&video_id) {
                issue(format!("duplicate video id {video_id} (first seen at {f}:{l})"));
                continue;
            }
            if !root.join(rgb).exists() {
                issue(format!("rgb path {rgb} does not exist"));
                continue;
            }
            seen.insert(video_id.clone(), (file.to_string(), line));
            records.push(VideoRecord {
                video_id,
                rgb_path: PathBuf::from(rgb),
                label,
                split,
            });
        }
    }
    if !any_list {
        issues.push(ValidationIssue {
            file: root.display().to_string(),
            line: 0,
            message: "no split list files found".into(),
        });
    }
    if !issues.is_empty() {
        return Err(DatasetError::Validation(ValidationReport { issues }));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        num_classes,
        records,
    })
}
