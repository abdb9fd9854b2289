//! Content-addressed stage cache.
//!
//! Layout: `<root>/<stage>/<key>/<hash>/`, where `key` is a video id (or a
//! run/stream tag for training) and `hash` chains the upstream hash with the
//! stage's own settings. An entry is valid once it holds the `.complete`
//! marker; entries are built in a sibling temp directory and renamed into
//! place, so a crash never leaves a half-written valid entry.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const COMPLETE_MARKER: &str = ".complete";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("no cached `{stage}` output for {key}; run stage `{stage}` first")]
    Missing { stage: String, key: String },
    #[error("cache io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub computed: usize,
}

impl CacheStats {
    pub fn artifacts(&self) -> usize {
        self.hits + self.computed
    }
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    hits: AtomicUsize,
    computed: AtomicUsize,
    temp_counter: AtomicU64,
}

/// Hex digest of `upstream`, the stage name and the JSON form of `settings`,
/// truncated to 16 characters.
pub fn stage_hash<S: Serialize + ?Sized>(upstream: &str, stage: &str, settings: &S) -> String {
    let json = serde_json::to_string(settings).expect("stage settings serialize");
    let mut h = Sha256::new();
    for part in [upstream, stage, &json] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            hits: AtomicUsize::new(0),
            computed: AtomicUsize::new(0),
            temp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, stage: &str, key: &str, hash: &str) -> PathBuf {
        self.root.join(stage).join(key).join(hash)
    }

    pub fn is_complete(&self, stage: &str, key: &str, hash: &str) -> bool {
        self.entry_dir(stage, key, hash).join(COMPLETE_MARKER).is_file()
    }

    /// Path of a valid entry, without touching the counters.
    pub fn require(&self, stage: &str, key: &str, hash: &str) -> Result<PathBuf, CacheError> {
        if self.is_complete(stage, key, hash) {
            Ok(self.entry_dir(stage, key, hash))
        } else {
            Err(CacheError::Missing {
                stage: stage.to_string(),
                key: key.to_string(),
            })
        }
    }

    /// Returns the entry, running `build` on a fresh temp directory first
    /// when it is missing. Counts one hit or one computation.
    pub fn get_or_build<E>(
        &self,
        stage: &str,
        key: &str,
        hash: &str,
        build: impl FnOnce(&Path) -> Result<(), E>,
    ) -> Result<PathBuf, E>
    where
        E: From<CacheError>,
    {
        let dir = self.entry_dir(stage, key, hash);
        if dir.join(COMPLETE_MARKER).is_file() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(dir);
        }
        let parent = dir.parent().expect("entry has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let n = self.temp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = parent.join(format!(".tmp-{hash}-{}-{n}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        if let Err(e) = build(&tmp) {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let marker = tmp.join(COMPLETE_MARKER);
        fs::write(&marker, b"").map_err(io_err(&marker))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(io_err(&dir))?;
        self.computed.fetch_add(1, Ordering::Relaxed);
        Ok(dir)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            computed: self.computed.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.hits.store(0, Ordering::Relaxed);
        self.computed.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    enum E {
        Cache(#[allow(dead_code)] CacheError),
        Build,
    }

    impl From<CacheError> for E {
        fn from(e: CacheError) -> Self {
            E::Cache(e)
        }
    }

    #[test]
    fn build_once_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let mut calls = 0;
        for _ in 0..3 {
            let p = cache
                .get_or_build::<E>("pose", "v1", "abc", |tmp| {
                    calls += 1;
                    fs::write(tmp.join("x.txt"), "1").unwrap();
                    Ok(())
                })
                .unwrap();
            assert_eq!(fs::read_to_string(p.join("x.txt")).unwrap(), "1");
        }
        assert_eq!(calls, 1);
        assert_eq!(cache.stats(), CacheStats { hits: 2, computed: 1 });
        assert!(cache.require("pose", "v1", "abc").is_ok());
    }

    #[test]
    fn failed_build_leaves_no_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let r = cache.get_or_build("segment", "v1", "h", |tmp| {
            fs::write(tmp.join("partial"), "x").unwrap();
            Err(E::Build)
        });
        assert!(matches!(r, Err(E::Build)));
        assert!(!cache.is_complete("segment", "v1", "h"));
        let leftovers = fs::read_dir(dir.path().join("segment/v1")).unwrap().count();
        assert_eq!(leftovers, 0);
        let err = cache.require("segment", "v1", "h").unwrap_err();
        assert!(err.to_string().contains("run stage `segment`"));
    }

    #[test]
    fn incomplete_entry_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let stale = cache.entry_dir("pose", "v1", "h");
        fs::create_dir_all(&stale).unwrap();
        fs::write(stale.join("junk"), "x").unwrap();
        cache.get_or_build::<E>("pose", "v1", "h", |_| Ok(())).unwrap();
        assert!(!stale.join("junk").exists());
        assert_eq!(cache.stats().computed, 1);
    }

    #[test]
    fn hash_depends_on_every_part() {
        let base = stage_hash("u", "pose", &("a", 1));
        assert_eq!(base.len(), 16);
        assert_eq!(base, stage_hash("u", "pose", &("a", 1)));
        assert_ne!(base, stage_hash("v", "pose", &("a", 1)));
        assert_ne!(base, stage_hash("u", "prompt", &("a", 1)));
        assert_ne!(base, stage_hash("u", "pose", &("a", 2)));
        assert_ne!(stage_hash("ab", "c", &()), stage_hash("a", "bc", &()));
    }
}
