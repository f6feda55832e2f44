//! Working-directory layout and the single-instance lock.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fs2::FileExt;

/// Environment variable that overrides the configured output root.
pub const WORKDIR_ENV: &str = "SPINEAGE_WORKDIR";

/// Resolve the output root: environment override first, then config.
pub fn resolve_workdir(configured: &str) -> PathBuf {
    match std::env::var(WORKDIR_ENV) {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(configured),
    }
}

/// Artifact paths, all relative to the working directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }

    pub fn subjects_csv(&self) -> PathBuf {
        self.root.join("subjects.csv")
    }
    pub fn records_csv(&self) -> PathBuf {
        self.root.join("records.csv")
    }
    pub fn embedding_csv(&self, bracket: u32) -> PathBuf {
        self.root.join(format!("clusters/embedding_{bracket}.csv"))
    }
    pub fn cluster_csv(&self, bracket: u32) -> PathBuf {
        self.root.join(format!("clusters/bracket_{bracket}.csv"))
    }
    pub fn cluster_summary(&self) -> PathBuf {
        self.root.join("clusters/summary.txt")
    }
    pub fn splits_csv(&self) -> PathBuf {
        self.root.join("splits.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.bin")
    }
    pub fn train_log_csv(&self) -> PathBuf {
        self.root.join("model/train_log.csv")
    }
    pub fn train_meta_csv(&self) -> PathBuf {
        self.root.join("model/train_meta.csv")
    }
    pub fn predictions_csv(&self) -> PathBuf {
        self.root.join("eval/predictions.csv")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("eval/metrics.csv")
    }
    pub fn bias_csv(&self) -> PathBuf {
        self.root.join("eval/bias.csv")
    }
    pub fn sag_csv(&self, group: &str) -> PathBuf {
        self.root.join(format!("biomarkers/sag_{group}.csv"))
    }
    pub fn odds_csv(&self) -> PathBuf {
        self.root.join("biomarkers/odds_ratios.csv")
    }
    pub fn icc_csv(&self) -> PathBuf {
        self.root.join("biomarkers/icc.csv")
    }
    pub fn sag_by_bracket_csv(&self) -> PathBuf {
        self.root.join("biomarkers/sag_by_bracket.csv")
    }
    pub fn gradcam_pgm(&self, subject_id: &str) -> PathBuf {
        self.root.join(format!("gradcam/{subject_id}.pgm"))
    }
    pub fn gradcam_csv(&self, subject_id: &str) -> PathBuf {
        self.root.join(format!("gradcam/{subject_id}.csv"))
    }
    pub fn ablation_csv(&self) -> PathBuf {
        self.root.join("ablation/ablation.csv")
    }
    pub fn ablation_train_log_csv(&self, arm: &str) -> PathBuf {
        self.root.join(format!("ablation/train_log_{arm}.csv"))
    }

    /// Path relative to the root, for manifest records.
    pub fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    pub fn ensure_parent(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
        Ok(())
    }
}

/// Exclusive per-workdir lock; released when dropped.
pub struct WorkdirLock {
    _file: File,
}

pub fn acquire_lock(root: &Path) -> Result<WorkdirLock> {
    fs::create_dir_all(root)
        .with_context(|| format!("creating working directory {}", root.display()))?;
    let path = root.join(".lock");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(false)
        .open(&path)
        .with_context(|| format!("opening lock file {}", path.display()))?;
    if file.try_lock_exclusive().is_err() {
        bail!(
            "working directory {} is locked by another pipeline instance",
            root.display()
        );
    }
    Ok(WorkdirLock { _file: file })
}
