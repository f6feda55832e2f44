//! Run manifest: records what each stage consumed and produced so that an
//! unchanged stage can be skipped on rerun.
//!
//! A stage reruns iff its input hash changed, one of its recorded outputs is
//! missing, or the user passed --force.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub completed_at: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ManifestFile {
    #[serde(default)]
    pub stage: BTreeMap<String, StageRecord>,
}

#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    workdir: PathBuf,
    file: ManifestFile,
}

impl Manifest {
    pub fn load_or_default(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST_FILE);
        let file = if path.exists() {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?
        } else {
            ManifestFile::default()
        };
        Ok(Manifest {
            path,
            workdir: workdir.to_path_buf(),
            file,
        })
    }

    /// True when the recorded hash matches and every recorded output exists.
    pub fn is_current(&self, stage: &str, input_hash: &str) -> bool {
        match self.file.stage.get(stage) {
            Some(rec) => {
                rec.input_hash == input_hash
                    && rec
                        .outputs
                        .iter()
                        .all(|rel| self.workdir.join(rel).exists())
            }
            None => false,
        }
    }

    pub fn record(&mut self, stage: &str, input_hash: &str, outputs: &[String]) -> Result<()> {
        let completed_at = unix_timestamp();
        self.file.stage.insert(
            stage.to_string(),
            StageRecord {
                input_hash: input_hash.to_string(),
                outputs: outputs.to_vec(),
                completed_at,
            },
        );
        self.save()
    }

    fn save(&self) -> Result<()> {
        let text = toml::to_string_pretty(&self.file).context("serializing manifest")?;
        fs::write(&self.path, text)
            .with_context(|| format!("writing manifest {}", self.path.display()))?;
        Ok(())
    }
}

fn unix_timestamp() -> String {
    use std::time::{SystemTime, UNIX_EPOCH};
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    secs.to_string()
}

/// One ingredient of a stage's input hash.
pub enum HashPart<'a> {
    /// Configuration text or other in-memory strings.
    Str(&'a str),
    /// An upstream artifact whose bytes feed the hash.
    File(&'a Path),
}

/// Hash of everything a stage reads. Files contribute their full contents,
/// so editing an upstream artifact invalidates all downstream stages.
pub fn hash_inputs(parts: &[HashPart<'_>]) -> Result<String> {
    let mut hasher = Sha256::new();
    for part in parts {
        match part {
            HashPart::Str(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            HashPart::File(path) => {
                let bytes = fs::read(path)
                    .with_context(|| format!("hashing input {}", path.display()))?;
                hasher.update([1u8]);
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
            }
        }
    }
    Ok(hex_lower(&hasher.finalize()))
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
