//! On-disk layout and versioned stage outputs.
//!
//! Bulk data (snapshots, extracted paths) is bincode with a header written
//! ahead of the payload, so a version mismatch is detected before decoding.
//! Checkpoints and reports are JSON or CSV.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use locnet_core::nn::ModelCheckpoint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Profile;
use crate::scenario::Split;
use crate::HarnessError;

pub const ARTIFACT_FORMAT: &str = "locnet-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub stage: String,
    pub seed: u64,
    pub profile: String,
}

impl Header {
    pub fn new(stage: &str, seed: u64, profile: Profile) -> Self {
        Self { format: ARTIFACT_FORMAT.into(), version: ARTIFACT_VERSION, stage: stage.into(), seed, profile: profile.name().into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub header: Header,
    pub files: Vec<ManifestEntry>,
}

/// Where every stage reads and writes. Data products live under a
/// per-profile directory; trained models are shared between profiles.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub profile: Profile,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>, profile: Profile) -> Self {
        Self { root: root.into(), profile }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join(self.profile.name())
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn snapshots(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("snapshots-{}.bin", split.name()))
    }

    pub fn observations(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("observations-{}.bin", split.name()))
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.data_dir().join(format!("{stage}-manifest.json"))
    }

    pub fn losest(&self) -> PathBuf {
        self.models_dir().join("losest.json")
    }

    pub fn fc(&self) -> PathBuf {
        self.models_dir().join("fc.json")
    }

    pub fn anodet(&self) -> PathBuf {
        self.models_dir().join("anodet.json")
    }

    pub fn dataset_stats(&self) -> PathBuf {
        self.models_dir().join("dataset_stats.json")
    }

    pub fn calibration(&self) -> PathBuf {
        self.models_dir().join("calibration.json")
    }

    pub fn calibration_records(&self) -> PathBuf {
        self.data_dir().join("calibration_records.csv")
    }

    pub fn eval_records(&self) -> PathBuf {
        self.data_dir().join("eval_records.jsonl")
    }

    pub fn eval_table(&self) -> PathBuf {
        self.data_dir().join("eval_table.csv")
    }

    pub fn localization(&self) -> PathBuf {
        self.data_dir().join("localization.jsonl")
    }

    pub fn localization_summary(&self) -> PathBuf {
        self.data_dir().join("localization_summary.csv")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.data_dir().join("plots")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn open(path: &Path, producer: &'static str) -> Result<File, HarnessError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => HarnessError::MissingArtifact { path: display(path), producer },
        _ => io_err(path, e),
    })
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes `header` then `payload`; returns the file's SHA-256.
pub fn write_bin<T: Serialize>(path: &Path, header: &Header, payload: &T) -> Result<String, HarnessError> {
    ensure_parent(path)?;
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    bincode::serialize_into(&mut w, header).map_err(|e| io_err(path, e))?;
    bincode::serialize_into(&mut w, payload).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))?;
    drop(w);
    sha256_file(path)
}

fn check_header(header: &Header, path: &Path, stage: &str, producer: &'static str) -> Result<(), HarnessError> {
    let incompatible = |reason: String| HarnessError::IncompatibleArtifact { path: display(path), reason, producer };
    if header.format != ARTIFACT_FORMAT {
        return Err(incompatible(format!("unknown format `{}`", header.format)));
    }
    if header.version != ARTIFACT_VERSION {
        return Err(incompatible(format!("version {} (this build reads {ARTIFACT_VERSION})", header.version)));
    }
    if header.stage != stage {
        return Err(incompatible(format!("written by stage `{}`, expected `{stage}`", header.stage)));
    }
    Ok(())
}

pub fn read_bin<T: DeserializeOwned>(path: &Path, stage: &str, producer: &'static str) -> Result<(Header, T), HarnessError> {
    let mut r = BufReader::new(open(path, producer)?);
    let incompatible = |reason: String| HarnessError::IncompatibleArtifact { path: display(path), reason, producer };
    let header: Header = bincode::deserialize_from(&mut r).map_err(|e| incompatible(format!("unreadable header: {e}")))?;
    check_header(&header, path, stage, producer)?;
    let payload = bincode::deserialize_from(&mut r).map_err(|e| incompatible(format!("corrupt payload: {e}")))?;
    Ok((header, payload))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path, producer: &'static str) -> Result<String, HarnessError> {
    let mut s = String::new();
    open(path, producer)?.read_to_string(&mut s).map_err(|e| io_err(path, e))?;
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T, HarnessError> {
    let text = read_text(path, producer)?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::IncompatibleArtifact { path: display(path), reason: e.to_string(), producer })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| io_err(path, e))?);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<Vec<T>, HarnessError> {
    read_text(path, producer)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::IncompatibleArtifact {
                path: display(path),
                reason: format!("line {}: {e}", i + 1),
                producer,
            })
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, ck: &ModelCheckpoint) -> Result<(), HarnessError> {
    write_text(path, &ck.to_json())
}

pub fn load_checkpoint(path: &Path, producer: &'static str) -> Result<ModelCheckpoint, HarnessError> {
    let text = read_text(path, producer)?;
    ModelCheckpoint::from_json(&text)
        .map_err(|e| HarnessError::IncompatibleArtifact { path: display(path), reason: e.to_string(), producer })
}

/// Loads a checkpoint if the file exists.
pub fn load_optional(path: &Path, producer: &'static str) -> Result<Option<ModelCheckpoint>, HarnessError> {
    if path.exists() {
        load_checkpoint(path, producer).map(Some)
    } else {
        Ok(None)
    }
}
