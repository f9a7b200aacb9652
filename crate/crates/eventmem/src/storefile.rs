//! On-disk store directories: one snapshot per conversation plus a
//! `manifest.json` recording how the stores were built, so queries use the
//! same encoder and stub rules as ingestion.

use std::path::{Path, PathBuf};

use eventmem_core::embedding::{Encoder, HashingEncoder};
use eventmem_core::snapshot::{self, SnapshotError};
use eventmem_core::stub::StubRules;
use eventmem_core::MemoryStore;
use serde::{Deserialize, Serialize};

use crate::synth::NoisyEncoder;

pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT_EXT: &str = "evm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncoderSpec {
    Hashing { dimension: usize, seed: u64 },
    Noisy { dimension: usize, noise: f32, seed: u64 },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Hashing { dimension: eventmem_core::DEFAULT_DIMENSION, seed: HashingEncoder::DEFAULT_SEED }
    }
}

impl EncoderSpec {
    pub fn build(&self) -> Box<dyn Encoder> {
        match *self {
            EncoderSpec::Hashing { dimension, seed } => Box::new(HashingEncoder::with_seed(dimension, seed)),
            EncoderSpec::Noisy { dimension, noise, seed } => {
                Box::new(NoisyEncoder::new(HashingEncoder::new(dimension), noise, seed))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub encoder: EncoderSpec,
    /// Rules the stub provider ran with, if it was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_rules: Option<StubRules>,
    pub conversations: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: SnapshotError },
    #[error("{path}: bad manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("store directory {dir} has no conversation {id:?} (available: {available})")]
    UnknownConversation { dir: PathBuf, id: String, available: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreFileError + '_ {
    move |source| StoreFileError::Io { path: path.to_owned(), source }
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written snapshot behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreFileError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}

pub fn save_store(path: &Path, store: &MemoryStore) -> Result<(), StoreFileError> {
    write_atomic(path, &snapshot::encode(store))
}

pub fn load_store(path: &Path) -> Result<MemoryStore, StoreFileError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    snapshot::decode(&bytes).map_err(|source| StoreFileError::Snapshot { path: path.to_owned(), source })
}

/// File name for a conversation id; anything outside `[A-Za-z0-9_-]` becomes `_`.
pub fn snapshot_name(conversation_id: &str) -> String {
    let safe: String =
        conversation_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{safe}.{SNAPSHOT_EXT}")
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<(), StoreFileError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, StoreFileError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|e| StoreFileError::Manifest { path, message: e.to_string() })
}

/// Picks the snapshot for `conversation`, or the only one when `None`.
pub fn resolve_conversation(dir: &Path, manifest: &Manifest, conversation: Option<&str>) -> Result<PathBuf, StoreFileError> {
    let unknown = |id: &str| StoreFileError::UnknownConversation {
        dir: dir.to_owned(),
        id: id.to_string(),
        available: manifest.conversations.join(", "),
    };
    let id = match conversation {
        Some(id) if manifest.conversations.iter().any(|c| c == id) => id,
        Some(id) => return Err(unknown(id)),
        None if manifest.conversations.len() == 1 => &manifest.conversations[0],
        None => return Err(unknown("<none given>")),
    };
    Ok(dir.join(snapshot_name(id)))
}
