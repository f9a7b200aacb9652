//! Versioned binary container for a [`MemoryStore`].
//!
//! Layout (little endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `EVMEMSNP` |
//! | 2     | format version |
//! | 4     | embedding dimension |
//! | 8     | payload length |
//! | n     | postcard-encoded store (turns, events, embeddings) |
//!
//! Map-backed collections serialize in key order, so encoding the same store
//! always yields the same bytes.

use alloc::vec::Vec;

use crate::store::MemoryStore;

pub const MAGIC: [u8; 8] = *b"EVMEMSNP";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a memory snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot header dimension {header} disagrees with payload dimension {payload}")]
    DimensionMismatch { header: u32, payload: usize },
    #[error("corrupt snapshot payload: {0}")]
    Payload(postcard::Error),
    #[error("snapshot violates store invariants: {0}")]
    Invariant(alloc::string::String),
}

pub fn encode(store: &MemoryStore) -> Vec<u8> {
    let payload = postcard::to_allocvec(store).expect("in-memory store always serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dimension() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn encoded_len(store: &MemoryStore) -> usize {
    let payload = postcard::experimental::serialized_size(store).expect("in-memory store always serializes");
    HEADER_LEN + payload
}

pub fn decode(bytes: &[u8]) -> Result<MemoryStore, SnapshotError> {
    if bytes.len() < 8 || bytes[..8] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(SnapshotError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let dim = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes"));
    let len = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(SnapshotError::Truncated);
    }
    let store: MemoryStore = postcard::from_bytes(payload).map_err(SnapshotError::Payload)?;
    if store.dimension() != dim as usize {
        return Err(SnapshotError::DimensionMismatch { header: dim, payload: store.dimension() });
    }
    store.check_invariants().map_err(SnapshotError::Invariant)?;
    Ok(store)
}
