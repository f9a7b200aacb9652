//! Dense vectors, text encoders and exact cosine top-k over the two layers.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{layer} id {id} is already registered")]
    DuplicateId { layer: Layer, id: u64 },
    #[error("{layer} id {id} is not registered")]
    UnknownId { layer: Layer, id: u64 },
    #[error("encoder failure: {0}")]
    Encoder(String),
}

/// Fixed-length vector of finite components. The all-zero vector is the
/// null embedding: it can be stored but never appears in a top-k result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn null(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn is_null(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Dot product with f64 accumulation. Products commute, so `dot(a, b)` and
/// `dot(b, a)` are bit-identical.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += f64::from(x[0]) * f64::from(y[0]);
        acc[1] += f64::from(x[1]) * f64::from(y[1]);
        acc[2] += f64::from(x[2]) * f64::from(y[2]);
        acc[3] += f64::from(x[3]) * f64::from(y[3]);
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn cosine_from_parts(dot: f64, norm_sq_a: f64, norm_sq_b: f64) -> f64 {
    // sqrt(x * x) == x exactly, so cosine(v, v) is exactly 1.0.
    (dot / libm::sqrt(norm_sq_a * norm_sq_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(a.as_slice(), b.as_slice()), na, nb))
}

/// Text to vector. Implementations must be deterministic.
pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;
    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Keyed FNV-1a with a splitmix64 finalizer; stable across platforms and releases.
pub fn seeded_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut hasher = fnv::FnvHasher::with_key(FNV_OFFSET ^ seed);
    hasher.write(bytes);
    // splitmix64 finalizer spreads FNV's weak low bits before the modulo.
    let mut z = hasher.finish();
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Feature-hashing bag-of-words encoder: each lowercase token adds ±1 to one
/// of `dim` buckets, chosen by a seeded hash; the result is L2-normalized.
/// Shared tokens therefore raise cosine similarity. Text without tokens
/// encodes to the null embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dim: usize,
    seed: u64,
}

impl HashingEncoder {
    pub const DEFAULT_SEED: u64 = 0x5eed_e7e0_0000_0001;

    pub fn new(dim: usize) -> Self {
        Self::with_seed(dim, Self::DEFAULT_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, seed }
    }

    /// Accumulates `weight` for `token` into `acc` without normalizing.
    pub fn accumulate(&self, acc: &mut [f32], token: &str, weight: f32) {
        let h = seeded_hash(self.seed, token.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign * weight;
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self::new(crate::DEFAULT_DIMENSION)
    }
}

pub(crate) fn normalize(mut acc: Vec<f32>) -> EmbeddingVector {
    let norm = libm::sqrt(dot(&acc, &acc));
    if norm > 0.0 {
        let inv = (1.0 / norm) as f32;
        acc.iter_mut().for_each(|v| *v *= inv);
    }
    EmbeddingVector(acc)
}

impl Encoder for HashingEncoder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut acc = vec![0.0f32; self.dim];
        for token in text::tokenize(text) {
            self.accumulate(&mut acc, &token, 1.0);
        }
        Ok(normalize(acc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Turn,
    Event,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Turn => "turn",
            Layer::Event => "event",
        })
    }
}

/// Slot of a vector inside one layer of the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: u64,
    pub score: f64,
}

/// Descending score, then ascending id.
fn rank_order(a: &ScoredId, b: &ScoredId) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerWire {
    dim: u32,
    ids: Vec<u64>,
    values: Vec<f32>,
}

/// Row-major vectors of one layer plus cached squared norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LayerWire", into = "LayerWire")]
struct LayerIndex {
    dim: usize,
    ids: Vec<u64>,
    values: Vec<f32>,
    norms_sq: Vec<f64>,
    slots: BTreeMap<u64, u32>,
}

impl PartialEq for LayerIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids && self.values == other.values
    }
}

impl TryFrom<LayerWire> for LayerIndex {
    type Error = &'static str;

    fn try_from(wire: LayerWire) -> Result<Self, Self::Error> {
        if wire.values.len() != wire.ids.len() * wire.dim as usize {
            return Err("layer vector data does not match its id count");
        }
        if wire.values.iter().any(|v| !v.is_finite()) {
            return Err("layer contains a non-finite component");
        }
        let mut layer = LayerIndex { dim: wire.dim as usize, ids: wire.ids, values: wire.values, norms_sq: Vec::new(), slots: BTreeMap::new() };
        layer.rebuild();
        if layer.slots.len() != layer.ids.len() {
            return Err("layer contains duplicate ids");
        }
        Ok(layer)
    }
}

impl From<LayerIndex> for LayerWire {
    fn from(layer: LayerIndex) -> Self {
        LayerWire { dim: layer.dim as u32, ids: layer.ids, values: layer.values }
    }
}

impl LayerIndex {
    fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), values: Vec::new(), norms_sq: Vec::new(), slots: BTreeMap::new() }
    }

    fn rebuild(&mut self) {
        self.norms_sq.clear();
        self.slots.clear();
        for (slot, id) in self.ids.iter().enumerate() {
            self.slots.insert(*id, slot as u32);
        }
        if self.dim > 0 {
            self.norms_sq = self.values.chunks_exact(self.dim).map(|row| dot(row, row)).collect();
        }
    }

    fn row(&self, slot: usize) -> &[f32] {
        &self.values[slot * self.dim..(slot + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Exact brute-force cosine index over the turn and event layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    dim: usize,
    turns: LayerIndex,
    events: LayerIndex,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, turns: LayerIndex::new(dim), events: LayerIndex::new(dim) }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    fn layer(&self, layer: Layer) -> &LayerIndex {
        match layer {
            Layer::Turn => &self.turns,
            Layer::Event => &self.events,
        }
    }

    fn layer_mut(&mut self, layer: Layer) -> &mut LayerIndex {
        match layer {
            Layer::Turn => &mut self.turns,
            Layer::Event => &mut self.events,
        }
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
        if v.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, found: v.dim() });
        }
        Ok(())
    }

    pub fn len(&self, layer: Layer) -> usize {
        self.layer(layer).len()
    }

    pub fn is_empty(&self, layer: Layer) -> bool {
        self.len(layer) == 0
    }

    pub fn contains(&self, layer: Layer, id: u64) -> bool {
        self.layer(layer).slots.contains_key(&id)
    }

    pub fn register(&mut self, layer: Layer, id: u64, vector: EmbeddingVector) -> Result<EmbeddingId, EmbeddingError> {
        self.check_dim(&vector)?;
        let l = self.layer_mut(layer);
        if l.slots.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId { layer, id });
        }
        let slot = l.ids.len() as u32;
        l.norms_sq.push(vector.norm_sq());
        l.ids.push(id);
        l.values.extend_from_slice(vector.as_slice());
        l.slots.insert(id, slot);
        Ok(EmbeddingId(slot))
    }

    pub fn encode_and_register(
        &mut self,
        encoder: &dyn Encoder,
        text: &str,
        layer: Layer,
        id: u64,
    ) -> Result<EmbeddingId, EmbeddingError> {
        if self.contains(layer, id) {
            return Err(EmbeddingError::DuplicateId { layer, id });
        }
        let v = encoder.encode(text)?;
        self.register(layer, id, v)
    }

    /// Overwrites the vector of an already registered id, keeping its slot.
    pub fn replace(&mut self, layer: Layer, id: u64, vector: EmbeddingVector) -> Result<EmbeddingId, EmbeddingError> {
        self.check_dim(&vector)?;
        let dim = self.dim;
        let l = self.layer_mut(layer);
        let slot = *l.slots.get(&id).ok_or(EmbeddingError::UnknownId { layer, id })? as usize;
        l.norms_sq[slot] = vector.norm_sq();
        l.values[slot * dim..(slot + 1) * dim].copy_from_slice(vector.as_slice());
        Ok(EmbeddingId(slot as u32))
    }

    pub fn get(&self, layer: Layer, id: u64) -> Option<EmbeddingVector> {
        let l = self.layer(layer);
        l.slots.get(&id).map(|slot| EmbeddingVector(l.row(*slot as usize).to_vec()))
    }

    /// The `min(k, |layer|)` best ids by cosine, descending, ties by ascending
    /// id. Null embeddings are skipped.
    pub fn top_k(&self, query: &EmbeddingVector, layer: Layer, k: usize) -> Result<Vec<ScoredId>, EmbeddingError> {
        if k == 0 {
            return Err(EmbeddingError::InvalidK);
        }
        self.check_dim(query)?;
        let l = self.layer(layer);
        let q_norm = query.norm_sq();
        if l.len() == 0 || q_norm == 0.0 {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        let mut scored: Vec<ScoredId> = Vec::with_capacity(l.len());
        for (slot, row) in l.values.chunks_exact(self.dim).enumerate() {
            let n = l.norms_sq[slot];
            if n == 0.0 {
                continue;
            }
            scored.push(ScoredId { id: l.ids[slot], score: cosine_from_parts(dot(q, row), q_norm, n) });
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank_order);
        Ok(scored)
    }

    /// Every scored id of a layer in rank order.
    pub fn rank_all(&self, query: &EmbeddingVector, layer: Layer) -> Result<Vec<ScoredId>, EmbeddingError> {
        let n = self.len(layer).max(1);
        self.top_k(query, layer, n)
    }
}
