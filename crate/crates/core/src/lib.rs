//! Two-level event/turn conversational memory.
//!
//! The turn layer keeps every dialogue turn together with LLM-extracted
//! metadata; the event layer groups related turns under a short summary and a
//! dated fact sheet, with explicit links back to the member turns. Retrieval
//! uses event summaries as anchors: the model inspects a retrieved event and
//! predicts which of its linked turns are worth reading, the prediction is
//! merged with plain vector hits, and a final filtering pass produces a
//! compact evidence set for answer generation.
//!
//! This crate is `no_std` (it needs `alloc`). File IO, HTTP providers,
//! dataset loading and the command line live in the `eventmem` crate.
//!
//! Module map:
//!
//! * [`store`] and [`snapshot`]: the hierarchy and its binary container.
//! * [`embedding`]: vectors, encoders and exact cosine top-k.
//! * [`gateway`] and [`stub`]: prompt families, structured output parsing
//!   with retries, token accounting, and the deterministic scripted provider.
//! * [`ingest`]: turn analysis, event affiliation and adaptive event update.
//! * [`retrieve`]: keyword extraction, dual-layer retrieval, event-anchored
//!   prediction, merge, filtering and answer generation.
//! * [`metrics`]: answer F1 and evidence-set metrics.
#![no_std]

extern crate alloc;

pub mod embedding;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod money;
pub mod retrieve;
pub mod snapshot;
pub mod store;
pub mod stub;
pub mod text;

pub use embedding::{cosine, EmbeddingIndex, EmbeddingVector, Encoder, HashingEncoder, Layer, ScoredId};
pub use gateway::{Gateway, PromptFamily, Provider, QuestionCategory, Stage, UsageLedger};
pub use ingest::{DialogueTurn, IngestionConfig, Ingestor};
pub use retrieve::{EvidenceSet, Provenance, RetrievalConfig, RetrievalMode, Retriever};
pub use store::{EventId, EventNode, EventUpdate, FactSheetEntry, MemoryStore, Metadata, TurnId, TurnNode};
pub use stub::{ScriptedStub, StubRules};

/// Default embedding dimension, matching small sentence encoders.
pub const DEFAULT_DIMENSION: usize = 384;
