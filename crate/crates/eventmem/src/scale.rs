//! Storage and vector-search scaling over fixed-size synthetic turns.
//!
//! Stores are built straight through the store API (no model calls): every
//! turn has the same text length, and turns are grouped into events of
//! `event_size` consecutive turns that follow the adaptive update schedule
//! (full refresh below `tau` links, single-fact append after).

use std::time::Instant;

use eventmem_core::embedding::{EmbeddingError, Encoder, HashingEncoder, Layer};
use eventmem_core::snapshot;
use eventmem_core::store::{EventUpdate, FactSheetEntry, Metadata, StoreError, TurnRecord};
use eventmem_core::{MemoryStore, TurnId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub sizes: Vec<usize>,
    pub dimension: usize,
    pub words_per_turn: usize,
    pub event_size: usize,
    pub tau: usize,
    pub queries: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 10_000, 100_000],
            dimension: eventmem_core::DEFAULT_DIMENSION,
            words_per_turn: 12,
            event_size: 20,
            tau: 10,
            queries: 100,
            top_k: 10,
            seed: 11,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScaleError {
    #[error("invalid scaling config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub turns: usize,
    pub events: usize,
    pub snapshot_bytes: usize,
    pub turns_only_bytes: usize,
    /// `snapshot_bytes / turns_only_bytes - 1`.
    pub event_overhead: f64,
    pub median_query_ms: f64,
}

const VOCAB: usize = 4096;

/// Six-letter word for a vocabulary index, so every turn has the same byte
/// length.
fn word(i: usize) -> String {
    let mut n = i;
    (0..6)
        .map(|_| {
            let c = (b'a' + (n % 26) as u8) as char;
            n /= 26;
            c
        })
        .collect()
}

fn turn_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| word(rng.gen_range(0..VOCAB))).collect::<Vec<_>>().join(" ")
}

/// Builds a store of `n` turns; with `events` set, groups them into events.
pub fn build_store(config: &ScaleConfig, n: usize, events: bool) -> Result<MemoryStore, ScaleError> {
    let encoder = HashingEncoder::new(config.dimension);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = MemoryStore::new(config.dimension);
    let mut current = None;
    for i in 0..n {
        let text = turn_text(&mut rng, config.words_per_turn);
        let id = TurnId(i as u64 + 1);
        let timestamp = "1 May 2023".to_string();
        let record = TurnRecord {
            turn_id: id,
            speaker: if i % 2 == 0 { "Ana" } else { "Ben" }.into(),
            metadata: Metadata { keywords: vec![text[..6].to_string()], tags: Vec::new(), timestamp: timestamp.clone(), context: String::new() },
            text,
            timestamp: timestamp.clone(),
        };
        let fact = |store: &MemoryStore, t: TurnId| FactSheetEntry {
            turn_id: t,
            fact: store.turn(t).map(|n| n.text[..13].to_string()).unwrap_or_default(),
            timestamp: timestamp.clone(),
        };
        let embedding = encoder.encode(&record.text)?;
        store.insert_turn(record, embedding)?;
        if !events {
            continue;
        }
        match current {
            Some(event) if i % config.event_size != 0 => {
                let volume = store.event(event).map_or(0, |e| e.volume());
                store.attach_link(event, id)?;
                let update = if volume < config.tau {
                    let linked = store.event(event).expect("exists").link_set().to_vec();
                    let fact_sheet = linked.iter().map(|t| fact(&store, *t)).collect();
                    EventUpdate::FullRefresh { summary: word(i % VOCAB), fact_sheet }
                } else {
                    EventUpdate::Append { entry: fact(&store, id) }
                };
                store.apply_event_update(event, update)?;
            }
            _ => {
                let entry = fact(&store, id);
                current = Some(store.create_event(word(i % VOCAB), vec![entry], &[id])?);
            }
        }
        // re-encode an event once it is complete
        if (i + 1) % config.event_size == 0 || i + 1 == n {
            store.refresh_stale_embeddings(&encoder)?;
        }
    }
    Ok(store)
}

/// Median wall time of `queries` top-k turn searches, in milliseconds.
pub fn median_query_ms(store: &MemoryStore, config: &ScaleConfig) -> Result<f64, ScaleError> {
    let encoder = HashingEncoder::new(config.dimension);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9);
    let mut times = Vec::with_capacity(config.queries);
    for _ in 0..config.queries {
        let query = encoder.encode(&turn_text(&mut rng, 4))?;
        let start = Instant::now();
        let hits = store.index().top_k(&query, Layer::Turn, config.top_k)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(hits);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(times[times.len() / 2])
}

pub fn run_scaling(config: &ScaleConfig) -> Result<Vec<ScaleRow>, ScaleError> {
    if config.sizes.is_empty() || config.sizes.contains(&0) {
        return Err(ScaleError::Config("sizes must be positive"));
    }
    if config.queries == 0 || config.top_k == 0 || config.event_size == 0 || config.words_per_turn == 0 {
        return Err(ScaleError::Config("queries, top_k, event_size and words_per_turn must be positive"));
    }
    config
        .sizes
        .iter()
        .map(|&n| {
            let turns_only_bytes = snapshot::encoded_len(&build_store(config, n, false)?);
            let store = build_store(config, n, true)?;
            let snapshot_bytes = snapshot::encoded_len(&store);
            Ok(ScaleRow {
                turns: n,
                events: store.event_count(),
                snapshot_bytes,
                turns_only_bytes,
                event_overhead: snapshot_bytes as f64 / turns_only_bytes as f64 - 1.0,
                median_query_ms: median_query_ms(&store, config)?,
            })
        })
        .collect()
}

pub fn format_table(rows: &[ScaleRow]) -> String {
    let mut out = String::from("turns\tevents\tsnapshot_bytes\tturns_only_bytes\tevent_overhead\tmedian_top_k_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\n",
            r.turns, r.events, r.snapshot_bytes, r.turns_only_bytes, r.event_overhead, r.median_query_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_size_turns_and_event_schedule() {
        let cfg = ScaleConfig { sizes: vec![60], ..ScaleConfig::default() };
        let store = build_store(&cfg, 60, true).unwrap();
        assert_eq!(store.event_count(), 3);
        let lens: Vec<usize> = store.turns().map(|t| t.text.len()).collect();
        assert!(lens.iter().all(|l| *l == lens[0]));
        let e = store.events().next().unwrap();
        assert_eq!(e.volume(), 20);
        assert_eq!(e.fact_sheet.len(), 20);
        store.check_invariants().unwrap();
        assert_eq!(snapshot::encode(&store).len(), snapshot::encoded_len(&store));
    }

    #[test]
    fn small_table() {
        let cfg = ScaleConfig { sizes: vec![100, 400], queries: 5, ..ScaleConfig::default() };
        let rows = run_scaling(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].event_overhead > 0.0);
        assert!(format_table(&rows).lines().count() == 3);
    }
}
