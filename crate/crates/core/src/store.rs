//! The two-level hierarchy: turn nodes, event nodes and the links between them.
//!
//! Links are stored on both sides (an event's `link_set` and a turn's
//! `event_ids`) and every mutation goes through [`MemoryStore`] so the two
//! sides stay in agreement. An event's volume is the length of its link set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, EmbeddingId, EmbeddingIndex, EmbeddingVector, Encoder, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TurnId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

impl fmt::Display for TurnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("turn {0} already exists")]
    DuplicateTurn(TurnId),
    #[error("turn {new} does not follow the last ingested turn {last}")]
    NonMonotonicTurn { last: TurnId, new: TurnId },
    #[error("turn {0} is missing metadata keywords")]
    MissingMetadata(TurnId),
    #[error("unknown turn {0}")]
    UnknownTurn(TurnId),
    #[error("unknown event {0}")]
    UnknownEvent(EventId),
    #[error("an event needs at least one initial turn")]
    EmptyInitialSet,
    #[error("fact sheet entry references turn {turn} which is not linked to event {event}")]
    UnlinkedFact { event: EventId, turn: TurnId },
    #[error("fact sheet entry for turn {0} is empty")]
    EmptyFact(TurnId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// LLM-extracted description of one turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub keywords: Vec<String>,
    pub tags: Vec<String>,
    /// Normalized timestamp; the verbatim source timestamp stays on the turn.
    pub timestamp: String,
    pub context: String,
}

/// A turn as handed to [`MemoryStore::insert_turn`], before it has an
/// embedding slot or any event links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnRecord {
    pub turn_id: TurnId,
    pub speaker: String,
    pub text: String,
    pub timestamp: String,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnNode {
    pub turn_id: TurnId,
    pub speaker: String,
    pub text: String,
    pub timestamp: String,
    pub metadata: Metadata,
    pub embedding_id: EmbeddingId,
    pub event_ids: BTreeSet<EventId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSheetEntry {
    pub turn_id: TurnId,
    pub fact: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub event_id: EventId,
    pub summary: String,
    pub fact_sheet: Vec<FactSheetEntry>,
    link_set: Vec<TurnId>,
    pub embedding_id: EmbeddingId,
    /// Set whenever summary or facts change; cleared by re-encoding.
    pub embedding_stale: bool,
}

impl EventNode {
    /// Linked turn ids in ingestion order.
    pub fn link_set(&self) -> &[TurnId] {
        &self.link_set
    }

    pub fn volume(&self) -> usize {
        self.link_set.len()
    }

    pub fn is_linked(&self, turn: TurnId) -> bool {
        self.link_set.binary_search(&turn).is_ok()
    }

    /// Text the event embedding is computed from: the summary followed by
    /// one line per fact.
    pub fn embedding_text(&self) -> String {
        let mut text = self.summary.clone();
        for entry in &self.fact_sheet {
            text.push('\n');
            text.push_str(&entry.fact);
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventUpdate {
    /// Replace summary and fact sheet wholesale.
    FullRefresh { summary: String, fact_sheet: Vec<FactSheetEntry> },
    /// Add one fact; the summary is left as is.
    Append { entry: FactSheetEntry },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub turn_count: usize,
    pub event_count: usize,
    pub link_count: usize,
    pub serialized_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    turns: BTreeMap<TurnId, TurnNode>,
    events: BTreeMap<EventId, EventNode>,
    ingestion_order: Vec<TurnId>,
    next_event_id: u64,
    index: EmbeddingIndex,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        Self {
            turns: BTreeMap::new(),
            events: BTreeMap::new(),
            ingestion_order: Vec::new(),
            next_event_id: 1,
            index: EmbeddingIndex::new(dim),
        }
    }

    pub fn dimension(&self) -> usize {
        self.index.dimension()
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn turn(&self, id: TurnId) -> Option<&TurnNode> {
        self.turns.get(&id)
    }

    pub fn event(&self, id: EventId) -> Option<&EventNode> {
        self.events.get(&id)
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnNode> {
        self.ingestion_order.iter().map(move |id| &self.turns[id])
    }

    pub fn events(&self) -> impl Iterator<Item = &EventNode> {
        self.events.values()
    }

    pub fn ingestion_order(&self) -> &[TurnId] {
        &self.ingestion_order
    }

    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn link_count(&self) -> usize {
        self.events.values().map(EventNode::volume).sum()
    }

    /// The last `n` turns in ingestion order, oldest first.
    pub fn recent_turns(&self, n: usize) -> Vec<&TurnNode> {
        let start = self.ingestion_order.len().saturating_sub(n);
        self.ingestion_order[start..].iter().map(|id| &self.turns[id]).collect()
    }

    pub fn insert_turn(&mut self, record: TurnRecord, embedding: EmbeddingVector) -> Result<TurnId, StoreError> {
        let id = record.turn_id;
        if self.turns.contains_key(&id) {
            return Err(StoreError::DuplicateTurn(id));
        }
        if let Some(last) = self.ingestion_order.last() {
            if id <= *last {
                return Err(StoreError::NonMonotonicTurn { last: *last, new: id });
            }
        }
        if record.metadata.keywords.is_empty() {
            return Err(StoreError::MissingMetadata(id));
        }
        let embedding_id = self.index.register(Layer::Turn, id.0, embedding)?;
        self.turns.insert(
            id,
            TurnNode {
                turn_id: id,
                speaker: record.speaker,
                text: record.text,
                timestamp: record.timestamp,
                metadata: record.metadata,
                embedding_id,
                event_ids: BTreeSet::new(),
            },
        );
        self.ingestion_order.push(id);
        Ok(id)
    }

    fn check_facts(&self, event: &EventNode, facts: &[FactSheetEntry]) -> Result<(), StoreError> {
        for entry in facts {
            if entry.fact.trim().is_empty() {
                return Err(StoreError::EmptyFact(entry.turn_id));
            }
            if !event.is_linked(entry.turn_id) {
                return Err(StoreError::UnlinkedFact { event: event.event_id, turn: entry.turn_id });
            }
        }
        Ok(())
    }

    /// Creates an event linked to `initial_turns`. Its embedding starts as
    /// the null vector and is marked stale.
    pub fn create_event(
        &mut self,
        summary: String,
        fact_sheet: Vec<FactSheetEntry>,
        initial_turns: &[TurnId],
    ) -> Result<EventId, StoreError> {
        if initial_turns.is_empty() {
            return Err(StoreError::EmptyInitialSet);
        }
        if let Some(missing) = initial_turns.iter().find(|t| !self.turns.contains_key(t)) {
            return Err(StoreError::UnknownTurn(*missing));
        }
        let event_id = EventId(self.next_event_id);
        let mut link_set: Vec<TurnId> = initial_turns.to_vec();
        link_set.sort_unstable();
        link_set.dedup();
        let draft = EventNode {
            event_id,
            summary,
            fact_sheet,
            link_set,
            embedding_id: EmbeddingId(0),
            embedding_stale: true,
        };
        self.check_facts(&draft, &draft.fact_sheet)?;
        let embedding_id = self.index.register(Layer::Event, event_id.0, EmbeddingVector::null(self.dimension()))?;
        for t in &draft.link_set {
            self.turns.get_mut(t).expect("checked above").event_ids.insert(event_id);
        }
        self.events.insert(event_id, EventNode { embedding_id, ..draft });
        self.next_event_id += 1;
        Ok(event_id)
    }

    /// Links `turn` to `event` on both sides. Returns whether a new link was
    /// created; repeating an existing link changes nothing.
    pub fn attach_link(&mut self, event: EventId, turn: TurnId) -> Result<bool, StoreError> {
        if !self.turns.contains_key(&turn) {
            return Err(StoreError::UnknownTurn(turn));
        }
        let node = self.events.get_mut(&event).ok_or(StoreError::UnknownEvent(event))?;
        match node.link_set.binary_search(&turn) {
            Ok(_) => Ok(false),
            Err(pos) => {
                node.link_set.insert(pos, turn);
                self.turns.get_mut(&turn).expect("checked above").event_ids.insert(event);
                Ok(true)
            }
        }
    }

    /// Member turns of an event in link-set (chronological) order.
    pub fn linked_turns(&self, event: EventId) -> Result<Vec<&TurnNode>, StoreError> {
        let node = self.events.get(&event).ok_or(StoreError::UnknownEvent(event))?;
        Ok(node.link_set.iter().map(|t| &self.turns[t]).collect())
    }

    pub fn apply_event_update(&mut self, event: EventId, update: EventUpdate) -> Result<&EventNode, StoreError> {
        let node = self.events.get(&event).ok_or(StoreError::UnknownEvent(event))?;
        match &update {
            EventUpdate::FullRefresh { fact_sheet, .. } => self.check_facts(node, fact_sheet)?,
            EventUpdate::Append { entry } => self.check_facts(node, core::slice::from_ref(entry))?,
        }
        let node = self.events.get_mut(&event).expect("checked above");
        match update {
            EventUpdate::FullRefresh { summary, fact_sheet } => {
                node.summary = summary;
                node.fact_sheet = fact_sheet;
            }
            EventUpdate::Append { entry } => node.fact_sheet.push(entry),
        }
        node.embedding_stale = true;
        Ok(node)
    }

    pub fn set_event_embedding(&mut self, event: EventId, vector: EmbeddingVector) -> Result<(), StoreError> {
        let node = self.events.get_mut(&event).ok_or(StoreError::UnknownEvent(event))?;
        self.index.replace(Layer::Event, event.0, vector)?;
        node.embedding_stale = false;
        Ok(())
    }

    /// Re-encodes every stale event; returns how many were refreshed.
    pub fn refresh_stale_embeddings(&mut self, encoder: &dyn Encoder) -> Result<usize, StoreError> {
        let stale: Vec<(EventId, String)> = self
            .events
            .values()
            .filter(|e| e.embedding_stale)
            .map(|e| (e.event_id, e.embedding_text()))
            .collect();
        for (id, text) in &stale {
            let v = encoder.encode(text)?;
            self.set_event_embedding(*id, v)?;
        }
        Ok(stale.len())
    }

    /// Counts plus the size of the snapshot encoding.
    pub fn stats(&self) -> StoreStats {
        StoreStats {
            turn_count: self.turn_count(),
            event_count: self.event_count(),
            link_count: self.link_count(),
            serialized_bytes: crate::snapshot::encoded_len(self),
        }
    }

    /// Checks link bidirectionality, volume, fact references and embedding
    /// coverage. Returns a description of the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        use alloc::format;
        let mut from_events = BTreeSet::new();
        for e in self.events.values() {
            if e.link_set.is_empty() {
                return Err(format!("event {} has no links", e.event_id));
            }
            if !e.link_set.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("event {} link set is not strictly ordered", e.event_id));
            }
            for t in &e.link_set {
                if !self.turns.contains_key(t) {
                    return Err(format!("event {} links unknown turn {t}", e.event_id));
                }
                from_events.insert((e.event_id, *t));
            }
            for f in &e.fact_sheet {
                if !e.is_linked(f.turn_id) {
                    return Err(format!("event {} has a fact for unlinked turn {}", e.event_id, f.turn_id));
                }
            }
        }
        let mut from_turns = BTreeSet::new();
        for t in self.turns.values() {
            for e in &t.event_ids {
                from_turns.insert((*e, t.turn_id));
            }
            if t.metadata.keywords.is_empty() {
                return Err(format!("turn {} has no keywords", t.turn_id));
            }
        }
        if from_events != from_turns {
            return Err("link relation is not bidirectional".into());
        }
        if !self.ingestion_order.windows(2).all(|w| w[0] < w[1]) || self.ingestion_order.len() != self.turns.len() {
            return Err("ingestion order is inconsistent".into());
        }
        if self.index.len(Layer::Turn) != self.turns.len() || self.index.len(Layer::Event) != self.events.len() {
            return Err("embedding index does not cover every node".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub(crate) fn record(id: u64, text: &str) -> TurnRecord {
        TurnRecord {
            turn_id: TurnId(id),
            speaker: "Ann".into(),
            text: text.into(),
            timestamp: "1 May 2023".into(),
            metadata: Metadata { keywords: vec![text.to_string()], ..Metadata::default() },
        }
    }

    fn entry(id: u64, fact: &str) -> FactSheetEntry {
        FactSheetEntry { turn_id: TurnId(id), fact: fact.into(), timestamp: "1 May 2023".into() }
    }

    fn store_with(n: u64) -> MemoryStore {
        let mut s = MemoryStore::new(4);
        for i in 1..=n {
            s.insert_turn(record(i, "x"), EmbeddingVector::new(vec![1.0, 0.0, 0.0, i as f32]).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn insert_first_turn() {
        let s = store_with(1);
        assert_eq!(s.turn_count(), 1);
        assert_eq!(s.ingestion_order(), &[TurnId(1)]);
    }

    #[test]
    fn insert_duplicate_and_out_of_order() {
        let mut s = store_with(3);
        let v = EmbeddingVector::null(4);
        assert_eq!(s.insert_turn(record(1, "x"), v.clone()), Err(StoreError::DuplicateTurn(TurnId(1))));
        assert!(matches!(s.insert_turn(record(0, "x"), v.clone()), Err(StoreError::NonMonotonicTurn { .. })));
        let mut bare = record(9, "x");
        bare.metadata.keywords.clear();
        assert_eq!(s.insert_turn(bare, v), Err(StoreError::MissingMetadata(TurnId(9))));
        assert_eq!(s.turn_count(), 3);
    }

    #[test]
    fn insertion_order_is_preserved() {
        let s = store_with(5);
        let expected: Vec<TurnId> = (1..=5).map(TurnId).collect();
        assert_eq!(s.ingestion_order(), expected.as_slice());
    }

    #[test]
    fn attach_link_is_set_union_and_idempotent() {
        let mut s = store_with(3);
        let e = s.create_event("trip".into(), vec![], &[TurnId(1), TurnId(2)]).unwrap();
        assert!(s.attach_link(e, TurnId(3)).unwrap());
        assert_eq!(s.event(e).unwrap().link_set(), &[TurnId(1), TurnId(2), TurnId(3)]);
        assert_eq!(s.event(e).unwrap().volume(), 3);
        assert!(!s.attach_link(e, TurnId(1)).unwrap());
        assert_eq!(s.event(e).unwrap().volume(), 3);
        assert_eq!(s.attach_link(EventId(9), TurnId(1)), Err(StoreError::UnknownEvent(EventId(9))));
        assert_eq!(s.attach_link(e, TurnId(9)), Err(StoreError::UnknownTurn(TurnId(9))));
        s.check_invariants().unwrap();
    }

    #[test]
    fn create_event_links_both_sides() {
        let mut s = store_with(2);
        let e1 = s.create_event("trip planning".into(), vec![entry(1, "Ann plans a trip")], &[TurnId(1)]).unwrap();
        assert_eq!(s.event(e1).unwrap().volume(), 1);
        let e2 = s.create_event("pair".into(), vec![], &[TurnId(1), TurnId(2)]).unwrap();
        assert_eq!(s.event(e2).unwrap().volume(), 2);
        assert!(s.turn(TurnId(1)).unwrap().event_ids.contains(&e2));
        assert!(s.turn(TurnId(2)).unwrap().event_ids.contains(&e2));
        assert_eq!(s.create_event("none".into(), vec![], &[]), Err(StoreError::EmptyInitialSet));
        assert_eq!(s.create_event("bad".into(), vec![], &[TurnId(7)]), Err(StoreError::UnknownTurn(TurnId(7))));
        assert!(matches!(
            s.create_event("bad".into(), vec![entry(2, "f")], &[TurnId(1)]),
            Err(StoreError::UnlinkedFact { .. })
        ));
        s.check_invariants().unwrap();
    }

    #[test]
    fn linked_turns_follow_link_order() {
        let mut s = store_with(5);
        let e = s.create_event("s".into(), vec![], &[TurnId(5), TurnId(2)]).unwrap();
        let ids: Vec<TurnId> = s.linked_turns(e).unwrap().iter().map(|t| t.turn_id).collect();
        assert_eq!(ids, [TurnId(2), TurnId(5)]);
        assert_eq!(s.linked_turns(EventId(42)).unwrap_err(), StoreError::UnknownEvent(EventId(42)));
    }

    #[test]
    fn full_refresh_replaces_and_append_keeps_summary() {
        let mut s = store_with(4);
        let ids = [TurnId(1), TurnId(2), TurnId(3), TurnId(4)];
        let e = s.create_event("old".into(), vec![entry(1, "a"), entry(2, "b"), entry(3, "c")], &ids).unwrap();
        s.set_event_embedding(e, EmbeddingVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let sheet = vec![entry(1, "a2"), entry(2, "b2"), entry(3, "c2"), entry(4, "d2")];
        let node = s.apply_event_update(e, EventUpdate::FullRefresh { summary: "new".into(), fact_sheet: sheet }).unwrap();
        assert_eq!(node.fact_sheet.len(), 4);
        assert_eq!(node.summary, "new");
        assert!(node.embedding_stale);

        let before = s.event(e).unwrap().summary.clone();
        let node = s.apply_event_update(e, EventUpdate::Append { entry: entry(4, "extra") }).unwrap();
        assert_eq!(node.fact_sheet.len(), 5);
        assert_eq!(node.summary.as_bytes(), before.as_bytes());
        assert_eq!(
            s.apply_event_update(EventId(77), EventUpdate::Append { entry: entry(1, "x") }).unwrap_err(),
            StoreError::UnknownEvent(EventId(77))
        );
    }

    #[test]
    fn append_on_long_sheet() {
        let mut s = store_with(12);
        let ids: Vec<TurnId> = (1..=12).map(TurnId).collect();
        let sheet: Vec<FactSheetEntry> = (1..=12).map(|i| entry(i, "fact")).collect();
        let e = s.create_event("keep me".into(), sheet, &ids).unwrap();
        let node = s.apply_event_update(e, EventUpdate::Append { entry: entry(12, "more") }).unwrap();
        assert_eq!(node.fact_sheet.len(), 13);
        assert_eq!(node.summary, "keep me");
    }

    #[test]
    fn stats_track_links() {
        let empty = MemoryStore::new(4).stats();
        assert_eq!((empty.turn_count, empty.event_count, empty.link_count), (0, 0, 0));
        let mut s = store_with(2);
        let e = s.create_event("s".into(), vec![], &[TurnId(1)]).unwrap();
        let before = s.stats().link_count;
        s.attach_link(e, TurnId(2)).unwrap();
        assert_eq!(s.stats().link_count, before + 1);
    }

    #[test]
    fn refresh_stale_embeddings_clears_flags() {
        let mut s = store_with(2);
        let e = s.create_event("kayak trip".into(), vec![entry(1, "kayak on the lake")], &[TurnId(1)]).unwrap();
        let enc = crate::embedding::HashingEncoder::new(4);
        assert_eq!(s.refresh_stale_embeddings(&enc).unwrap(), 1);
        assert!(!s.event(e).unwrap().embedding_stale);
        assert_eq!(s.refresh_stale_embeddings(&enc).unwrap(), 0);
    }
}
