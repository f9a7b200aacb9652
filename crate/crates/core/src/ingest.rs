//! Memory construction: turn analysis, event affiliation and adaptive update.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, Encoder, Layer};
use crate::gateway::{
    AffiliationOutput, EventRefreshOutput, EventView, FactAppendOutput, Gateway, GatewayError, Payload,
    TurnMetadataOutput, TurnView,
};
use crate::store::{EventId, EventNode, EventUpdate, FactSheetEntry, MemoryStore, Metadata, StoreError, TurnId, TurnNode, TurnRecord};

/// A raw dialogue turn before analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub turn_id: u64,
    pub speaker: String,
    pub timestamp: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionConfig {
    /// Preceding turns shown to turn analysis (m).
    pub window_size: usize,
    /// Events smaller than this are fully refreshed; larger ones only append (τ).
    pub tau: usize,
    /// Candidate events considered for affiliation.
    pub k_event: usize,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        Self { window_size: 5, tau: 10, k_event: 10 }
    }
}

impl IngestionConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, v) in [("window_size", self.window_size), ("tau", self.tau), ("k_event", self.k_event)] {
            if v == 0 {
                return Err(IngestError::Config(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("ingestion parameter {0} must be at least 1")]
    Config(&'static str),
    #[error("turn {0} has no speaker or text")]
    EmptyTurn(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffiliationDecision {
    Existing(Vec<EventId>),
    NewEvent { summary: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Created,
    FullRefresh,
    Append,
    /// The model call failed; a plain fact line was appended instead.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub turn_id: TurnId,
    pub updates: Vec<(EventId, UpdateKind)>,
}

pub fn turn_view(t: &TurnNode) -> TurnView {
    TurnView {
        turn_id: t.turn_id.0,
        speaker: t.speaker.clone(),
        timestamp: t.timestamp.clone(),
        text: t.text.clone(),
        keywords: t.metadata.keywords.clone(),
        tags: t.metadata.tags.clone(),
    }
}

pub fn event_view(e: &EventNode) -> EventView {
    EventView {
        event_id: e.event_id.0,
        summary: e.summary.clone(),
        facts: e.fact_sheet.iter().map(|f| f.fact.clone()).collect(),
    }
}

/// Text embedded for a turn: the utterance followed by its keywords.
pub fn turn_embedding_text(text: &str, metadata: &Metadata) -> String {
    let mut s = text.to_string();
    for k in &metadata.keywords {
        s.push(' ');
        s.push_str(k);
    }
    s
}

fn fallback_fact(t: &TurnNode) -> FactSheetEntry {
    let mut fact = t.speaker.clone();
    fact.push_str(": ");
    fact.push_str(&t.text);
    FactSheetEntry { turn_id: t.turn_id, fact, timestamp: t.timestamp.clone() }
}

pub struct Ingestor<'a> {
    gateway: &'a Gateway,
    encoder: &'a dyn Encoder,
    config: IngestionConfig,
}

impl<'a> Ingestor<'a> {
    pub fn new(gateway: &'a Gateway, encoder: &'a dyn Encoder, config: IngestionConfig) -> Result<Self, IngestError> {
        config.validate()?;
        Ok(Self { gateway, encoder, config })
    }

    pub fn config(&self) -> &IngestionConfig {
        &self.config
    }

    /// Metadata for `d` given the last `m` stored turns as context.
    pub fn analyze_turn(&self, store: &MemoryStore, d: &DialogueTurn) -> Result<Metadata, IngestError> {
        let window: Vec<TurnView> = store.recent_turns(self.config.window_size).into_iter().map(turn_view).collect();
        let turn = TurnView {
            turn_id: d.turn_id,
            speaker: d.speaker.clone(),
            timestamp: d.timestamp.clone(),
            text: d.text.clone(),
            ..TurnView::default()
        };
        let out: TurnMetadataOutput = self.gateway.call(Payload::TurnAnalysis { turn, window })?;
        let keywords: Vec<String> = out.keywords.into_iter().filter(|k| !k.trim().is_empty()).collect();
        let timestamp = if out.timestamp.trim().is_empty() { d.timestamp.clone() } else { out.timestamp };
        Ok(Metadata { keywords, tags: out.tags, timestamp, context: out.context })
    }

    /// Up to `k_event` events closest to the stored turn, best first.
    pub fn candidate_events(&self, store: &MemoryStore, turn: TurnId) -> Result<Vec<EventId>, IngestError> {
        let node = store.turn(turn).ok_or(StoreError::UnknownTurn(turn))?;
        let query = store.index().get(Layer::Turn, node.turn_id.0).ok_or(EmbeddingError::UnknownId { layer: Layer::Turn, id: node.turn_id.0 })?;
        let hits = store.index().top_k(&query, Layer::Event, self.config.k_event)?;
        Ok(hits.into_iter().map(|h| EventId(h.id)).collect())
    }

    /// Asks the model which candidates the turn belongs to. Ids outside the
    /// candidate set are dropped; any failure means a new event.
    pub fn affiliate(&self, store: &MemoryStore, turn: TurnId, candidates: &[EventId]) -> AffiliationDecision {
        if candidates.is_empty() {
            return AffiliationDecision::NewEvent { summary: None };
        }
        let Some(node) = store.turn(turn) else {
            return AffiliationDecision::NewEvent { summary: None };
        };
        let views = candidates.iter().filter_map(|e| store.event(*e)).map(event_view).collect();
        let out: AffiliationOutput = match self.gateway.call(Payload::EventAffiliation { turn: turn_view(node), candidates: views }) {
            Ok(out) => out,
            Err(e) => {
                log::warn!("affiliation of {turn} failed, starting a new event: {e}");
                return AffiliationDecision::NewEvent { summary: None };
            }
        };
        let mut chosen: Vec<EventId> = Vec::new();
        for id in out.event_ids.iter().map(|i| EventId(i.0)) {
            if !candidates.contains(&id) {
                log::warn!("affiliation of {turn} named {id}, which is not a candidate; dropped");
            } else if !chosen.contains(&id) {
                chosen.push(id);
            }
        }
        if chosen.is_empty() {
            AffiliationDecision::NewEvent { summary: out.summary }
        } else {
            AffiliationDecision::Existing(chosen)
        }
    }

    fn refresh_payload(store: &MemoryStore, turns: &[TurnId]) -> Payload {
        Payload::EventRefresh { turns: turns.iter().filter_map(|t| store.turn(*t)).map(turn_view).collect() }
    }

    fn fact_sheet(store: &MemoryStore, linked: &[TurnId], out: EventRefreshOutput) -> Vec<FactSheetEntry> {
        out.facts
            .into_iter()
            .map(|f| (TurnId(f.turn_id.0), f.fact))
            .filter(|(t, _)| linked.contains(t))
            .map(|(turn_id, fact)| FactSheetEntry { turn_id, fact, timestamp: store.turn(turn_id).map(|n| n.metadata.timestamp.clone()).unwrap_or_default() })
            .collect()
    }

    fn update_one(&self, store: &mut MemoryStore, event: EventId, turn: TurnId) -> Result<UpdateKind, IngestError> {
        let volume = store.event(event).ok_or(StoreError::UnknownEvent(event))?.volume();
        store.attach_link(event, turn)?;
        let node = store.turn(turn).ok_or(StoreError::UnknownTurn(turn))?;
        if volume < self.config.tau {
            let linked = store.event(event).expect("exists").link_set().to_vec();
            let result: Result<EventRefreshOutput, _> = self.gateway.call(Self::refresh_payload(store, &linked));
            match result {
                Ok(out) => {
                    let summary = out.summary.clone();
                    let fact_sheet = Self::fact_sheet(store, &linked, out);
                    store.apply_event_update(event, EventUpdate::FullRefresh { summary, fact_sheet })?;
                    Ok(UpdateKind::FullRefresh)
                }
                Err(e) => {
                    log::warn!("refresh of {event} failed, appending a plain fact: {e}");
                    store.apply_event_update(event, EventUpdate::Append { entry: fallback_fact(node) })?;
                    Ok(UpdateKind::Fallback)
                }
            }
        } else {
            let summary = store.event(event).expect("exists").summary.clone();
            let payload = Payload::FactAppend { summary, turn: turn_view(node) };
            let entry = match self.gateway.call::<FactAppendOutput>(payload) {
                Ok(out) => FactSheetEntry { turn_id: turn, fact: out.fact, timestamp: node.metadata.timestamp.clone() },
                Err(e) => {
                    log::warn!("fact append to {event} failed, using the raw turn: {e}");
                    fallback_fact(node)
                }
            };
            store.apply_event_update(event, EventUpdate::Append { entry })?;
            Ok(UpdateKind::Append)
        }
    }

    /// Applies the decision: adaptive update plus link for every chosen
    /// event, or a new event seeded with the turn. Event embeddings are
    /// refreshed afterwards. Errors on one event do not undo the others.
    pub fn update_affiliated_events(
        &self,
        store: &mut MemoryStore,
        turn: TurnId,
        decision: &AffiliationDecision,
    ) -> Result<Vec<(EventId, UpdateKind)>, IngestError> {
        let mut done = Vec::new();
        let mut first_error = None;
        match decision {
            AffiliationDecision::Existing(events) => {
                for &event in events {
                    match self.update_one(store, event, turn) {
                        Ok(kind) => done.push((event, kind)),
                        Err(e) => {
                            log::warn!("update of {event} with {turn} failed: {e}");
                            first_error.get_or_insert(e);
                        }
                    }
                }
            }
            AffiliationDecision::NewEvent { summary } => {
                let node = store.turn(turn).ok_or(StoreError::UnknownTurn(turn))?;
                let (summary, facts, kind) = match self.gateway.call::<EventRefreshOutput>(Self::refresh_payload(store, &[turn])) {
                    Ok(out) => {
                        let s = out.summary.clone();
                        (s, Self::fact_sheet(store, &[turn], out), UpdateKind::Created)
                    }
                    Err(e) => {
                        log::warn!("summary for new event from {turn} failed: {e}");
                        let s = summary.clone().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| node.text.clone());
                        (s, alloc::vec![fallback_fact(node)], UpdateKind::Fallback)
                    }
                };
                let id = store.create_event(summary, facts, &[turn])?;
                done.push((id, kind));
            }
        }
        store.refresh_stale_embeddings(self.encoder)?;
        match first_error {
            Some(e) if done.is_empty() => Err(e),
            _ => Ok(done),
        }
    }

    /// Full construction step for one turn.
    pub fn ingest(&self, store: &mut MemoryStore, d: &DialogueTurn) -> Result<IngestOutcome, IngestError> {
        if d.text.trim().is_empty() || d.speaker.trim().is_empty() {
            return Err(IngestError::EmptyTurn(d.turn_id));
        }
        let metadata = self.analyze_turn(store, d)?;
        let embedding = self.encoder.encode(&turn_embedding_text(&d.text, &metadata))?;
        let record = TurnRecord {
            turn_id: TurnId(d.turn_id),
            speaker: d.speaker.clone(),
            text: d.text.clone(),
            timestamp: d.timestamp.clone(),
            metadata,
        };
        let turn = store.insert_turn(record, embedding)?;
        store.refresh_stale_embeddings(self.encoder)?;
        let candidates = self.candidate_events(store, turn)?;
        let decision = self.affiliate(store, turn, &candidates);
        let mut updates = self.update_affiliated_events(store, turn, &decision)?;
        if store.turn(turn).is_some_and(|t| t.event_ids.is_empty()) {
            // every turn must end up in some event
            let node = store.turn(turn).expect("inserted");
            let id = store.create_event(node.text.clone(), alloc::vec![fallback_fact(node)], &[turn])?;
            store.refresh_stale_embeddings(self.encoder)?;
            updates.push((id, UpdateKind::Fallback));
        }
        Ok(IngestOutcome { turn_id: turn, updates })
    }

    pub fn ingest_all<'d>(
        &self,
        store: &mut MemoryStore,
        turns: impl IntoIterator<Item = &'d DialogueTurn>,
    ) -> Result<Vec<IngestOutcome>, IngestError> {
        turns.into_iter().map(|d| self.ingest(store, d)).collect()
    }
}
