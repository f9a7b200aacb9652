//! Query-time pipeline: keywords, dual-layer retrieval, event-anchored
//! prediction, merge, filtering and answer generation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, Encoder, Layer, ScoredId};
use crate::gateway::{
    AnswerOutput, Gateway, GatewayError, KeywordsOutput, Payload, QuestionCategory, TurnSelectionOutput, TurnView,
};
use crate::ingest::{event_view, turn_view};
use crate::store::{EventId, MemoryStore, TurnId};
use crate::text::{content_tokens, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// Turn and event retrieval, event-local prediction, merge, filter.
    Full,
    /// Top `k_turn` turns only, then filter.
    NoHierarchy,
    /// Top `flat_top_n` turns by cosine, then filter.
    Flat,
    /// Top `flat_top_n` turns for the raw question; no model calls before
    /// answering.
    Passive,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 4] = [RetrievalMode::Full, RetrievalMode::NoHierarchy, RetrievalMode::Flat, RetrievalMode::Passive];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::Full => "full",
            RetrievalMode::NoHierarchy => "no-hierarchy",
            RetrievalMode::Flat => "flat",
            RetrievalMode::Passive => "passive",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for RetrievalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown retrieval mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k_turn: usize,
    pub k_event: usize,
    pub flat_top_n: usize,
    /// Linked turns shown per event-local selection prompt.
    pub selection_batch: usize,
    /// Candidates shown per filter prompt.
    pub filter_batch: usize,
    pub mode: RetrievalMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k_turn: 10, k_event: 10, flat_top_n: 100, selection_batch: 25, filter_batch: 25, mode: RetrievalMode::Full }
    }
}

impl RetrievalConfig {
    pub fn with_mode(mode: RetrievalMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn hierarchy_enabled(&self) -> bool {
        self.mode == RetrievalMode::Full
    }

    pub fn validate(&self) -> Result<(), RetrieveError> {
        for (name, v) in [
            ("k_turn", self.k_turn),
            ("k_event", self.k_event),
            ("flat_top_n", self.flat_top_n),
            ("selection_batch", self.selection_batch),
            ("filter_batch", self.filter_batch),
        ] {
            if v == 0 {
                return Err(RetrieveError::Config(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieveError {
    #[error("retrieval parameter {0} must be at least 1")]
    Config(&'static str),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("adversarial questions need a distractor candidate")]
    MissingDistractor,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Semantic,
    Predicted,
    Both,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Semantic => "semantic",
            Provenance::Predicted => "predicted",
            Provenance::Both => "both",
        })
    }
}

/// Duplicate-free, chronologically ordered turns with their origin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    entries: Vec<(TurnId, Provenance)>,
}

impl EvidenceSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (TurnId, Provenance)>) -> Self {
        let map: BTreeMap<TurnId, Provenance> = entries.into_iter().collect();
        Self { entries: map.into_iter().collect() }
    }

    pub fn entries(&self) -> &[(TurnId, Provenance)] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<TurnId> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: TurnId) -> bool {
        self.entries.binary_search_by_key(&id, |e| e.0).is_ok()
    }

    pub fn provenance(&self, id: TurnId) -> Option<Provenance> {
        self.entries.binary_search_by_key(&id, |e| e.0).ok().map(|i| self.entries[i].1)
    }

    /// Entries whose id is in `keep`, provenance preserved.
    pub fn restrict(&self, keep: &BTreeSet<TurnId>) -> Self {
        Self { entries: self.entries.iter().filter(|e| keep.contains(&e.0)).copied().collect() }
    }
}

/// Union of semantic hits and predicted turns, chronological.
pub fn merge(t_semantic: &[TurnId], t_pred: &[TurnId]) -> EvidenceSet {
    let mut map: BTreeMap<TurnId, Provenance> = BTreeMap::new();
    for t in t_semantic {
        map.insert(*t, Provenance::Semantic);
    }
    for t in t_pred {
        map.entry(*t).and_modify(|p| *p = Provenance::Both).or_insert(Provenance::Predicted);
    }
    EvidenceSet { entries: map.into_iter().collect() }
}

/// Everything a query produced, stage by stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub keywords: Vec<String>,
    pub keyword_fallback: bool,
    /// Turn hits in score order. In flat and passive modes this is the
    /// top `flat_top_n` list.
    pub t_semantic: Vec<ScoredId>,
    pub e_semantic: Vec<ScoredId>,
    pub predicted: Vec<(EventId, Vec<TurnId>)>,
    pub prediction_failures: usize,
    pub t_cand: EvidenceSet,
    pub t_final: EvidenceSet,
    pub filter_fallback: bool,
}

impl RetrievalTrace {
    pub fn semantic_ids(&self) -> Vec<TurnId> {
        self.t_semantic.iter().map(|s| TurnId(s.id)).collect()
    }

    pub fn t_pred(&self) -> Vec<TurnId> {
        let set: BTreeSet<TurnId> = self.predicted.iter().flat_map(|(_, ts)| ts.iter().copied()).collect();
        set.into_iter().collect()
    }

    /// Checks T_final ⊆ T_cand = T_semantic ∪ T_pred and that every
    /// predicted turn is linked to the retrieved event that predicted it.
    pub fn check_subset_chain(&self, store: &MemoryStore) -> Result<(), String> {
        let retrieved: BTreeSet<u64> = self.e_semantic.iter().map(|s| s.id).collect();
        for (event, turns) in &self.predicted {
            if !retrieved.contains(&event.0) {
                return Err(format!("{event} predicted turns but was not retrieved"));
            }
            let node = store.event(*event).ok_or_else(|| format!("{event} missing from store"))?;
            if let Some(t) = turns.iter().find(|t| !node.is_linked(**t)) {
                return Err(format!("{t} predicted from {event} but not linked to it"));
            }
        }
        let expected = merge(&self.semantic_ids(), &self.t_pred());
        if expected != self.t_cand {
            return Err("T_cand differs from T_semantic ∪ T_pred".into());
        }
        if let Some((t, _)) = self.t_final.entries().iter().find(|(t, _)| !self.t_cand.contains(*t)) {
            return Err(format!("{t} in T_final but not in T_cand"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub trace: RetrievalTrace,
    pub answer: String,
}

pub struct Retriever<'a> {
    gateway: &'a Gateway,
    encoder: &'a dyn Encoder,
    config: RetrievalConfig,
}

fn selection_ids(out: TurnSelectionOutput, allowed: &BTreeSet<TurnId>, what: &str) -> Vec<TurnId> {
    let mut ids = Vec::new();
    for id in out.turn_ids.into_iter().map(|i| TurnId(i.0)) {
        if allowed.contains(&id) {
            ids.push(id);
        } else {
            log::warn!("{what} returned {id}, which it was not shown; dropped");
        }
    }
    ids
}

impl<'a> Retriever<'a> {
    pub fn new(gateway: &'a Gateway, encoder: &'a dyn Encoder, config: RetrievalConfig) -> Result<Self, RetrieveError> {
        config.validate()?;
        Ok(Self { gateway, encoder, config })
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    /// Query keywords from the model, or the question's content tokens if
    /// the call fails. The flag reports the fallback.
    pub fn extract_keywords(&self, question: &str) -> (Vec<String>, bool) {
        match self.gateway.call::<KeywordsOutput>(Payload::QueryKeywords { question: question.into() }) {
            Ok(out) => {
                let kws: Vec<String> = out.keywords.into_iter().filter(|k| !k.trim().is_empty()).collect();
                (kws, false)
            }
            Err(e) => {
                log::warn!("keyword extraction failed, tokenizing the question: {e}");
                let mut kws = content_tokens(question);
                if kws.is_empty() {
                    kws = tokenize(question);
                }
                (kws, true)
            }
        }
    }

    /// Top `k_turn` turns and top `k_event` events for the joined keywords.
    pub fn semantic_retrieve(
        &self,
        store: &MemoryStore,
        keywords: &[String],
    ) -> Result<(Vec<ScoredId>, Vec<ScoredId>), RetrieveError> {
        let query = self.encoder.encode(&keywords.join(" "))?;
        let turns = store.index().top_k(&query, Layer::Turn, self.config.k_turn)?;
        let events = store.index().top_k(&query, Layer::Event, self.config.k_event)?;
        Ok((turns, events))
    }

    /// Turns of `event` the model thinks are worth reading. Failure yields
    /// `None` (treated as an empty prediction).
    pub fn predict(&self, store: &MemoryStore, question: &str, keywords: &[String], event: EventId) -> Option<Vec<TurnId>> {
        let node = store.event(event)?;
        let view = event_view(node);
        let linked: Vec<TurnView> = store.linked_turns(event).ok()?.into_iter().map(turn_view).collect();
        let mut picked = Vec::new();
        for batch in linked.chunks(self.config.selection_batch) {
            let allowed: BTreeSet<TurnId> = batch.iter().map(|t| TurnId(t.turn_id)).collect();
            let payload = Payload::EventLocalSelection {
                question: question.into(),
                keywords: keywords.to_vec(),
                event: view.clone(),
                turns: batch.to_vec(),
            };
            match self.gateway.call::<TurnSelectionOutput>(payload) {
                Ok(out) => picked.extend(selection_ids(out, &allowed, "event-local selection")),
                Err(e) => {
                    log::warn!("event-local selection on {event} failed: {e}");
                    return None;
                }
            }
        }
        picked.sort_unstable();
        picked.dedup();
        Some(picked)
    }

    /// Filters candidates in batches. On any failure returns `None`.
    pub fn filter(&self, store: &MemoryStore, question: &str, keywords: &[String], candidates: &EvidenceSet) -> Option<EvidenceSet> {
        let views: Vec<TurnView> = candidates.ids().into_iter().filter_map(|t| store.turn(t)).map(turn_view).collect();
        let mut keep = BTreeSet::new();
        for batch in views.chunks(self.config.filter_batch) {
            let allowed: BTreeSet<TurnId> = batch.iter().map(|t| TurnId(t.turn_id)).collect();
            let payload = Payload::EvidenceFilter { question: question.into(), keywords: keywords.to_vec(), candidates: batch.to_vec() };
            match self.gateway.call::<TurnSelectionOutput>(payload) {
                Ok(out) => keep.extend(selection_ids(out, &allowed, "evidence filter")),
                Err(e) => {
                    log::warn!("evidence filter failed, keeping semantic hits: {e}");
                    return None;
                }
            }
        }
        Some(candidates.restrict(&keep))
    }

    fn filter_or_semantic(&self, store: &MemoryStore, question: &str, trace: &mut RetrievalTrace) {
        match self.filter(store, question, &trace.keywords, &trace.t_cand) {
            Some(set) => trace.t_final = set,
            None => {
                trace.filter_fallback = true;
                let sem: BTreeSet<TurnId> = trace.semantic_ids().into_iter().collect();
                trace.t_final = trace.t_cand.restrict(&sem);
            }
        }
    }

    /// Runs the configured mode up to the final evidence set.
    pub fn retrieve(&self, store: &MemoryStore, question: &str) -> Result<RetrievalTrace, RetrieveError> {
        if question.trim().is_empty() {
            return Err(RetrieveError::EmptyQuestion);
        }
        let mut trace = RetrievalTrace::default();
        match self.config.mode {
            RetrievalMode::Passive => {
                let query = self.encoder.encode(question)?;
                trace.t_semantic = store.index().top_k(&query, Layer::Turn, self.config.flat_top_n)?;
                trace.t_cand = merge(&trace.semantic_ids(), &[]);
                trace.t_final = trace.t_cand.clone();
                return Ok(trace);
            }
            RetrievalMode::Flat => return self.retrieve_flat(store, question),
            RetrievalMode::NoHierarchy | RetrievalMode::Full => {}
        }
        let (keywords, fallback) = self.extract_keywords(question);
        trace.keywords = keywords;
        trace.keyword_fallback = fallback;
        let (turns, events) = self.semantic_retrieve(store, &trace.keywords)?;
        trace.t_semantic = turns;
        if self.config.mode == RetrievalMode::Full {
            for hit in &events {
                let event = EventId(hit.id);
                match self.predict(store, question, &trace.keywords, event) {
                    Some(ts) => trace.predicted.push((event, ts)),
                    None => {
                        trace.prediction_failures += 1;
                        trace.predicted.push((event, Vec::new()));
                    }
                }
            }
            trace.e_semantic = events;
        }
        trace.t_cand = merge(&trace.semantic_ids(), &trace.t_pred());
        self.filter_or_semantic(store, question, &mut trace);
        Ok(trace)
    }

    /// Flat baseline: top `flat_top_n` turns, then the same filter.
    pub fn retrieve_flat(&self, store: &MemoryStore, question: &str) -> Result<RetrievalTrace, RetrieveError> {
        let mut trace = RetrievalTrace::default();
        let (keywords, fallback) = self.extract_keywords(question);
        trace.keywords = keywords;
        trace.keyword_fallback = fallback;
        let query = self.encoder.encode(&trace.keywords.join(" "))?;
        trace.t_semantic = store.index().top_k(&query, Layer::Turn, self.config.flat_top_n)?;
        trace.t_cand = merge(&trace.semantic_ids(), &[]);
        match self.filter(store, question, &trace.keywords, &trace.t_cand) {
            Some(set) => trace.t_final = set,
            None => {
                trace.filter_fallback = true;
                let top: BTreeSet<TurnId> = trace.semantic_ids().into_iter().take(self.config.k_turn).collect();
                trace.t_final = trace.t_cand.restrict(&top);
            }
        }
        Ok(trace)
    }

    /// Category-specific answer over the evidence, in chronological order.
    pub fn answer(
        &self,
        store: &MemoryStore,
        question: &str,
        evidence: &[TurnId],
        category: QuestionCategory,
        distractor: Option<&str>,
    ) -> Result<String, RetrieveError> {
        if category == QuestionCategory::Adversarial && distractor.is_none_or(|d| d.trim().is_empty()) {
            return Err(RetrieveError::MissingDistractor);
        }
        let mut ids = evidence.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let views: Vec<TurnView> = ids.into_iter().filter_map(|t| store.turn(t)).map(turn_view).collect();
        let distractor = if category == QuestionCategory::Adversarial { distractor.map(String::from) } else { None };
        let payload = Payload::FinalQa { question: question.into(), category, evidence: views, distractor };
        let out: AnswerOutput = self.gateway.call(payload)?;
        Ok(out.answer.trim().into())
    }

    /// Retrieval followed by answer generation.
    pub fn ask(
        &self,
        store: &MemoryStore,
        question: &str,
        category: QuestionCategory,
        distractor: Option<&str>,
    ) -> Result<QueryResult, RetrieveError> {
        if category == QuestionCategory::Adversarial && distractor.is_none_or(|d| d.trim().is_empty()) {
            return Err(RetrieveError::MissingDistractor);
        }
        let trace = self.retrieve(store, question)?;
        let answer = self.answer(store, question, &trace.t_final.ids(), category, distractor)?;
        Ok(QueryResult { trace, answer })
    }
}
