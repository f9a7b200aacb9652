//! Deterministic rule-based provider.
//!
//! Every family has a fixed rule over the typed payload, so a full pipeline
//! run is reproducible bit for bit. Token usage is the whitespace word count
//! of the rendered prompt and of the reply.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::gateway::{
    AffiliationOutput, AnswerOutput, Completion, EventRefreshOutput, EventView, FactAppendOutput, FactLine,
    KeywordsOutput, LooseId, Payload, PromptFamily, QuestionCategory, Provider, ProviderError, StructuredRequest, TokenUsage,
    TurnMetadataOutput, TurnSelectionOutput, TurnView, NOT_MENTIONED,
};
use crate::text::{content_tokens, word_count};

/// How the evidence filter judges a batch of candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    /// Keep every candidate mentioning any query keyword.
    AnyKeyword,
    /// Keep the candidates mentioning the largest number of distinct query
    /// keywords in the batch (at least one). While fewer than
    /// `StubRules::filter_min_keep` are kept, the next coverage level is
    /// admitted as well.
    BestCoverage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubRules {
    /// Minimum keyword overlap between a turn and an event summary for affiliation.
    pub affiliation_threshold: usize,
    /// Event-local selection only reads events whose summary mentions a query keyword.
    pub anchor_gated: bool,
    pub filter: FilterRule,
    pub filter_min_keep: usize,
    /// Number of most frequent keywords a generated summary keeps.
    pub summary_keywords: usize,
    /// Known answer spans; the answer rule echoes the first one found in the top evidence turn.
    pub answer_spans: Vec<String>,
    /// Extra tags assigned to turns mentioning a word, e.g. `prius -> car`.
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl Default for StubRules {
    fn default() -> Self {
        Self {
            affiliation_threshold: 1,
            anchor_gated: true,
            filter: FilterRule::BestCoverage,
            filter_min_keep: 2,
            summary_keywords: 8,
            answer_spans: Vec::new(),
            lexicon: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Fault {
    #[default]
    None,
    MalformedFirst(u64),
    MalformedAlways,
    Unreachable,
}

#[derive(Debug)]
pub struct ScriptedStub {
    rules: StubRules,
    model: String,
    fault: Fault,
    fault_family: Option<PromptFamily>,
    disabled: BTreeSet<PromptFamily>,
    faults_seen: AtomicU64,
}

impl Default for ScriptedStub {
    fn default() -> Self {
        Self::new(StubRules::default())
    }
}

impl ScriptedStub {
    pub fn new(rules: StubRules) -> Self {
        Self {
            rules,
            model: "stub".to_string(),
            fault: Fault::None,
            fault_family: None,
            disabled: BTreeSet::new(),
            faults_seen: AtomicU64::new(0),
        }
    }

    pub fn rules(&self) -> &StubRules {
        &self.rules
    }

    pub fn with_model(mut self, model: &str) -> Self {
        self.model = model.to_string();
        self
    }

    /// The first `n` matching completions are not JSON.
    pub fn malformed_first(mut self, n: u64) -> Self {
        self.fault = Fault::MalformedFirst(n);
        self
    }

    pub fn malformed_always(mut self) -> Self {
        self.fault = Fault::MalformedAlways;
        self
    }

    pub fn unreachable(mut self) -> Self {
        self.fault = Fault::Unreachable;
        self
    }

    /// Restricts injected faults to one family.
    pub fn faults_only_for(mut self, family: PromptFamily) -> Self {
        self.fault_family = Some(family);
        self
    }

    /// Removes the rule for a family; calls to it fail.
    pub fn without_rule(mut self, family: PromptFamily) -> Self {
        self.disabled.insert(family);
        self
    }

    fn inject(&self, family: PromptFamily) -> Option<Result<String, ProviderError>> {
        if self.fault_family.is_some_and(|f| f != family) {
            return None;
        }
        match self.fault {
            Fault::None => None,
            Fault::Unreachable => Some(Err(ProviderError::Unreachable("stub configured offline".into()))),
            Fault::MalformedAlways => Some(Ok("not json at all".into())),
            Fault::MalformedFirst(n) => {
                let seen = self.faults_seen.fetch_add(1, Ordering::Relaxed);
                (seen < n).then(|| Ok("{\"truncated\": ".into()))
            }
        }
    }

    /// Reply text for a payload under the configured rules.
    pub fn respond(&self, payload: &Payload) -> String {
        match payload {
            Payload::TurnAnalysis { turn, .. } => json(&self.analyze(turn)),
            Payload::EventAffiliation { turn, candidates } => json(&self.affiliate(turn, candidates)),
            Payload::EventRefresh { turns } => json(&self.refresh(turns)),
            Payload::FactAppend { turn, .. } => json(&FactAppendOutput { fact: fact_text(turn) }),
            Payload::QueryKeywords { question } => {
                let mut keywords = content_tokens(question);
                if keywords.is_empty() {
                    keywords = crate::text::tokenize(question);
                }
                json(&KeywordsOutput { keywords })
            }
            Payload::EventLocalSelection { keywords, event, turns, .. } => {
                json(&TurnSelectionOutput { turn_ids: self.select(keywords, event, turns) })
            }
            Payload::EvidenceFilter { keywords, candidates, .. } => {
                json(&TurnSelectionOutput { turn_ids: self.filter(keywords, candidates) })
            }
            Payload::FinalQa { question, category, evidence, distractor } => {
                json(&AnswerOutput { answer: self.answer(question, *category, evidence, distractor.as_deref()) })
            }
        }
    }

    fn tags_for(&self, tokens: &[String]) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for t in tokens {
            for tag in self.rules.lexicon.get(t).into_iter().flatten() {
                if !tags.contains(tag) {
                    tags.push(tag.clone());
                }
            }
        }
        tags
    }

    fn analyze(&self, turn: &TurnView) -> TurnMetadataOutput {
        let mut keywords = content_tokens(&turn.text);
        if keywords.is_empty() {
            // all-stopword turns still need one keyword
            keywords = crate::text::tokenize(&turn.text);
        }
        if keywords.is_empty() {
            keywords.push(turn.speaker.to_lowercase());
        }
        let tags = self.tags_for(&keywords);
        TurnMetadataOutput { context: turn.speaker.clone(), timestamp: turn.timestamp.clone(), tags, keywords }
    }

    fn affiliate(&self, turn: &TurnView, candidates: &[EventView]) -> AffiliationOutput {
        let mine: BTreeSet<String> = turn.keywords.iter().cloned().chain(content_tokens(&turn.text)).collect();
        let event_ids: Vec<LooseId> = candidates
            .iter()
            .filter(|e| {
                let overlap = content_tokens(&e.summary).iter().filter(|w| mine.contains(*w)).count();
                overlap >= self.rules.affiliation_threshold.max(1)
            })
            .map(|e| LooseId(e.event_id))
            .collect();
        let new_event = event_ids.is_empty();
        AffiliationOutput { event_ids, new_event, summary: None }
    }

    fn summarize(&self, turns: &[TurnView]) -> String {
        // keyword frequency over turns, ties by first appearance; who is
        // talking is not what the event is about
        let speakers: BTreeSet<String> = turns.iter().map(|t| t.speaker.to_lowercase()).collect();
        let mut order: Vec<String> = Vec::new();
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for t in turns {
            let kws: BTreeSet<String> = if t.keywords.is_empty() {
                content_tokens(&t.text).into_iter().collect()
            } else {
                t.keywords.iter().cloned().collect()
            };
            for k in content_tokens(&t.text).into_iter().filter(|k| kws.contains(k) && !speakers.contains(k)) {
                if !freq.contains_key(&k) {
                    order.push(k.clone());
                }
                *freq.entry(k).or_default() += 1;
            }
        }
        let mut ranked: Vec<(usize, usize, String)> =
            order.into_iter().enumerate().map(|(i, k)| (freq[&k], i, k)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let words: Vec<String> = ranked.into_iter().take(self.rules.summary_keywords.max(1)).map(|r| r.2).collect();
        if words.is_empty() {
            return "conversation".to_string();
        }
        words.join(", ")
    }

    fn refresh(&self, turns: &[TurnView]) -> EventRefreshOutput {
        EventRefreshOutput {
            summary: self.summarize(turns),
            facts: turns.iter().map(|t| FactLine { turn_id: LooseId(t.turn_id), fact: fact_text(t) }).collect(),
        }
    }

    fn coverage(&self, keywords: &[String], turn: &TurnView) -> usize {
        let mut words: BTreeSet<String> = content_tokens(&turn.text).into_iter().collect();
        words.extend(turn.keywords.iter().map(|k| k.to_lowercase()));
        words.extend(turn.tags.iter().map(|k| k.to_lowercase()));
        let wanted: BTreeSet<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        wanted.iter().filter(|k| words.contains(*k)).count()
    }

    fn select(&self, keywords: &[String], event: &EventView, turns: &[TurnView]) -> Vec<LooseId> {
        if self.rules.anchor_gated {
            let summary: BTreeSet<String> = content_tokens(&event.summary).into_iter().collect();
            if !keywords.iter().any(|k| summary.contains(&k.to_lowercase())) {
                return Vec::new();
            }
        }
        turns.iter().filter(|t| self.coverage(keywords, t) > 0).map(|t| LooseId(t.turn_id)).collect()
    }

    fn filter(&self, keywords: &[String], candidates: &[TurnView]) -> Vec<LooseId> {
        let scores: Vec<usize> = candidates.iter().map(|t| self.coverage(keywords, t)).collect();
        let cut = match self.rules.filter {
            FilterRule::AnyKeyword => 1,
            FilterRule::BestCoverage => {
                let mut levels: Vec<usize> = scores.iter().copied().filter(|s| *s > 0).collect();
                levels.sort_unstable_by(|a, b| b.cmp(a));
                // levels[i] is the (i+1)-th best score, so keeping everything
                // at or above levels[n-1] keeps at least n candidates
                let n = self.rules.filter_min_keep.max(1).min(levels.len().max(1));
                levels.get(n - 1).copied().unwrap_or(1)
            }
        };
        candidates.iter().zip(&scores).filter(|(_, s)| **s >= cut).map(|(t, _)| LooseId(t.turn_id)).collect()
    }

    fn answer(&self, question: &str, category: QuestionCategory, evidence: &[TurnView], distractor: Option<&str>) -> String {
        if let Some(candidate) = distractor {
            let needed = content_tokens(candidate);
            let supported = !needed.is_empty()
                && evidence.iter().any(|t| {
                    let words: BTreeSet<String> = content_tokens(&t.text).into_iter().collect();
                    needed.iter().all(|w| words.contains(w))
                });
            return if supported { candidate.to_string() } else { NOT_MENTIONED.to_string() };
        }
        let keywords = content_tokens(question);
        // most query keywords wins, later turns break ties
        let Some(top) = evidence
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| self.coverage(&keywords, a).cmp(&self.coverage(&keywords, b)).then(i.cmp(j)))
            .map(|(_, t)| t)
        else {
            return "unknown".to_string();
        };
        if category == QuestionCategory::Temporal {
            return top.timestamp.clone();
        }
        let lower = top.text.to_lowercase();
        if let Some(span) = self.rules.answer_spans.iter().find(|s| !s.is_empty() && lower.contains(&s.to_lowercase())) {
            return span.clone();
        }
        let rest: Vec<String> = content_tokens(&top.text).into_iter().filter(|w| !keywords.contains(w)).collect();
        if rest.is_empty() {
            top.text.clone()
        } else {
            rest.join(" ")
        }
    }
}

fn fact_text(turn: &TurnView) -> String {
    let mut s = turn.speaker.clone();
    s.push_str(": ");
    s.push_str(&turn.text);
    s
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain structs serialize")
}

impl Provider for ScriptedStub {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &StructuredRequest) -> Result<Completion, ProviderError> {
        if self.disabled.contains(&request.family) {
            return Err(ProviderError::UnknownFamily(request.family));
        }
        let text = match self.inject(request.family) {
            Some(r) => r?,
            None => self.respond(&request.payload),
        };
        let usage = TokenUsage::new(word_count(&request.rendered_prompt), word_count(&text));
        Ok(Completion { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayError};
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::format;

    fn tv(id: u64, text: &str) -> TurnView {
        TurnView {
            turn_id: id,
            speaker: "Evan".into(),
            timestamp: "1 May 2023".into(),
            text: text.into(),
            keywords: content_tokens(text),
            tags: vec![],
        }
    }

    #[test]
    fn turn_analysis_keywords_are_content_tokens() {
        let g = Gateway::new(Arc::new(ScriptedStub::default()));
        let out: TurnMetadataOutput =
            g.call(Payload::TurnAnalysis { turn: tv(1, "I bought a new Prius yesterday"), window: vec![] }).unwrap();
        assert!(out.keywords.contains(&"prius".to_string()));
        assert!(!out.keywords.is_empty());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let stub = ScriptedStub::default();
        let p = Payload::EventRefresh { turns: vec![tv(1, "hiking trail in Yosemite"), tv(2, "the trail was steep")] };
        assert_eq!(stub.respond(&p), stub.respond(&p));
        let refreshed: EventRefreshOutput = serde_json::from_str(&stub.respond(&p)).unwrap();
        assert_eq!(refreshed.summary, "trail, hiking, yosemite, steep");
    }

    #[test]
    fn affiliation_overlap_rule() {
        let stub = ScriptedStub::new(StubRules { affiliation_threshold: 1, ..StubRules::default() });
        let e1 = EventView { event_id: 1, summary: "guitar, concert, band".into(), facts: vec![] };
        let e2 = EventView { event_id: 2, summary: "puppy, vet".into(), facts: vec![] };
        let out = stub.affiliate(&tv(9, "the band played guitar at the concert"), &[e1.clone(), e2.clone()]);
        assert_eq!(out.event_ids, [LooseId(1)]);
        assert!(!out.new_event);
        let out = stub.affiliate(&tv(9, "my taxes are due"), &[e1, e2]);
        assert!(out.new_event && out.event_ids.is_empty());
    }

    #[test]
    fn selection_and_filter_rules() {
        let stub = ScriptedStub::new(StubRules { anchor_gated: false, ..StubRules::default() });
        let event = EventView { event_id: 1, summary: "dinner".into(), facts: vec![] };
        let turns = vec![tv(1, "pasta tonight"), tv(2, "my new Prius"), tv(3, "rain again"), tv(4, "hello")];
        let kw = vec!["prius".to_string(), "car".to_string()];
        assert_eq!(stub.select(&kw, &event, &turns), [LooseId(2)]);
        let gated = ScriptedStub::default();
        assert!(gated.select(&kw, &event, &turns).is_empty());

        let any = ScriptedStub::new(StubRules { filter: FilterRule::AnyKeyword, ..StubRules::default() });
        let cands: Vec<TurnView> = (1..=12)
            .map(|i| if i % 4 == 0 { tv(i, &format!("prius number {i}")) } else { tv(i, "nothing here") })
            .collect();
        assert_eq!(any.filter(&kw, &cands).len(), 3);
        let best = ScriptedStub::new(StubRules { filter_min_keep: 1, ..StubRules::default() });
        let mixed = vec![tv(1, "prius"), tv(2, "car prius"), tv(3, "car")];
        assert_eq!(best.filter(&kw, &mixed), [LooseId(2)]);
        assert!(best.filter(&kw, &[tv(1, "none")]).is_empty());
        let two = ScriptedStub::default();
        assert_eq!(two.filter(&kw, &mixed), [LooseId(1), LooseId(2), LooseId(3)]);
        let mixed = vec![tv(1, "prius"), tv(2, "car prius"), tv(3, "none"), tv(4, "prius car")];
        assert_eq!(two.filter(&kw, &mixed), [LooseId(2), LooseId(4)]);
        assert_eq!(two.filter(&kw, &[tv(1, "none"), tv(2, "car")]), [LooseId(2)]);
    }

    #[test]
    fn answer_rules() {
        let stub = ScriptedStub::default();
        let ev = vec![tv(1, "we went out"), tv(2, "I love my new Prius")];
        let a = stub.answer("What kind of car does Evan drive?", QuestionCategory::SingleHop, &ev, None);
        assert!(a.to_lowercase().contains("prius"), "{a}");
        assert_eq!(stub.answer("q", QuestionCategory::Adversarial, &[], Some("a red Tesla")), NOT_MENTIONED);
        assert_eq!(stub.answer("q", QuestionCategory::Adversarial, &[tv(1, "my red Tesla broke")], Some("a red Tesla")), "a red Tesla");
        let when = stub.answer("When did Evan buy it?", QuestionCategory::Temporal, &ev, None);
        assert_eq!(when, "1 May 2023");
        let spans = ScriptedStub::new(StubRules { answer_spans: vec!["Prius".into()], ..StubRules::default() });
        assert_eq!(spans.answer("What car?", QuestionCategory::SingleHop, &ev, None), "Prius");
    }

    #[test]
    fn injected_faults() {
        let g = Gateway::new(Arc::new(ScriptedStub::default().malformed_first(2)));
        let r: Result<KeywordsOutput, _> = g.call(Payload::QueryKeywords { question: "car".into() });
        assert_eq!(r.unwrap().keywords, ["car"]);
        assert_eq!(g.call_log().len(), 3);

        let g = Gateway::new(Arc::new(ScriptedStub::default().malformed_always()));
        let r: Result<KeywordsOutput, _> = g.call(Payload::QueryKeywords { question: "car".into() });
        assert!(matches!(r, Err(GatewayError::SchemaFailure { attempts: 3, .. })));
        assert_eq!(g.ledger().snapshot().total().call_count, 3);
    }

    #[test]
    fn disabled_family_is_unknown() {
        let fam = PromptFamily::FinalQa(QuestionCategory::Temporal);
        let g = Gateway::new(Arc::new(ScriptedStub::default().without_rule(fam)));
        let p = Payload::FinalQa { question: "when?".into(), category: QuestionCategory::Temporal, evidence: vec![], distractor: None };
        assert!(matches!(g.call::<AnswerOutput>(p), Err(GatewayError::Provider(ProviderError::UnknownFamily(_)))));
    }
}
