//! Prompt families, typed prompt inputs and `{{variable}}` templates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Question categories of the benchmark; each has its own answer prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCategory {
    #[serde(alias = "single-hop")]
    SingleHop,
    #[serde(alias = "multi-hop")]
    MultiHop,
    Temporal,
    #[serde(alias = "open-domain")]
    OpenDomain,
    Adversarial,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 5] = [
        QuestionCategory::MultiHop,
        QuestionCategory::Temporal,
        QuestionCategory::OpenDomain,
        QuestionCategory::SingleHop,
        QuestionCategory::Adversarial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionCategory::SingleHop => "single_hop",
            QuestionCategory::MultiHop => "multi_hop",
            QuestionCategory::Temporal => "temporal",
            QuestionCategory::OpenDomain => "open_domain",
            QuestionCategory::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| format!("unknown question category {s:?}"))
    }
}

/// Pipeline stage a call is billed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MemoryConstruction,
    Retrieval,
    Answer,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::MemoryConstruction, Stage::Retrieval, Stage::Answer];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MemoryConstruction => "memory_construction",
            Stage::Retrieval => "retrieval",
            Stage::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    TurnAnalysis,
    EventAffiliation,
    /// Regenerate summary and whole fact sheet of an event.
    EventRefresh,
    /// One new fact-sheet line for a large event.
    FactAppend,
    QueryKeywords,
    EventLocalSelection,
    EvidenceFilter,
    FinalQa(QuestionCategory),
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 12] = [
        PromptFamily::TurnAnalysis,
        PromptFamily::EventAffiliation,
        PromptFamily::EventRefresh,
        PromptFamily::FactAppend,
        PromptFamily::QueryKeywords,
        PromptFamily::EventLocalSelection,
        PromptFamily::EvidenceFilter,
        PromptFamily::FinalQa(QuestionCategory::SingleHop),
        PromptFamily::FinalQa(QuestionCategory::MultiHop),
        PromptFamily::FinalQa(QuestionCategory::Temporal),
        PromptFamily::FinalQa(QuestionCategory::OpenDomain),
        PromptFamily::FinalQa(QuestionCategory::Adversarial),
    ];

    /// Template file stem.
    pub fn key(self) -> &'static str {
        match self {
            PromptFamily::TurnAnalysis => "turn_analysis",
            PromptFamily::EventAffiliation => "event_affiliation",
            PromptFamily::EventRefresh => "event_refresh",
            PromptFamily::FactAppend => "fact_append",
            PromptFamily::QueryKeywords => "query_keywords",
            PromptFamily::EventLocalSelection => "event_local_selection",
            PromptFamily::EvidenceFilter => "evidence_filter",
            PromptFamily::FinalQa(QuestionCategory::SingleHop) => "final_qa_single_hop",
            PromptFamily::FinalQa(QuestionCategory::MultiHop) => "final_qa_multi_hop",
            PromptFamily::FinalQa(QuestionCategory::Temporal) => "final_qa_temporal",
            PromptFamily::FinalQa(QuestionCategory::OpenDomain) => "final_qa_open_domain",
            PromptFamily::FinalQa(QuestionCategory::Adversarial) => "final_qa_adversarial",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.key() == key)
    }

    pub fn stage(self) -> Stage {
        match self {
            PromptFamily::TurnAnalysis
            | PromptFamily::EventAffiliation
            | PromptFamily::EventRefresh
            | PromptFamily::FactAppend => Stage::MemoryConstruction,
            PromptFamily::QueryKeywords | PromptFamily::EventLocalSelection | PromptFamily::EvidenceFilter => {
                Stage::Retrieval
            }
            PromptFamily::FinalQa(_) => Stage::Answer,
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A turn as shown to the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_id: u64,
    pub speaker: String,
    pub timestamp: String,
    pub text: String,
    pub keywords: Vec<String>,
    pub tags: Vec<String>,
}

impl TurnView {
    fn line(&self) -> String {
        format!("[{}] ({}) {}: {}", self.turn_id, self.timestamp, self.speaker, self.text)
    }
}

/// An event as shown to the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventView {
    pub event_id: u64,
    pub summary: String,
    pub facts: Vec<String>,
}

impl EventView {
    fn block(&self) -> String {
        let mut s = format!("[{}] {}", self.event_id, self.summary);
        for fact in &self.facts {
            s.push_str("\n    - ");
            s.push_str(fact);
        }
        s
    }
}

/// Typed inputs of one call. Rendering turns them into template variables;
/// scripted providers read them directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    TurnAnalysis { turn: TurnView, window: Vec<TurnView> },
    EventAffiliation { turn: TurnView, candidates: Vec<EventView> },
    EventRefresh { turns: Vec<TurnView> },
    FactAppend { summary: String, turn: TurnView },
    QueryKeywords { question: String },
    EventLocalSelection { question: String, keywords: Vec<String>, event: EventView, turns: Vec<TurnView> },
    EvidenceFilter { question: String, keywords: Vec<String>, candidates: Vec<TurnView> },
    FinalQa { question: String, category: QuestionCategory, evidence: Vec<TurnView>, distractor: Option<String> },
}

fn lines(turns: &[TurnView]) -> String {
    turns.iter().map(TurnView::line).collect::<Vec<_>>().join("\n")
}

impl Payload {
    pub fn family(&self) -> PromptFamily {
        match self {
            Payload::TurnAnalysis { .. } => PromptFamily::TurnAnalysis,
            Payload::EventAffiliation { .. } => PromptFamily::EventAffiliation,
            Payload::EventRefresh { .. } => PromptFamily::EventRefresh,
            Payload::FactAppend { .. } => PromptFamily::FactAppend,
            Payload::QueryKeywords { .. } => PromptFamily::QueryKeywords,
            Payload::EventLocalSelection { .. } => PromptFamily::EventLocalSelection,
            Payload::EvidenceFilter { .. } => PromptFamily::EvidenceFilter,
            Payload::FinalQa { category, .. } => PromptFamily::FinalQa(*category),
        }
    }

    pub fn variables(&self) -> Variables {
        let mut v = Variables::new();
        match self {
            Payload::TurnAnalysis { turn, window } => {
                v.insert("window", lines(window));
                v.insert("turn", turn.line());
            }
            Payload::EventAffiliation { turn, candidates } => {
                v.insert("turn", turn.line());
                let blocks: Vec<String> = candidates.iter().map(EventView::block).collect();
                v.insert("candidates", blocks.join("\n"));
            }
            Payload::EventRefresh { turns } => {
                v.insert("turns", lines(turns));
            }
            Payload::FactAppend { summary, turn } => {
                v.insert("summary", summary.clone());
                v.insert("turn", turn.line());
            }
            Payload::QueryKeywords { question } => {
                v.insert("question", question.clone());
            }
            Payload::EventLocalSelection { question, keywords, event, turns } => {
                v.insert("question", question.clone());
                v.insert("keywords", keywords.join(", "));
                v.insert("summary", event.summary.clone());
                v.insert("facts", event.facts.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n"));
                v.insert("turns", lines(turns));
            }
            Payload::EvidenceFilter { question, keywords, candidates } => {
                v.insert("question", question.clone());
                v.insert("keywords", keywords.join(", "));
                v.insert("candidates", lines(candidates));
            }
            Payload::FinalQa { question, evidence, distractor, .. } => {
                v.insert("question", question.clone());
                v.insert("evidence", lines(evidence));
                if let Some(d) = distractor {
                    v.insert("candidate", d.clone());
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Variables(BTreeMap<String, String>);

impl Variables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: String) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("no template for prompt family {0}")]
    UnknownFamily(String),
    #[error("template {family} needs variable {name:?}")]
    MissingVariable { family: PromptFamily, name: String },
}

/// Template text per family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates(BTreeMap<PromptFamily, String>);

const DEFAULTS: [(&str, &str); 12] = [
    ("turn_analysis", include_str!("../../templates/turn_analysis.txt")),
    ("event_affiliation", include_str!("../../templates/event_affiliation.txt")),
    ("event_refresh", include_str!("../../templates/event_refresh.txt")),
    ("fact_append", include_str!("../../templates/fact_append.txt")),
    ("query_keywords", include_str!("../../templates/query_keywords.txt")),
    ("event_local_selection", include_str!("../../templates/event_local_selection.txt")),
    ("evidence_filter", include_str!("../../templates/evidence_filter.txt")),
    ("final_qa_single_hop", include_str!("../../templates/final_qa_single_hop.txt")),
    ("final_qa_multi_hop", include_str!("../../templates/final_qa_multi_hop.txt")),
    ("final_qa_temporal", include_str!("../../templates/final_qa_temporal.txt")),
    ("final_qa_open_domain", include_str!("../../templates/final_qa_open_domain.txt")),
    ("final_qa_adversarial", include_str!("../../templates/final_qa_adversarial.txt")),
];

impl Default for PromptTemplates {
    /// The templates shipped in `crates/core/templates/`.
    fn default() -> Self {
        let mut map = BTreeMap::new();
        for (key, text) in DEFAULTS {
            map.insert(PromptFamily::from_key(key).expect("known key"), text.to_string());
        }
        Self(map)
    }
}

impl PromptTemplates {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    /// Sets the template stored under a family key such as `"turn_analysis"`.
    pub fn set(&mut self, key: &str, text: String) -> Result<(), TemplateError> {
        let family = PromptFamily::from_key(key).ok_or_else(|| TemplateError::UnknownFamily(key.to_string()))?;
        self.0.insert(family, text);
        Ok(())
    }

    pub fn get(&self, family: PromptFamily) -> Option<&str> {
        self.0.get(&family).map(String::as_str)
    }

    /// Substitutes every `{{name}}` placeholder of the family's template.
    pub fn render(&self, family: PromptFamily, vars: &Variables) -> Result<String, TemplateError> {
        let template = self.get(family).ok_or_else(|| TemplateError::UnknownFamily(family.key().to_string()))?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else { break };
            out.push_str(&rest[..start]);
            let name = rest[start + 2..start + 2 + len].trim();
            let value = vars
                .get(name)
                .ok_or_else(|| TemplateError::MissingVariable { family, name: name.to_string() })?;
            out.push_str(value);
            rest = &rest[start + 2 + len + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn render_payload(&self, payload: &Payload) -> Result<String, TemplateError> {
        self.render(payload.family(), &payload.variables())
    }
}
