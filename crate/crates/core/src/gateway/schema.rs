//! Structured outputs of each prompt family and their validation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use super::prompt::PromptFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaName {
    TurnMetadata,
    Affiliation,
    EventRefresh,
    FactAppend,
    Keywords,
    TurnSelection,
    Answer,
}

impl SchemaName {
    pub fn for_family(family: PromptFamily) -> Self {
        match family {
            PromptFamily::TurnAnalysis => SchemaName::TurnMetadata,
            PromptFamily::EventAffiliation => SchemaName::Affiliation,
            PromptFamily::EventRefresh => SchemaName::EventRefresh,
            PromptFamily::FactAppend => SchemaName::FactAppend,
            PromptFamily::QueryKeywords => SchemaName::Keywords,
            PromptFamily::EventLocalSelection | PromptFamily::EvidenceFilter => SchemaName::TurnSelection,
            PromptFamily::FinalQa(_) => SchemaName::Answer,
        }
    }
}

impl fmt::Display for SchemaName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemaName::TurnMetadata => "turn_metadata",
            SchemaName::Affiliation => "affiliation",
            SchemaName::EventRefresh => "event_refresh",
            SchemaName::FactAppend => "fact_append",
            SchemaName::Keywords => "keywords",
            SchemaName::TurnSelection => "turn_selection",
            SchemaName::Answer => "answer",
        };
        f.write_str(s)
    }
}

/// A parsed provider output.
pub trait OutputSchema: DeserializeOwned + Sized {
    const NAME: SchemaName;

    /// Checks what serde cannot express. Called after a successful parse.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Identifier written by a model: `7`, `"7"`, `"t7"`, `"e7"` or `"[7]"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct LooseId(pub u64);

impl<'de> Deserialize<'de> for LooseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = LooseId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an id")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<LooseId, E> {
                Ok(LooseId(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<LooseId, E> {
                u64::try_from(v).map(LooseId).map_err(|_| E::custom("negative id"))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<LooseId, E> {
                let digits = v.trim().trim_matches(|c: char| !c.is_ascii_digit());
                digits.parse().map(LooseId).map_err(|_| E::custom(format!("bad id {v:?}")))
            }
        }
        d.deserialize_any(V)
    }
}

fn nonempty_list(name: &str, items: &[String]) -> Result<(), String> {
    if items.iter().all(|s| s.trim().is_empty()) {
        return Err(format!("{name} must contain at least one non-blank entry"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnMetadataOutput {
    pub keywords: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub timestamp: String,
}

impl OutputSchema for TurnMetadataOutput {
    const NAME: SchemaName = SchemaName::TurnMetadata;
    fn validate(&self) -> Result<(), String> {
        nonempty_list("keywords", &self.keywords)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AffiliationOutput {
    #[serde(default)]
    pub event_ids: Vec<LooseId>,
    #[serde(default)]
    pub new_event: bool,
    #[serde(default)]
    pub summary: Option<String>,
}

impl OutputSchema for AffiliationOutput {
    const NAME: SchemaName = SchemaName::Affiliation;
    fn validate(&self) -> Result<(), String> {
        if self.event_ids.is_empty() && !self.new_event {
            return Err("neither event_ids nor new_event given".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactLine {
    pub turn_id: LooseId,
    pub fact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventRefreshOutput {
    pub summary: String,
    #[serde(default)]
    pub facts: Vec<FactLine>,
}

impl OutputSchema for EventRefreshOutput {
    const NAME: SchemaName = SchemaName::EventRefresh;
    fn validate(&self) -> Result<(), String> {
        if self.summary.trim().is_empty() {
            return Err("empty summary".to_string());
        }
        if self.facts.iter().any(|f| f.fact.trim().is_empty()) {
            return Err("blank fact line".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FactAppendOutput {
    pub fact: String,
}

impl OutputSchema for FactAppendOutput {
    const NAME: SchemaName = SchemaName::FactAppend;
    fn validate(&self) -> Result<(), String> {
        if self.fact.trim().is_empty() {
            return Err("empty fact".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeywordsOutput {
    pub keywords: Vec<String>,
}

impl OutputSchema for KeywordsOutput {
    const NAME: SchemaName = SchemaName::Keywords;
    fn validate(&self) -> Result<(), String> {
        nonempty_list("keywords", &self.keywords)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnSelectionOutput {
    pub turn_ids: Vec<LooseId>,
}

impl OutputSchema for TurnSelectionOutput {
    const NAME: SchemaName = SchemaName::TurnSelection;
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerOutput {
    pub answer: String,
}

impl OutputSchema for AnswerOutput {
    const NAME: SchemaName = SchemaName::Answer;
}

/// The outermost `{ ... }` of a completion, tolerating code fences and chatter.
pub fn json_object_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

pub fn parse<T: OutputSchema>(raw: &str) -> Result<T, String> {
    let body = json_object_span(raw).ok_or_else(|| "no JSON object in output".to_string())?;
    let value: T = serde_json::from_str(body).map_err(|e| e.to_string())?;
    value.validate()?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn parses_fenced_json_and_loose_ids() {
        let raw = "Sure:\n```json\n{\"turn_ids\": [3, \"t5\", \"[9]\"]}\n```";
        let out: TurnSelectionOutput = parse(raw).unwrap();
        assert_eq!(out.turn_ids, vec![LooseId(3), LooseId(5), LooseId(9)]);
    }

    #[test]
    fn rejects_invalid_outputs() {
        assert!(parse::<TurnMetadataOutput>("{\"keywords\": []}").is_err());
        assert!(parse::<TurnMetadataOutput>("keywords: car").is_err());
        assert!(parse::<AffiliationOutput>("{}").is_err());
        assert!(parse::<EventRefreshOutput>("{\"summary\": \" \"}").is_err());
        assert!(parse::<TurnSelectionOutput>("{\"turn_ids\": [-1]}").is_err());
    }

    #[test]
    fn affiliation_variants() {
        let a: AffiliationOutput = parse("{\"event_ids\": [\"e2\"]}").unwrap();
        assert_eq!(a.event_ids, vec![LooseId(2)]);
        let b: AffiliationOutput = parse("{\"new_event\": true, \"summary\": \"x\"}").unwrap();
        assert!(b.new_event && b.event_ids.is_empty());
    }
}
