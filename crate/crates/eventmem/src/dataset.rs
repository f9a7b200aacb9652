//! Benchmark dataset file: one JSON document holding conversations and
//! questions.
//!
//! ```json
//! {
//!   "conversations": [
//!     {"conversation_id": "c1",
//!      "turns": [{"turn_id": 1, "speaker": "Ana", "timestamp": "8 May 2023", "text": "..."}]}
//!   ],
//!   "questions": [
//!     {"question_id": "q1", "conversation_id": "c1", "category": "single_hop",
//!      "question": "...", "gold_answer": "...", "gold_evidence": [1]},
//!     {"question_id": "q2", "conversation_id": "c1", "category": "adversarial",
//!      "question": "...", "gold_answer": "Not mentioned in the conversation",
//!      "distractor": "...", "gold_evidence": []}
//!   ]
//! }
//! ```
//!
//! Turn ids must be strictly increasing within a conversation because turns
//! are ingested in file order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use eventmem_core::ingest::DialogueTurn;
use eventmem_core::QuestionCategory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub turns: Vec<DialogueTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub conversation_id: String,
    pub category: QuestionCategory,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<String>,
    #[serde(default)]
    pub gold_evidence: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationDataset {
    pub conversations: Vec<Conversation>,
    pub questions: Vec<Question>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("dataset integrity error: {0}")]
    Integrity(String),
}

impl ConversationDataset {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ds: ConversationDataset = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            DatasetError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
        })?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    /// Referential integrity and ordering checks.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Integrity(m));
        let mut turns_of: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        for c in &self.conversations {
            if turns_of.contains_key(c.conversation_id.as_str()) {
                return bad(format!("duplicate conversation id {:?}", c.conversation_id));
            }
            let mut ids = BTreeSet::new();
            let mut last = None;
            for t in &c.turns {
                if last.is_some_and(|l| t.turn_id <= l) {
                    return bad(format!(
                        "conversation {:?}: turn id {} is not greater than the previous one",
                        c.conversation_id, t.turn_id
                    ));
                }
                if t.text.trim().is_empty() || t.speaker.trim().is_empty() {
                    return bad(format!("conversation {:?}: turn {} has no speaker or text", c.conversation_id, t.turn_id));
                }
                last = Some(t.turn_id);
                ids.insert(t.turn_id);
            }
            turns_of.insert(&c.conversation_id, ids);
        }
        let mut qids = BTreeSet::new();
        for q in &self.questions {
            if !qids.insert(q.question_id.as_str()) {
                return bad(format!("duplicate question id {:?}", q.question_id));
            }
            let Some(ids) = turns_of.get(q.conversation_id.as_str()) else {
                return bad(format!("question {:?} names unknown conversation {:?}", q.question_id, q.conversation_id));
            };
            if let Some(missing) = q.gold_evidence.iter().find(|t| !ids.contains(t)) {
                return bad(format!(
                    "question {:?} cites turn {} which is not in conversation {:?}",
                    q.question_id, missing, q.conversation_id
                ));
            }
            if q.question.trim().is_empty() {
                return bad(format!("question {:?} has empty text", q.question_id));
            }
            if q.category == QuestionCategory::Adversarial && q.distractor.as_deref().is_none_or(|d| d.trim().is_empty()) {
                return bad(format!("adversarial question {:?} has no distractor", q.question_id));
            }
        }
        Ok(())
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conversation_id == id)
    }

    pub fn turn_count(&self) -> usize {
        self.conversations.iter().map(|c| c.turns.len()).sum()
    }

    pub fn mean_turns_per_conversation(&self) -> f64 {
        if self.conversations.is_empty() {
            return 0.0;
        }
        self.turn_count() as f64 / self.conversations.len() as f64
    }
}

pub fn load_dataset(path: &Path) -> Result<ConversationDataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_owned(), source })?;
    ConversationDataset::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
      "conversations": [{"conversation_id": "c1", "turns": [
        {"turn_id": 1, "speaker": "Evan", "timestamp": "1 May", "text": "I bought a Prius"},
        {"turn_id": 2, "speaker": "Ana", "timestamp": "1 May", "text": "Nice car"}]}],
      "questions": [{"question_id": "q1", "conversation_id": "c1", "category": "single-hop",
        "question": "What car?", "gold_answer": "Prius", "gold_evidence": [1]}]
    }"#;

    #[test]
    fn minimal_file_loads() {
        let ds = ConversationDataset::from_json(MINIMAL).unwrap();
        assert_eq!(ds.conversations[0].turns.len(), 2);
        assert_eq!(ds.questions[0].category, QuestionCategory::SingleHop);
        assert_eq!(ConversationDataset::from_json(&ds.to_json()).unwrap(), ds);
    }

    #[test]
    fn missing_turn_is_integrity_error() {
        let text = MINIMAL.replace("\"gold_evidence\": [1]", "\"gold_evidence\": [7]");
        let err = ConversationDataset::from_json(&text).unwrap_err();
        assert!(matches!(&err, DatasetError::Integrity(m) if m.contains("turn 7")), "{err}");
    }

    #[test]
    fn parse_error_has_location() {
        let text = MINIMAL.replace("\"turn_id\": 2", "\"turn_id\": \"two\"");
        match ConversationDataset::from_json(&text).unwrap_err() {
            DatasetError::Parse { line, field, .. } => {
                assert_eq!(line, 4);
                assert_eq!(field, "conversations[0].turns[1].turn_id");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn adversarial_needs_distractor_and_order_is_checked() {
        let text = MINIMAL.replace("single-hop", "adversarial");
        assert!(ConversationDataset::from_json(&text).is_err());
        let text = MINIMAL.replace("\"turn_id\": 2", "\"turn_id\": 1");
        assert!(ConversationDataset::from_json(&text).is_err());
    }
}
