//! Planted synthetic corpus and a noisy encoder for it.
//!
//! One conversation is split into topic blocks. Every turn of a block carries
//! the block's anchor word and subject word, so a topic is easy to recognise
//! from its event summary. Each question asks about a cue word that appears
//! in exactly two turns of its block:
//!
//! - a short "easy" turn (`the <anchor> <subject> <cue> was <answer>`);
//! - a long "hard" turn that buries the cue and answer among filler words, so
//!   its cosine score against the question is no better than a topic sibling's.
//!
//! Questions also mention a drift word that the target block never uses but
//! other blocks do. Those turns compete with the gold turns in the
//! turn-level ranking; the event layer never sees them as candidates because
//! their event summaries do not mention any query keyword.

use std::collections::{BTreeMap, BTreeSet};

use eventmem_core::embedding::{seeded_hash, EmbeddingError, EmbeddingVector, Encoder, HashingEncoder};
use eventmem_core::ingest::DialogueTurn;
use eventmem_core::stub::StubRules;
use eventmem_core::text::is_stopword;
use eventmem_core::gateway::NOT_MENTIONED;
use eventmem_core::QuestionCategory;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Conversation, ConversationDataset, Question};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub topics: usize,
    pub turns_per_topic: usize,
    pub questions_per_topic: usize,
    /// Words shared by every topic turn besides anchor and subject.
    pub topic_words: usize,
    /// Filler words in a hard gold turn, drawn from a per-topic pool.
    pub hard_filler: usize,
    pub drift_pool: usize,
    /// Drift words per plain turn.
    pub drift_per_turn: usize,
    /// Relative weight of the per-text random component in [`NoisyEncoder`].
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            topics: 20,
            turns_per_topic: 10,
            questions_per_topic: 3,
            topic_words: 5,
            hard_filler: 18,
            drift_pool: 12,
            drift_per_turn: 2,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("synthetic corpus needs at least one topic and one question per topic")]
    Empty,
    #[error("a topic of {turns} turns cannot hold {questions} questions with two gold turns each")]
    TooManyQuestions { turns: usize, questions: usize },
    #[error("drift pool of {pool} is too small for {per_turn} drift words per turn")]
    DriftPool { pool: usize, per_turn: usize },
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub dataset: ConversationDataset,
    /// Stub rules matched to the corpus (answer spans, summary size).
    pub rules: StubRules,
}

impl SynthCorpus {
    pub fn encoder(&self) -> NoisyEncoder {
        NoisyEncoder::new(HashingEncoder::default(), self.config.noise, self.config.seed)
    }
}

const SPEAKERS: [&str; 2] = ["Mara", "Jonas"];

const MONTHS: [&str; 12] =
    ["January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November", "December"];

struct Words {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Words {
    fn fresh(&mut self) -> String {
        const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "gr"];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
        loop {
            let mut w = String::new();
            for _ in 0..3 {
                w.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
                w.push_str(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            }
            if !is_stopword(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn fresh_n(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

fn date(day_index: usize) -> String {
    format!("{} {} 2023", day_index % 28 + 1, MONTHS[(day_index / 28) % 12])
}

const CATEGORY_CYCLE: [QuestionCategory; 5] = [
    QuestionCategory::SingleHop,
    QuestionCategory::MultiHop,
    QuestionCategory::Temporal,
    QuestionCategory::OpenDomain,
    QuestionCategory::Adversarial,
];

/// Builds the planted corpus. Same config, same bytes.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    if config.topics == 0 || config.questions_per_topic == 0 || config.turns_per_topic == 0 {
        return Err(SynthError::Empty);
    }
    if 2 * config.questions_per_topic > config.turns_per_topic {
        return Err(SynthError::TooManyQuestions { turns: config.turns_per_topic, questions: config.questions_per_topic });
    }
    // each plain turn needs its own drift words and each question needs one
    // drift word the topic never uses
    let plain = config.turns_per_topic - 2 * config.questions_per_topic;
    if config.drift_per_turn * plain + 1 > config.drift_pool {
        return Err(SynthError::DriftPool { pool: config.drift_pool, per_turn: config.drift_per_turn });
    }
    let mut words = Words { rng: ChaCha8Rng::seed_from_u64(config.seed), used: BTreeSet::new() };
    let drift = words.fresh_n(config.drift_pool);
    let conversation_id = "synthetic".to_string();
    let mut turns = Vec::new();
    let mut questions = Vec::new();
    let mut answer_spans = Vec::new();
    let mut next_id = 1u64;
    let mut q_index = 0usize;

    for g in 0..config.topics {
        let anchor = words.fresh();
        let subject = words.fresh();
        let topic_words = words.fresh_n(config.topic_words.max(1));
        // filler is private to the topic so long turns do not pull in other topics
        let filler_pool = words.fresh_n(config.hard_filler + 6);
        let mut topic_cursor = 0usize;
        let mut next_topic_word = |n: usize| -> Vec<String> {
            (0..n)
                .map(|_| {
                    topic_cursor += 1;
                    topic_words[(topic_cursor - 1) % topic_words.len()].clone()
                })
                .collect()
        };

        // slot layout: two gold turns per question, the rest plain
        let mut slots: Vec<Option<(usize, bool)>> = vec![None; config.turns_per_topic];
        let mut positions: Vec<usize> = (0..config.turns_per_topic).collect();
        positions.shuffle(&mut words.rng);
        for q in 0..config.questions_per_topic {
            let (a, b) = (positions[2 * q], positions[2 * q + 1]);
            let a_is_easy = words.rng.gen_bool(0.5);
            slots[a] = Some((q, a_is_easy));
            slots[b] = Some((q, !a_is_easy));
        }
        let cues = words.fresh_n(config.questions_per_topic);
        let answers = words.fresh_n(config.questions_per_topic);
        // the speaker each question asks about; gold turns address them by name
        let owners: Vec<usize> = (0..config.questions_per_topic).map(|_| words.rng.gen_range(0..2)).collect();

        let mut topic_drift: BTreeSet<usize> = BTreeSet::new();
        let mut gold: Vec<Vec<u64>> = vec![Vec::new(); config.questions_per_topic];
        let mut gold_dates: Vec<String> = vec![String::new(); config.questions_per_topic];
        for (pos, slot) in slots.iter().enumerate() {
            let day = 2 * g + usize::from(pos >= config.turns_per_topic / 2);
            let speaker = match slot {
                Some((q, _)) => SPEAKERS[1 - owners[*q]],
                None => SPEAKERS[pos % 2],
            };
            let text = match *slot {
                None => {
                    let mut picks: Vec<usize> = (0..drift.len()).collect();
                    picks.shuffle(&mut words.rng);
                    picks.truncate(config.drift_per_turn);
                    topic_drift.extend(picks.iter().copied());
                    let tw = next_topic_word(3);
                    let d: Vec<&str> = picks.iter().map(|i| drift[*i].as_str()).collect();
                    let addressee = SPEAKERS[(pos + 1) % 2];
                    format!("{addressee}, we had the {anchor} and {subject} with {} {} {}, {} too", tw[0], tw[1], tw[2], d.join(" "))
                }
                Some((q, true)) => format!("{}, the {anchor} {subject} {} was {}", SPEAKERS[owners[q]], cues[q], answers[q]),
                Some((q, false)) => {
                    let tw = next_topic_word(4);
                    let mut filler: Vec<&str> = filler_pool.iter().map(String::as_str).collect();
                    filler.shuffle(&mut words.rng);
                    let n = config.hard_filler.min(filler.len());
                    let (front, back) = filler[..n].split_at(n / 2);
                    format!(
                        "{} and the {anchor} {subject} {} {} {} so {} then the {} {} {} {}",
                        SPEAKERS[owners[q]],
                        tw[0],
                        tw[1],
                        front.join(" "),
                        cues[q],
                        answers[q],
                        back.join(" "),
                        tw[2],
                        tw[3]
                    )
                }
            };
            let turn_id = next_id;
            next_id += 1;
            if let Some((q, _)) = slot {
                gold[*q].push(turn_id);
                // the later gold turn dates the event
                gold_dates[*q] = date(day);
            }
            turns.push(DialogueTurn { turn_id, speaker: speaker.to_string(), timestamp: date(day), text });
        }

        let absent: Vec<usize> = (0..drift.len()).filter(|i| !topic_drift.contains(i)).collect();
        for q in 0..config.questions_per_topic {
            let category = CATEGORY_CYCLE[q_index % CATEGORY_CYCLE.len()];
            q_index += 1;
            let w = &drift[*absent.choose(&mut words.rng).expect("pool leaves an absent drift word")];
            let owner = SPEAKERS[owners[q]];
            let (cue, answer) = (&cues[q], &answers[q]);
            let (question, gold_answer, distractor) = match category {
                QuestionCategory::SingleHop => {
                    (format!("What {cue} did {owner} have for the {anchor} {w}?"), answer.clone(), None)
                }
                QuestionCategory::MultiHop => {
                    (format!("Which {cue} was it for {owner} and the {anchor} {w}?"), answer.clone(), None)
                }
                QuestionCategory::Temporal => {
                    (format!("When was the {anchor} {cue} for {owner} {w}?"), gold_dates[q].clone(), None)
                }
                QuestionCategory::OpenDomain => {
                    (format!("How was the {anchor} {cue} for {owner} {w}?"), answer.clone(), None)
                }
                QuestionCategory::Adversarial => {
                    let fake = words.fresh();
                    (format!("What {cue} did {owner} have for the {anchor} {w}?"), NOT_MENTIONED.to_string(), Some(fake))
                }
            };
            answer_spans.push(answer.clone());
            questions.push(Question {
                question_id: format!("q{:03}", questions.len() + 1),
                conversation_id: conversation_id.clone(),
                category,
                question,
                gold_answer,
                distractor,
                gold_evidence: gold[q].clone(),
            });
        }
    }

    let rules = StubRules {
        affiliation_threshold: 2,
        summary_keywords: 4,
        answer_spans,
        lexicon: BTreeMap::new(),
        ..StubRules::default()
    };
    Ok(SynthCorpus {
        config: config.clone(),
        dataset: ConversationDataset { conversations: vec![Conversation { conversation_id, turns }], questions },
        rules,
    })
}

/// Feature hashing plus a per-text random direction:
/// `normalize(h(text) + noise * r(text))`, where `r` is a unit vector drawn
/// from a generator seeded by the text. Unrelated texts then score slightly
/// above or below zero instead of exactly zero, which mimics the spurious
/// similarity of a learned embedding.
#[derive(Debug, Clone, Copy)]
pub struct NoisyEncoder {
    base: HashingEncoder,
    noise: f32,
    seed: u64,
}

impl NoisyEncoder {
    pub fn new(base: HashingEncoder, noise: f32, seed: u64) -> Self {
        Self { base, noise, seed }
    }
}

impl Encoder for NoisyEncoder {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let clean = self.base.encode(text)?;
        if clean.is_null() || self.noise == 0.0 {
            return Ok(clean);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeded_hash(self.seed, text.as_bytes()));
        let r: Vec<f32> = (0..self.dimension()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let r_norm = r.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32;
        let mixed: Vec<f32> = clean.as_slice().iter().zip(&r).map(|(c, n)| c + self.noise * n / r_norm).collect();
        let norm = mixed.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32;
        EmbeddingVector::new(mixed.into_iter().map(|v| v / norm).collect())
    }
}
