//! Answer F1, evidence-set precision/recall, macro averages and ranks.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Lowercase, drop ASCII punctuation and the articles a/an/the, split on
/// whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let lowered: String = s.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    lowered.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).map(String::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Token-level F1 over multiset overlap of normalized tokens.
pub fn token_f1_detail(prediction: &str, gold: &str) -> F1Score {
    let mut pred = normalize_answer(prediction);
    let mut gold = normalize_answer(gold);
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return F1Score { precision: 1.0, recall: 1.0, f1: 1.0 },
        (true, false) | (false, true) => return F1Score { precision: 0.0, recall: 0.0, f1: 0.0 },
        _ => {}
    }
    pred.sort_unstable();
    gold.sort_unstable();
    // sorted merge counts min(count_pred, count_gold) per token
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < pred.len() && j < gold.len() {
        match pred[i].cmp(&gold[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if common == 0 {
        return F1Score { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    F1Score { precision, recall, f1: 2.0 * precision * recall / (precision + recall) }
}

pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    token_f1_detail(prediction, gold).f1
}

/// Per-question evidence scores. `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub k: usize,
}

/// Set-based precision and recall of retrieved ids against gold ids.
pub fn evidence_metrics<T: Ord + Copy>(retrieved: &[T], gold: &[T]) -> EvidenceScore {
    let r: BTreeSet<T> = retrieved.iter().copied().collect();
    let g: BTreeSet<T> = gold.iter().copied().collect();
    let hit = r.intersection(&g).count() as f64;
    EvidenceScore {
        precision: (!r.is_empty()).then(|| hit / r.len() as f64),
        recall: (!g.is_empty()).then(|| hit / g.len() as f64),
        k: r.len(),
    }
}

/// Unweighted mean of the defined values; `None` if there are none.
pub fn macro_average<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Tied systems share the mean of the positions they occupy (1, 2 → 1.5).
    #[default]
    Average,
    /// Tied systems share a rank and the next value takes the next integer
    /// (1, 1, 2).
    Dense,
    /// Tied systems share the best position and the next value skips
    /// (1, 1, 3).
    Competition,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankError {
    #[error("ranking needs at least two systems, got {0}")]
    TooFewSystems(usize),
    #[error("system {system} has {found} scores, expected {expected}")]
    Shape { system: usize, found: usize, expected: usize },
    #[error("score table has no categories")]
    NoCategories,
    #[error("score of system {system} in category {category} is not a number")]
    NotANumber { system: usize, category: usize },
}

/// Rank of each system within each category (higher score is better),
/// averaged over categories. `scores[system][category]`.
pub fn category_rank(scores: &[Vec<f64>], rule: TieRule) -> Result<Vec<f64>, RankError> {
    if scores.len() < 2 {
        return Err(RankError::TooFewSystems(scores.len()));
    }
    let cats = scores[0].len();
    if cats == 0 {
        return Err(RankError::NoCategories);
    }
    for (system, row) in scores.iter().enumerate() {
        if row.len() != cats {
            return Err(RankError::Shape { system, found: row.len(), expected: cats });
        }
        if let Some(category) = row.iter().position(|v| v.is_nan()) {
            return Err(RankError::NotANumber { system, category });
        }
    }
    let mut totals = alloc::vec![0.0f64; scores.len()];
    for c in 0..cats {
        let column: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        for (s, total) in totals.iter_mut().enumerate() {
            let v = column[s];
            let better = column.iter().filter(|x| **x > v).count();
            let tied = column.iter().filter(|x| **x == v).count();
            *total += match rule {
                TieRule::Average => 1.0 + better as f64 + (tied - 1) as f64 / 2.0,
                TieRule::Competition => 1.0 + better as f64,
                TieRule::Dense => {
                    let mut distinct: Vec<f64> = column.iter().copied().filter(|x| *x > v).collect();
                    distinct.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
                    distinct.dedup();
                    1.0 + distinct.len() as f64
                }
            };
        }
    }
    Ok(totals.into_iter().map(|t| t / cats as f64).collect())
}

/// The first `min(k, len)` ids of a list ranked best first.
pub fn fixed_k_truncate<T: Copy>(ranked: &[T], k: usize) -> Vec<T> {
    ranked[..k.min(ranked.len())].to_vec()
}
