//! Benchmark runner: builds one store per conversation, then answers every
//! question under each requested retrieval mode and scores the results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use eventmem_core::gateway::{CostReport, Gateway, Pricing, PricingError, PromptTemplates, Provider, Stage, UsageSnapshot};
use eventmem_core::ingest::{IngestionConfig, Ingestor};
use eventmem_core::metrics::{category_rank, evidence_metrics, fixed_k_truncate, macro_average, token_f1, TieRule};
use eventmem_core::{Encoder, MemoryStore, QuestionCategory, RetrievalConfig, RetrievalMode, Retriever};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConversationDataset, Question};

/// Truncation depths of the fixed-K comparison; `None` is the whole list.
pub const FIXED_K: [Option<usize>; 4] = [Some(8), Some(16), Some(32), None];

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub ingestion: IngestionConfig,
    pub retrieval: RetrievalConfig,
    pub modes: Vec<RetrievalMode>,
    pub pricing: Pricing,
    pub templates: PromptTemplates,
    /// Truncation depths for passive-mode ranked lists.
    pub fixed_k: Vec<Option<usize>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ingestion: IngestionConfig::default(),
            retrieval: RetrievalConfig::default(),
            modes: vec![RetrievalMode::Full],
            pricing: Pricing::default(),
            templates: PromptTemplates::default(),
            fixed_k: FIXED_K.to_vec(),
        }
    }
}

/// The provider for every call, optionally with a different one for the
/// answer stage.
#[derive(Clone)]
pub struct Providers {
    pub default: Arc<dyn Provider>,
    pub answer: Option<Arc<dyn Provider>>,
}

impl From<Arc<dyn Provider>> for Providers {
    fn from(default: Arc<dyn Provider>) -> Self {
        Self { default, answer: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pricing(#[from] PricingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub category: QuestionCategory,
    pub answer: String,
    pub f1: f64,
    /// Final evidence turn ids in chronological order.
    pub evidence: Vec<u64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_violation: Option<String>,
    /// Score-ordered candidate list, kept for passive mode's fixed-K table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranked: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedKRow {
    /// `None` means the untruncated list.
    pub k: Option<usize>,
    pub avg_k: f64,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: RetrievalMode,
    pub category_f1: BTreeMap<QuestionCategory, f64>,
    pub overall_f1: Option<f64>,
    pub avg_k: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub failures: usize,
    pub subset_violations: usize,
    pub prediction_failures: usize,
    pub filter_fallbacks: usize,
    /// Ingestion usage plus this mode's query usage.
    pub usage: UsageSnapshot,
    pub cost: CostReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_k: Vec<FixedKRow>,
    pub questions: Vec<QuestionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionSummary {
    pub conversations: usize,
    pub turns: usize,
    pub events: usize,
    pub links: usize,
    pub failures: usize,
    pub usage: UsageSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub questions: usize,
    pub ingestion: IngestionSummary,
    pub modes: Vec<ModeReport>,
    /// Average category-wise F1 rank per mode (lower is better); empty with
    /// fewer than two modes.
    pub ranking: BTreeMap<RetrievalMode, f64>,
}

impl BenchmarkReport {
    pub fn mode(&self, mode: RetrievalMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per mode, then one row per fixed-K depth.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("mode");
        for c in QuestionCategory::ALL {
            let _ = write!(out, "\t{}", c.as_str());
        }
        out.push_str("\toverall_f1\tavg_k\tprecision\trecall\trank\tmc_tokens\tretrieval_tokens\tanswer_tokens\tcost\tfailures\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for m in &self.modes {
            out.push_str(m.mode.as_str());
            for c in QuestionCategory::ALL {
                let _ = write!(out, "\t{}", opt(m.category_f1.get(&c).copied()));
            }
            let _ = writeln!(
                out,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                opt(m.overall_f1),
                opt(m.avg_k),
                opt(m.macro_precision),
                opt(m.macro_recall),
                opt(self.ranking.get(&m.mode).copied()),
                m.usage.memory_construction.usage().total(),
                m.usage.retrieval.usage().total(),
                m.usage.answer.usage().total(),
                m.cost.total,
                m.failures
            );
        }
        for m in self.modes.iter().filter(|m| !m.fixed_k.is_empty()) {
            out.push_str("\nfixed_k\tmode\tavg_k\tprecision\trecall\n");
            for row in &m.fixed_k {
                let k = row.k.map_or_else(|| "full".to_string(), |k| k.to_string());
                let _ = writeln!(out, "{k}\t{}\t{:.4}\t{}\t{}", m.mode.as_str(), row.avg_k, opt(row.macro_precision), opt(row.macro_recall));
            }
        }
        out
    }
}

/// A store built from one conversation.
#[derive(Debug, Clone)]
pub struct BuiltStore {
    pub conversation_id: String,
    pub store: MemoryStore,
    pub usage: UsageSnapshot,
    pub failures: usize,
}

/// Ingests every conversation with its own gateway so usage stays per
/// conversation. A failed turn is logged and skipped.
pub fn build_stores(
    dataset: &ConversationDataset,
    provider: Arc<dyn Provider>,
    encoder: &dyn Encoder,
    config: &BenchConfig,
) -> Result<Vec<BuiltStore>, BenchError> {
    config.ingestion.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    dataset
        .conversations
        .iter()
        .map(|c| {
            let gateway = Gateway::new(provider.clone()).with_templates(config.templates.clone()).without_call_log();
            let ingestor = Ingestor::new(&gateway, encoder, config.ingestion).map_err(|e| BenchError::Config(e.to_string()))?;
            let mut store = MemoryStore::new(encoder.dimension());
            let mut failures = 0;
            for turn in &c.turns {
                if let Err(e) = ingestor.ingest(&mut store, turn) {
                    log::warn!("conversation {}: turn {} not ingested: {e}", c.conversation_id, turn.turn_id);
                    failures += 1;
                }
            }
            Ok(BuiltStore { conversation_id: c.conversation_id.clone(), store, usage: gateway.usage(), failures })
        })
        .collect()
}

struct Scored {
    result: QuestionResult,
    prediction_failures: usize,
    filter_fallback: bool,
}

fn score_question(retriever: &Retriever<'_>, store: Option<&MemoryStore>, q: &Question) -> Scored {
    let gold: Vec<u64> = q.gold_evidence.clone();
    let failed = |error: String| {
        let ev = evidence_metrics::<u64>(&[], &gold);
        Scored {
            result: QuestionResult {
                question_id: q.question_id.clone(),
                category: q.category,
                answer: String::new(),
                f1: token_f1("", &q.gold_answer),
                evidence: Vec::new(),
                precision: ev.precision,
                recall: ev.recall,
                k: 0,
                error: Some(error),
                subset_violation: None,
                ranked: Vec::new(),
            },
            prediction_failures: 0,
            filter_fallback: false,
        }
    };
    let Some(store) = store else {
        return failed(format!("no store for conversation {:?}", q.conversation_id));
    };
    let outcome = retriever.ask(store, &q.question, q.category, q.distractor.as_deref());
    let qr = match outcome {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let evidence: Vec<u64> = qr.trace.t_final.ids().iter().map(|t| t.0).collect();
    let ev = evidence_metrics(&evidence, &gold);
    let ranked = if retriever.config().mode == RetrievalMode::Passive {
        qr.trace.semantic_ids().iter().map(|t| t.0).collect()
    } else {
        Vec::new()
    };
    Scored {
        result: QuestionResult {
            question_id: q.question_id.clone(),
            category: q.category,
            f1: token_f1(&qr.answer, &q.gold_answer),
            answer: qr.answer,
            evidence,
            precision: ev.precision,
            recall: ev.recall,
            k: ev.k,
            error: None,
            subset_violation: qr.trace.check_subset_chain(store).err(),
            ranked,
        },
        prediction_failures: qr.trace.prediction_failures,
        filter_fallback: qr.trace.filter_fallback,
    }
}

/// Precision/recall of every passive ranked list truncated at each depth.
pub fn fixed_k_table(results: &[QuestionResult], gold: &BTreeMap<&str, &[u64]>, depths: &[Option<usize>]) -> Vec<FixedKRow> {
    depths
        .iter()
        .map(|depth| {
            let scores: Vec<_> = results
                .iter()
                .map(|r| {
                    let k = depth.unwrap_or(r.ranked.len());
                    let cut = fixed_k_truncate(&r.ranked, k);
                    evidence_metrics(&cut, gold.get(r.question_id.as_str()).copied().unwrap_or(&[]))
                })
                .collect();
            FixedKRow {
                k: *depth,
                avg_k: if scores.is_empty() { 0.0 } else { scores.iter().map(|s| s.k as f64).sum::<f64>() / scores.len() as f64 },
                macro_precision: macro_average(scores.iter().map(|s| s.precision)),
                macro_recall: macro_average(scores.iter().map(|s| s.recall)),
            }
        })
        .collect()
}

/// Answers and scores every question under one mode against prebuilt stores.
pub fn evaluate_mode(
    dataset: &ConversationDataset,
    stores: &[BuiltStore],
    providers: &Providers,
    encoder: &dyn Encoder,
    config: &BenchConfig,
    mode: RetrievalMode,
) -> Result<ModeReport, BenchError> {
    let mut gateway = Gateway::new(providers.default.clone()).with_templates(config.templates.clone()).without_call_log();
    if let Some(answer) = &providers.answer {
        gateway = gateway.with_stage_provider(Stage::Answer, answer.clone());
    }
    let retrieval = RetrievalConfig { mode, ..config.retrieval };
    let retriever = Retriever::new(&gateway, encoder, retrieval).map_err(|e| BenchError::Config(e.to_string()))?;
    let by_id: BTreeMap<&str, &MemoryStore> = stores.iter().map(|b| (b.conversation_id.as_str(), &b.store)).collect();
    // questions read frozen stores, so they run in parallel; collect keeps order
    let scored: Vec<Scored> = dataset
        .questions
        .par_iter()
        .map(|q| score_question(&retriever, by_id.get(q.conversation_id.as_str()).copied(), q))
        .collect();

    let mut usage = UsageSnapshot::default();
    for b in stores {
        usage.merge(&b.usage);
    }
    usage.merge(&gateway.usage());
    let cost = config.pricing.report(&usage)?;

    let results: Vec<QuestionResult> = scored.iter().map(|s| s.result.clone()).collect();
    let mut category_f1 = BTreeMap::new();
    for c in QuestionCategory::ALL {
        if let Some(v) = macro_average(results.iter().filter(|r| r.category == c).map(|r| Some(r.f1))) {
            category_f1.insert(c, v);
        }
    }
    let fixed_k = if mode == RetrievalMode::Passive && !config.fixed_k.is_empty() {
        let gold: BTreeMap<&str, &[u64]> =
            dataset.questions.iter().map(|q| (q.question_id.as_str(), q.gold_evidence.as_slice())).collect();
        fixed_k_table(&results, &gold, &config.fixed_k)
    } else {
        Vec::new()
    };
    Ok(ModeReport {
        mode,
        category_f1,
        overall_f1: macro_average(results.iter().map(|r| Some(r.f1))),
        avg_k: macro_average(results.iter().map(|r| Some(r.k as f64))),
        macro_precision: macro_average(results.iter().map(|r| r.precision)),
        macro_recall: macro_average(results.iter().map(|r| r.recall)),
        failures: results.iter().filter(|r| r.error.is_some()).count(),
        subset_violations: results.iter().filter(|r| r.subset_violation.is_some()).count(),
        prediction_failures: scored.iter().map(|s| s.prediction_failures).sum(),
        filter_fallbacks: scored.iter().filter(|s| s.filter_fallback).count(),
        usage,
        cost,
        fixed_k,
        questions: results,
    })
}

/// Average category rank of each mode over the categories every mode
/// answered.
pub fn rank_modes(modes: &[ModeReport]) -> BTreeMap<RetrievalMode, f64> {
    if modes.len() < 2 {
        return BTreeMap::new();
    }
    let cats: Vec<QuestionCategory> =
        QuestionCategory::ALL.into_iter().filter(|c| modes.iter().all(|m| m.category_f1.contains_key(c))).collect();
    let table: Vec<Vec<f64>> = modes.iter().map(|m| cats.iter().map(|c| m.category_f1[c]).collect()).collect();
    match category_rank(&table, TieRule::Average) {
        Ok(ranks) => modes.iter().map(|m| m.mode).zip(ranks).collect(),
        Err(e) => {
            log::warn!("no ranking: {e}");
            BTreeMap::new()
        }
    }
}

/// Builds stores once and evaluates every configured mode.
pub fn run_benchmark(
    dataset: &ConversationDataset,
    providers: impl Into<Providers>,
    encoder: &dyn Encoder,
    config: &BenchConfig,
) -> Result<BenchmarkReport, BenchError> {
    let providers = providers.into();
    config.retrieval.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    config.pricing.validate()?;
    if config.modes.is_empty() {
        return Err(BenchError::Config("no retrieval mode selected".into()));
    }
    let stores = build_stores(dataset, providers.default.clone(), encoder, config)?;
    let modes = config
        .modes
        .iter()
        .map(|m| evaluate_mode(dataset, &stores, &providers, encoder, config, *m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut usage = UsageSnapshot::default();
    for b in &stores {
        usage.merge(&b.usage);
    }
    let ingestion = IngestionSummary {
        conversations: stores.len(),
        turns: stores.iter().map(|b| b.store.turn_count()).sum(),
        events: stores.iter().map(|b| b.store.event_count()).sum(),
        links: stores.iter().map(|b| b.store.link_count()).sum(),
        failures: stores.iter().map(|b| b.failures).sum(),
        usage,
    };
    Ok(BenchmarkReport { questions: dataset.questions.len(), ingestion, ranking: rank_modes(&modes), modes })
}
