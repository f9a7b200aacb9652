//! Per-stage token accounting and cost reports.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::prompt::Stage;
use crate::money::{Money, PricePerMillion};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl core::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Default)]
struct StageCounters {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    calls: AtomicU64,
}

/// Point-in-time copy of one stage's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub call_count: u64,
}

impl StageTotals {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens, self.completion_tokens)
    }
}

impl core::ops::AddAssign for StageTotals {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.call_count += rhs.call_count;
    }
}

/// Lock-free counters; safe to share between concurrent retrievals.
#[derive(Debug, Default)]
pub struct UsageLedger {
    stages: [StageCounters; 3],
}

fn slot(stage: Stage) -> usize {
    match stage {
        Stage::MemoryConstruction => 0,
        Stage::Retrieval => 1,
        Stage::Answer => 2,
    }
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one provider call. Failed calls are recorded too.
    pub fn record(&self, stage: Stage, usage: TokenUsage) {
        let c = &self.stages[slot(stage)];
        c.prompt_tokens.fetch_add(usage.prompt_tokens, Ordering::Relaxed);
        c.completion_tokens.fetch_add(usage.completion_tokens, Ordering::Relaxed);
        c.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn stage(&self, stage: Stage) -> StageTotals {
        let c = &self.stages[slot(stage)];
        StageTotals {
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: c.completion_tokens.load(Ordering::Relaxed),
            call_count: c.calls.load(Ordering::Relaxed),
        }
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            memory_construction: self.stage(Stage::MemoryConstruction),
            retrieval: self.stage(Stage::Retrieval),
            answer: self.stage(Stage::Answer),
        }
    }

    pub fn reset(&self) {
        for c in &self.stages {
            c.prompt_tokens.store(0, Ordering::Relaxed);
            c.completion_tokens.store(0, Ordering::Relaxed);
            c.calls.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub memory_construction: StageTotals,
    pub retrieval: StageTotals,
    pub answer: StageTotals,
}

impl UsageSnapshot {
    pub fn stage(&self, stage: Stage) -> StageTotals {
        match stage {
            Stage::MemoryConstruction => self.memory_construction,
            Stage::Retrieval => self.retrieval,
            Stage::Answer => self.answer,
        }
    }

    pub fn total(&self) -> StageTotals {
        let mut t = self.memory_construction;
        t += self.retrieval;
        t += self.answer;
        t
    }

    pub fn merge(&mut self, other: &UsageSnapshot) {
        self.memory_construction += other.memory_construction;
        self.retrieval += other.retrieval;
        self.answer += other.answer;
    }

    /// Counters accrued since `earlier`.
    pub fn since(&self, earlier: &UsageSnapshot) -> UsageSnapshot {
        let d = |a: StageTotals, b: StageTotals| StageTotals {
            prompt_tokens: a.prompt_tokens - b.prompt_tokens,
            completion_tokens: a.completion_tokens - b.completion_tokens,
            call_count: a.call_count - b.call_count,
        };
        UsageSnapshot {
            memory_construction: d(self.memory_construction, earlier.memory_construction),
            retrieval: d(self.retrieval, earlier.retrieval),
            answer: d(self.answer, earlier.answer),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input: PricePerMillion,
    pub output: PricePerMillion,
}

/// Which model serves each stage and what each model costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pricing {
    pub models: BTreeMap<String, ModelPrice>,
    pub stages: BTreeMap<Stage, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PricingError {
    #[error("stage {0} has no model assigned")]
    UnassignedStage(&'static str),
    #[error("model {0:?} has no price")]
    UnpricedModel(String),
}

impl Default for Pricing {
    /// Small model for memory construction and retrieval, large model for
    /// answers, at list prices per million tokens.
    fn default() -> Self {
        let p = |s: &str| s.parse::<PricePerMillion>().expect("valid literal");
        let mut models = BTreeMap::new();
        models.insert("gpt-4o-mini".to_string(), ModelPrice { input: p("0.15"), output: p("0.60") });
        models.insert("gpt-5".to_string(), ModelPrice { input: p("1.25"), output: p("10.00") });
        let mut stages = BTreeMap::new();
        stages.insert(Stage::MemoryConstruction, "gpt-4o-mini".to_string());
        stages.insert(Stage::Retrieval, "gpt-4o-mini".to_string());
        stages.insert(Stage::Answer, "gpt-5".to_string());
        Self { models, stages }
    }
}

impl Pricing {
    /// One model for every stage.
    pub fn single(model: &str, price: ModelPrice) -> Self {
        let mut models = BTreeMap::new();
        models.insert(model.to_string(), price);
        let stages = Stage::ALL.into_iter().map(|s| (s, model.to_string())).collect();
        Self { models, stages }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        for stage in Stage::ALL {
            let model = self.stages.get(&stage).ok_or(PricingError::UnassignedStage(stage.as_str()))?;
            if !self.models.contains_key(model) {
                return Err(PricingError::UnpricedModel(model.clone()));
            }
        }
        Ok(())
    }

    /// Groups stage totals by serving model and prices them.
    pub fn report(&self, usage: &UsageSnapshot) -> Result<CostReport, PricingError> {
        self.validate()?;
        let mut lines: Vec<CostLine> = Vec::new();
        for stage in Stage::ALL {
            let model = &self.stages[&stage];
            let totals = usage.stage(stage);
            let idx = match lines.iter().position(|l| &l.model == model) {
                Some(i) => i,
                None => {
                    lines.push(CostLine { model: model.clone(), stages: Vec::new(), ..CostLine::default() });
                    lines.len() - 1
                }
            };
            let line = &mut lines[idx];
            line.stages.push(stage);
            line.input_tokens += totals.prompt_tokens;
            line.output_tokens += totals.completion_tokens;
            line.calls += totals.call_count;
        }
        for line in &mut lines {
            let price = self.models[&line.model];
            line.input_cost = price.input.cost(line.input_tokens);
            line.output_cost = price.output.cost(line.output_tokens);
            line.cost = line.input_cost + line.output_cost;
        }
        let total = lines.iter().map(|l| l.cost).sum();
        Ok(CostReport { lines, total })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLine {
    pub model: String,
    pub stages: Vec<Stage>,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub input_cost: Money,
    pub output_cost: Money,
    pub cost: Money,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub lines: Vec<CostLine>,
    pub total: Money,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_is_zero() {
        let l = UsageLedger::new();
        assert_eq!(l.snapshot(), UsageSnapshot::default());
        let r = Pricing::default().report(&l.snapshot()).unwrap();
        assert_eq!(r.total, Money::ZERO);
    }

    #[test]
    fn two_answer_calls_priced_exactly() {
        let l = UsageLedger::new();
        l.record(Stage::Answer, TokenUsage::new(100, 20));
        l.record(Stage::Answer, TokenUsage::new(50, 10));
        let s = l.stage(Stage::Answer);
        assert_eq!((s.prompt_tokens, s.completion_tokens, s.call_count), (150, 30, 2));
        let price = ModelPrice { input: "2".parse().unwrap(), output: "8".parse().unwrap() };
        let r = Pricing::single("m", price).report(&l.snapshot()).unwrap();
        assert_eq!(r.lines.len(), 1);
        assert_eq!(r.total, "0.00054".parse().unwrap());
    }

    #[test]
    fn hybrid_report_has_two_model_lines() {
        let l = UsageLedger::new();
        l.record(Stage::MemoryConstruction, TokenUsage::new(1000, 100));
        l.record(Stage::Retrieval, TokenUsage::new(500, 50));
        l.record(Stage::Answer, TokenUsage::new(200, 10));
        let r = Pricing::default().report(&l.snapshot()).unwrap();
        assert_eq!(r.lines.len(), 2);
        assert_eq!(r.lines[0].model, "gpt-4o-mini");
        assert_eq!(r.lines[0].stages, [Stage::MemoryConstruction, Stage::Retrieval]);
        assert_eq!((r.lines[0].input_tokens, r.lines[0].output_tokens), (1500, 150));
        assert_eq!(r.lines[1].model, "gpt-5");
        assert_eq!((r.lines[1].input_tokens, r.lines[1].output_tokens), (200, 10));
        // 1500·0.15e-6 + 150·0.6e-6 + 200·1.25e-6 + 10·10e-6
        assert_eq!(r.total, "0.000665".parse().unwrap());
    }

    #[test]
    fn missing_price_is_reported() {
        let mut p = Pricing::default();
        p.models.remove("gpt-5");
        assert_eq!(p.validate(), Err(PricingError::UnpricedModel("gpt-5".into())));
    }
}
