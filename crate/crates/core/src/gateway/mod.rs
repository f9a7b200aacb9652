//! Uniform interface for every model call.
//!
//! A call starts from a typed [`Payload`], is rendered through the family's
//! template into a [`StructuredRequest`], sent to a [`Provider`], and parsed
//! into the family's output schema. Unparseable or invalid outputs are retried
//! with the same prompt up to the retry limit. Every attempt, failed or not,
//! lands in the [`UsageLedger`] and the call log.

mod prompt;
mod schema;
mod usage;

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use spin::Mutex;

pub use prompt::{EventView, Payload, PromptFamily, PromptTemplates, QuestionCategory, Stage, TemplateError, TurnView, Variables};
pub use schema::{
    json_object_span, parse, AffiliationOutput, AnswerOutput, EventRefreshOutput, FactAppendOutput, FactLine, KeywordsOutput,
    LooseId, OutputSchema, SchemaName, TurnMetadataOutput, TurnSelectionOutput,
};
pub use usage::{
    CostLine, CostReport, ModelPrice, Pricing, PricingError, StageTotals, TokenUsage, UsageLedger, UsageSnapshot,
};

/// Literal option offered for adversarial questions.
pub const NOT_MENTIONED: &str = "Not mentioned in the conversation";

/// Retries after the first attempt when output fails to parse or validate.
pub const DEFAULT_RETRY_LIMIT: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredRequest {
    pub family: PromptFamily,
    pub rendered_prompt: String,
    pub expected_schema: SchemaName,
    /// The inputs the prompt was rendered from.
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider has no rule for prompt family {0}")]
    UnknownFamily(PromptFamily),
    #[error("provider returned an unusable response: {0}")]
    BadResponse(String),
}

pub trait Provider: Send + Sync {
    /// Model name reported in logs.
    fn model(&self) -> &str;
    fn complete(&self, request: &StructuredRequest) -> Result<Completion, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("rendered prompt for {0} is empty")]
    EmptyPrompt(PromptFamily),
    #[error("{family} expects schema {expected}, caller asked for {requested}")]
    SchemaMismatch { family: PromptFamily, expected: SchemaName, requested: SchemaName },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{family} output failed validation after {attempts} attempts ({reason}); last output: {raw:?}")]
    SchemaFailure { family: PromptFamily, attempts: u32, reason: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum CallOutcome {
    Ok,
    InvalidOutput(String),
    ProviderError(String),
}

/// One provider attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub family: PromptFamily,
    pub stage: Stage,
    pub model: String,
    pub attempt: u32,
    pub usage: TokenUsage,
    pub outcome: CallOutcome,
}

pub struct Gateway {
    templates: PromptTemplates,
    provider: Arc<dyn Provider>,
    stage_providers: [Option<Arc<dyn Provider>>; 3],
    retry_limit: u32,
    ledger: UsageLedger,
    log: Mutex<Vec<CallRecord>>,
    log_enabled: bool,
}

impl core::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.provider.model())
            .field("retry_limit", &self.retry_limit)
            .field("ledger", &self.ledger)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            templates: PromptTemplates::default(),
            provider,
            stage_providers: [None, None, None],
            retry_limit: DEFAULT_RETRY_LIMIT,
            ledger: UsageLedger::new(),
            log: Mutex::new(Vec::new()),
            log_enabled: true,
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_retry_limit(mut self, retries: u32) -> Self {
        self.retry_limit = retries;
        self
    }

    /// Routes one stage to a different provider (e.g. a larger answer model).
    pub fn with_stage_provider(mut self, stage: Stage, provider: Arc<dyn Provider>) -> Self {
        self.stage_providers[stage as usize] = Some(provider);
        self
    }

    /// Keeps counting tokens but stops retaining per-call records.
    pub fn without_call_log(mut self) -> Self {
        self.log_enabled = false;
        self
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn retry_limit(&self) -> u32 {
        self.retry_limit
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn usage(&self) -> UsageSnapshot {
        self.ledger.snapshot()
    }

    pub fn usage_report(&self, pricing: &Pricing) -> Result<CostReport, PricingError> {
        pricing.report(&self.ledger.snapshot())
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().clone()
    }

    pub fn take_call_log(&self) -> Vec<CallRecord> {
        core::mem::take(&mut *self.log.lock())
    }

    fn provider_for(&self, stage: Stage) -> &Arc<dyn Provider> {
        self.stage_providers[stage as usize].as_ref().unwrap_or(&self.provider)
    }

    pub fn render_prompt(&self, family: PromptFamily, vars: &Variables) -> Result<String, TemplateError> {
        self.templates.render(family, vars)
    }

    pub fn request(&self, payload: Payload) -> Result<StructuredRequest, GatewayError> {
        let family = payload.family();
        let rendered_prompt = self.templates.render_payload(&payload)?;
        if rendered_prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt(family));
        }
        Ok(StructuredRequest { family, rendered_prompt, expected_schema: SchemaName::for_family(family), payload })
    }

    fn record(&self, family: PromptFamily, model: &str, attempt: u32, usage: TokenUsage, outcome: CallOutcome) {
        let stage = family.stage();
        self.ledger.record(stage, usage);
        if self.log_enabled {
            let mut log = self.log.lock();
            let seq = log.len() as u64;
            log.push(CallRecord { seq, family, stage, model: model.to_string(), attempt, usage, outcome });
        }
    }

    /// Sends the request until the output validates or retries run out.
    pub fn complete_structured<T: OutputSchema>(
        &self,
        request: &StructuredRequest,
    ) -> Result<(T, TokenUsage), GatewayError> {
        if T::NAME != request.expected_schema {
            return Err(GatewayError::SchemaMismatch {
                family: request.family,
                expected: request.expected_schema,
                requested: T::NAME,
            });
        }
        let provider = self.provider_for(request.family.stage());
        let mut total = TokenUsage::default();
        let attempts = self.retry_limit + 1;
        let mut last = (String::new(), String::new());
        for attempt in 1..=attempts {
            let completion = match provider.complete(request) {
                Ok(c) => c,
                Err(e) => {
                    self.record(request.family, provider.model(), attempt, TokenUsage::default(), CallOutcome::ProviderError(e.to_string()));
                    return Err(e.into());
                }
            };
            total += completion.usage;
            match parse::<T>(&completion.text) {
                Ok(value) => {
                    self.record(request.family, provider.model(), attempt, completion.usage, CallOutcome::Ok);
                    return Ok((value, total));
                }
                Err(reason) => {
                    log::debug!("{} attempt {attempt} invalid: {reason}", request.family);
                    self.record(
                        request.family,
                        provider.model(),
                        attempt,
                        completion.usage,
                        CallOutcome::InvalidOutput(reason.clone()),
                    );
                    last = (reason, completion.text);
                }
            }
        }
        Err(GatewayError::SchemaFailure { family: request.family, attempts, reason: last.0, raw: last.1 })
    }

    /// Renders and completes in one step.
    pub fn call<T: OutputSchema>(&self, payload: Payload) -> Result<T, GatewayError> {
        let request = self.request(payload)?;
        self.complete_structured(&request).map(|(v, _)| v)
    }
}
