//! Chat-completion providers, retries with usage accounting, and token-cost
//! math. The three prompt contracts live in [`ops`].

pub mod ops;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::transport::{HttpRequest, Transport};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("provider error after retries: {0}")]
    Provider(String),
    #[error("question generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: u32, reason: String },
    #[error("evaluator returned no concepts")]
    NoConcepts,
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("no price registered for model {0}")]
    UnpricedModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// One chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

/// Which part of the pipeline consumed the tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UsageRole {
    Target,
    Evaluator,
    FactSource,
}

impl std::fmt::Display for UsageRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UsageRole::Target => "TARGET",
            UsageRole::Evaluator => "EVALUATOR",
            UsageRole::FactSource => "FACT_SOURCE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_id: String,
    pub role: UsageRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: UsageRecord,
}

/// Outcome of a single provider attempt, before any retrying.
pub type AttemptResult = Result<Completion, AttemptError>;

#[derive(Debug)]
pub enum AttemptError {
    /// Retryable: rate limits, 5xx, network hiccups. May still carry usage
    /// (some providers bill failed calls).
    Transient {
        message: String,
        usage: Option<UsageRecord>,
    },
    /// Not retryable: bad credentials.
    Auth(String),
    /// Not retryable: malformed request or response.
    Fatal(String),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> AttemptResult;
}

/// Exponential-backoff retry policy. `base_delay` zero keeps tests instant.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    fn sleep(&self, attempt: u32) {
        if self.base_delay.is_zero() {
            return;
        }
        let factor = 2u32.saturating_pow(attempt).min(32);
        std::thread::sleep(self.base_delay * factor);
    }
}

/// A provider bound to one model and role, with retries and an append-only
/// usage ledger. Every attempt that reports usage is recorded, including
/// attempts that failed and were retried.
pub struct LlmClient {
    provider: Box<dyn ChatProvider>,
    model_id: String,
    role: UsageRole,
    retry: RetryPolicy,
    ledger: Mutex<Vec<UsageRecord>>,
}

impl LlmClient {
    pub fn new(
        provider: Box<dyn ChatProvider>,
        model_id: impl Into<String>,
        role: UsageRole,
        retry: RetryPolicy,
    ) -> LlmClient {
        LlmClient {
            provider,
            model_id: model_id.into(),
            role,
            retry,
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn role(&self) -> UsageRole {
        self.role
    }

    fn record(&self, mut usage: UsageRecord) {
        usage.role = self.role;
        self.ledger.lock().unwrap().push(usage);
    }

    /// All usage recorded so far.
    pub fn usage(&self) -> Vec<UsageRecord> {
        self.ledger.lock().unwrap().clone()
    }

    /// Usage recorded since the last drain; used to attach token counts to
    /// the run-log event that triggered the calls.
    pub fn drain_usage(&self) -> Vec<UsageRecord> {
        std::mem::take(&mut *self.ledger.lock().unwrap())
    }

    /// Runs one completion with retries. Transient failures back off
    /// exponentially up to the retry limit; auth failures surface at once.
    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        if request.system_prompt.is_empty() && request.user_prompt.is_empty() {
            return Err(LlmError::InvalidRequest("both prompts empty".to_string()));
        }
        let mut last_error = String::new();
        for attempt in 0..=self.retry.max_retries {
            match self.provider.complete(request) {
                Ok(completion) => {
                    self.record(completion.usage.clone());
                    let mut completion = completion;
                    completion.usage.role = self.role;
                    return Ok(completion);
                }
                Err(AttemptError::Auth(message)) => return Err(LlmError::Auth(message)),
                Err(AttemptError::Fatal(message)) => return Err(LlmError::Provider(message)),
                Err(AttemptError::Transient { message, usage }) => {
                    if let Some(usage) = usage {
                        self.record(usage);
                    }
                    last_error = message;
                    if attempt < self.retry.max_retries {
                        self.retry.sleep(attempt);
                    }
                }
            }
        }
        Err(LlmError::Provider(last_error))
    }

    /// Convenience wrapper building the request from prompts.
    pub fn prompt(
        &self,
        system_prompt: &str,
        user_prompt: &str,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<Completion, LlmError> {
        self.complete(&CompletionRequest {
            model_id: self.model_id.clone(),
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            max_tokens,
            temperature,
        })
    }
}

/// HTTP chat-completions provider speaking the common JSON wire shape:
/// request `{model, messages, temperature, max_tokens}`, response
/// `{choices[0].message.content, usage{prompt_tokens, completion_tokens}}`.
pub struct HttpChatProvider {
    transport: std::sync::Arc<dyn Transport>,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn new(
        transport: std::sync::Arc<dyn Transport>,
        endpoint: impl Into<String>,
        api_key: Option<String>,
    ) -> HttpChatProvider {
        HttpChatProvider {
            transport,
            endpoint: endpoint.into(),
            api_key,
        }
    }

    /// Reads the credential from the environment variable named in config.
    pub fn from_env(
        transport: std::sync::Arc<dyn Transport>,
        endpoint: impl Into<String>,
        api_key_env: &str,
    ) -> HttpChatProvider {
        HttpChatProvider::new(transport, endpoint, std::env::var(api_key_env).ok())
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &CompletionRequest) -> AttemptResult {
        let body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut http = HttpRequest::post_json(&self.endpoint, body.to_string());
        if let Some(key) = &self.api_key {
            http = http.with_header("authorization", format!("Bearer {key}"));
        }
        let response = self
            .transport
            .execute(&http)
            .map_err(|e| AttemptError::Transient {
                message: e.to_string(),
                usage: None,
            })?;
        match response.status {
            200 => {}
            401 | 403 => {
                return Err(AttemptError::Auth(format!(
                    "status {}: {}",
                    response.status, response.body
                )))
            }
            429 | 500..=599 => {
                return Err(AttemptError::Transient {
                    message: format!("status {}", response.status),
                    usage: None,
                })
            }
            other => {
                return Err(AttemptError::Fatal(format!(
                    "status {other}: {}",
                    response.body
                )))
            }
        }
        let parsed: serde_json::Value = serde_json::from_str(&response.body)
            .map_err(|e| AttemptError::Fatal(format!("bad response json: {e}")))?;
        let text = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| AttemptError::Fatal("response missing message content".to_string()))?
            .to_string();
        let usage = UsageRecord {
            prompt_tokens: parsed["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: parsed["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            model_id: request.model_id.clone(),
            role: UsageRole::Target,
        };
        Ok(Completion { text, usage })
    }
}

/// USD prices per million tokens, keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub models: BTreeMap<String, ModelPrice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl PriceTable {
    pub fn from_json(text: &str) -> Result<PriceTable, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn insert(&mut self, model_id: impl Into<String>, input: f64, output: f64) {
        self.models.insert(
            model_id.into(),
            ModelPrice {
                input_per_million: input,
                output_per_million: output,
            },
        );
    }
}

/// Dollar totals per pipeline role plus the grand total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_role: BTreeMap<UsageRole, f64>,
    pub total_usd: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Sums token costs against the price table. Order-independent; errors on
/// the first usage record whose model has no price.
pub fn accumulate_cost(
    usages: &[UsageRecord],
    prices: &PriceTable,
) -> Result<CostBreakdown, LlmError> {
    let mut per_role: BTreeMap<UsageRole, f64> = BTreeMap::new();
    let mut total = 0.0;
    let mut prompt_tokens = 0u64;
    let mut completion_tokens = 0u64;
    for usage in usages {
        let price = prices
            .models
            .get(&usage.model_id)
            .ok_or_else(|| LlmError::UnpricedModel(usage.model_id.clone()))?;
        let cost = (usage.prompt_tokens as f64 * price.input_per_million
            + usage.completion_tokens as f64 * price.output_per_million)
            / 1_000_000.0;
        *per_role.entry(usage.role).or_insert(0.0) += cost;
        total += cost;
        prompt_tokens += usage.prompt_tokens;
        completion_tokens += usage.completion_tokens;
    }
    Ok(CostBreakdown {
        per_role,
        total_usd: total,
        prompt_tokens,
        completion_tokens,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    /// Echoes the user prompt back; usage is word counts.
    pub struct EchoProvider;

    impl ChatProvider for EchoProvider {
        fn complete(&self, request: &CompletionRequest) -> AttemptResult {
            Ok(Completion {
                text: request.user_prompt.clone(),
                usage: UsageRecord {
                    prompt_tokens: crate::util::word_count(&request.user_prompt),
                    completion_tokens: crate::util::word_count(&request.user_prompt),
                    model_id: request.model_id.clone(),
                    role: UsageRole::Target,
                },
            })
        }
    }

    /// Fails with a transient error `failures` times, then succeeds.
    pub struct FlakyProvider {
        pub failures: u32,
        pub calls: AtomicU32,
        pub reply: String,
    }

    impl FlakyProvider {
        pub fn new(failures: u32, reply: &str) -> FlakyProvider {
            FlakyProvider {
                failures,
                calls: AtomicU32::new(0),
                reply: reply.to_string(),
            }
        }
    }

    impl ChatProvider for FlakyProvider {
        fn complete(&self, request: &CompletionRequest) -> AttemptResult {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            let usage = UsageRecord {
                prompt_tokens: 10,
                completion_tokens: 5,
                model_id: request.model_id.clone(),
                role: UsageRole::Target,
            };
            if call < self.failures {
                Err(AttemptError::Transient {
                    message: format!("synthetic outage {call}"),
                    usage: Some(usage),
                })
            } else {
                Ok(Completion {
                    text: self.reply.clone(),
                    usage,
                })
            }
        }
    }

    /// Replies with a fixed script of responses, cycling the last one.
    pub struct ScriptedProvider {
        pub replies: Vec<String>,
        pub calls: AtomicU32,
    }

    impl ScriptedProvider {
        pub fn new(replies: &[&str]) -> ScriptedProvider {
            ScriptedProvider {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                calls: AtomicU32::new(0),
            }
        }
    }

    impl ChatProvider for ScriptedProvider {
        fn complete(&self, request: &CompletionRequest) -> AttemptResult {
            let call = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            let reply = self
                .replies
                .get(call)
                .or_else(|| self.replies.last())
                .cloned()
                .unwrap_or_default();
            Ok(Completion {
                text: reply,
                usage: UsageRecord {
                    prompt_tokens: crate::util::word_count(&request.user_prompt),
                    completion_tokens: 7,
                    model_id: request.model_id.clone(),
                    role: UsageRole::Target,
                },
            })
        }
    }
}
