//! Retrieval-augmented fact source for PROFESSIONAL and deeper tiers: shapes
//! the search query per tier, sends it to a pluggable citation-backed search
//! backend, and extracts checkable claims from the synthesized answer.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::Value;

use crate::domain::SpecificityTier;
use crate::facts::{
    split_claims, CandidateFact, FactError, FactQuery, FactSource, FactSourceDescriptor,
    SourceBatch, CLAIMS_PER_FETCH,
};
use crate::llm::{UsageRecord, UsageRole};
use crate::transport::{HttpRequest, Transport};

/// Query suffix steering PROFESSIONAL searches toward authoritative bodies.
pub const PROFESSIONAL_HINT: &str = "according to professional associations or regulatory bodies";
/// Query suffix steering SPECIALIST searches toward primary literature.
pub const SPECIALIST_HINT: &str = "peer-reviewed studies of the underlying mechanism";
/// Query suffix constraining CUTTING_EDGE searches to recent work.
pub const CUTTING_EDGE_HINT: &str = "findings published in the past two years";

/// Shapes a search query for a deep-tier lookup: the direction plus a
/// tier-specific hint. COMMON and TEXTBOOK are encyclopedia tiers and are
/// rejected here.
pub fn shape_search_query(direction: &str, tier: SpecificityTier) -> Result<String, FactError> {
    if direction.trim().is_empty() {
        return Err(FactError::InvalidArgument("direction is empty".to_string()));
    }
    let hint = match tier {
        SpecificityTier::Common | SpecificityTier::Textbook => {
            return Err(FactError::InvalidTier(tier))
        }
        SpecificityTier::Professional => PROFESSIONAL_HINT,
        SpecificityTier::Specialist => SPECIALIST_HINT,
        SpecificityTier::CuttingEdge => CUTTING_EDGE_HINT,
    };
    Ok(format!("{} — {hint}", direction.trim()))
}

/// A synthesized, citation-backed answer from a search backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievedPassage {
    pub answer: String,
    pub citations: Vec<String>,
    pub usage: Option<UsageRecord>,
    /// Transport-level fetch time; cassette timestamp under replay.
    pub retrieved_at: String,
}

/// A web-search system that grounds answers in retrieved documents.
pub trait RetrievalBackend: Send + Sync {
    fn name(&self) -> String;
    fn endpoint(&self) -> String;
    fn search(&self, query: &str) -> Result<RetrievedPassage, FactError>;
}

/// HTTP backend: POST `{"query": ...}`, expect `{"answer": ..., "citations":
/// [...]}`. Concrete providers are selected by configuring the endpoint.
pub struct HttpRetrievalBackend {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpRetrievalBackend {
    pub fn new(
        transport: Arc<dyn Transport>,
        endpoint: impl Into<String>,
        api_key: Option<String>,
    ) -> HttpRetrievalBackend {
        HttpRetrievalBackend {
            transport,
            endpoint: endpoint.into(),
            api_key,
        }
    }
}

impl RetrievalBackend for HttpRetrievalBackend {
    fn name(&self) -> String {
        "retrieval-search".to_string()
    }

    fn endpoint(&self) -> String {
        self.endpoint.clone()
    }

    fn search(&self, query: &str) -> Result<RetrievedPassage, FactError> {
        let body = serde_json::json!({ "query": query }).to_string();
        let mut request = HttpRequest::post_json(&self.endpoint, body);
        if let Some(key) = &self.api_key {
            request = request.with_header("authorization", format!("Bearer {key}"));
        }
        let response = self.transport.execute(&request)?;
        if response.status == 404 {
            return Ok(RetrievedPassage {
                answer: String::new(),
                citations: Vec::new(),
                usage: None,
                retrieved_at: response.fetched_at,
            });
        }
        if response.status != 200 {
            return Err(FactError::SourceUnavailable {
                name: self.name(),
                message: format!("status {}", response.status),
            });
        }
        let parsed: Value = serde_json::from_str(&response.body)
            .map_err(|e| FactError::Malformed(format!("retrieval json: {e}")))?;
        let answer = parsed["answer"].as_str().unwrap_or("").to_string();
        let citations = parsed["citations"]
            .as_array()
            .map(|items| {
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default();
        let usage = parsed["usage"].as_object().map(|u| UsageRecord {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u
                .get("completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
            model_id: parsed["model"].as_str().unwrap_or("retrieval").to_string(),
            role: UsageRole::FactSource,
        });
        Ok(RetrievedPassage {
            answer,
            citations,
            usage,
            retrieved_at: response.fetched_at,
        })
    }
}

/// Fact source for PROFESSIONAL, SPECIALIST, and CUTTING_EDGE tiers.
pub struct RetrievalSource {
    backend: Arc<dyn RetrievalBackend>,
}

impl RetrievalSource {
    pub fn new(backend: Arc<dyn RetrievalBackend>) -> RetrievalSource {
        RetrievalSource { backend }
    }

    /// Reformulations append a numbered "alternative angle" marker so the
    /// backend sees a different query each retry.
    fn query_text(query: &FactQuery, reformulation: u32) -> Result<String, FactError> {
        let shaped = shape_search_query(&query.direction, query.tier)?;
        if reformulation == 0 {
            Ok(shaped)
        } else {
            Ok(format!("{shaped} (alternative angle {reformulation})"))
        }
    }
}

impl FactSource for RetrievalSource {
    fn descriptor(&self) -> FactSourceDescriptor {
        let mut tiers = BTreeSet::new();
        tiers.insert(SpecificityTier::Professional);
        tiers.insert(SpecificityTier::Specialist);
        tiers.insert(SpecificityTier::CuttingEdge);
        FactSourceDescriptor {
            name: self.backend.name(),
            tiers_served: tiers,
            endpoint: self.backend.endpoint(),
        }
    }

    fn candidates(&self, query: &FactQuery, reformulation: u32) -> Result<SourceBatch, FactError> {
        let text = Self::query_text(query, reformulation)?;
        let passage = self.backend.search(&text)?;
        if passage.answer.trim().is_empty() || passage.citations.is_empty() {
            // Uncited answers are not verifiable; treat as nothing found.
            return Ok(SourceBatch {
                candidates: Vec::new(),
                usage: passage.usage.into_iter().collect(),
            });
        }
        let retrieved_at = passage.retrieved_at.clone();
        let source_url = passage.citations[0].clone();
        let candidates = split_claims(&passage.answer, CLAIMS_PER_FETCH)
            .into_iter()
            .map(|claim| CandidateFact {
                reference_answer: claim.clone(),
                claim,
                source_url: source_url.clone(),
                retrieved_at: retrieved_at.clone(),
            })
            .collect();
        Ok(SourceBatch {
            candidates,
            usage: passage.usage.into_iter().collect(),
        })
    }
}
