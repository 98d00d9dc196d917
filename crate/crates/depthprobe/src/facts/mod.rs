//! Tier-routed fact verification. Each drilling direction is resolved to a
//! [`VerifiedFact`] by the first registered source serving the probe's tier:
//! encyclopedia summaries for COMMON, full-article sections for TEXTBOOK, and
//! retrieval-augmented search for PROFESSIONAL and above.

pub mod retrieval;
pub mod wiki;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SpecificityTier, VerifiedFact};
use crate::llm::UsageRecord;
use crate::transport::TransportError;
use crate::util::normalize_text;

/// Candidate claims extracted per fetch before a direction is declared
/// unfindable.
pub const CLAIMS_PER_FETCH: usize = 10;

#[derive(Debug, Error)]
pub enum FactError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no page for title '{0}'")]
    PageMissing(String),
    #[error("source {name} unavailable: {message}")]
    SourceUnavailable { name: String, message: String },
    #[error("tier {0} is served by no registered fact source")]
    MissingTierCoverage(SpecificityTier),
    #[error("tier {0} is not handled by this source")]
    InvalidTier(SpecificityTier),
    #[error("malformed source response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A fact request for one drilling direction.
#[derive(Debug, Clone)]
pub struct FactQuery {
    pub direction: String,
    pub tier: SpecificityTier,
    pub topic: String,
    /// Normalized claims already used in this run; never returned again.
    pub exclusions: BTreeSet<String>,
}

/// What a source advertises about itself; checked at preflight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSourceDescriptor {
    pub name: String,
    pub tiers_served: BTreeSet<SpecificityTier>,
    pub endpoint: String,
}

/// One claim a source extracted, before exclusion filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateFact {
    pub claim: String,
    pub reference_answer: String,
    pub source_url: String,
    pub retrieved_at: String,
}

/// A batch of candidates plus any token usage the fetch incurred.
#[derive(Debug, Clone, Default)]
pub struct SourceBatch {
    pub candidates: Vec<CandidateFact>,
    pub usage: Vec<UsageRecord>,
}

pub trait FactSource: Send + Sync {
    fn descriptor(&self) -> FactSourceDescriptor;

    /// Fetches candidate claims for a query. `reformulation` selects among
    /// deterministic query variants (0 = the direction as asked). A source
    /// that finds nothing returns an empty batch; infrastructure trouble is
    /// `SourceUnavailable` after the source's own bounded retries.
    fn candidates(&self, query: &FactQuery, reformulation: u32) -> Result<SourceBatch, FactError>;
}

/// Ordered list of registered sources; earlier sources win.
#[derive(Clone, Default)]
pub struct SourceRegistry {
    sources: Vec<Arc<dyn FactSource>>,
}

impl SourceRegistry {
    pub fn new() -> SourceRegistry {
        SourceRegistry::default()
    }

    pub fn register(&mut self, source: Arc<dyn FactSource>) {
        self.sources.push(source);
    }

    pub fn sources(&self) -> &[Arc<dyn FactSource>] {
        &self.sources
    }

    pub fn serving(&self, tier: SpecificityTier) -> Vec<Arc<dyn FactSource>> {
        self.sources
            .iter()
            .filter(|s| s.descriptor().tiers_served.contains(&tier))
            .cloned()
            .collect()
    }

    pub fn serves(&self, tier: SpecificityTier) -> bool {
        !self.serving(tier).is_empty()
    }

    /// Every listed tier must be served by at least one source.
    pub fn preflight(&self, required: &[SpecificityTier]) -> Result<(), FactError> {
        for &tier in required {
            if !self.serves(tier) {
                return Err(FactError::MissingTierCoverage(tier));
            }
        }
        Ok(())
    }

    pub fn descriptors(&self) -> Vec<FactSourceDescriptor> {
        self.sources.iter().map(|s| s.descriptor()).collect()
    }
}

/// Result of a fact lookup that completed without infrastructure failure.
#[derive(Debug, Clone)]
pub enum FactLookup {
    Found {
        fact: VerifiedFact,
        reformulations_used: u32,
        usage: Vec<UsageRecord>,
    },
    /// No unused claim after all reformulations: the caller records a
    /// NO_FACT verdict, never an INCORRECT one.
    NotFound { usage: Vec<UsageRecord> },
}

/// Splits source text into candidate single-sentence declarative claims.
/// Multi-claim passages are split on sentence boundaries; fragments shorter
/// than four words are dropped.
pub fn split_claims(text: &str, cap: usize) -> Vec<String> {
    let mut claims = Vec::new();
    for raw in text.split_inclusive(['.', '!', '?']) {
        let sentence = raw.trim();
        // Declarative sentences only: questions are not checkable claims.
        if sentence.len() < 8 || !sentence.ends_with(['.', '!']) {
            continue;
        }
        if sentence.split_whitespace().count() < 4 {
            continue;
        }
        claims.push(sentence.to_string());
        if claims.len() >= cap {
            break;
        }
    }
    claims
}

/// Re-exported canonical claim identity (lowercase, punctuation stripped,
/// whitespace collapsed).
pub fn normalize_claim(text: &str) -> String {
    normalize_text(text)
}

/// Finds the first fact for a query whose normalized claim is not excluded.
///
/// Sources serving the query's tier are tried in registry order; after
/// `retry_limit` additional reformulations yield nothing new the lookup
/// reports `NotFound`. Source failures propagate as `SourceUnavailable`.
pub fn find_fact(
    query: &FactQuery,
    registry: &SourceRegistry,
    retry_limit: u32,
) -> Result<FactLookup, FactError> {
    if query.direction.trim().is_empty() {
        return Err(FactError::InvalidArgument("direction is empty".to_string()));
    }
    let sources = registry.serving(query.tier);
    if sources.is_empty() {
        return Err(FactError::MissingTierCoverage(query.tier));
    }
    let mut usage = Vec::new();
    for reformulation in 0..=retry_limit {
        for source in &sources {
            let batch = source.candidates(query, reformulation)?;
            usage.extend(batch.usage);
            for candidate in batch.candidates {
                let key = normalize_claim(&candidate.claim);
                if key.is_empty() || query.exclusions.contains(&key) {
                    continue;
                }
                let fact = VerifiedFact {
                    claim: candidate.claim,
                    reference_answer: candidate.reference_answer,
                    source_url: candidate.source_url,
                    source_name: source.descriptor().name,
                    tier: query.tier,
                    retrieved_at: candidate.retrieved_at,
                    direction: query.direction.clone(),
                };
                return Ok(FactLookup::Found {
                    fact,
                    reformulations_used: reformulation,
                    usage,
                });
            }
        }
    }
    Ok(FactLookup::NotFound { usage })
}
