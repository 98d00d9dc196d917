//! Core vocabulary: specificity tiers, run configuration, verified facts,
//! questions, and verdicts, plus the depth-to-tier mapping.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How specialized the knowledge behind a question must be.
///
/// Tiers form a strict ladder: each depth of drilling maps to exactly one
/// tier, and deeper drilling never maps to an easier tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpecificityTier {
    /// General public knowledge (encyclopedia summaries).
    Common,
    /// University-student level (detailed encyclopedia sections).
    Textbook,
    /// Practitioner level (guidelines, professional standards).
    Professional,
    /// Expert level (peer-reviewed literature).
    Specialist,
    /// Researcher level (publications from the past two years).
    CuttingEdge,
}

impl SpecificityTier {
    pub const ALL: [SpecificityTier; 5] = [
        SpecificityTier::Common,
        SpecificityTier::Textbook,
        SpecificityTier::Professional,
        SpecificityTier::Specialist,
        SpecificityTier::CuttingEdge,
    ];

    /// Ordinal rank, 0 (COMMON) through 4 (CUTTING_EDGE).
    pub fn rank(self) -> u32 {
        match self {
            SpecificityTier::Common => 0,
            SpecificityTier::Textbook => 1,
            SpecificityTier::Professional => 2,
            SpecificityTier::Specialist => 3,
            SpecificityTier::CuttingEdge => 4,
        }
    }

    /// Tier for an ordinal rank, clamped at CUTTING_EDGE.
    pub fn from_rank_clamped(rank: u32) -> SpecificityTier {
        match rank {
            0 => SpecificityTier::Common,
            1 => SpecificityTier::Textbook,
            2 => SpecificityTier::Professional,
            3 => SpecificityTier::Specialist,
            _ => SpecificityTier::CuttingEdge,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecificityTier::Common => "COMMON",
            SpecificityTier::Textbook => "TEXTBOOK",
            SpecificityTier::Professional => "PROFESSIONAL",
            SpecificityTier::Specialist => "SPECIALIST",
            SpecificityTier::CuttingEdge => "CUTTING_EDGE",
        }
    }
}

impl fmt::Display for SpecificityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Run parameters for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthConfig {
    /// Topic under evaluation (free text, nonempty).
    pub topic: String,
    /// N — questions asked at every depth.
    pub questions_per_depth: u32,
    /// Q — consecutive depths spent inside one tier before advancing.
    pub passes_per_tier: u32,
    /// θ — the run stops once cumulative survival falls strictly below this.
    pub survival_threshold: f64,
    /// Hard ceiling on drilling depth.
    pub max_depth: u32,
    /// Seed for every random draw the engine makes.
    pub seed: u64,
    /// Reformulation attempts before a probe is marked NO_FACT.
    pub fact_retry_limit: u32,
    /// Bootstrap replicates for the EVD standard error (0 disables).
    pub bootstrap_replicates: u32,
    /// Two-sided confidence level for Wilson intervals.
    pub confidence_level: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig {
            topic: String::new(),
            questions_per_depth: 30,
            passes_per_tier: 3,
            survival_threshold: 0.20,
            max_depth: 15,
            seed: 42,
            fact_retry_limit: 2,
            bootstrap_replicates: 1000,
            confidence_level: 0.95,
        }
    }
}

impl DepthConfig {
    pub fn for_topic(topic: impl Into<String>) -> Self {
        DepthConfig {
            topic: topic.into(),
            ..DepthConfig::default()
        }
    }
}

/// A tier-tagged factual claim with its source; the ground truth for one probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedFact {
    /// The full declarative claim extracted from the source.
    pub claim: String,
    /// The checkable key claim an answer must contain to be correct.
    pub reference_answer: String,
    /// Where the claim came from.
    pub source_url: String,
    /// Name of the fact source that produced it (tier-routing audit).
    pub source_name: String,
    /// Tier the fact was verified at.
    pub tier: SpecificityTier,
    /// ISO-8601 UTC timestamp of retrieval.
    pub retrieved_at: String,
    /// Drilling direction that produced it.
    pub direction: String,
}

/// Identifier of one node in the drilling tree. Ordering is lexicographic;
/// ids are zero-padded so creation order and sort order agree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathId(pub String);

impl PathId {
    pub fn numbered(n: u64) -> PathId {
        PathId(format!("n{n:05}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One question posed to the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub reference: VerifiedFact,
    pub depth: u32,
    pub path_id: PathId,
    pub tier: SpecificityTier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictOutcome {
    Correct,
    Incorrect,
    /// No verifiable fact could be obtained for the probe; excluded from
    /// accuracy rather than counted against the model.
    NoFact,
}

impl fmt::Display for VerdictOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictOutcome::Correct => "CORRECT",
            VerdictOutcome::Incorrect => "INCORRECT",
            VerdictOutcome::NoFact => "NO_FACT",
        })
    }
}

/// Scoring outcome for one probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: VerdictOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl Verdict {
    pub fn correct(rationale: impl Into<Option<String>>) -> Verdict {
        Verdict {
            outcome: VerdictOutcome::Correct,
            rationale: rationale.into(),
        }
    }

    pub fn incorrect(rationale: impl Into<Option<String>>) -> Verdict {
        Verdict {
            outcome: VerdictOutcome::Incorrect,
            rationale: rationale.into(),
        }
    }

    pub fn no_fact(rationale: impl Into<Option<String>>) -> Verdict {
        Verdict {
            outcome: VerdictOutcome::NoFact,
            rationale: rationale.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Maps a 1-indexed depth to its specificity tier and pass index within the
/// tier. The tier rank is `floor((depth - 1) / passes_per_tier)` clamped at
/// CUTTING_EDGE; the pass is `((depth - 1) mod passes_per_tier) + 1`.
pub fn tier_for_depth(
    depth: u32,
    passes_per_tier: u32,
) -> Result<(SpecificityTier, u32), DomainError> {
    if depth == 0 {
        return Err(DomainError::InvalidArgument("depth must be at least 1"));
    }
    if passes_per_tier == 0 {
        return Err(DomainError::InvalidArgument(
            "passes_per_tier must be at least 1",
        ));
    }
    let tier = SpecificityTier::from_rank_clamped((depth - 1) / passes_per_tier);
    let pass = (depth - 1) % passes_per_tier + 1;
    Ok((tier, pass))
}

/// Checks every `DepthConfig` invariant, returning one message per violation.
/// An empty list means the configuration is valid.
pub fn validate_config(config: &DepthConfig) -> Vec<String> {
    let mut violations = Vec::new();
    if config.topic.trim().is_empty() {
        violations.push("topic must be nonempty".to_string());
    }
    if config.questions_per_depth == 0 {
        violations.push("questions_per_depth must be at least 1".to_string());
    }
    if config.passes_per_tier == 0 {
        violations.push("passes_per_tier must be at least 1".to_string());
    }
    if !(config.survival_threshold > 0.0 && config.survival_threshold < 1.0) {
        violations.push("threshold must lie in (0,1)".to_string());
    }
    if config.max_depth == 0 {
        violations.push("max_depth must be at least 1".to_string());
    }
    if !(config.confidence_level > 0.0 && config.confidence_level < 1.0) {
        violations.push("confidence_level must lie in (0,1)".to_string());
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_ladder_is_total_and_five_wide() {
        assert_eq!(SpecificityTier::ALL.len(), 5);
        for pair in SpecificityTier::ALL.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        for tier in SpecificityTier::ALL {
            assert_eq!(SpecificityTier::from_rank_clamped(tier.rank()), tier);
        }
    }

    #[test]
    fn tier_for_depth_matches_q3_table() {
        // Q=3 rows: depths 1-3 COMMON, 4-6 TEXTBOOK, 7-9 PROFESSIONAL.
        assert_eq!(tier_for_depth(1, 3).unwrap(), (SpecificityTier::Common, 1));
        assert_eq!(
            tier_for_depth(7, 3).unwrap(),
            (SpecificityTier::Professional, 1)
        );
        assert_eq!(
            tier_for_depth(14, 3).unwrap(),
            (SpecificityTier::CuttingEdge, 2)
        );
    }

    #[test]
    fn first_depth_is_first_pass_of_common_for_any_q() {
        for q in 1..=12 {
            assert_eq!(tier_for_depth(1, q).unwrap(), (SpecificityTier::Common, 1));
        }
    }

    #[test]
    fn tier_for_depth_rejects_zero_arguments() {
        assert!(tier_for_depth(0, 3).is_err());
        assert!(tier_for_depth(3, 0).is_err());
    }

    #[test]
    fn tier_for_depth_is_monotone_in_depth() {
        for q in 1..=5 {
            let mut prev = SpecificityTier::Common;
            for depth in 1..=40 {
                let (tier, pass) = tier_for_depth(depth, q).unwrap();
                assert!(tier >= prev, "depth {depth} q {q}");
                assert!(pass >= 1 && pass <= q);
                prev = tier;
            }
        }
    }

    #[test]
    fn depths_past_the_ladder_clamp_to_cutting_edge() {
        for depth in 13..=40 {
            let (tier, _) = tier_for_depth(depth, 3).unwrap();
            assert_eq!(tier, SpecificityTier::CuttingEdge);
        }
        // Q=3 resolves depths 10-12 to SPECIALIST.
        for depth in 10..=12 {
            let (tier, _) = tier_for_depth(depth, 3).unwrap();
            assert_eq!(tier, SpecificityTier::Specialist);
        }
    }

    #[test]
    fn default_config_validates() {
        let config = DepthConfig::for_topic("Influenza");
        assert_eq!(config.questions_per_depth, 30);
        assert_eq!(config.passes_per_tier, 3);
        assert_eq!(config.seed, 42);
        assert!(validate_config(&config).is_empty());
    }

    #[test]
    fn zero_threshold_is_a_violation() {
        let config = DepthConfig {
            survival_threshold: 0.0,
            ..DepthConfig::for_topic("x")
        };
        let violations = validate_config(&config);
        assert_eq!(violations, vec!["threshold must lie in (0,1)".to_string()]);
    }

    #[test]
    fn zero_counts_report_one_violation_each() {
        let config = DepthConfig {
            questions_per_depth: 0,
            passes_per_tier: 0,
            ..DepthConfig::for_topic("x")
        };
        let violations = validate_config(&config);
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn path_ids_sort_in_creation_order() {
        let ids: Vec<PathId> = (0..120).map(PathId::numbered).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }
}
