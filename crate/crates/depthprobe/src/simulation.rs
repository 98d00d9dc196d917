//! Offline stand-ins for the target model, evaluator, and fact source, plus
//! parameter sweeps over full simulated runs. Everything here is a pure
//! function of the seed, so simulated runs are replayable bit for bit.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DepthConfig, PathId, Question, SpecificityTier, Verdict, VerifiedFact};
use crate::facts::{
    CandidateFact, FactError, FactQuery, FactSource, FactSourceDescriptor, SourceBatch,
};
use crate::llm::{LlmError, UsageRecord, UsageRole};
use crate::orchestrator::{run_evaluation, RunError, RunServices};
use crate::runlog::MemorySink;
use crate::services::{Evaluator, TargetAnswer, TargetModel};
use crate::stats::StopReason;
use crate::util::{contains_ci, fnv1a64, normalize_text, unit_from_hash, word_count};

pub const SIM_TARGET_MODEL: &str = "sim-target";
pub const SIM_EVALUATOR_MODEL: &str = "sim-evaluator";
const SIM_EPOCH: &str = "2025-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("profile must assign an accuracy to every tier")]
    IncompleteProfile,
    #[error("accuracy {0} outside [0,1]")]
    AccuracyOutOfRange(f64),
    #[error("sweep axes must be nonempty")]
    EmptyAxes,
    #[error(transparent)]
    Run(#[from] RunError),
}

/// How the synthetic target turns a per-tier accuracy into outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimMode {
    /// Each answer is independently correct with probability p.
    Bernoulli,
    /// Each depth gets exactly round(p * n) correct answers, distributed by
    /// seeded shuffle, isolating the survival math from sampling noise.
    ExactFraction,
}

/// Per-tier accuracy of the synthetic target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    pub per_tier: BTreeMap<SpecificityTier, f64>,
    pub mode: SimMode,
}

impl AccuracyProfile {
    pub fn new(
        per_tier: BTreeMap<SpecificityTier, f64>,
        mode: SimMode,
    ) -> Result<AccuracyProfile, SimulationError> {
        for tier in SpecificityTier::ALL {
            match per_tier.get(&tier) {
                None => return Err(SimulationError::IncompleteProfile),
                Some(&p) if !(0.0..=1.0).contains(&p) => {
                    return Err(SimulationError::AccuracyOutOfRange(p))
                }
                Some(_) => {}
            }
        }
        Ok(AccuracyProfile { per_tier, mode })
    }

    pub fn uniform(p: f64, mode: SimMode) -> Result<AccuracyProfile, SimulationError> {
        AccuracyProfile::new(SpecificityTier::ALL.iter().map(|&t| (t, p)).collect(), mode)
    }

    /// The validation profile: perfect on COMMON, degrading through the
    /// deeper tiers (1.0, 0.8, 0.5, 0.3, 0.1).
    pub fn graded(mode: SimMode) -> AccuracyProfile {
        let values = [1.0, 0.8, 0.5, 0.3, 0.1];
        AccuracyProfile {
            per_tier: SpecificityTier::ALL
                .iter()
                .zip(values)
                .map(|(&t, p)| (t, p))
                .collect(),
            mode,
        }
    }

    pub fn accuracy_for(&self, tier: SpecificityTier) -> f64 {
        self.per_tier.get(&tier).copied().unwrap_or(0.0)
    }
}

struct DepthFlags {
    depth: u32,
    flags: Vec<bool>,
    next: usize,
}

/// Deterministic synthetic target. Correct answers embed the fact's
/// reference answer; incorrect ones name an unrelated signature. Every
/// answer carries fresh concept markers keyed by (path, depth, index) so
/// drilling never starves for directions.
pub struct SyntheticTarget {
    profile: AccuracyProfile,
    seed: u64,
    exact: Mutex<Option<DepthFlags>>,
    passes_per_tier: u32,
}

impl SyntheticTarget {
    pub fn new(profile: AccuracyProfile, seed: u64, passes_per_tier: u32) -> SyntheticTarget {
        SyntheticTarget {
            profile,
            seed,
            exact: Mutex::new(None),
            passes_per_tier,
        }
    }

    fn is_correct(&self, question: &Question) -> bool {
        let p = self.profile.accuracy_for(question.tier);
        match self.profile.mode {
            SimMode::Bernoulli => {
                let hash = fnv1a64(&[
                    &self.seed.to_le_bytes(),
                    b"bernoulli",
                    &question.depth.to_le_bytes(),
                    question.path_id.as_str().as_bytes(),
                    question.reference.claim.as_bytes(),
                ]);
                unit_from_hash(hash) < p
            }
            SimMode::ExactFraction => {
                let mut guard = self.exact.lock().unwrap();
                match guard.as_mut() {
                    Some(plan) if plan.depth == question.depth && plan.next < plan.flags.len() => {
                        let correct = plan.flags[plan.next];
                        plan.next += 1;
                        correct
                    }
                    // No plan for this depth (begin_depth not called or plan
                    // exhausted): fall back to a per-question draw.
                    _ => {
                        let hash = fnv1a64(&[
                            &self.seed.to_le_bytes(),
                            b"fallback",
                            &question.depth.to_le_bytes(),
                            question.path_id.as_str().as_bytes(),
                        ]);
                        unit_from_hash(hash) < p
                    }
                }
            }
        }
    }
}

impl TargetModel for SyntheticTarget {
    fn model_id(&self) -> String {
        SIM_TARGET_MODEL.to_string()
    }

    fn begin_depth(&self, depth: u32, planned_questions: u32) {
        if self.profile.mode != SimMode::ExactFraction {
            return;
        }
        let tier = crate::domain::tier_for_depth(depth, self.passes_per_tier.max(1))
            .map(|(t, _)| t)
            .unwrap_or(SpecificityTier::CuttingEdge);
        let p = self.profile.accuracy_for(tier);
        let n = planned_questions as usize;
        let correct = (p * n as f64).round() as usize;
        let mut flags = vec![true; correct.min(n)];
        flags.resize(n, false);
        let shuffle_seed = fnv1a64(&[&self.seed.to_le_bytes(), b"shuffle", &depth.to_le_bytes()]);
        flags.shuffle(&mut ChaCha12Rng::seed_from_u64(shuffle_seed));
        *self.exact.lock().unwrap() = Some(DepthFlags {
            depth,
            flags,
            next: 0,
        });
    }

    fn answer(&self, question: &Question) -> Result<TargetAnswer, LlmError> {
        let correct = self.is_correct(question);
        // Concept markers: unique per (path, depth, slot), so extraction
        // always finds unused directions.
        let concepts: Vec<String> = (0..3)
            .map(|i| {
                format!(
                    "aspect {}-d{}-c{}",
                    question.path_id.as_str(),
                    question.depth,
                    i
                )
            })
            .collect();
        let body = if correct {
            format!(
                "Regarding {}: {}. Further relevant threads are {}, {}, and {}.",
                question.reference.direction,
                question.reference.reference_answer,
                concepts[0],
                concepts[1],
                concepts[2]
            )
        } else {
            let wrong = fnv1a64(&[
                &self.seed.to_le_bytes(),
                b"wrong",
                question.reference.claim.as_bytes(),
            ]);
            format!(
                "Regarding {}: the record instead points to an unrelated mechanism (code {wrong:012x}). \
Further relevant threads are {}, {}, and {}.",
                question.reference.direction, concepts[0], concepts[1], concepts[2]
            )
        };
        let usage = UsageRecord {
            prompt_tokens: word_count(&question.text),
            completion_tokens: word_count(&body),
            model_id: SIM_TARGET_MODEL.to_string(),
            role: UsageRole::Target,
        };
        Ok(TargetAnswer {
            text: body,
            usage: vec![usage],
        })
    }
}

const BRANCH_FACETS: [&str; 10] = [
    "causes",
    "symptoms",
    "types",
    "history",
    "mechanisms",
    "treatment",
    "diagnosis",
    "epidemiology",
    "structure",
    "classification",
];

/// Deterministic evaluator: template questions, marker-based concept
/// extraction, and substring entailment scoring.
pub struct SyntheticEvaluator;

impl SyntheticEvaluator {
    fn usage(prompt: u64, completion: u64) -> Vec<UsageRecord> {
        vec![UsageRecord {
            prompt_tokens: prompt,
            completion_tokens: completion,
            model_id: SIM_EVALUATOR_MODEL.to_string(),
            role: UsageRole::Evaluator,
        }]
    }
}

impl Evaluator for SyntheticEvaluator {
    fn model_id(&self) -> String {
        SIM_EVALUATOR_MODEL.to_string()
    }

    fn propose_branches(
        &self,
        topic: &str,
        n: u32,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
        let mut branches = Vec::new();
        for i in 0..n as usize {
            let facet = BRANCH_FACETS[i % BRANCH_FACETS.len()];
            let cycle = i / BRANCH_FACETS.len();
            let direction = if cycle == 0 {
                format!("{topic} {facet}")
            } else {
                format!("{topic} {facet} {cycle}")
            };
            branches.push(direction);
        }
        Ok((branches, Self::usage(word_count(topic) + 4, n as u64 * 3)))
    }

    fn generate_question(
        &self,
        fact: &VerifiedFact,
        depth: u32,
        path_id: &PathId,
        _retry_limit: u32,
    ) -> Result<(Question, Vec<UsageRecord>), LlmError> {
        let text = format!("What is the key detail of {}?", fact.direction);
        let question = Question {
            text: text.clone(),
            reference: fact.clone(),
            depth,
            path_id: path_id.clone(),
            tier: fact.tier,
        };
        Ok((
            question,
            Self::usage(word_count(&fact.claim), word_count(&text)),
        ))
    }

    fn extract_concepts(
        &self,
        answer_text: &str,
        k: u32,
        exclude: &BTreeSet<String>,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
        let mut concepts = Vec::new();
        let words: Vec<&str> = answer_text.split_whitespace().collect();
        for window in words.windows(2) {
            if window[0] != "aspect" {
                continue;
            }
            let marker = window[1].trim_end_matches([',', '.', ';']);
            let phrase = format!("aspect {marker}");
            let key = normalize_text(&phrase);
            if exclude.contains(&key) || concepts.contains(&phrase) {
                continue;
            }
            concepts.push(phrase);
            if concepts.len() as u32 == k {
                break;
            }
        }
        if concepts.is_empty() {
            return Err(LlmError::NoConcepts);
        }
        Ok((concepts, Self::usage(word_count(answer_text), 6)))
    }

    fn score_answer(
        &self,
        fact: &VerifiedFact,
        answer_text: &str,
    ) -> Result<(Verdict, Vec<UsageRecord>), LlmError> {
        let verdict = if contains_ci(answer_text, &fact.reference_answer) {
            Verdict::correct(Some("reference claim entailed".to_string()))
        } else {
            Verdict::incorrect(Some("reference claim absent".to_string()))
        };
        Ok((
            verdict,
            Self::usage(
                word_count(answer_text) + word_count(&fact.reference_answer),
                2,
            ),
        ))
    }
}

/// Fact source returning a deterministic claim per (direction, tier), with a
/// configurable gap rate that simulates unverifiable directions.
pub struct SyntheticFactSource {
    seed: u64,
    gap_rate: f64,
}

impl SyntheticFactSource {
    pub const NAME: &'static str = "sim-facts";

    pub fn new(seed: u64, gap_rate: f64) -> SyntheticFactSource {
        SyntheticFactSource { seed, gap_rate }
    }
}

impl FactSource for SyntheticFactSource {
    fn descriptor(&self) -> FactSourceDescriptor {
        FactSourceDescriptor {
            name: Self::NAME.to_string(),
            tiers_served: SpecificityTier::ALL.iter().copied().collect(),
            endpoint: "sim://facts".to_string(),
        }
    }

    fn candidates(&self, query: &FactQuery, _reformulation: u32) -> Result<SourceBatch, FactError> {
        // The gap draw ignores the reformulation so retries cannot rescue a
        // gapped direction; the observed NO_FACT rate equals the gap rate.
        let gap_hash = fnv1a64(&[
            &self.seed.to_le_bytes(),
            b"gap",
            query.direction.as_bytes(),
            query.tier.name().as_bytes(),
        ]);
        if unit_from_hash(gap_hash) < self.gap_rate {
            return Ok(SourceBatch::default());
        }
        let claim_hash = fnv1a64(&[
            &self.seed.to_le_bytes(),
            b"claim",
            query.direction.as_bytes(),
            query.tier.name().as_bytes(),
        ]);
        let reference = format!("signature value {claim_hash:012x}");
        let claim = format!(
            "At the {} level, {} is characterized by {reference}.",
            query.tier, query.direction
        );
        let slug: String = query
            .direction
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '-' })
            .collect();
        Ok(SourceBatch {
            candidates: vec![CandidateFact {
                claim,
                reference_answer: reference,
                source_url: format!("sim://facts/{}/{}", query.tier, slug),
                retrieved_at: SIM_EPOCH.to_string(),
            }],
            usage: vec![UsageRecord {
                prompt_tokens: word_count(&query.direction),
                completion_tokens: 12,
                model_id: SIM_EVALUATOR_MODEL.to_string(),
                role: UsageRole::FactSource,
            }],
        })
    }
}

/// Bundles the synthetic services for a config.
pub fn synthetic_services(profile: &AccuracyProfile, config: &DepthConfig) -> RunServices {
    synthetic_services_with_gap(profile, config, 0.0)
}

pub fn synthetic_services_with_gap(
    profile: &AccuracyProfile,
    config: &DepthConfig,
    gap_rate: f64,
) -> RunServices {
    let mut registry = crate::facts::SourceRegistry::new();
    registry.register(Arc::new(SyntheticFactSource::new(config.seed, gap_rate)));
    let mut options = crate::orchestrator::RunOptions::default();
    // Recorded so `resume` can rebuild identical services from the log.
    options.annotations.insert(
        "simulation_profile".to_string(),
        serde_json::to_value(profile).expect("profile serializes"),
    );
    options.annotations.insert(
        "simulation_gap_rate".to_string(),
        serde_json::to_value(gap_rate).expect("gap rate serializes"),
    );
    RunServices {
        target: Arc::new(SyntheticTarget::new(
            profile.clone(),
            config.seed,
            config.passes_per_tier,
        )),
        evaluator: Arc::new(SyntheticEvaluator),
        facts: registry,
        options,
    }
}

/// Rebuilds simulated services from a CONFIG event's annotations, if the run
/// was simulated.
pub fn services_from_annotations(
    annotations: &BTreeMap<String, serde_json::Value>,
    config: &DepthConfig,
) -> Option<RunServices> {
    let profile: AccuracyProfile =
        serde_json::from_value(annotations.get("simulation_profile")?.clone()).ok()?;
    let gap_rate = annotations
        .get("simulation_gap_rate")
        .and_then(|v| v.as_f64())
        .unwrap_or(0.0);
    Some(synthetic_services_with_gap(&profile, config, gap_rate))
}

/// A grid of run parameters to sweep with simulated services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub n_values: Vec<u32>,
    pub q_values: Vec<u32>,
    pub theta_values: Vec<f64>,
    pub profile: AccuracyProfile,
    pub replications: u32,
    pub seed: u64,
    #[serde(default = "default_sweep_max_depth")]
    pub max_depth: u32,
    #[serde(default = "default_sweep_topic")]
    pub topic: String,
}

fn default_sweep_max_depth() -> u32 {
    25
}

fn default_sweep_topic() -> String {
    "synthetic-topic".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    pub q: u32,
    pub theta: f64,
    pub replication: u32,
    pub evd: f64,
    pub max_depth: u32,
    pub stop_reason: StopReason,
}

/// Per-cell aggregate over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: u32,
    pub q: u32,
    pub theta: f64,
    pub mean_evd: f64,
    pub mean_max_depth: f64,
    /// Width of the normal-approximation 95% CI on the mean EVD.
    pub ci_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// CSV of per-replication rows; header is stable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,q,theta,replication,evd,max_depth,stop_reason\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{}\n",
                row.n, row.q, row.theta, row.replication, row.evd, row.max_depth, row.stop_reason
            ));
        }
        out
    }
}

/// Runs the full engine once per (N, Q, theta, replication) cell against
/// synthetic services. Deterministic for a given grid seed.
pub fn ablation_sweep(grid: &SweepGrid) -> Result<SweepResult, SimulationError> {
    if grid.n_values.is_empty() || grid.q_values.is_empty() || grid.theta_values.is_empty() {
        return Err(SimulationError::EmptyAxes);
    }
    let replications = grid.replications.max(1);
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &n in &grid.n_values {
        for &q in &grid.q_values {
            for &theta in &grid.theta_values {
                let mut evds = Vec::new();
                let mut depths = Vec::new();
                for replication in 0..replications {
                    let cell_seed = fnv1a64(&[
                        &grid.seed.to_le_bytes(),
                        &n.to_le_bytes(),
                        &q.to_le_bytes(),
                        &theta.to_le_bytes(),
                        &replication.to_le_bytes(),
                    ]);
                    let config = DepthConfig {
                        topic: grid.topic.clone(),
                        questions_per_depth: n,
                        passes_per_tier: q,
                        survival_threshold: theta,
                        max_depth: grid.max_depth,
                        seed: cell_seed,
                        bootstrap_replicates: 0,
                        ..DepthConfig::default()
                    };
                    let services = synthetic_services(&grid.profile, &config);
                    let mut sink = MemorySink::default();
                    let report = run_evaluation(&config, &services, &mut sink)?;
                    let evd = report.series.evd;
                    let max_depth = report.max_depth;
                    evds.push(evd);
                    depths.push(f64::from(max_depth));
                    rows.push(SweepRow {
                        n,
                        q,
                        theta,
                        replication,
                        evd,
                        max_depth,
                        stop_reason: report.stop_reason,
                    });
                }
                let count = evds.len() as f64;
                let mean_evd = evds.iter().sum::<f64>() / count;
                let mean_max_depth = depths.iter().sum::<f64>() / count;
                let sd = if evds.len() > 1 {
                    (evds.iter().map(|e| (e - mean_evd).powi(2)).sum::<f64>() / (count - 1.0))
                        .sqrt()
                } else {
                    0.0
                };
                cells.push(SweepCell {
                    n,
                    q,
                    theta,
                    mean_evd,
                    mean_max_depth,
                    ci_width: 2.0 * 1.96 * sd / count.sqrt(),
                });
            }
        }
    }
    Ok(SweepResult { rows, cells })
}

/// Scripted target for worked examples: answers each depth's questions from
/// a fixed correctness queue.
pub struct ScriptedTarget {
    outcomes: Mutex<std::collections::VecDeque<bool>>,
}

impl ScriptedTarget {
    pub fn new(outcomes: &[bool]) -> ScriptedTarget {
        ScriptedTarget {
            outcomes: Mutex::new(outcomes.iter().copied().collect()),
        }
    }
}

impl TargetModel for ScriptedTarget {
    fn model_id(&self) -> String {
        "scripted-target".to_string()
    }

    fn answer(&self, question: &Question) -> Result<TargetAnswer, LlmError> {
        let correct = self.outcomes.lock().unwrap().pop_front().unwrap_or(false);
        let concepts: Vec<String> = (0..3)
            .map(|i| {
                format!(
                    "aspect {}-d{}-c{}",
                    question.path_id.as_str(),
                    question.depth,
                    i
                )
            })
            .collect();
        let text = if correct {
            format!(
                "{}. Also note {}, {}, and {}.",
                question.reference.reference_answer, concepts[0], concepts[1], concepts[2]
            )
        } else {
            format!(
                "An unrelated account entirely. Also note {}, {}, and {}.",
                concepts[0], concepts[1], concepts[2]
            )
        };
        Ok(TargetAnswer {
            text,
            usage: vec![UsageRecord {
                prompt_tokens: word_count(&question.text),
                completion_tokens: 9,
                model_id: "scripted-target".to_string(),
                role: UsageRole::Target,
            }],
        })
    }
}

/// Scripted fact source: a queue of found/not-found outcomes consumed one
/// per probe, with deterministic claims when found.
pub struct ScriptedFactSource {
    availability: Mutex<std::collections::VecDeque<bool>>,
    inner: SyntheticFactSource,
}

impl ScriptedFactSource {
    pub fn new(availability: &[bool]) -> ScriptedFactSource {
        ScriptedFactSource {
            availability: Mutex::new(availability.iter().copied().collect()),
            inner: SyntheticFactSource::new(0, 0.0),
        }
    }
}

impl FactSource for ScriptedFactSource {
    fn descriptor(&self) -> FactSourceDescriptor {
        FactSourceDescriptor {
            name: "scripted-facts".to_string(),
            tiers_served: SpecificityTier::ALL.iter().copied().collect(),
            endpoint: "sim://scripted-facts".to_string(),
        }
    }

    fn candidates(&self, query: &FactQuery, reformulation: u32) -> Result<SourceBatch, FactError> {
        // Only the first attempt consumes the script; reformulations of a
        // gapped probe stay gapped.
        if reformulation == 0 {
            let available = self
                .availability
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(true);
            if !available {
                return Ok(SourceBatch::default());
            }
            return self.inner.candidates(query, reformulation);
        }
        Ok(SourceBatch::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tier_for_depth;

    fn question(depth: u32, path: u64, direction: &str, tier: SpecificityTier) -> Question {
        let fact = VerifiedFact {
            claim: format!("{direction} claim."),
            reference_answer: format!("{direction} reference"),
            source_url: "sim://test".to_string(),
            source_name: "sim-facts".to_string(),
            tier,
            retrieved_at: SIM_EPOCH.to_string(),
            direction: direction.to_string(),
        };
        Question {
            text: format!("What is the key detail of {direction}?"),
            reference: fact,
            depth,
            path_id: PathId::numbered(path),
            tier,
        }
    }

    #[test]
    fn perfect_profile_always_answers_correctly() {
        let profile = AccuracyProfile::uniform(1.0, SimMode::Bernoulli).unwrap();
        let target = SyntheticTarget::new(profile, 7, 3);
        let evaluator = SyntheticEvaluator;
        for depth in 1..=6 {
            let tier = tier_for_depth(depth, 3).unwrap().0;
            let q = question(depth, u64::from(depth), "topic facet", tier);
            let answer = target.answer(&q).unwrap();
            let (verdict, _) = evaluator.score_answer(&q.reference, &answer.text).unwrap();
            assert_eq!(verdict.outcome, crate::domain::VerdictOutcome::Correct);
        }
    }

    #[test]
    fn zero_profile_always_answers_incorrectly() {
        let profile = AccuracyProfile::uniform(0.0, SimMode::Bernoulli).unwrap();
        let target = SyntheticTarget::new(profile, 7, 3);
        let evaluator = SyntheticEvaluator;
        let q = question(1, 1, "topic facet", SpecificityTier::Common);
        let answer = target.answer(&q).unwrap();
        let (verdict, _) = evaluator.score_answer(&q.reference, &answer.text).unwrap();
        assert_eq!(verdict.outcome, crate::domain::VerdictOutcome::Incorrect);
    }

    #[test]
    fn exact_fraction_plans_round_p_n_per_depth() {
        let profile = AccuracyProfile::graded(SimMode::ExactFraction);
        let target = SyntheticTarget::new(profile, 42, 3);
        // Depth 4 is TEXTBOOK (p = 0.8): exactly 24 of 30 correct.
        target.begin_depth(4, 30);
        let mut correct = 0;
        for i in 0..30 {
            let q = question(4, i, &format!("dir {i}"), SpecificityTier::Textbook);
            let answer = target.answer(&q).unwrap();
            if contains_ci(&answer.text, &q.reference.reference_answer) {
                correct += 1;
            }
        }
        assert_eq!(correct, 24);
    }

    #[test]
    fn synthetic_facts_are_stable_per_direction_and_tier() {
        let source = SyntheticFactSource::new(9, 0.0);
        let query = FactQuery {
            direction: "Influenza causes".to_string(),
            tier: SpecificityTier::Common,
            topic: "Influenza".to_string(),
            exclusions: BTreeSet::new(),
        };
        let a = source.candidates(&query, 0).unwrap();
        let b = source.candidates(&query, 1).unwrap();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.candidates.len(), 1);
        assert!(a.candidates[0].claim.contains("signature value"));
    }

    #[test]
    fn full_gap_rate_never_finds_facts() {
        let source = SyntheticFactSource::new(9, 1.0);
        for i in 0..50 {
            let query = FactQuery {
                direction: format!("direction {i}"),
                tier: SpecificityTier::Common,
                topic: "t".to_string(),
                exclusions: BTreeSet::new(),
            };
            assert!(source.candidates(&query, 0).unwrap().candidates.is_empty());
        }
    }

    #[test]
    fn gap_rate_matches_binomial_bound() {
        let source = SyntheticFactSource::new(1234, 0.2);
        let mut gaps = 0u32;
        let trials = 1000;
        for i in 0..trials {
            let query = FactQuery {
                direction: format!("direction {i}"),
                tier: SpecificityTier::Professional,
                topic: "t".to_string(),
                exclusions: BTreeSet::new(),
            };
            if source.candidates(&query, 0).unwrap().candidates.is_empty() {
                gaps += 1;
            }
        }
        let rate = f64::from(gaps) / f64::from(trials);
        assert!((rate - 0.2).abs() < 0.04, "gap rate {rate}");
    }

    #[test]
    fn evaluator_branches_match_expected_facets() {
        let (branches, _) = SyntheticEvaluator.propose_branches("Influenza", 3).unwrap();
        assert_eq!(
            branches,
            vec![
                "Influenza causes".to_string(),
                "Influenza symptoms".to_string(),
                "Influenza types".to_string(),
            ]
        );
        let (many, _) = SyntheticEvaluator.propose_branches("T", 30).unwrap();
        let unique: BTreeSet<_> = many.iter().collect();
        assert_eq!(unique.len(), 30);
    }

    #[test]
    fn concept_markers_are_extracted_and_deduped() {
        let text = "Answer body. Also note aspect n00001-d2-c0, aspect n00001-d2-c1, and aspect n00001-d2-c2.";
        let (concepts, _) = SyntheticEvaluator
            .extract_concepts(text, 3, &BTreeSet::new())
            .unwrap();
        assert_eq!(concepts.len(), 3);
        assert!(concepts[0].starts_with("aspect "));
        let mut exclude = BTreeSet::new();
        for c in &concepts {
            exclude.insert(normalize_text(c));
        }
        assert!(matches!(
            SyntheticEvaluator.extract_concepts(text, 3, &exclude),
            Err(LlmError::NoConcepts)
        ));
    }
}
