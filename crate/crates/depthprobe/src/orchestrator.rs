//! The depth loop: propose initial branches, then per depth allocate the
//! question budget over surviving paths, resolve facts, generate questions,
//! quiz the target, score by entailment, expand correct paths, and apply the
//! stopping rule. Every step is appended to the run log, and a truncated log
//! resumes to the same final report.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::allocation::{allocate_questions, AllocationError};
use crate::domain::{
    tier_for_depth, validate_config, DepthConfig, DomainError, PathId, Question, SpecificityTier,
    Verdict, VerdictOutcome,
};
use crate::facts::{find_fact, FactError, FactLookup, FactQuery, SourceRegistry};
use crate::llm::{LlmError, PriceTable, UsageRecord};
use crate::report::{report_from_events, ReportError, RunReport};
use crate::runlog::{
    AllocationPayload, AnswerPayload, BranchesPayload, ConfigPayload, DepthSummaryPayload,
    EventBody, EventLog, EventSink, FactPayload, LogError, LoggedOutcome, QuestionPayload,
    RngSnapshot, RunLogEvent, StopPayload, VerdictPayload,
};
use crate::services::{Evaluator, TargetModel};
use crate::stats::{depth_accuracy, should_stop, DepthRecord, StopDecision, StopReason};
use crate::util::normalize_text;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0:?}")]
    InvalidConfig(Vec<String>),
    #[error("preflight failed: {0}")]
    PreflightFailed(String),
    #[error("infrastructure failure at depth {depth}: {failed} of {total} probes")]
    InfrastructureFailure { depth: u32, failed: u32, total: u32 },
    #[error("no initial branches could be generated")]
    NoBranches,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Fact(#[from] FactError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Tunables that are engine policy rather than run parameters.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Fraction of a depth's probes failing on infrastructure (provider or
    /// source errors) that aborts the run. Values above 1.0 disable.
    pub infra_tolerance: f64,
    /// Concepts requested from each correct answer.
    pub concepts_per_answer: u32,
    /// Prices used for the report's cost section, when known.
    pub prices: Option<PriceTable>,
    /// Carried verbatim into the CONFIG event so a resume can rebuild the
    /// same services (e.g. a simulation's accuracy profile).
    pub annotations: BTreeMap<String, serde_json::Value>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            infra_tolerance: 0.10,
            concepts_per_answer: 3,
            prices: None,
            annotations: BTreeMap::new(),
        }
    }
}

/// Everything the engine talks to.
pub struct RunServices {
    pub target: Arc<dyn TargetModel>,
    pub evaluator: Arc<dyn Evaluator>,
    pub facts: SourceRegistry,
    pub options: RunOptions,
}

/// One node of the drilling tree: a probe slot at a depth, on one path.
#[derive(Debug, Clone)]
pub struct PathNode {
    pub path_id: PathId,
    pub parent_id: Option<PathId>,
    pub depth: u32,
    pub direction: String,
    pub question: Option<Question>,
    pub answer_text: Option<String>,
    pub verdict: Option<Verdict>,
    /// Infrastructure failure: excluded from accuracy, counted separately.
    pub unscored: bool,
    pub child_directions: Vec<String>,
    pub alive: bool,
}

impl PathNode {
    fn new(path_id: PathId, parent_id: Option<PathId>, depth: u32, direction: String) -> PathNode {
        PathNode {
            path_id,
            parent_id,
            depth,
            direction,
            question: None,
            answer_text: None,
            verdict: None,
            unscored: false,
            child_directions: Vec::new(),
            alive: true,
        }
    }

    pub fn is_correct(&self) -> bool {
        matches!(
            self.verdict,
            Some(Verdict {
                outcome: VerdictOutcome::Correct,
                ..
            })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Done(StopReason),
}

/// Mutable state of a run; reconstructable from the event log.
pub struct RunState {
    pub config: DepthConfig,
    pub nodes: BTreeMap<PathId, PathNode>,
    /// Last completed depth (0 before depth 1 finishes).
    pub current_depth: u32,
    pub records: Vec<DepthRecord>,
    pub status: RunStatus,
    /// Scored outcomes per depth, in probe order, for the bootstrap.
    pub outcomes: Vec<Vec<bool>>,
    rng: ChaCha12Rng,
    rng_seed: u64,
    directions_used: BTreeSet<String>,
    claims_used: BTreeSet<String>,
    next_node: u64,
}

impl RunState {
    fn new(config: DepthConfig) -> RunState {
        let rng_seed = config.seed;
        RunState {
            config,
            nodes: BTreeMap::new(),
            current_depth: 0,
            records: Vec::new(),
            status: RunStatus::Running,
            outcomes: Vec::new(),
            rng: ChaCha12Rng::seed_from_u64(rng_seed),
            rng_seed,
            directions_used: BTreeSet::new(),
            claims_used: BTreeSet::new(),
            next_node: 0,
        }
    }

    fn rng_snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.rng_seed,
            word_pos: self.rng.get_word_pos(),
        }
    }

    fn restore_rng(&mut self, snapshot: RngSnapshot) {
        self.rng = ChaCha12Rng::seed_from_u64(snapshot.seed);
        self.rng.set_word_pos(snapshot.word_pos);
        self.rng_seed = snapshot.seed;
    }

    fn new_node(&mut self, parent_id: Option<PathId>, depth: u32, direction: String) -> PathId {
        let id = PathId::numbered(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            id.clone(),
            PathNode::new(id.clone(), parent_id, depth, direction),
        );
        id
    }

    fn survival_so_far(&self) -> f64 {
        self.records.last().map(|r| r.survival).unwrap_or(1.0)
    }

    /// Paths eligible for questions at `depth`: the unprobed branch nodes at
    /// depth 1, correct nodes of the previous depth afterwards.
    fn survivors(&self, depth: u32) -> Vec<PathId> {
        self.nodes
            .values()
            .filter(|node| {
                if depth == 1 {
                    node.depth == 1 && node.verdict.is_none() && !node.unscored
                } else {
                    node.depth == depth - 1 && node.is_correct()
                }
            })
            .map(|node| node.path_id.clone())
            .collect()
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        match self.status {
            RunStatus::Done(reason) => Some(reason),
            RunStatus::Running => None,
        }
    }
}

/// Asks the evaluator for `n` distinct initial branches, deduplicating by
/// normalized text and topping up a shortfall with repeated requests. Returns
/// what exists even if fewer than `n`.
pub fn initial_branches(
    topic: &str,
    n: u32,
    evaluator: &dyn Evaluator,
) -> Result<(Vec<String>, Vec<UsageRecord>), RunError> {
    let mut directions: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut usage = Vec::new();
    let mut request = n;
    for _attempt in 0..3 {
        let (batch, batch_usage) = evaluator.propose_branches(topic, request)?;
        usage.extend(batch_usage);
        let before = directions.len();
        for direction in batch {
            let key = normalize_text(&direction);
            if key.is_empty() || !seen.insert(key) {
                continue;
            }
            directions.push(direction);
            if directions.len() as u32 == n {
                return Ok((directions, usage));
            }
        }
        if directions.len() == before {
            break;
        }
        request = n + directions.len() as u32;
    }
    Ok((directions, usage))
}

struct DepthCounters {
    asked: u32,
    correct: u32,
    no_fact: u32,
    unscored: u32,
    infra_failures: u32,
    outcomes: Vec<bool>,
}

impl DepthCounters {
    fn new() -> DepthCounters {
        DepthCounters {
            asked: 0,
            correct: 0,
            no_fact: 0,
            unscored: 0,
            infra_failures: 0,
            outcomes: Vec::new(),
        }
    }
}

fn log_unscored(
    log: &mut EventLog<'_>,
    counters: &mut DepthCounters,
    state: &mut RunState,
    node_id: &PathId,
    depth: u32,
    reason: String,
    usage: Vec<UsageRecord>,
) -> Result<(), RunError> {
    let node = state.nodes.get_mut(node_id).expect("node exists");
    node.unscored = true;
    node.alive = false;
    counters.unscored += 1;
    counters.infra_failures += 1;
    log.append(EventBody::Verdict(VerdictPayload {
        depth,
        path_id: node_id.to_string(),
        outcome: LoggedOutcome::Unscored,
        rationale: Some(reason),
        child_directions: Vec::new(),
        usage,
    }))?;
    Ok(())
}

fn log_no_fact(
    log: &mut EventLog<'_>,
    counters: &mut DepthCounters,
    state: &mut RunState,
    node_id: &PathId,
    depth: u32,
    reason: &str,
) -> Result<(), RunError> {
    let node = state.nodes.get_mut(node_id).expect("node exists");
    node.verdict = Some(Verdict::no_fact(Some(reason.to_string())));
    node.alive = false;
    counters.no_fact += 1;
    log.append(EventBody::Verdict(VerdictPayload {
        depth,
        path_id: node_id.to_string(),
        outcome: LoggedOutcome::NoFact,
        rationale: Some(reason.to_string()),
        child_directions: Vec::new(),
        usage: Vec::new(),
    }))?;
    Ok(())
}

/// Runs one probe: fact lookup, question generation, target answer, scoring,
/// and concept extraction for correct answers.
#[allow(clippy::too_many_arguments)]
fn run_probe(
    state: &mut RunState,
    services: &RunServices,
    log: &mut EventLog<'_>,
    counters: &mut DepthCounters,
    node_id: PathId,
    depth: u32,
    tier: SpecificityTier,
    pass: u32,
) -> Result<(), RunError> {
    let direction = state.nodes[&node_id].direction.clone();
    let query = FactQuery {
        direction: direction.clone(),
        tier,
        topic: state.config.topic.clone(),
        exclusions: state.claims_used.clone(),
    };
    let lookup = match find_fact(&query, &services.facts, state.config.fact_retry_limit) {
        Ok(lookup) => lookup,
        Err(FactError::SourceUnavailable { name, message }) => {
            return log_unscored(
                log,
                counters,
                state,
                &node_id,
                depth,
                format!("source {name} unavailable: {message}"),
                Vec::new(),
            );
        }
        Err(other) => return Err(other.into()),
    };

    let (fact, reformulations_used, fact_usage) = match lookup {
        FactLookup::NotFound { usage } => {
            log.append(EventBody::Fact(FactPayload {
                depth,
                path_id: node_id.to_string(),
                direction: direction.clone(),
                found: false,
                fact: None,
                reformulations_used: state.config.fact_retry_limit,
                usage,
            }))?;
            return log_no_fact(
                log,
                counters,
                state,
                &node_id,
                depth,
                "no verifiable fact found",
            );
        }
        FactLookup::Found {
            fact,
            reformulations_used,
            usage,
        } => (fact, reformulations_used, usage),
    };

    state.claims_used.insert(normalize_text(&fact.claim));
    log.append(EventBody::Fact(FactPayload {
        depth,
        path_id: node_id.to_string(),
        direction: direction.clone(),
        found: true,
        fact: Some(fact.clone()),
        reformulations_used,
        usage: fact_usage,
    }))?;

    // Question generation.
    let (question, question_usage) = match services.evaluator.generate_question(
        &fact,
        depth,
        &node_id,
        state.config.fact_retry_limit,
    ) {
        Ok(result) => result,
        Err(LlmError::Auth(message)) => return Err(LlmError::Auth(message).into()),
        Err(err) => {
            return log_unscored(
                log,
                counters,
                state,
                &node_id,
                depth,
                format!("question generation failed: {err}"),
                Vec::new(),
            );
        }
    };
    log.append(EventBody::Question(QuestionPayload {
        depth,
        path_id: node_id.to_string(),
        tier,
        pass,
        text: question.text.clone(),
        reference_answer: fact.reference_answer.clone(),
        usage: question_usage,
    }))?;

    // Target answer.
    let answer = match services.target.answer(&question) {
        Ok(answer) => answer,
        Err(LlmError::Auth(message)) => return Err(LlmError::Auth(message).into()),
        Err(err) => {
            return log_unscored(
                log,
                counters,
                state,
                &node_id,
                depth,
                format!("target provider failed: {err}"),
                Vec::new(),
            );
        }
    };
    log.append(EventBody::Answer(AnswerPayload {
        depth,
        path_id: node_id.to_string(),
        text: answer.text.clone(),
        usage: answer.usage,
    }))?;

    // Entailment scoring; one re-attempt before the probe goes unscored.
    let mut score = services.evaluator.score_answer(&fact, &answer.text);
    if matches!(score, Err(ref e) if !matches!(e, LlmError::Auth(_))) {
        score = services.evaluator.score_answer(&fact, &answer.text);
    }
    let (verdict, score_usage) = match score {
        Ok(result) => result,
        Err(LlmError::Auth(message)) => return Err(LlmError::Auth(message).into()),
        Err(err) => {
            return log_unscored(
                log,
                counters,
                state,
                &node_id,
                depth,
                format!("scoring failed: {err}"),
                Vec::new(),
            );
        }
    };

    let mut usage = score_usage;
    let mut child_directions = Vec::new();
    match verdict.outcome {
        VerdictOutcome::Correct => {
            counters.asked += 1;
            counters.correct += 1;
            counters.outcomes.push(true);
            // Expand the path with concepts from the answer it just gave.
            // An unexpandable path stays alive; it just has no children.
            if let Ok((concepts, concept_usage)) = services.evaluator.extract_concepts(
                &answer.text,
                services.options.concepts_per_answer,
                &state.directions_used,
            ) {
                usage.extend(concept_usage);
                for concept in concepts {
                    state.directions_used.insert(normalize_text(&concept));
                    child_directions.push(concept);
                }
            }
        }
        VerdictOutcome::Incorrect => {
            counters.asked += 1;
            counters.outcomes.push(false);
        }
        VerdictOutcome::NoFact => unreachable!("scoring never yields NO_FACT"),
    }

    {
        let node = state.nodes.get_mut(&node_id).expect("node exists");
        node.question = Some(question);
        node.answer_text = Some(answer.text);
        node.verdict = Some(verdict.clone());
        node.alive = verdict.outcome == VerdictOutcome::Correct;
        node.child_directions = child_directions.clone();
    }
    log.append(EventBody::Verdict(VerdictPayload {
        depth,
        path_id: node_id.to_string(),
        outcome: match verdict.outcome {
            VerdictOutcome::Correct => LoggedOutcome::Correct,
            VerdictOutcome::Incorrect => LoggedOutcome::Incorrect,
            VerdictOutcome::NoFact => LoggedOutcome::NoFact,
        },
        rationale: verdict.rationale,
        child_directions,
        usage,
    }))?;
    Ok(())
}

/// Collects up to `quota` distinct directions for a surviving path, topping
/// up from concept extraction when the reserve runs short.
fn directions_for_path(
    state: &mut RunState,
    services: &RunServices,
    path_id: &PathId,
    quota: u32,
    depth: u32,
) -> Vec<String> {
    if depth == 1 {
        // A branch answers about its own direction; multiple slots reuse it
        // with claim exclusions keeping the facts distinct.
        let direction = state.nodes[path_id].direction.clone();
        return vec![direction; quota as usize];
    }
    let mut directions: Vec<String> = state.nodes[path_id]
        .child_directions
        .iter()
        .take(quota as usize)
        .cloned()
        .collect();
    if directions.len() < quota as usize {
        let answer = state.nodes[path_id].answer_text.clone().unwrap_or_default();
        if !answer.is_empty() {
            for _ in 0..state.config.fact_retry_limit.max(1) {
                let need = quota as usize - directions.len();
                if need == 0 {
                    break;
                }
                match services.evaluator.extract_concepts(
                    &answer,
                    need as u32,
                    &state.directions_used,
                ) {
                    Ok((concepts, _usage)) if !concepts.is_empty() => {
                        for concept in concepts {
                            state.directions_used.insert(normalize_text(&concept));
                            state
                                .nodes
                                .get_mut(path_id)
                                .expect("node exists")
                                .child_directions
                                .push(concept.clone());
                            directions.push(concept);
                        }
                    }
                    _ => break,
                }
            }
        }
    }
    directions
}

/// Depth-1 NO_FACT probes get one replacement branch before counting against
/// the depth; returns the fresh direction if one exists.
fn replacement_branch(state: &mut RunState, services: &RunServices) -> Option<String> {
    let want = state.directions_used.len() as u32 + 1;
    let (candidates, _usage) = services
        .evaluator
        .propose_branches(&state.config.topic, want)
        .ok()?;
    for candidate in candidates {
        let key = normalize_text(&candidate);
        if key.is_empty() || state.directions_used.contains(&key) {
            continue;
        }
        state.directions_used.insert(key);
        return Some(candidate);
    }
    None
}

/// Executes one depth: allocation, probes, summary, stopping decision.
pub fn advance_depth(
    state: &mut RunState,
    services: &RunServices,
    log: &mut EventLog<'_>,
) -> Result<(), RunError> {
    debug_assert_eq!(state.status, RunStatus::Running);
    let depth = state.current_depth + 1;
    let (tier, pass) = tier_for_depth(depth, state.config.passes_per_tier)?;

    // A tier nothing serves is the domain's testing ceiling.
    if !services.facts.serves(tier) {
        state.status = RunStatus::Done(StopReason::FactExhaustion);
        return Ok(());
    }
    let survivors = state.survivors(depth);
    if survivors.is_empty() {
        state.status = RunStatus::Done(StopReason::FactExhaustion);
        return Ok(());
    }

    let n_total = state.config.questions_per_depth;
    let plan = allocate_questions(depth, n_total, &survivors, &mut state.rng)?;
    log.append(EventBody::Allocation(AllocationPayload {
        depth,
        assignments: plan
            .assignments
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        total: plan.total,
    }))?;
    services.target.begin_depth(depth, n_total);

    let mut counters = DepthCounters::new();
    for (path_id, quota) in &plan.assignments {
        let directions = directions_for_path(state, services, path_id, *quota, depth);
        for slot in 0..*quota as usize {
            let node_id = match directions.get(slot) {
                Some(direction) => {
                    if depth == 1 && slot == 0 {
                        path_id.clone()
                    } else {
                        let parent = if depth == 1 {
                            None
                        } else {
                            Some(path_id.clone())
                        };
                        state.new_node(parent, depth, direction.clone())
                    }
                }
                None => {
                    // Quota shortfall: no distinct drilling direction exists.
                    let parent = if depth == 1 {
                        None
                    } else {
                        Some(path_id.clone())
                    };
                    let node_id = state.new_node(parent, depth, String::new());
                    log_no_fact(
                        log,
                        &mut counters,
                        state,
                        &node_id,
                        depth,
                        "no distinct drilling direction available",
                    )?;
                    continue;
                }
            };
            let no_fact_before = counters.no_fact;
            run_probe(
                state,
                services,
                log,
                &mut counters,
                node_id.clone(),
                depth,
                tier,
                pass,
            )?;
            // One replacement branch for a gapped depth-1 probe.
            if depth == 1 && counters.no_fact > no_fact_before {
                if let Some(fresh) = replacement_branch(state, services) {
                    counters.no_fact = no_fact_before;
                    // Retract the placeholder verdict; the replacement node
                    // probes the fresh direction.
                    let replacement_id = state.new_node(None, depth, fresh);
                    run_probe(
                        state,
                        services,
                        log,
                        &mut counters,
                        replacement_id,
                        depth,
                        tier,
                        pass,
                    )?;
                }
            }
        }
    }

    // Infrastructure gate: too many failed probes would silently bias A(d).
    let failed_fraction = f64::from(counters.infra_failures) / f64::from(n_total);
    if counters.infra_failures > 0 && failed_fraction >= services.options.infra_tolerance {
        return Err(RunError::InfrastructureFailure {
            depth,
            failed: counters.infra_failures,
            total: n_total,
        });
    }

    if counters.asked == 0 {
        // Every probe came back without ground truth: the fact sources are
        // exhausted at this tier.
        state.status = RunStatus::Done(StopReason::FactExhaustion);
        return Ok(());
    }

    let accuracy = depth_accuracy(counters.correct, counters.asked).expect("asked >= 1");
    let survival = state.survival_so_far() * accuracy;
    state.records.push(DepthRecord {
        depth,
        asked: counters.asked,
        correct: counters.correct,
        no_fact: counters.no_fact,
        unscored: counters.unscored,
        accuracy,
        survival,
    });
    state.outcomes.push(counters.outcomes);
    log.append(EventBody::DepthSummary(DepthSummaryPayload {
        depth,
        asked: counters.asked,
        correct: counters.correct,
        no_fact: counters.no_fact,
        unscored: counters.unscored,
        accuracy,
        survival,
        rng_state: state.rng_snapshot(),
    }))?;
    log.sync()?;

    state.current_depth = depth;
    match should_stop(survival, depth, &state.config) {
        StopDecision::Continue => {}
        StopDecision::StopThreshold => state.status = RunStatus::Done(StopReason::Threshold),
        StopDecision::StopMaxDepth => state.status = RunStatus::Done(StopReason::MaxDepth),
    }
    Ok(())
}

fn preflight(config: &DepthConfig, services: &RunServices) -> Result<(), RunError> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(RunError::InvalidConfig(violations));
    }
    services
        .facts
        .preflight(&[SpecificityTier::Common, SpecificityTier::Textbook])
        .map_err(|e| RunError::PreflightFailed(e.to_string()))
}

fn seed_branches(state: &mut RunState, directions: &[String]) {
    for direction in directions {
        state.directions_used.insert(normalize_text(direction));
        state.new_node(None, 1, direction.clone());
    }
}

fn finish(
    state: &RunState,
    services: &RunServices,
    log: &mut EventLog<'_>,
) -> Result<RunReport, RunError> {
    let reason = state.stop_reason().expect("run finished");
    log.append(EventBody::Stop(StopPayload {
        reason,
        final_depth: state.records.last().map(|r| r.depth).unwrap_or(0),
    }))?;
    log.sync()?;
    Ok(report_from_events(
        log.events(),
        services.options.prices.as_ref(),
    )?)
}

/// Runs a full evaluation, streaming events into `sink`, and returns the
/// report derived from those events.
pub fn run_evaluation(
    config: &DepthConfig,
    services: &RunServices,
    sink: &mut dyn EventSink,
) -> Result<RunReport, RunError> {
    preflight(config, services)?;
    let mut log = EventLog::new(sink);
    log.append(EventBody::Config(ConfigPayload {
        config: config.clone(),
        target_model: services.target.model_id(),
        evaluator_model: services.evaluator.model_id(),
        prompt_version: crate::llm::ops::PROMPT_VERSION.to_string(),
        annotations: services.options.annotations.clone(),
    }))?;

    let n = config.questions_per_depth;
    let (directions, usage) = initial_branches(&config.topic, n, services.evaluator.as_ref())?;
    if directions.is_empty() {
        return Err(RunError::NoBranches);
    }
    log.append(EventBody::Branches(BranchesPayload {
        requested: n,
        shortfall: n - directions.len() as u32,
        directions: directions.clone(),
        usage,
    }))?;

    let mut state = RunState::new(config.clone());
    seed_branches(&mut state, &directions);

    while state.status == RunStatus::Running {
        advance_depth(&mut state, services, &mut log)?;
    }
    finish(&state, services, &mut log)
}

/// Rebuilds run state from a log prefix that ends on a clean boundary
/// (CONFIG, BRANCHES, or a DEPTH_SUMMARY).
fn rebuild_state(events: &[RunLogEvent]) -> Result<RunState, RunError> {
    let config = match &events[0].body {
        EventBody::Config(payload) => payload.config.clone(),
        _ => unreachable!("validated log starts with CONFIG"),
    };
    let mut state = RunState::new(config);
    let mut max_node: Option<u64> = None;
    for event in events {
        match &event.body {
            EventBody::Config(_) | EventBody::Allocation(_) | EventBody::Question(_) => {}
            EventBody::Branches(payload) => {
                seed_branches(&mut state, &payload.directions);
            }
            EventBody::Fact(payload) => {
                let id = PathId(payload.path_id.clone());
                state
                    .nodes
                    .entry(id.clone())
                    .or_insert_with(|| PathNode::new(id, None, payload.depth, String::new()));
                let node = state
                    .nodes
                    .get_mut(&PathId(payload.path_id.clone()))
                    .unwrap();
                node.depth = payload.depth;
                node.direction = payload.direction.clone();
                state
                    .directions_used
                    .insert(normalize_text(&payload.direction));
                if let Some(fact) = &payload.fact {
                    state.claims_used.insert(normalize_text(&fact.claim));
                }
            }
            EventBody::Answer(payload) => {
                if let Some(node) = state.nodes.get_mut(&PathId(payload.path_id.clone())) {
                    node.answer_text = Some(payload.text.clone());
                }
            }
            EventBody::Verdict(payload) => {
                let id = PathId(payload.path_id.clone());
                let node = state
                    .nodes
                    .entry(id.clone())
                    .or_insert_with(|| PathNode::new(id, None, payload.depth, String::new()));
                node.depth = payload.depth;
                match payload.outcome {
                    LoggedOutcome::Correct => {
                        node.verdict = Some(Verdict::correct(payload.rationale.clone()));
                        node.alive = true;
                    }
                    LoggedOutcome::Incorrect => {
                        node.verdict = Some(Verdict::incorrect(payload.rationale.clone()));
                        node.alive = false;
                    }
                    LoggedOutcome::NoFact => {
                        node.verdict = Some(Verdict::no_fact(payload.rationale.clone()));
                        node.alive = false;
                    }
                    LoggedOutcome::Unscored => {
                        node.unscored = true;
                        node.alive = false;
                    }
                }
                node.child_directions = payload.child_directions.clone();
                for child in &payload.child_directions {
                    state.directions_used.insert(normalize_text(child));
                }
            }
            EventBody::DepthSummary(payload) => {
                state.records.push(DepthRecord {
                    depth: payload.depth,
                    asked: payload.asked,
                    correct: payload.correct,
                    no_fact: payload.no_fact,
                    unscored: payload.unscored,
                    accuracy: payload.accuracy,
                    survival: payload.survival,
                });
                state.current_depth = payload.depth;
                state.restore_rng(payload.rng_state);
            }
            EventBody::Stop(payload) => {
                state.status = RunStatus::Done(payload.reason);
            }
        }
    }
    // Outcome vectors per depth, in event order.
    let mut outcomes: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for event in events {
        if let EventBody::Verdict(payload) = &event.body {
            match payload.outcome {
                LoggedOutcome::Correct => outcomes.entry(payload.depth).or_default().push(true),
                LoggedOutcome::Incorrect => outcomes.entry(payload.depth).or_default().push(false),
                _ => {}
            }
        }
    }
    state.outcomes = state
        .records
        .iter()
        .map(|r| outcomes.get(&r.depth).cloned().unwrap_or_default())
        .collect();
    // Node counter resumes past every id the log mentions.
    for id in state.nodes.keys() {
        if let Ok(parsed) = id.as_str().trim_start_matches('n').parse::<u64>() {
            max_node = Some(max_node.map_or(parsed, |m| m.max(parsed)));
        }
    }
    state.next_node = max_node.map_or(state.next_node, |m| (m + 1).max(state.next_node));
    // A prefix cut between the final DEPTH_SUMMARY and its STOP event must
    // not drill further: re-apply the stopping rule to the last record.
    if state.status == RunStatus::Running {
        if let Some(last) = state.records.last() {
            match should_stop(last.survival, last.depth, &state.config) {
                StopDecision::Continue => {}
                StopDecision::StopThreshold => {
                    state.status = RunStatus::Done(StopReason::Threshold)
                }
                StopDecision::StopMaxDepth => state.status = RunStatus::Done(StopReason::MaxDepth),
            }
        }
    }
    Ok(state)
}

/// Resumes a run from its event log. A complete log is replayed into a
/// report with no service calls; a truncated one is continued from the last
/// depth boundary, producing the same final report an uninterrupted run
/// would have. The sink receives the complete event stream.
pub fn resume(
    events: Vec<RunLogEvent>,
    services: &RunServices,
    sink: &mut dyn EventSink,
) -> Result<RunReport, RunError> {
    crate::runlog::validate_log(&events)?;

    if matches!(events.last().map(|e| &e.body), Some(EventBody::Stop(_))) {
        for event in &events {
            sink.append(event)?;
        }
        sink.sync()?;
        return Ok(report_from_events(
            &events,
            services.options.prices.as_ref(),
        )?);
    }

    // Cut the partial tail: keep everything through the last clean boundary.
    let boundary = events
        .iter()
        .rposition(|e| {
            matches!(
                e.body,
                EventBody::DepthSummary(_) | EventBody::Branches(_) | EventBody::Config(_)
            )
        })
        .expect("validated log has a CONFIG event");
    let prefix: Vec<RunLogEvent> = events[..=boundary].to_vec();

    let mut state = rebuild_state(&prefix)?;
    for event in &prefix {
        sink.append(event)?;
    }
    let mut log = EventLog::with_prefix(sink, prefix);

    // A log cut before BRANCHES restarts branch generation.
    if !log
        .events()
        .iter()
        .any(|e| matches!(e.body, EventBody::Branches(_)))
    {
        let n = state.config.questions_per_depth;
        let (directions, usage) =
            initial_branches(&state.config.topic, n, services.evaluator.as_ref())?;
        if directions.is_empty() {
            return Err(RunError::NoBranches);
        }
        log.append(EventBody::Branches(BranchesPayload {
            requested: n,
            shortfall: n - directions.len() as u32,
            directions: directions.clone(),
            usage,
        }))?;
        seed_branches(&mut state, &directions);
    }

    while state.status == RunStatus::Running {
        advance_depth(&mut state, services, &mut log)?;
    }
    finish(&state, services, &mut log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::UsageRecord;
    use crate::runlog::MemorySink;
    use crate::services::TargetAnswer;
    use crate::simulation::{synthetic_services, AccuracyProfile, SimMode, SyntheticEvaluator};

    #[test]
    fn initial_branches_match_worked_example() {
        let (branches, _) = initial_branches("Influenza", 3, &SyntheticEvaluator).unwrap();
        assert_eq!(
            branches,
            vec![
                "Influenza causes".to_string(),
                "Influenza symptoms".to_string(),
                "Influenza types".to_string(),
            ]
        );
    }

    /// An evaluator that can only name two distinct branches.
    struct NarrowEvaluator;

    impl Evaluator for NarrowEvaluator {
        fn model_id(&self) -> String {
            "narrow".to_string()
        }
        fn propose_branches(
            &self,
            topic: &str,
            _n: u32,
        ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
            Ok((
                vec![
                    format!("{topic} causes"),
                    format!("{topic} CAUSES"),
                    format!("{topic} types"),
                ],
                Vec::new(),
            ))
        }
        fn generate_question(
            &self,
            fact: &crate::domain::VerifiedFact,
            depth: u32,
            path_id: &PathId,
            retry_limit: u32,
        ) -> Result<(Question, Vec<UsageRecord>), LlmError> {
            SyntheticEvaluator.generate_question(fact, depth, path_id, retry_limit)
        }
        fn extract_concepts(
            &self,
            answer_text: &str,
            k: u32,
            exclude: &BTreeSet<String>,
        ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
            SyntheticEvaluator.extract_concepts(answer_text, k, exclude)
        }
        fn score_answer(
            &self,
            fact: &crate::domain::VerifiedFact,
            answer_text: &str,
        ) -> Result<(Verdict, Vec<UsageRecord>), LlmError> {
            SyntheticEvaluator.score_answer(fact, answer_text)
        }
    }

    #[test]
    fn branch_shortfall_returns_what_exists() {
        let (branches, _) = initial_branches("Topic", 5, &NarrowEvaluator).unwrap();
        assert_eq!(branches.len(), 2);
    }

    #[test]
    fn empty_topic_fails_preflight() {
        let config = DepthConfig::for_topic("");
        let profile = AccuracyProfile::uniform(1.0, SimMode::Bernoulli).unwrap();
        let services = synthetic_services(&profile, &config);
        let mut sink = MemorySink::default();
        let err = run_evaluation(&config, &services, &mut sink).unwrap_err();
        assert!(matches!(err, RunError::InvalidConfig(_)));
    }

    #[test]
    fn missing_foundational_tier_fails_preflight() {
        let config = DepthConfig::for_topic("Influenza");
        let profile = AccuracyProfile::uniform(1.0, SimMode::Bernoulli).unwrap();
        let mut services = synthetic_services(&profile, &config);
        services.facts = SourceRegistry::new();
        let mut sink = MemorySink::default();
        let err = run_evaluation(&config, &services, &mut sink).unwrap_err();
        assert!(matches!(err, RunError::PreflightFailed(_)));
    }

    #[test]
    fn all_incorrect_depth_one_stops_at_threshold_with_zero_survival() {
        let config = DepthConfig {
            questions_per_depth: 10,
            ..DepthConfig::for_topic("Collapse")
        };
        let profile = AccuracyProfile::uniform(0.0, SimMode::ExactFraction).unwrap();
        let services = synthetic_services(&profile, &config);
        let mut sink = MemorySink::default();
        let report = run_evaluation(&config, &services, &mut sink).unwrap();
        assert_eq!(report.stop_reason, StopReason::Threshold);
        assert_eq!(report.max_depth, 1);
        assert_eq!(report.series.records[0].survival, 0.0);
        assert_eq!(report.series.evd, 0.0);
    }

    #[test]
    fn uncovered_deep_tier_ends_with_fact_exhaustion() {
        // Sources only serve COMMON and TEXTBOOK; with Q=1 the run should
        // hit PROFESSIONAL at depth 3 and stop for fact exhaustion.
        struct ShallowSource(crate::simulation::SyntheticFactSource);
        impl crate::facts::FactSource for ShallowSource {
            fn descriptor(&self) -> crate::facts::FactSourceDescriptor {
                let mut descriptor = self.0.descriptor();
                descriptor.tiers_served = [SpecificityTier::Common, SpecificityTier::Textbook]
                    .into_iter()
                    .collect();
                descriptor
            }
            fn candidates(
                &self,
                query: &FactQuery,
                reformulation: u32,
            ) -> Result<crate::facts::SourceBatch, FactError> {
                self.0.candidates(query, reformulation)
            }
        }
        let config = DepthConfig {
            questions_per_depth: 6,
            passes_per_tier: 1,
            ..DepthConfig::for_topic("Shallow")
        };
        let profile = AccuracyProfile::uniform(1.0, SimMode::ExactFraction).unwrap();
        let mut services = synthetic_services(&profile, &config);
        let mut registry = SourceRegistry::new();
        registry.register(Arc::new(ShallowSource(
            crate::simulation::SyntheticFactSource::new(config.seed, 0.0),
        )));
        services.facts = registry;
        let mut sink = MemorySink::default();
        let report = run_evaluation(&config, &services, &mut sink).unwrap();
        assert_eq!(report.stop_reason, StopReason::FactExhaustion);
        assert_eq!(report.max_depth, 2);
    }

    #[test]
    fn infrastructure_failures_beyond_tolerance_abort_the_run() {
        struct BrokenTarget;
        impl TargetModel for BrokenTarget {
            fn model_id(&self) -> String {
                "broken".to_string()
            }
            fn answer(&self, _question: &Question) -> Result<TargetAnswer, LlmError> {
                Err(LlmError::Provider("connection refused".to_string()))
            }
        }
        let config = DepthConfig {
            questions_per_depth: 10,
            ..DepthConfig::for_topic("Broken")
        };
        let profile = AccuracyProfile::uniform(1.0, SimMode::Bernoulli).unwrap();
        let mut services = synthetic_services(&profile, &config);
        services.target = Arc::new(BrokenTarget);
        let mut sink = MemorySink::default();
        let err = run_evaluation(&config, &services, &mut sink).unwrap_err();
        assert!(matches!(
            err,
            RunError::InfrastructureFailure { depth: 1, .. }
        ));
    }

    #[test]
    fn dead_paths_never_receive_questions() {
        let config = DepthConfig {
            questions_per_depth: 12,
            ..DepthConfig::for_topic("Audit")
        };
        let profile = AccuracyProfile::graded(SimMode::ExactFraction);
        let services = synthetic_services(&profile, &config);
        let mut sink = MemorySink::default();
        run_evaluation(&config, &services, &mut sink).unwrap();

        // Collect per-path verdicts, then check allocations only name paths
        // that were alive (branch nodes at depth 1, correct parents after).
        let mut correct_by_depth: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
        for event in &sink.events {
            if let EventBody::Verdict(v) = &event.body {
                if v.outcome == LoggedOutcome::Correct {
                    correct_by_depth
                        .entry(v.depth)
                        .or_default()
                        .insert(v.path_id.clone());
                }
            }
        }
        for event in &sink.events {
            if let EventBody::Allocation(a) = &event.body {
                if a.depth == 1 {
                    continue;
                }
                let survivors = correct_by_depth
                    .get(&(a.depth - 1))
                    .cloned()
                    .unwrap_or_default();
                for path in a.assignments.keys() {
                    assert!(
                        survivors.contains(path),
                        "depth {} allocated to non-surviving path {path}",
                        a.depth
                    );
                }
            }
        }
    }

    #[test]
    fn depth_barrier_holds_in_the_event_log() {
        let config = DepthConfig {
            questions_per_depth: 8,
            ..DepthConfig::for_topic("Barrier")
        };
        let profile = AccuracyProfile::graded(SimMode::ExactFraction);
        let services = synthetic_services(&profile, &config);
        let mut sink = MemorySink::default();
        run_evaluation(&config, &services, &mut sink).unwrap();
        let mut summarized_through = 0u32;
        for event in &sink.events {
            match &event.body {
                EventBody::Allocation(a) => assert_eq!(a.depth, summarized_through + 1),
                EventBody::Fact(f) => assert_eq!(f.depth, summarized_through + 1),
                EventBody::DepthSummary(s) => {
                    assert_eq!(s.depth, summarized_through + 1);
                    summarized_through = s.depth;
                }
                _ => {}
            }
        }
    }

    #[test]
    fn questions_carry_the_tier_of_their_depth() {
        let config = DepthConfig {
            questions_per_depth: 6,
            passes_per_tier: 2,
            ..DepthConfig::for_topic("Tiers")
        };
        let profile = AccuracyProfile::graded(SimMode::ExactFraction);
        let services = synthetic_services(&profile, &config);
        let mut sink = MemorySink::default();
        run_evaluation(&config, &services, &mut sink).unwrap();
        let mut seen = 0;
        for event in &sink.events {
            if let EventBody::Question(q) = &event.body {
                let (tier, pass) = tier_for_depth(q.depth, 2).unwrap();
                assert_eq!(q.tier, tier);
                assert_eq!(q.pass, pass);
                assert!(crate::llm::ops::has_factual_stem(&q.text));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }
}
