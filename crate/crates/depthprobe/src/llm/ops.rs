//! The evaluator prompt contracts: branch proposal, difficulty-constrained
//! question generation, concept extraction, and entailment scoring.
//!
//! Prompt templates are original and versioned here so runs remain comparable
//! across releases. Contract checks (question stems, concept substrings,
//! strict verdict parsing) are enforced on the evaluator's output, not
//! trusted from it.

use std::collections::BTreeSet;

use crate::domain::{PathId, Question, Verdict, VerifiedFact};
use crate::llm::{LlmClient, LlmError};
use crate::util::{contains_ci, normalize_text};

/// Bumped whenever any template below changes.
pub const PROMPT_VERSION: &str = "prompts-v1";

/// Every generated question must open with one of these stems.
pub const FACTUAL_STEMS: [&str; 7] = [
    "What is", "What are", "Which", "Name the", "Who", "When", "Where",
];

pub const BRANCH_SYSTEM_PROMPT: &str = "You propose diverse drilling directions for probing \
knowledge of a topic. Reply with one short direction per line, no numbering, each naming a \
distinct facet of the topic.";

pub const QUESTION_SYSTEM_PROMPT: &str = "You write exactly one factual quiz question grounded \
in a supplied reference claim. The question must begin with one of: What is, What are, Which, \
Name the, Who, When, Where. It must be answerable by the key answer alone. Reply with the \
question only.";

pub const CONCEPT_SYSTEM_PROMPT: &str = "You extract short noun phrases worth drilling into \
from an answer. Reply with one phrase per line, most salient first. Every phrase must appear \
verbatim in the answer.";

pub const SCORING_SYSTEM_PROMPT: &str = "You are an entailment checker. Decide whether the \
answer contains the key factual claim, regardless of verbosity or formatting. Do not judge \
whether the claim is true. The first line of your reply must be exactly CORRECT or INCORRECT. \
You may add a short rationale on the following lines.";

/// True when the text opens with a factual stem.
pub fn has_factual_stem(text: &str) -> bool {
    let trimmed = text.trim_start();
    FACTUAL_STEMS.iter().any(|stem| trimmed.starts_with(stem))
}

fn response_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            line.trim()
                .trim_start_matches(['-', '*', '•'])
                .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .to_string()
        })
        .filter(|line| !line.is_empty())
        .collect()
}

/// Asks the evaluator for `n` initial drilling directions on a topic.
/// Duplicates (by normalized text) are dropped; the caller decides how to
/// handle a shortfall.
pub fn propose_branches(
    evaluator: &LlmClient,
    topic: &str,
    n: u32,
) -> Result<Vec<String>, LlmError> {
    if topic.trim().is_empty() {
        return Err(LlmError::InvalidRequest("topic is empty".to_string()));
    }
    let user = format!(
        "Topic: {topic}\nPropose {n} distinct drilling directions (for example: causes, \
symptoms, types, history, mechanisms). One per line."
    );
    let completion = evaluator.prompt(BRANCH_SYSTEM_PROMPT, &user, 512, 0.0)?;
    let mut seen = BTreeSet::new();
    let mut directions = Vec::new();
    for line in response_lines(&completion.text) {
        let key = normalize_text(&line);
        if key.is_empty() || !seen.insert(key) {
            continue;
        }
        directions.push(line);
        if directions.len() as u32 == n {
            break;
        }
    }
    Ok(directions)
}

/// Generates a question for a verified fact at the fact's tier. The stem
/// contract is checked on the reply; a violating reply is regenerated up to
/// `retry_limit` times before the call fails.
pub fn generate_question(
    evaluator: &LlmClient,
    fact: &VerifiedFact,
    depth: u32,
    path_id: &PathId,
    retry_limit: u32,
) -> Result<Question, LlmError> {
    let user = format!(
        "Reference claim: {claim}\nKey answer: {answer}\nSpecificity tier: {tier}\n\
Write one question at this tier whose correct answer is the key answer.",
        claim = fact.claim,
        answer = fact.reference_answer,
        tier = fact.tier,
    );
    let attempts = retry_limit + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        let completion = evaluator.prompt(QUESTION_SYSTEM_PROMPT, &user, 256, 0.0)?;
        let text = completion.text.trim().to_string();
        if has_factual_stem(&text) {
            return Ok(Question {
                text,
                reference: fact.clone(),
                depth,
                path_id: path_id.clone(),
                tier: fact.tier,
            });
        }
        last = text;
    }
    Err(LlmError::GenerationFailed {
        attempts,
        reason: format!("no factual stem in: {last}"),
    })
}

/// Extracts up to `k` drilling directions from an answer. Phrases the
/// evaluator invents (absent from the answer, case-insensitively) are
/// filtered out; phrases already used in the run are skipped. Order follows
/// the evaluator's salience ranking.
pub fn extract_concepts(
    evaluator: &LlmClient,
    answer_text: &str,
    k: u32,
    exclude: &BTreeSet<String>,
) -> Result<Vec<String>, LlmError> {
    if answer_text.trim().is_empty() {
        return Err(LlmError::InvalidRequest("answer text is empty".to_string()));
    }
    if k == 0 {
        return Err(LlmError::InvalidRequest("k must be at least 1".to_string()));
    }
    let user = format!("Answer:\n{answer_text}\nList up to {k} concepts.");
    let completion = evaluator.prompt(CONCEPT_SYSTEM_PROMPT, &user, 256, 0.0)?;
    let mut seen = BTreeSet::new();
    let mut concepts = Vec::new();
    for line in response_lines(&completion.text) {
        if !contains_ci(answer_text, &line) {
            continue;
        }
        let key = normalize_text(&line);
        if key.is_empty() || exclude.contains(&key) || !seen.insert(key) {
            continue;
        }
        concepts.push(line);
        if concepts.len() as u32 == k {
            break;
        }
    }
    if concepts.is_empty() {
        return Err(LlmError::NoConcepts);
    }
    Ok(concepts)
}

/// Scores an answer against a verified fact by entailment. The evaluator sees
/// only the key claim and the answer; its first line must be CORRECT or
/// INCORRECT and is parsed strictly. One unparseable reply is retried; a
/// second one is an evaluator error (the caller logs the probe as unscored).
pub fn score_answer(
    evaluator: &LlmClient,
    fact: &VerifiedFact,
    answer_text: &str,
) -> Result<Verdict, LlmError> {
    if fact.reference_answer.trim().is_empty() {
        return Err(LlmError::InvalidRequest(
            "fact has no reference answer".to_string(),
        ));
    }
    if answer_text.trim().is_empty() {
        return Ok(Verdict::incorrect(Some("empty answer".to_string())));
    }
    let user = format!(
        "Key claim: {claim}\nAnswer:\n{answer}\nDoes the answer contain the key claim?",
        claim = fact.reference_answer,
        answer = answer_text,
    );
    let mut last = String::new();
    for _ in 0..2 {
        let completion = evaluator.prompt(SCORING_SYSTEM_PROMPT, &user, 128, 0.0)?;
        let mut lines = completion
            .text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty());
        let verdict_line = lines.next().unwrap_or("");
        let rationale = {
            let rest: Vec<&str> = lines.collect();
            if rest.is_empty() {
                None
            } else {
                Some(rest.join(" "))
            }
        };
        match verdict_line {
            "CORRECT" => return Ok(Verdict::correct(rationale)),
            "INCORRECT" => return Ok(Verdict::incorrect(rationale)),
            other => last = other.to_string(),
        }
    }
    Err(LlmError::Evaluator(format!(
        "unparseable verdict line: {last}"
    )))
}
