//! The two model-facing services the engine drives: the target model under
//! evaluation and the evaluator that generates questions, extracts concepts,
//! and scores answers. Live adapters wrap [`LlmClient`]s; offline stand-ins
//! live in [`crate::simulation`].

use std::collections::BTreeSet;

use crate::domain::{PathId, Question, Verdict, VerifiedFact};
use crate::llm::{ops, LlmClient, LlmError, UsageRecord};

/// An answer from the target model plus the token usage it cost.
#[derive(Debug, Clone)]
pub struct TargetAnswer {
    pub text: String,
    pub usage: Vec<UsageRecord>,
}

/// The model whose knowledge depth is being measured.
pub trait TargetModel: Send + Sync {
    fn model_id(&self) -> String;

    /// Called once per depth after allocation, before any question is asked.
    /// Lets deterministic stand-ins plan a whole depth's outcomes.
    fn begin_depth(&self, _depth: u32, _planned_questions: u32) {}

    /// Answers the question verbatim; no system steering.
    fn answer(&self, question: &Question) -> Result<TargetAnswer, LlmError>;
}

/// The evaluator model: proposes branches, generates questions, extracts
/// concepts, and scores answers by entailment.
pub trait Evaluator: Send + Sync {
    fn model_id(&self) -> String;

    fn propose_branches(
        &self,
        topic: &str,
        n: u32,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError>;

    fn generate_question(
        &self,
        fact: &VerifiedFact,
        depth: u32,
        path_id: &PathId,
        retry_limit: u32,
    ) -> Result<(Question, Vec<UsageRecord>), LlmError>;

    fn extract_concepts(
        &self,
        answer_text: &str,
        k: u32,
        exclude: &BTreeSet<String>,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError>;

    fn score_answer(
        &self,
        fact: &VerifiedFact,
        answer_text: &str,
    ) -> Result<(Verdict, Vec<UsageRecord>), LlmError>;
}

/// Target model backed by a chat provider. The prompt is the question text
/// alone; the model is evaluated as-is.
pub struct LlmTarget {
    client: LlmClient,
    max_tokens: u32,
}

impl LlmTarget {
    pub fn new(client: LlmClient) -> LlmTarget {
        LlmTarget {
            client,
            max_tokens: 1024,
        }
    }
}

impl TargetModel for LlmTarget {
    fn model_id(&self) -> String {
        self.client.model_id().to_string()
    }

    fn answer(&self, question: &Question) -> Result<TargetAnswer, LlmError> {
        let completion = self
            .client
            .prompt("", &question.text, self.max_tokens, 0.0)?;
        Ok(TargetAnswer {
            text: completion.text,
            usage: self.client.drain_usage(),
        })
    }
}

/// Evaluator backed by a chat provider through the prompt contracts in
/// [`ops`]. All calls run at temperature zero.
pub struct LlmEvaluator {
    client: LlmClient,
}

impl LlmEvaluator {
    pub fn new(client: LlmClient) -> LlmEvaluator {
        LlmEvaluator { client }
    }
}

impl Evaluator for LlmEvaluator {
    fn model_id(&self) -> String {
        self.client.model_id().to_string()
    }

    fn propose_branches(
        &self,
        topic: &str,
        n: u32,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
        let branches = ops::propose_branches(&self.client, topic, n)?;
        Ok((branches, self.client.drain_usage()))
    }

    fn generate_question(
        &self,
        fact: &VerifiedFact,
        depth: u32,
        path_id: &PathId,
        retry_limit: u32,
    ) -> Result<(Question, Vec<UsageRecord>), LlmError> {
        let question = ops::generate_question(&self.client, fact, depth, path_id, retry_limit)?;
        Ok((question, self.client.drain_usage()))
    }

    fn extract_concepts(
        &self,
        answer_text: &str,
        k: u32,
        exclude: &BTreeSet<String>,
    ) -> Result<(Vec<String>, Vec<UsageRecord>), LlmError> {
        let concepts = ops::extract_concepts(&self.client, answer_text, k, exclude)?;
        Ok((concepts, self.client.drain_usage()))
    }

    fn score_answer(
        &self,
        fact: &VerifiedFact,
        answer_text: &str,
    ) -> Result<(Verdict, Vec<UsageRecord>), LlmError> {
        let verdict = ops::score_answer(&self.client, fact, answer_text)?;
        Ok((verdict, self.client.drain_usage()))
    }
}
