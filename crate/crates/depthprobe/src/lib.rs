//! Adaptive knowledge-depth probing for language models.
//!
//! The engine drills into a topic by asking a target model questions built
//! from independently verified facts, extracting concepts from each correct
//! answer, and following those concepts one level deeper. Question difficulty
//! is tied to depth through specificity tiers, every depth asks a constant
//! number of questions, and the run is summarized with cumulative survival
//! statistics (per-depth accuracy, survival `S(d)`, expected valid depth).
//!
//! Module map:
//!
//! - [`domain`] — tiers, run configuration, facts, questions, verdicts
//! - [`allocation`] — distributing N questions across surviving paths
//! - [`stats`] — survival math, Wilson intervals, bootstrap SE, Cohen's kappa
//! - [`transport`] — HTTP plumbing with record/replay cassettes
//! - [`facts`] — tier-routed fact sources (encyclopedia, retrieval search)
//! - [`llm`] — chat providers, retries, prompt contracts, cost accounting
//! - [`runlog`] — append-only JSONL event log with resume support
//! - [`services`] — the target-model and evaluator traits the engine drives
//! - [`orchestrator`] — the depth loop: allocate, probe, score, expand, stop
//! - [`simulation`] — synthetic services for offline runs and ablation sweeps
//! - [`report`] — run reports, renderers, and evaluator-agreement analysis
//! - [`settings`] — config-file loading and CLI override merging

pub mod allocation;
pub mod domain;
pub mod facts;
pub mod llm;
pub mod orchestrator;
pub mod report;
pub mod runlog;
pub mod services;
pub mod settings;
pub mod simulation;
pub mod stats;
pub mod transport;
pub mod util;

pub use domain::{DepthConfig, Question, SpecificityTier, Verdict, VerdictOutcome, VerifiedFact};
pub use report::RunReport;
pub use stats::{DepthRecord, StopReason, SurvivalSeries};
