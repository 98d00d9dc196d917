//! Run reports derived from the event log (the log is the single source of
//! truth), renderers for markdown, JSON, and plot-ready CSV, and offline
//! evaluator-agreement analysis.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{tier_for_depth, DepthConfig, SpecificityTier};
use crate::llm::{accumulate_cost, LlmError, PriceTable, UsageRecord, UsageRole};
use crate::runlog::{EventBody, LoggedOutcome, RunLogEvent};
use crate::stats::{
    bootstrap_evd_se, cohens_kappa, error_analysis, wilson_interval, AgreementTable, DepthRecord,
    ErrorAnalysis, ScoredProbe, StopReason, SurvivalSeries,
};
use crate::util::fnv1a64;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("log has no CONFIG event")]
    MissingConfig,
    #[error("log has no STOP event; resume the run first")]
    IncompleteRun,
    #[error("verdict files cover different question ids: {0}")]
    MismatchedIds(String),
    #[error("verdict file line {line}: {reason}")]
    MalformedVerdictFile { line: usize, reason: String },
    #[error("agreement needs at least two raters")]
    TooFewRaters,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAccuracy {
    pub tier: SpecificityTier,
    pub asked: u32,
    pub correct: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilsonRow {
    pub depth: u32,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// False when no price table was supplied; token totals still count.
    pub priced: bool,
    pub per_role_usd: BTreeMap<UsageRole, f64>,
    pub total_usd: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Everything a finished run reports; reproducible from the run log alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model_id: String,
    pub evaluator_model_id: String,
    pub topic: String,
    pub config: DepthConfig,
    pub stop_reason: StopReason,
    pub max_depth: u32,
    pub series: SurvivalSeries,
    pub per_tier: Vec<TierAccuracy>,
    pub overall_asked: u32,
    pub overall_correct: u32,
    pub overall_accuracy: f64,
    pub wilson: Vec<WilsonRow>,
    pub error_analysis: ErrorAnalysis,
    pub cost: CostReport,
}

impl RunReport {
    pub fn tier_accuracy(&self, tier: SpecificityTier) -> Option<&TierAccuracy> {
        self.per_tier.iter().find(|row| row.tier == tier)
    }
}

fn collect_usage(events: &[RunLogEvent]) -> Vec<UsageRecord> {
    let mut usage = Vec::new();
    for event in events {
        match &event.body {
            EventBody::Branches(p) => usage.extend(p.usage.iter().cloned()),
            EventBody::Fact(p) => usage.extend(p.usage.iter().cloned()),
            EventBody::Question(p) => usage.extend(p.usage.iter().cloned()),
            EventBody::Answer(p) => usage.extend(p.usage.iter().cloned()),
            EventBody::Verdict(p) => usage.extend(p.usage.iter().cloned()),
            _ => {}
        }
    }
    usage
}

/// Derives the full report from a finished run's events. Every statistic
/// (survival, EVD, bootstrap SE, tier accuracies, Wilson intervals, error
/// distribution, cost) comes from the log, so `report` on a log file yields
/// byte-identical numbers to the report the run returned.
pub fn report_from_events(
    events: &[RunLogEvent],
    prices: Option<&PriceTable>,
) -> Result<RunReport, ReportError> {
    let config_payload = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::Config(payload) => Some(payload.clone()),
            _ => None,
        })
        .ok_or(ReportError::MissingConfig)?;
    let config = config_payload.config;

    let stop = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::Stop(payload) => Some(payload.clone()),
            _ => None,
        })
        .ok_or(ReportError::IncompleteRun)?;

    let mut records: Vec<DepthRecord> = Vec::new();
    for event in events {
        if let EventBody::DepthSummary(p) = &event.body {
            records.push(DepthRecord {
                depth: p.depth,
                asked: p.asked,
                correct: p.correct,
                no_fact: p.no_fact,
                unscored: p.unscored,
                accuracy: p.accuracy,
                survival: p.survival,
            });
        }
    }
    let mut series = SurvivalSeries::from_records(records, stop.reason);

    // Bootstrap SE over per-depth outcome vectors rebuilt from verdicts.
    if config.bootstrap_replicates > 0 && !series.records.is_empty() {
        let mut outcomes: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
        for event in events {
            if let EventBody::Verdict(p) = &event.body {
                match p.outcome {
                    LoggedOutcome::Correct => outcomes.entry(p.depth).or_default().push(true),
                    LoggedOutcome::Incorrect => outcomes.entry(p.depth).or_default().push(false),
                    _ => {}
                }
            }
        }
        let vectors: Vec<Vec<bool>> = series
            .records
            .iter()
            .map(|r| outcomes.get(&r.depth).cloned().unwrap_or_default())
            .collect();
        if vectors.iter().all(|v| !v.is_empty()) {
            let seed = fnv1a64(&[&config.seed.to_le_bytes(), b"bootstrap"]);
            series.evd_se = Some(bootstrap_evd_se(
                &vectors,
                config.bootstrap_replicates,
                seed,
            )?);
        }
    }

    // Pooled per-tier and overall accuracy.
    let mut tier_totals: BTreeMap<SpecificityTier, (u32, u32)> = BTreeMap::new();
    let mut overall_asked = 0u32;
    let mut overall_correct = 0u32;
    for record in &series.records {
        let tier = tier_for_depth(record.depth, config.passes_per_tier)
            .map(|(t, _)| t)
            .unwrap_or(SpecificityTier::CuttingEdge);
        let entry = tier_totals.entry(tier).or_insert((0, 0));
        entry.0 += record.asked;
        entry.1 += record.correct;
        overall_asked += record.asked;
        overall_correct += record.correct;
    }
    let per_tier: Vec<TierAccuracy> = tier_totals
        .into_iter()
        .map(|(tier, (asked, correct))| TierAccuracy {
            tier,
            asked,
            correct,
            accuracy: if asked > 0 {
                f64::from(correct) / f64::from(asked)
            } else {
                0.0
            },
        })
        .collect();
    let overall_accuracy = if overall_asked > 0 {
        f64::from(overall_correct) / f64::from(overall_asked)
    } else {
        0.0
    };

    let wilson = series
        .records
        .iter()
        .map(|r| {
            wilson_interval(r.correct, r.asked, config.confidence_level).map(|(lower, upper)| {
                WilsonRow {
                    depth: r.depth,
                    lower,
                    upper,
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let probes: Vec<ScoredProbe> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Verdict(p) => match p.outcome {
                LoggedOutcome::Correct => Some(ScoredProbe {
                    depth: p.depth,
                    outcome: crate::domain::VerdictOutcome::Correct,
                }),
                LoggedOutcome::Incorrect => Some(ScoredProbe {
                    depth: p.depth,
                    outcome: crate::domain::VerdictOutcome::Incorrect,
                }),
                _ => None,
            },
            _ => None,
        })
        .collect();
    let errors = error_analysis(&probes, config.passes_per_tier);

    let usage = collect_usage(events);
    let cost = match prices {
        Some(prices) => {
            let breakdown = accumulate_cost(&usage, prices)?;
            CostReport {
                priced: true,
                per_role_usd: breakdown.per_role,
                total_usd: breakdown.total_usd,
                prompt_tokens: breakdown.prompt_tokens,
                completion_tokens: breakdown.completion_tokens,
            }
        }
        None => CostReport {
            priced: false,
            per_role_usd: BTreeMap::new(),
            total_usd: 0.0,
            prompt_tokens: usage.iter().map(|u| u.prompt_tokens).sum(),
            completion_tokens: usage.iter().map(|u| u.completion_tokens).sum(),
        },
    };

    Ok(RunReport {
        model_id: config_payload.target_model,
        evaluator_model_id: config_payload.evaluator_model,
        topic: config.topic.clone(),
        max_depth: series.max_depth(),
        stop_reason: stop.reason,
        series,
        per_tier,
        overall_asked,
        overall_correct,
        overall_accuracy,
        wilson,
        error_analysis: errors,
        cost,
        config,
    })
}

/// Constant-sample audit: at every recorded depth the scored, fact-less, and
/// unscored probes must add up to N exactly.
pub fn audit_constant_n(events: &[RunLogEvent]) -> Result<(), String> {
    let n = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::Config(p) => Some(p.config.questions_per_depth),
            _ => None,
        })
        .ok_or_else(|| "no CONFIG event".to_string())?;
    let mut checked = 0;
    for event in events {
        if let EventBody::DepthSummary(p) = &event.body {
            let total = p.asked + p.no_fact + p.unscored;
            if total != n {
                return Err(format!(
                    "depth {}: asked {} + no_fact {} + unscored {} = {total}, want {n}",
                    p.depth, p.asked, p.no_fact, p.unscored
                ));
            }
            checked += 1;
        }
    }
    if checked == 0 {
        return Err("no DEPTH_SUMMARY events to audit".to_string());
    }
    Ok(())
}

fn pct(value: f64) -> String {
    format!("{:.0}%", value * 100.0)
}

fn tier_cell(report: &RunReport, tier: SpecificityTier) -> String {
    match report.tier_accuracy(tier) {
        Some(row) if row.asked > 0 => pct(row.accuracy),
        // The run never reached this tier.
        _ => "--".to_string(),
    }
}

/// Markdown report: the headline row mirrors the cross-model comparison
/// table (EVD to two decimals, whole-point percentages, `--` for tiers the
/// run never reached), followed by the survival curve, error distribution,
/// and cost sections.
pub fn render_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# Knowledge depth report\n\n");
    out.push_str("| Model | Domain | EVD | Max D | Acc. | COMMON | TEXTBOOK | PROFESSIONAL |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    out.push_str(&format!(
        "| {} | {} | {:.2} | {} | {} | {} | {} | {} |\n\n",
        report.model_id,
        report.topic,
        report.series.evd,
        report.max_depth,
        pct(report.overall_accuracy),
        tier_cell(report, SpecificityTier::Common),
        tier_cell(report, SpecificityTier::Textbook),
        tier_cell(report, SpecificityTier::Professional),
    ));
    out.push_str(&format!(
        "Stop reason: {} | EVD: {:.2}{} | Seed: {}\n\n",
        report.stop_reason,
        report.series.evd,
        report
            .series
            .evd_se
            .map(|se| format!(" (bootstrap SE {se:.3})"))
            .unwrap_or_default(),
        report.config.seed,
    ));

    out.push_str("## Survival by depth\n\n");
    out.push_str("| Depth | Tier | Asked | Correct | No fact | Unscored | A(d) | S(d) | CI low | CI high |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for (record, wilson) in report.series.records.iter().zip(&report.wilson) {
        let tier = tier_for_depth(record.depth, report.config.passes_per_tier)
            .map(|(t, _)| t.name())
            .unwrap_or("?");
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            record.depth,
            tier,
            record.asked,
            record.correct,
            record.no_fact,
            record.unscored,
            pct(record.accuracy),
            pct(record.survival),
            pct(wilson.lower),
            pct(wilson.upper),
        ));
    }
    out.push('\n');

    out.push_str("## Errors by tier\n\n");
    if report.error_analysis.total_errors == 0 {
        out.push_str("No incorrect answers recorded.\n\n");
    } else {
        out.push_str("| Tier | Errors | Share |\n|---|---|---|\n");
        for row in &report.error_analysis.per_tier {
            if row.errors > 0 {
                out.push_str(&format!(
                    "| {} | {} | {:.0}% |\n",
                    row.tier, row.errors, row.percentage
                ));
            }
        }
        if let Some(mean) = report.error_analysis.mean_error_depth {
            out.push_str(&format!("\nMean error depth: {mean:.1}\n"));
        }
        out.push('\n');
    }

    out.push_str("## Cost\n\n");
    if report.cost.priced {
        for (role, usd) in &report.cost.per_role_usd {
            out.push_str(&format!("- {role}: ${usd:.4}\n"));
        }
        out.push_str(&format!("- total: ${:.4}\n", report.cost.total_usd));
    } else {
        out.push_str(&format!(
            "- tokens: {} prompt, {} completion (no price table supplied)\n",
            report.cost.prompt_tokens, report.cost.completion_tokens
        ));
    }
    out
}

/// Stable JSON rendering; round-trips to an equal `RunReport`.
pub fn render_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Plot-ready CSV: one row per depth with survival and Wilson bounds.
pub fn render_csv(report: &RunReport) -> String {
    let mut out = String::from("depth,asked,correct,accuracy,survival,wilson_lower,wilson_upper\n");
    for (record, wilson) in report.series.records.iter().zip(&report.wilson) {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            record.depth,
            record.asked,
            record.correct,
            record.accuracy,
            record.survival,
            wilson.lower,
            wilson.upper,
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

pub fn render(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => render_csv(report),
    }
}

/// One rater's verdict file: `question_id,verdict` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterVerdicts {
    pub name: String,
    pub verdicts: BTreeMap<String, bool>,
}

/// Parses a verdict CSV. A `question_id,verdict` header row is optional;
/// verdicts must be CORRECT or INCORRECT.
pub fn parse_verdict_csv(name: &str, text: &str) -> Result<RaterVerdicts, ReportError> {
    let mut verdicts = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.eq_ignore_ascii_case("question_id,verdict")) {
            continue;
        }
        let Some((id, verdict)) = line.split_once(',') else {
            return Err(ReportError::MalformedVerdictFile {
                line: idx + 1,
                reason: "expected question_id,verdict".to_string(),
            });
        };
        let correct = match verdict.trim() {
            "CORRECT" => true,
            "INCORRECT" => false,
            other => {
                return Err(ReportError::MalformedVerdictFile {
                    line: idx + 1,
                    reason: format!("verdict must be CORRECT or INCORRECT, got {other}"),
                })
            }
        };
        verdicts.insert(id.trim().to_string(), correct);
    }
    Ok(RaterVerdicts {
        name: name.to_string(),
        verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub table: AgreementTable,
    pub observed_agreement: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub pairwise: Vec<PairAgreement>,
    /// Fraction of items every rater scored identically.
    pub unanimous_fraction: f64,
}

/// Pairwise observed agreement and kappa plus the unanimous fraction across
/// all raters. Every file must cover exactly the same question ids.
pub fn agreement_report(raters: &[RaterVerdicts]) -> Result<AgreementReport, ReportError> {
    if raters.len() < 2 {
        return Err(ReportError::TooFewRaters);
    }
    let ids: BTreeSet<&String> = raters[0].verdicts.keys().collect();
    for rater in &raters[1..] {
        let other: BTreeSet<&String> = rater.verdicts.keys().collect();
        if other != ids {
            let missing: Vec<&str> = ids
                .symmetric_difference(&other)
                .take(5)
                .map(|s| s.as_str())
                .collect();
            return Err(ReportError::MismatchedIds(format!(
                "{} vs {}: e.g. {:?}",
                raters[0].name, rater.name, missing
            )));
        }
    }

    let mut pairwise = Vec::new();
    for a in 0..raters.len() {
        for b in (a + 1)..raters.len() {
            let mut table = AgreementTable {
                both_yes: 0,
                yes_no: 0,
                no_yes: 0,
                both_no: 0,
            };
            for id in &ids {
                match (raters[a].verdicts[*id], raters[b].verdicts[*id]) {
                    (true, true) => table.both_yes += 1,
                    (true, false) => table.yes_no += 1,
                    (false, true) => table.no_yes += 1,
                    (false, false) => table.both_no += 1,
                }
            }
            pairwise.push(PairAgreement {
                rater_a: raters[a].name.clone(),
                rater_b: raters[b].name.clone(),
                observed_agreement: table.observed_agreement(),
                kappa: cohens_kappa(&table)?,
                table,
            });
        }
    }

    let unanimous = ids
        .iter()
        .filter(|id| {
            let first = raters[0].verdicts[**id];
            raters.iter().all(|r| r.verdicts[**id] == first)
        })
        .count();
    Ok(AgreementReport {
        items: ids.len(),
        pairwise,
        unanimous_fraction: unanimous as f64 / ids.len() as f64,
    })
}

pub fn render_agreement_markdown(report: &AgreementReport) -> String {
    let mut out = String::new();
    out.push_str("# Evaluator agreement\n\n");
    out.push_str("| Evaluator pair | Agreement | Cohen's kappa |\n|---|---|---|\n");
    for pair in &report.pairwise {
        out.push_str(&format!(
            "| {} vs {} | {:.0}% | {:.2} |\n",
            pair.rater_a,
            pair.rater_b,
            pair.observed_agreement * 100.0,
            pair.kappa
        ));
    }
    out.push_str(&format!(
        "\nUnanimous across all raters: {:.0}% of {} items\n",
        report.unanimous_fraction * 100.0,
        report.items
    ));
    out
}
