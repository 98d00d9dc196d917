//! Survival statistics: per-depth accuracy, cumulative survival, expected
//! valid depth, the stopping rule, Wilson score intervals, bootstrap standard
//! errors for EVD, Cohen's kappa, and per-tier error analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{tier_for_depth, DepthConfig, SpecificityTier, VerdictOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("asked must be at least 1")]
    ZeroAsked,
    #[error("correct ({correct}) exceeds asked ({asked})")]
    CorrectExceedsAsked { correct: u32, asked: u32 },
    #[error("accuracy {0} outside [0,1]")]
    AccuracyOutOfRange(f64),
    #[error("confidence level must lie in (0,1)")]
    InvalidConfidence,
    #[error("depth {0} has no outcomes")]
    EmptyDepth(usize),
    #[error("replicates must be at least 1")]
    ZeroReplicates,
    #[error("agreement table is empty")]
    EmptyTable,
    #[error("kappa undefined: chance agreement is 1")]
    UndefinedKappa,
}

/// What the engine observed at one depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub depth: u32,
    /// Scored probes (NO_FACT and unscored excluded).
    pub asked: u32,
    pub correct: u32,
    pub no_fact: u32,
    #[serde(default)]
    pub unscored: u32,
    /// A(d) = correct / asked.
    pub accuracy: f64,
    /// S(d) = S(d-1) * A(d), S(0) = 1.
    pub survival: f64,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    Threshold,
    MaxDepth,
    FactExhaustion,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "THRESHOLD",
            StopReason::MaxDepth => "MAX_DEPTH",
            StopReason::FactExhaustion => "FACT_EXHAUSTION",
        })
    }
}

/// The full survival curve of a run plus its scalar summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSeries {
    pub records: Vec<DepthRecord>,
    /// EVD — the sum of S(d) over every recorded depth, including the final
    /// depth whose survival fell below the threshold.
    pub evd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evd_se: Option<f64>,
    pub stop_reason: StopReason,
}

impl SurvivalSeries {
    pub fn from_records(records: Vec<DepthRecord>, stop_reason: StopReason) -> SurvivalSeries {
        // + 0.0 normalizes the empty sum's -0.0.
        let evd = records.iter().map(|r| r.survival).sum::<f64>() + 0.0;
        SurvivalSeries {
            records,
            evd,
            evd_se: None,
            stop_reason,
        }
    }

    pub fn max_depth(&self) -> u32 {
        self.records.last().map(|r| r.depth).unwrap_or(0)
    }

    pub fn survival_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.survival).collect()
    }
}

/// A(d) = correct / asked.
pub fn depth_accuracy(correct: u32, asked: u32) -> Result<f64, StatsError> {
    if asked == 0 {
        return Err(StatsError::ZeroAsked);
    }
    if correct > asked {
        return Err(StatsError::CorrectExceedsAsked { correct, asked });
    }
    Ok(f64::from(correct) / f64::from(asked))
}

/// S(d) = prod of A(1..=d); the output is nonincreasing.
pub fn cumulative_survival(accuracies: &[f64]) -> Result<Vec<f64>, StatsError> {
    let mut survival = Vec::with_capacity(accuracies.len());
    let mut running = 1.0;
    for &a in accuracies {
        if !(0.0..=1.0).contains(&a) {
            return Err(StatsError::AccuracyOutOfRange(a));
        }
        running *= a;
        survival.push(running);
    }
    Ok(survival)
}

/// EVD — the area under the cumulative survival curve, i.e. the sum of S(d).
pub fn expected_valid_depth(survival: &[f64]) -> f64 {
    survival.iter().sum::<f64>() + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    StopThreshold,
    StopMaxDepth,
}

/// Stopping rule: survival strictly below the threshold stops the run;
/// otherwise reaching the depth ceiling stops it; otherwise continue.
/// Equality with the threshold does not stop.
pub fn should_stop(survival_d: f64, depth: u32, config: &DepthConfig) -> StopDecision {
    if survival_d < config.survival_threshold {
        StopDecision::StopThreshold
    } else if depth >= config.max_depth {
        StopDecision::StopMaxDepth
    } else {
        StopDecision::Continue
    }
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
#[allow(clippy::excessive_precision)]
fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Two-sided normal critical value for a confidence level (e.g. 0.95 -> 1.96).
pub fn normal_critical_value(confidence: f64) -> Result<f64, StatsError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidConfidence);
    }
    Ok(probit((1.0 + confidence) / 2.0))
}

/// Wilson score confidence interval for a binomial proportion, clipped to
/// [0, 1]. Always contains the point estimate `correct / n`.
pub fn wilson_interval(correct: u32, n: u32, confidence: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::ZeroAsked);
    }
    if correct > n {
        return Err(StatsError::CorrectExceedsAsked { correct, asked: n });
    }
    let z = normal_critical_value(confidence)?;
    let n_f = f64::from(n);
    let p_hat = f64::from(correct) / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p_hat + z2 / (2.0 * n_f)) / denom;
    let half = z * (p_hat * (1.0 - p_hat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Bootstrap standard error of EVD: resample each depth's outcome vector with
/// replacement, recompute accuracies, survival, and EVD per replicate, and
/// return the sample standard deviation of the replicate EVDs.
///
/// Only the per-depth success counts matter, so the estimate is invariant to
/// the order of outcomes within a depth. Deterministic for a given seed.
pub fn bootstrap_evd_se(
    per_depth_outcomes: &[Vec<bool>],
    replicates: u32,
    seed: u64,
) -> Result<f64, StatsError> {
    if replicates == 0 {
        return Err(StatsError::ZeroReplicates);
    }
    let mut counts = Vec::with_capacity(per_depth_outcomes.len());
    for (idx, outcomes) in per_depth_outcomes.iter().enumerate() {
        if outcomes.is_empty() {
            return Err(StatsError::EmptyDepth(idx + 1));
        }
        let correct = outcomes.iter().filter(|&&b| b).count() as u32;
        counts.push((correct, outcomes.len() as u32));
    }
    if counts.is_empty() {
        return Ok(0.0);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut evds = Vec::with_capacity(replicates as usize);
    for _ in 0..replicates {
        let mut survival = 1.0;
        let mut evd = 0.0;
        for &(correct, n) in &counts {
            let mut resampled = 0u32;
            for _ in 0..n {
                if rng.random_range(0..n) < correct {
                    resampled += 1;
                }
            }
            survival *= f64::from(resampled) / f64::from(n);
            evd += survival;
        }
        evds.push(evd);
    }

    let mean = evds.iter().sum::<f64>() / evds.len() as f64;
    let denom = (evds.len() as f64 - 1.0).max(1.0);
    let variance = evds.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / denom;
    Ok(variance.sqrt())
}

/// 2x2 agreement counts between two raters issuing yes/no verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub both_yes: u64,
    pub yes_no: u64,
    pub no_yes: u64,
    pub both_no: u64,
}

impl AgreementTable {
    pub fn total(&self) -> u64 {
        self.both_yes + self.yes_no + self.no_yes + self.both_no
    }

    /// Observed agreement p_o.
    pub fn observed_agreement(&self) -> f64 {
        (self.both_yes + self.both_no) as f64 / self.total() as f64
    }

    /// Swaps the two raters (transpose of the table).
    pub fn transposed(&self) -> AgreementTable {
        AgreementTable {
            both_yes: self.both_yes,
            yes_no: self.no_yes,
            no_yes: self.yes_no,
            both_no: self.both_no,
        }
    }
}

/// Cohen's kappa: (p_o - p_e) / (1 - p_e) with chance agreement p_e from the
/// marginal products. Exactly 1.0 whenever observed agreement is perfect.
pub fn cohens_kappa(table: &AgreementTable) -> Result<f64, StatsError> {
    let total = table.total();
    if total == 0 {
        return Err(StatsError::EmptyTable);
    }
    let n = total as f64;
    let p_o = table.observed_agreement();
    if p_o >= 1.0 {
        return Ok(1.0);
    }
    let rater_a_yes = (table.both_yes + table.yes_no) as f64 / n;
    let rater_b_yes = (table.both_yes + table.no_yes) as f64 / n;
    let p_e = rater_a_yes * rater_b_yes + (1.0 - rater_a_yes) * (1.0 - rater_b_yes);
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Err(StatsError::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// A scored probe as the error analysis sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredProbe {
    pub depth: u32,
    pub outcome: VerdictOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierErrorRow {
    pub tier: SpecificityTier,
    pub errors: u32,
    /// Share of all errors, in percent.
    pub percentage: f64,
}

/// Distribution of INCORRECT verdicts across tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    pub per_tier: Vec<TierErrorRow>,
    pub total_errors: u32,
    /// Mean depth of incorrect answers; `None` when there were none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_error_depth: Option<f64>,
}

/// Counts INCORRECT verdicts per tier. Percentages are shares of the error
/// total; the mean error depth is undefined (None) for error-free logs.
pub fn error_analysis(probes: &[ScoredProbe], passes_per_tier: u32) -> ErrorAnalysis {
    let mut counts: BTreeMap<SpecificityTier, u32> = BTreeMap::new();
    let mut depth_sum = 0u64;
    let mut total = 0u32;
    for probe in probes {
        if probe.outcome != VerdictOutcome::Incorrect {
            continue;
        }
        let tier = tier_for_depth(probe.depth, passes_per_tier.max(1))
            .map(|(tier, _)| tier)
            .unwrap_or(SpecificityTier::CuttingEdge);
        *counts.entry(tier).or_insert(0) += 1;
        depth_sum += u64::from(probe.depth);
        total += 1;
    }
    let per_tier = SpecificityTier::ALL
        .iter()
        .map(|&tier| {
            let errors = counts.get(&tier).copied().unwrap_or(0);
            let percentage = if total == 0 {
                0.0
            } else {
                100.0 * f64::from(errors) / f64::from(total)
            };
            TierErrorRow {
                tier,
                errors,
                percentage,
            }
        })
        .collect();
    ErrorAnalysis {
        per_tier,
        total_errors: total,
        mean_error_depth: if total == 0 {
            None
        } else {
            Some(depth_sum as f64 / f64::from(total))
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(depth_accuracy(4, 5).unwrap(), 0.8);
        assert_eq!(depth_accuracy(15, 30).unwrap(), 0.5);
        assert_eq!(depth_accuracy(0, 30).unwrap(), 0.0);
        assert_eq!(depth_accuracy(1, 0), Err(StatsError::ZeroAsked));
        assert!(matches!(
            depth_accuracy(3, 2),
            Err(StatsError::CorrectExceedsAsked { .. })
        ));
    }

    #[test]
    fn survival_worked_example() {
        let s = cumulative_survival(&[0.8, 0.5, 0.5]).unwrap();
        assert!((s[0] - 0.80).abs() < 1e-12);
        assert!((s[1] - 0.40).abs() < 1e-12);
        assert!((s[2] - 0.20).abs() < 1e-12);
    }

    #[test]
    fn survival_identity_under_perfect_accuracy() {
        assert_eq!(cumulative_survival(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn survival_rejects_out_of_range() {
        assert!(matches!(
            cumulative_survival(&[0.5, 1.2]),
            Err(StatsError::AccuracyOutOfRange(_))
        ));
    }

    #[test]
    fn evd_examples() {
        assert!((expected_valid_depth(&[0.80, 0.40, 0.20]) - 1.40).abs() < 1e-12);
        assert_eq!(expected_valid_depth(&[]), 0.0);
        let series = [1.0, 1.0, 1.0, 0.8, 0.64, 0.512, 0.256, 0.128];
        assert!((expected_valid_depth(&series) - 5.336).abs() < 1e-12);
    }

    #[test]
    fn stopping_rule_examples() {
        let config = DepthConfig {
            survival_threshold: 0.20,
            max_depth: 15,
            ..DepthConfig::for_topic("x")
        };
        // Equality with the threshold continues.
        assert_eq!(should_stop(0.20, 3, &config), StopDecision::Continue);
        assert_eq!(should_stop(0.18, 11, &config), StopDecision::StopThreshold);
        assert_eq!(should_stop(0.5, 15, &config), StopDecision::StopMaxDepth);
        // Threshold takes precedence at the ceiling.
        assert_eq!(should_stop(0.1, 15, &config), StopDecision::StopThreshold);
    }

    #[test]
    fn probit_matches_reference_points() {
        assert!((probit(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((probit(0.5)).abs() < 1e-12);
        assert!((probit(0.841_344_746_068_543) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn wilson_reproduces_reported_table_rows() {
        // (correct, n, lower%, upper%) at 95% confidence, +/- 1 point.
        let rows = [
            (15u32, 30u32, 33.0, 67.0),
            (21, 30, 52.0, 83.0),
            (24, 30, 62.0, 91.0),
            (27, 30, 74.0, 97.0),
            (30, 30, 88.0, 100.0),
        ];
        for (correct, n, lo, hi) in rows {
            let (lower, upper) = wilson_interval(correct, n, 0.95).unwrap();
            assert!(
                (lower * 100.0 - lo).abs() <= 1.0,
                "{correct}/{n} lower {lower} vs {lo}"
            );
            assert!(
                (upper * 100.0 - hi).abs() <= 1.0,
                "{correct}/{n} upper {upper} vs {hi}"
            );
        }
    }

    #[test]
    fn wilson_zero_successes() {
        let (lower, upper) = wilson_interval(0, 30, 0.95).unwrap();
        assert!(lower.abs() < 1e-12);
        assert!((upper - 0.11).abs() < 0.005);
    }

    #[test]
    fn wilson_rejects_degenerate_inputs() {
        assert_eq!(wilson_interval(0, 0, 0.95), Err(StatsError::ZeroAsked));
        assert_eq!(
            wilson_interval(1, 2, 1.0),
            Err(StatsError::InvalidConfidence)
        );
    }

    #[test]
    fn wilson_contains_point_estimate_and_complements() {
        for n in 1..=50u32 {
            for c in 0..=n {
                let (lo, hi) = wilson_interval(c, n, 0.95).unwrap();
                let p = f64::from(c) / f64::from(n);
                assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
                let (clo, chi) = wilson_interval(n - c, n, 0.95).unwrap();
                assert!((lo - (1.0 - chi)).abs() < 1e-9);
                assert!((hi - (1.0 - clo)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bootstrap_degenerate_data_has_zero_se() {
        let data = vec![vec![true; 10], vec![true; 10], vec![true; 10]];
        assert_eq!(bootstrap_evd_se(&data, 500, 7).unwrap(), 0.0);
    }

    #[test]
    fn bootstrap_single_two_outcome_depth_matches_enumeration() {
        // Resampling [1,0] twice gives EVD in {0, 0.5, 0.5, 1}; the std of
        // that distribution is sqrt(1/8) = 0.3536.
        let se = bootstrap_evd_se(&[vec![true, false]], 40_000, 99).unwrap();
        assert!((se - 0.353_553).abs() / 0.353_553 < 0.05, "se = {se}");
    }

    #[test]
    fn bootstrap_is_order_invariant_within_depths() {
        let a = vec![
            vec![true, true, false, true, false],
            vec![false, true, true],
        ];
        let b = vec![
            vec![false, false, true, true, true],
            vec![true, true, false],
        ];
        let se_a = bootstrap_evd_se(&a, 300, 5).unwrap();
        let se_b = bootstrap_evd_se(&b, 300, 5).unwrap();
        assert_eq!(se_a, se_b);
    }

    #[test]
    fn bootstrap_rejects_empty_depths() {
        assert_eq!(
            bootstrap_evd_se(&[vec![true], vec![]], 10, 1),
            Err(StatsError::EmptyDepth(2))
        );
    }

    #[test]
    fn kappa_reconstructed_contingency() {
        let table = AgreementTable {
            both_yes: 64,
            yes_no: 4,
            no_yes: 6,
            both_no: 26,
        };
        let kappa = cohens_kappa(&table).unwrap();
        assert!((kappa - 0.766_355).abs() < 1e-5);
        assert!((kappa - 0.77).abs() < 0.005);
        assert!((table.observed_agreement() - 0.90).abs() < 1e-12);
    }

    #[test]
    fn kappa_perfect_and_independent() {
        let perfect = AgreementTable {
            both_yes: 50,
            yes_no: 0,
            no_yes: 0,
            both_no: 50,
        };
        assert_eq!(cohens_kappa(&perfect).unwrap(), 1.0);
        let independent = AgreementTable {
            both_yes: 25,
            yes_no: 25,
            no_yes: 25,
            both_no: 25,
        };
        assert!(cohens_kappa(&independent).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate_marginals() {
        // Perfect agreement wins even when chance agreement is 1.
        let all_yes = AgreementTable {
            both_yes: 10,
            yes_no: 0,
            no_yes: 0,
            both_no: 0,
        };
        assert_eq!(cohens_kappa(&all_yes).unwrap(), 1.0);
        // Opposite constant raters: chance agreement 0, kappa 0.
        let opposed = AgreementTable {
            both_yes: 0,
            yes_no: 0,
            no_yes: 10,
            both_no: 0,
        };
        assert_eq!(cohens_kappa(&opposed).unwrap(), 0.0);
        assert_eq!(
            cohens_kappa(&AgreementTable {
                both_yes: 0,
                yes_no: 0,
                no_yes: 0,
                both_no: 0
            }),
            Err(StatsError::EmptyTable)
        );
    }

    #[test]
    fn error_analysis_hand_counted_fixture() {
        let probes: Vec<ScoredProbe> = [1u32, 4, 7, 8]
            .iter()
            .map(|&depth| ScoredProbe {
                depth,
                outcome: VerdictOutcome::Incorrect,
            })
            .chain(std::iter::once(ScoredProbe {
                depth: 2,
                outcome: VerdictOutcome::Correct,
            }))
            .collect();
        let analysis = error_analysis(&probes, 3);
        assert_eq!(analysis.total_errors, 4);
        let by_tier: BTreeMap<_, _> = analysis
            .per_tier
            .iter()
            .map(|row| (row.tier, (row.errors, row.percentage)))
            .collect();
        assert_eq!(by_tier[&SpecificityTier::Common], (1, 25.0));
        assert_eq!(by_tier[&SpecificityTier::Textbook], (1, 25.0));
        assert_eq!(by_tier[&SpecificityTier::Professional], (2, 50.0));
        assert_eq!(analysis.mean_error_depth, Some(5.0));
    }

    #[test]
    fn error_analysis_empty_and_single() {
        let empty = error_analysis(&[], 3);
        assert_eq!(empty.total_errors, 0);
        assert_eq!(empty.mean_error_depth, None);
        assert!(empty.per_tier.iter().all(|r| r.errors == 0));

        let single = error_analysis(
            &[ScoredProbe {
                depth: 2,
                outcome: VerdictOutcome::Incorrect,
            }],
            3,
        );
        assert_eq!(single.total_errors, 1);
        assert_eq!(single.per_tier[0].errors, 1);
        assert_eq!(single.per_tier[0].percentage, 100.0);
        assert_eq!(single.mean_error_depth, Some(2.0));
    }

    proptest! {
        #[test]
        fn survival_matches_fold_oracle(accuracies in proptest::collection::vec(0.0f64..=1.0, 0..12)) {
            let survival = cumulative_survival(&accuracies).unwrap();
            let mut expected = Vec::new();
            let mut acc = 1.0;
            for &a in &accuracies {
                acc *= a;
                expected.push(acc);
            }
            for (s, e) in survival.iter().zip(&expected) {
                prop_assert!((s - e).abs() < 1e-12);
            }
            for pair in survival.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-12);
            }
            if let (Some(last), Some(first)) = (survival.last(), survival.first()) {
                prop_assert!(*last <= *first + 1e-12);
            }
        }

        #[test]
        fn evd_bounded_by_depth_count(accuracies in proptest::collection::vec(0.0f64..=1.0, 1..12)) {
            let survival = cumulative_survival(&accuracies).unwrap();
            let evd = expected_valid_depth(&survival);
            prop_assert!(evd <= accuracies.len() as f64 + 1e-12);
            let all_perfect = accuracies.iter().all(|&a| a == 1.0);
            if all_perfect {
                prop_assert!((evd - accuracies.len() as f64).abs() < 1e-12);
            } else {
                prop_assert!(evd < accuracies.len() as f64);
            }
        }

        #[test]
        fn kappa_is_rater_swap_invariant(
            a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 0u64..200
        ) {
            let table = AgreementTable { both_yes: a, yes_no: b, no_yes: c, both_no: d };
            let swapped = table.transposed();
            match (cohens_kappa(&table), cohens_kappa(&swapped)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
                (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                (x, y) => prop_assert!(false, "asymmetric results {:?} vs {:?}", x, y),
            }
        }
    }
}
