//! Scoring and analysis: F1, normalized LCS, the failure taxonomy,
//! aggregation, API-selection complexity, reversed-F1, and Spearman rank
//! correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{CriteriaSet, EvalOutcome};
use crate::program::{ActionProgram, Multiset};
use crate::spec::{DemonstrationExample, TestCase};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("solution list must not be empty")]
    EmptySolutions,
    #[error("test set must not be empty")]
    EmptyTests,
    #[error("example pool must not be empty")]
    EmptyExamples,
    #[error("API pool size must be >= 1 (got {0})")]
    InvalidDSize(usize),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFew(usize),
}

/// Failure taxonomy. A failing case with several defects takes the first
/// triggered category in this order: non-executable generation, wrong API
/// selection, wrong argument populating. `None` means success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    None,
    NonExecutable,
    WrongApi,
    WrongArguments,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::None,
        ErrorCategory::NonExecutable,
        ErrorCategory::WrongApi,
        ErrorCategory::WrongArguments,
    ];
}

/// F1 between two criteria sets: `2|p ∩ g| / (|p| + |g|)`; two empty sets
/// score 1.
pub fn f1(pred: &CriteriaSet, gold: &CriteriaSet) -> f64 {
    let total = pred.len() + gold.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * pred.intersection_size(gold) as f64 / total as f64
}

/// F1 between two multisets, counting intersection with multiplicity.
pub fn f1_multisets(a: &Multiset, b: &Multiset) -> f64 {
    let total = a.total() + b.total();
    if total == 0 {
        return 1.0;
    }
    2.0 * a.intersection_size(b) as f64 / total as f64
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Highest `LCS(pred, s) / max(|pred|, |s|)` over the solutions. Two empty
/// sequences score 1.
pub fn lcs_normalized(pred: &[String], solutions: &[Vec<String>]) -> Result<f64, MetricsError> {
    if solutions.is_empty() {
        return Err(MetricsError::EmptySolutions);
    }
    let mut best = 0.0f64;
    for solution in solutions {
        let score = if pred.is_empty() && solution.is_empty() {
            1.0
        } else {
            let denom = pred.len().max(solution.len()) as f64;
            lcs_len(pred, solution) as f64 / denom
        };
        best = best.max(score);
    }
    Ok(best)
}

/// Categorize one evaluated case. `pred` is `None` when the generation did
/// not parse.
pub fn categorize(
    executable: bool,
    success: bool,
    pred: Option<&ActionProgram>,
    golds: &[ActionProgram],
) -> ErrorCategory {
    if success {
        return ErrorCategory::None;
    }
    let pred = match pred {
        Some(p) if executable => p,
        _ => return ErrorCategory::NonExecutable,
    };
    let pred_names = pred.api_multiset();
    let name_matches: Vec<&ActionProgram> = golds
        .iter()
        .filter(|g| g.api_multiset() == pred_names)
        .collect();
    if name_matches.is_empty() {
        return ErrorCategory::WrongApi;
    }
    let pred_calls = pred.call_multiset();
    if name_matches.iter().any(|g| g.call_multiset() == pred_calls) {
        ErrorCategory::None
    } else {
        ErrorCategory::WrongArguments
    }
}

/// Logarithm base used by the distance; natural log by default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Base(f64),
}

impl LogBase {
    pub fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base(b) => x.ln() / b.ln(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "e" | "ln" | "natural" => Ok(LogBase::Natural),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|b| *b > 1.0)
                .map(LogBase::Base)
                .ok_or_else(|| format!("invalid log base {text:?}; use 'e' or a number > 1")),
        }
    }
}

impl Serialize for LogBase {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            LogBase::Natural => serializer.serialize_str("e"),
            LogBase::Base(b) => serializer.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for LogBase {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => LogBase::parse(&s).map_err(serde::de::Error::custom),
            Repr::Number(b) => Ok(LogBase::Base(b)),
        }
    }
}

/// Distance variant. `Strict` charges a coin flip for every call the
/// example makes; `UnusedOnly` charges only the calls the test does not
/// need, so a fully covered test sits at distance zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Strict,
    UnusedOnly,
}

fn drop_exponent(t: &Multiset, e: &Multiset, variant: Variant) -> usize {
    match variant {
        Variant::Strict => e.total(),
        Variant::UnusedOnly => e.difference_size(t),
    }
}

/// Probability of transforming the example's API multiset into the test's:
/// each of the example's calls survives a coin flip and every uncovered
/// call is drawn uniformly from the pool of `d_size` functions.
pub fn pair_probability_multisets(
    t: &Multiset,
    e: &Multiset,
    d_size: usize,
    variant: Variant,
) -> Result<f64, MetricsError> {
    if d_size < 1 {
        return Err(MetricsError::InvalidDSize(d_size));
    }
    let drops = drop_exponent(t, e, variant) as i32;
    let inserts = t.difference_size(e) as i32;
    Ok(1.0 / (2f64.powi(drops) * (d_size as f64).powi(inserts)))
}

/// Log-reciprocal of the transform probability; always non-negative.
pub fn pair_distance_multisets(
    t: &Multiset,
    e: &Multiset,
    d_size: usize,
    variant: Variant,
    log_base: LogBase,
) -> Result<f64, MetricsError> {
    if d_size < 1 {
        return Err(MetricsError::InvalidDSize(d_size));
    }
    let drops = drop_exponent(t, e, variant) as f64;
    let inserts = t.difference_size(e) as f64;
    Ok(drops * log_base.log(2.0) + inserts * log_base.log(d_size as f64))
}

/// Distance between a test case and a demonstration example. The test's
/// multiset comes from its first gold program; order is ignored and
/// repeated calls count with multiplicity.
pub fn pair_distance(
    test: &TestCase,
    example: &DemonstrationExample,
    d_size: usize,
    variant: Variant,
    log_base: LogBase,
) -> Result<f64, MetricsError> {
    pair_distance_multisets(
        &test.api_multiset(),
        &example.api_multiset(),
        d_size,
        variant,
        log_base,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerTestDistance {
    pub test_id: String,
    /// Index of the minimizing example; ties take the lowest index.
    pub example_index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityConfig {
    pub d_size: usize,
    pub log_base: LogBase,
    pub variant: Variant,
}

/// Task-level complexity: the mean over tests of the minimum distance to
/// any example, plus the per-test minima.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub per_test: Vec<PerTestDistance>,
    pub task_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf1_score: Option<f64>,
    pub config: ComplexityConfig,
}

pub fn complexity_score(
    tests: &[TestCase],
    examples: &[DemonstrationExample],
    d_size: usize,
    variant: Variant,
    log_base: LogBase,
) -> Result<ComplexityReport, MetricsError> {
    if tests.is_empty() {
        return Err(MetricsError::EmptyTests);
    }
    if examples.is_empty() {
        return Err(MetricsError::EmptyExamples);
    }
    let example_sets: Vec<Multiset> = examples.iter().map(|e| e.api_multiset()).collect();
    let mut per_test = Vec::with_capacity(tests.len());
    let mut sum = 0.0;
    for test in tests {
        let t = test.api_multiset();
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in example_sets.iter().enumerate() {
            let d = pair_distance_multisets(&t, e, d_size, variant, log_base)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        let (example_index, distance) = best.expect("examples checked non-empty");
        sum += distance;
        per_test.push(PerTestDistance {
            test_id: test.id.clone(),
            example_index,
            distance,
        });
    }
    Ok(ComplexityReport {
        task_score: sum / tests.len() as f64,
        per_test,
        rf1_score: None,
        config: ComplexityConfig {
            d_size,
            log_base,
            variant,
        },
    })
}

/// Reversed-F1 task score: the mean over tests of the minimum
/// `(1 - F1) * 100` between the test's API multiset and any example's.
pub fn rf1_score(
    tests: &[TestCase],
    examples: &[DemonstrationExample],
) -> Result<f64, MetricsError> {
    if tests.is_empty() {
        return Err(MetricsError::EmptyTests);
    }
    if examples.is_empty() {
        return Err(MetricsError::EmptyExamples);
    }
    let example_sets: Vec<Multiset> = examples.iter().map(|e| e.api_multiset()).collect();
    let mut sum = 0.0;
    for test in tests {
        let t = test.api_multiset();
        let best = example_sets
            .iter()
            .map(|e| (1.0 - f1_multisets(&t, e)) * 100.0)
            .fold(f64::INFINITY, f64::min);
        sum += best;
    }
    Ok(sum / tests.len() as f64)
}

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean 1-based rank.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    let denom = (var_x * var_y).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        cov / denom
    }
}

/// Spearman rank correlation with mean ranks for ties: the Pearson
/// correlation of the two rank vectors. Constant inputs yield 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFew(xs.len()));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Aggregate evaluation report for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub executable: usize,
    pub executability_rate: f64,
    pub category_counts: BTreeMap<ErrorCategory, usize>,
    /// Shares over evaluated cases; together with the success share
    /// (`none`) these sum to 1.
    pub category_shares: BTreeMap<ErrorCategory, f64>,
    /// Mean of the per-test `lcs` metric, for tasks that report it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_lcs: Option<f64>,
    /// Mean of the per-test `f1` metric, for tasks that report it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_f1: Option<f64>,
}

pub fn aggregate(outcomes: &[EvalOutcome]) -> Report {
    let total = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let executable = outcomes.iter().filter(|o| o.executable).count();
    let mut category_counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    for cat in ErrorCategory::ALL {
        category_counts.insert(cat, 0);
    }
    for outcome in outcomes {
        *category_counts.entry(outcome.category).or_insert(0) += 1;
    }
    let share = |count: usize| {
        if total == 0 {
            0.0
        } else {
            count as f64 / total as f64
        }
    };
    let category_shares = category_counts
        .iter()
        .map(|(cat, count)| (*cat, share(*count)))
        .collect();

    let metric_mean = |key: &str| {
        let values: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.metrics.get(key).copied())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    Report {
        total,
        successes,
        success_rate: share(successes),
        executable,
        executability_rate: share(executable),
        category_counts,
        category_shares,
        mean_lcs: metric_mean("lcs"),
        mean_f1: metric_mean("f1"),
    }
}
