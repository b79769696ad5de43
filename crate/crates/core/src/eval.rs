//! ROUGE-L, inference cost, timing ratios and error tallies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProviderError, TokenUsage};
use crate::pipeline::{ErrorClass, RunRecord};
use crate::similarity::tokenize;

/// Completed answers scoring below this ROUGE-L F1 count as approximate
/// reasoning errors.
pub const DEFAULT_ROUGE_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word-level ROUGE-L. Words are lowercased alphanumeric runs.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c: Vec<String> = tokenize(candidate).collect();
    let r: Vec<String> = tokenize(reference).collect();
    if c.is_empty() || r.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_len(&c, &r) as f64;
    let precision = lcs / c.len() as f64;
    let recall = lcs / r.len() as f64;
    let f1 = if lcs == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore { precision, recall, f1 }
}

const PICO_PER_DOLLAR: u128 = 1_000_000_000_000;
const MICRO_PER_DOLLAR: u64 = 1_000_000;

/// Token prices in micro-dollars per million tokens, so that every rate with
/// at most six decimal places is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingTable {
    pub input_micros_per_million: u64,
    pub output_micros_per_million: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PricingError {
    #[error("rate `{0}` is not a non-negative decimal with at most six fractional digits")]
    BadRate(String),
}

fn parse_micros(text: &str) -> Result<u64, PricingError> {
    let bad = || PricingError::BadRate(text.into());
    let t = text.trim();
    let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
    if whole.is_empty() && frac.is_empty()
        || frac.len() > 6
        || !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let whole: u64 = if whole.is_empty() {
        0
    } else {
        whole.parse().map_err(|_| bad())?
    };
    let mut frac_micros = 0u64;
    for (i, b) in frac.bytes().enumerate() {
        frac_micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
    }
    whole
        .checked_mul(MICRO_PER_DOLLAR)
        .and_then(|w| w.checked_add(frac_micros))
        .ok_or_else(bad)
}

impl PricingTable {
    /// Rates in dollars per million tokens, written as decimals.
    pub fn from_decimal(input: &str, output: &str) -> Result<Self, PricingError> {
        Ok(Self {
            input_micros_per_million: parse_micros(input)?,
            output_micros_per_million: parse_micros(output)?,
        })
    }

    pub fn from_dollars(input: u64, output: u64) -> Self {
        Self {
            input_micros_per_million: input * MICRO_PER_DOLLAR,
            output_micros_per_million: output * MICRO_PER_DOLLAR,
        }
    }
}

impl Default for PricingTable {
    /// $30 per million input tokens, $60 per million output tokens.
    fn default() -> Self {
        Self::from_dollars(30, 60)
    }
}

/// An exact amount of money in picodollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(pub u128);

impl Cost {
    pub fn picodollars(self) -> u128 {
        self.0
    }

    pub fn as_dollars(self) -> f64 {
        (self.0 / PICO_PER_DOLLAR) as f64 + (self.0 % PICO_PER_DOLLAR) as f64 / PICO_PER_DOLLAR as f64
    }
}

impl core::ops::Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl core::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost(0), |a, b| a + b)
    }
}

/// Dollars with at least two and at most twelve decimals, no rounding.
impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / PICO_PER_DOLLAR;
        let frac = format!("{:012}", self.0 % PICO_PER_DOLLAR);
        let trimmed = frac.trim_end_matches('0');
        let shown = if trimmed.len() < 2 { &frac[..2] } else { trimmed };
        write!(f, "{whole}.{shown}")
    }
}

impl Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let (whole, frac) = text.split_once('.').unwrap_or((&text, ""));
        let err = || serde::de::Error::custom(format!("invalid amount `{text}`"));
        if frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let whole: u128 = whole.parse().map_err(|_| err())?;
        let mut padded = String::from(frac);
        while padded.len() < 12 {
            padded.push('0');
        }
        let frac: u128 = padded.parse().map_err(|_| err())?;
        Ok(Cost(whole * PICO_PER_DOLLAR + frac))
    }
}

/// input rate × input/1M + output rate × output/1M, exactly.
pub fn inference_cost(input_tokens: u64, output_tokens: u64, pricing: &PricingTable) -> Cost {
    Cost(
        u128::from(pricing.input_micros_per_million) * u128::from(input_tokens)
            + u128::from(pricing.output_micros_per_million) * u128::from(output_tokens),
    )
}

pub fn usage_cost(usage: TokenUsage, pricing: &PricingTable) -> Cost {
    inference_cost(usage.input, usage.output, pricing)
}

/// Optional answer grader. None ships with the crate.
pub trait AnswerJudge: Send + Sync {
    /// Score in `[0, 1]`.
    fn score(&self, question: &str, reference: &str, answer: &str) -> Result<f64, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub error_class: ErrorClass,
    pub rouge_l: RougeScore,
    pub cost: Cost,
    pub token_usage: TokenUsage,
    pub provider_calls: u32,
    pub plan_attempts: u32,
    pub hallucinations_blocked: u32,
    pub wall_micros: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_score: Option<f64>,
}

impl QuestionRecord {
    pub fn from_run(id: &str, question: &str, reference: &str, run: &RunRecord, pricing: &PricingTable) -> Self {
        let rouge = run
            .answer
            .as_deref()
            .map(|a| rouge_l(a, reference))
            .unwrap_or_default();
        Self {
            id: id.into(),
            question: question.into(),
            reference: reference.into(),
            answer: run.answer.clone(),
            error_class: run.error_class,
            rouge_l: rouge,
            cost: usage_cost(run.token_usage, pricing),
            token_usage: run.token_usage,
            provider_calls: run.provider_calls,
            plan_attempts: run.plan_attempts,
            hallucinations_blocked: run.hallucinations_blocked,
            wall_micros: run.timing.total_micros,
            judge_score: None,
        }
    }
}

/// Aggregates over a batch. Means are `None` for an empty batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    pub mean_rouge_l: Option<f64>,
    pub mean_cost_dollars: Option<f64>,
    pub total_cost: Cost,
    pub mean_wall_micros: Option<f64>,
    /// Share of questions ending in each failure class.
    pub error_probabilities: Option<BTreeMap<ErrorClass, f64>>,
    /// Completed runs whose ROUGE-L F1 falls below `rouge_floor`. A
    /// mechanical stand-in for semantic reasoning errors.
    pub approximate_reasoning_error_rate: Option<f64>,
    pub rouge_floor: f64,
    /// Share of questions where at least one plan was rejected by the
    /// verifier.
    pub hallucination_blocked_rate: Option<f64>,
    pub mean_judge_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub records: Vec<QuestionRecord>,
    pub aggregates: Aggregates,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(records: Vec<QuestionRecord>, rouge_floor: f64) -> EvalSummary {
    let n = records.len();
    let share = |count: usize| (n > 0).then(|| count as f64 / n as f64);
    let total_cost: Cost = records.iter().map(|r| r.cost).sum();
    let error_probabilities = (n > 0).then(|| {
        ErrorClass::FAILURES
            .iter()
            .map(|c| (*c, records.iter().filter(|r| r.error_class == *c).count() as f64 / n as f64))
            .collect()
    });
    let aggregates = Aggregates {
        questions: n,
        mean_rouge_l: mean(records.iter().map(|r| r.rouge_l.f1)),
        mean_cost_dollars: (n > 0).then(|| Cost(total_cost.0 / n as u128).as_dollars()),
        total_cost,
        mean_wall_micros: mean(records.iter().map(|r| r.wall_micros as f64)),
        error_probabilities,
        approximate_reasoning_error_rate: share(
            records
                .iter()
                .filter(|r| r.error_class == ErrorClass::None && r.rouge_l.f1 < rouge_floor)
                .count(),
        ),
        rouge_floor,
        hallucination_blocked_rate: share(records.iter().filter(|r| r.hallucinations_blocked > 0).count()),
        mean_judge_score: mean(records.iter().filter_map(|r| r.judge_score)),
    };
    EvalSummary { records, aggregates }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub cost_reduction_factor: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RatioError {
    #[error("the summaries cover different questions")]
    MismatchedQuestions,
    #[error("no questions to compare")]
    Empty,
    #[error("mean cost of the compared system is zero")]
    ZeroCost,
    #[error("mean time of the compared system is zero")]
    ZeroTime,
}

/// Baseline mean cost over ours, and baseline mean time over ours.
pub fn ratio_metrics(baseline: &EvalSummary, ours: &EvalSummary) -> Result<Ratios, RatioError> {
    let ids = |s: &EvalSummary| s.records.iter().map(|r| r.id.clone()).collect::<BTreeSet<String>>();
    if ids(baseline) != ids(ours) || baseline.records.len() != ours.records.len() {
        return Err(RatioError::MismatchedQuestions);
    }
    if ours.records.is_empty() {
        return Err(RatioError::Empty);
    }
    // same question count, so sums stand in for means
    let cost = |s: &EvalSummary| s.records.iter().map(|r| r.cost).sum::<Cost>().0;
    let time = |s: &EvalSummary| s.records.iter().map(|r| u128::from(r.wall_micros)).sum::<u128>();
    let (oc, ot) = (cost(ours), time(ours));
    if oc == 0 {
        return Err(RatioError::ZeroCost);
    }
    if ot == 0 {
        return Err(RatioError::ZeroTime);
    }
    Ok(Ratios {
        cost_reduction_factor: cost(baseline) as f64 / oc as f64,
        speedup: time(baseline) as f64 / ot as f64,
    })
}
