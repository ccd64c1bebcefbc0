//! Paired comparison of agent A against its opponent: feasibility-filtered
//! pairing by cohort, Wilcoxon signed-rank, Cohen's d, percentile
//! bootstrap intervals and winner assignment.

mod hypothesis;
mod report;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hypothesis::{
    cohens_d, mean, paired_t_test, sample_variance, shapiro_wilk, wilcoxon_exact, wilcoxon_normal,
    wilcoxon_signed_rank, CohensD, ShapiroWilk, TTestResult, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N,
};
pub use report::{bar_chart_svg, ResultsTable, CSV_COLUMNS};

use crate::agents::AgentId;
use crate::arena::OpponentKind;
use crate::eval::EvalRecord;
use crate::metrics::{Direction, Metric};
use crate::model::Framework;
use crate::rng::{derive_seed, label_hash, rng_from_seed};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_RESAMPLES: usize = 2000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("exact enumeration is limited to 62 differences, got {0}")]
    TooLargeForExact(usize),
    #[error("records mix configurations: {0}")]
    MixedConfigurations(String),
    #[error("cohort {0} appears more than once")]
    DuplicateCohort(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("distribution error: {0}")]
    Distribution(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
    pub level: f64,
    /// Run Shapiro-Wilk on the differences first and use a paired t-test
    /// when normality is not rejected.
    #[serde(default)]
    pub normality_pretest: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            alpha: DEFAULT_ALPHA,
            resamples: DEFAULT_RESAMPLES,
            seed: DEFAULT_SEED,
            level: 0.95,
            normality_pretest: false,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::InvalidConfig(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StatsError::InvalidConfig(format!(
                "level {} outside (0, 1)",
                self.level
            )));
        }
        if self.resamples == 0 {
            return Err(StatsError::InvalidConfig("resamples must be positive".into()));
        }
        Ok(())
    }
}

/// Final-allocation metric values paired by cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub framework: Framework,
    pub opponent: OpponentKind,
    pub metric: Metric,
    pub cohort_ids: Vec<u64>,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Cohorts dropped because a debate failed or a final was infeasible.
    pub excluded: Vec<u64>,
}

impl PairedSample {
    pub fn len(&self) -> usize {
        self.cohort_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cohort_ids.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a_values.iter().zip(&self.b_values).map(|(a, b)| a - b).collect()
    }
}

/// Pairs A with the opponent by cohort. A cohort is kept only when the
/// debate completed and both final allocations are feasible. `None` when
/// there are no records at all.
pub fn pair_and_filter(records: &[EvalRecord], metric: Metric) -> Result<Option<PairedSample>, StatsError> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let (framework, opponent) = (first.framework, first.opponent);
    let mut seen = BTreeSet::new();
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.cohort_id);
    let mut sample = PairedSample {
        framework,
        opponent,
        metric,
        cohort_ids: Vec::new(),
        a_values: Vec::new(),
        b_values: Vec::new(),
        excluded: Vec::new(),
    };
    for r in sorted {
        if r.framework != framework || r.opponent != opponent {
            return Err(StatsError::MixedConfigurations(format!(
                "{}/{:?} and {}/{:?}",
                framework, opponent, r.framework, r.opponent
            )));
        }
        if !seen.insert(r.cohort_id) {
            return Err(StatsError::DuplicateCohort(r.cohort_id));
        }
        let pair = r.final_of(AgentId::A).zip(r.final_of(r.opponent_id()));
        match pair {
            Some((a, b)) if r.completed && a.feasible && b.feasible => {
                sample.cohort_ids.push(r.cohort_id);
                sample.a_values.push(a.metrics.get(metric));
                sample.b_values.push(b.metrics.get(metric));
            }
            _ => sample.excluded.push(r.cohort_id),
        }
    }
    Ok(Some(sample))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(sample: &[f64], resamples: usize, seed: u64, level: f64) -> Result<Interval, StatsError> {
    use rand::Rng;
    if sample.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidConfig(
            "resamples must be positive and level in (0, 1)".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let n = sample.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| sample[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        lo: quantile(&means, tail),
        hi: quantile(&means, 1.0 - tail),
    })
}

/// Seed for one bootstrap stream, independent of evaluation order.
pub fn cell_seed(master: u64, framework: Framework, opponent: OpponentKind, metric: Metric, side: AgentId) -> u64 {
    let key = format!("{}/{:?}/{}/{}", framework.name(), opponent, metric.name(), side);
    derive_seed(master, label_hash(&key))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::A => "A",
            Winner::B => "B",
            Winner::Tie => "tie",
        }
    }

    pub fn parse(s: &str) -> Option<Winner> {
        match s {
            "A" => Some(Winner::A),
            "B" => Some(Winner::B),
            "tie" => Some(Winner::Tie),
            _ => None,
        }
    }
}

/// A when the difference is significant and A's mean is better in the
/// metric's direction, B when the opponent's is better, tie otherwise.
pub fn assign_winner(significant: bool, mean_a: f64, mean_b: f64, direction: Direction) -> Winner {
    if !significant {
        Winner::Tie
    } else if direction.better(mean_a, mean_b) {
        Winner::A
    } else if direction.better(mean_b, mean_a) {
        Winner::B
    } else {
        Winner::Tie
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Wilcoxon,
    PairedT,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub framework: Framework,
    pub opponent: OpponentKind,
    pub metric: Metric,
    pub n: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub ci_a: Option<Interval>,
    pub ci_b: Option<Interval>,
    pub p_value: Option<f64>,
    pub test: TestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality_p: Option<f64>,
    /// `None` when undefined (fewer than two pairs or zero pooled spread).
    pub d: Option<f64>,
    pub significant: bool,
    pub winner: Winner,
    pub excluded: Vec<u64>,
}

/// Runs the full comparison on one paired sample. An empty sample yields a
/// report with `n = 0`, no test and a tie.
pub fn compare(sample: &PairedSample, config: &StatsConfig) -> Result<ComparisonReport, StatsError> {
    config.validate()?;
    let mut report = ComparisonReport {
        framework: sample.framework,
        opponent: sample.opponent,
        metric: sample.metric,
        n: sample.len(),
        mean_a: None,
        mean_b: None,
        ci_a: None,
        ci_b: None,
        p_value: None,
        test: TestKind::None,
        w_plus: None,
        normality_p: None,
        d: None,
        significant: false,
        winner: Winner::Tie,
        excluded: sample.excluded.clone(),
    };
    if sample.is_empty() {
        return Ok(report);
    }
    let (a, b) = (&sample.a_values, &sample.b_values);
    let ma = mean(a);
    let mb = mean(b);
    report.mean_a = Some(ma);
    report.mean_b = Some(mb);
    let seed = |side| cell_seed(config.seed, sample.framework, sample.opponent, sample.metric, side);
    report.ci_a = Some(bootstrap_ci(a, config.resamples, seed(AgentId::A), config.level)?);
    report.ci_b = Some(bootstrap_ci(
        b,
        config.resamples,
        seed(sample.opponent.agent_id()),
        config.level,
    )?);
    if a.len() >= 2 {
        report.d = cohens_d(a, b)?.d;
    }

    let diffs = sample.differences();
    let normal = if config.normality_pretest {
        match shapiro_wilk(&diffs) {
            Ok(sw) => {
                report.normality_p = Some(sw.p_value);
                sw.p_value >= config.alpha
            }
            Err(_) => false,
        }
    } else {
        false
    };
    let p = if normal {
        report.test = TestKind::PairedT;
        paired_t_test(&diffs)?.p_value
    } else {
        report.test = TestKind::Wilcoxon;
        let w = wilcoxon_signed_rank(&diffs)?;
        report.w_plus = Some(w.w_plus);
        w.p_value
    };
    report.p_value = Some(p);
    report.significant = p < config.alpha;
    report.winner = assign_winner(report.significant, ma, mb, sample.metric.direction());
    Ok(report)
}

/// Compares every metric for one configuration, cells in parallel. Each
/// cell's bootstrap stream is derived from its own key, so the result does
/// not depend on the thread count.
pub fn compare_all(
    records: &[EvalRecord],
    metrics: &[Metric],
    config: &StatsConfig,
) -> Result<Vec<ComparisonReport>, StatsError> {
    let samples: Vec<PairedSample> = metrics
        .iter()
        .map(|m| pair_and_filter(records, *m))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    samples.par_iter().map(|s| compare(s, config)).collect()
}
