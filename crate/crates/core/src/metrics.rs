//! Clinical need satisfaction (CNSS) and the six framework metrics.
//!
//! Every metric depends on an allocation only through the CNSS vector, except
//! Gini when it is configured to run on nursing hours.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_allocation, Allocation, Cohort, Framework, ModelError, Patient, Resource, NUM_RESOURCES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("patient {0} has an empty needs set")]
    EmptyNeeds(u32),
    #[error("metric needs a nonempty vector")]
    EmptyVector,
    #[error("gini is undefined for negative entry {0}")]
    NegativeEntry(f64),
    #[error("expected {expected:?} weights, got {got:?}")]
    WeightKindMismatch { expected: WeightKind, got: WeightKind },
    #[error("weight vector has {got} entries for {expected} patients")]
    WeightLength { expected: usize, got: usize },
    #[error("no score configured for {attribute} = `{value}`")]
    MissingAttributeScore { attribute: String, value: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    /// `true` when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherIsBetter => a > b,
            Direction::LowerIsBetter => a < b,
        }
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Direction::HigherIsBetter => "↑",
            Direction::LowerIsBetter => "↓",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Esg,
    Rmg,
    Variance,
    DwEsg,
    Vwci,
    Gini,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Esg,
        Metric::Rmg,
        Metric::Variance,
        Metric::DwEsg,
        Metric::Vwci,
        Metric::Gini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Esg => "esg",
            Metric::Rmg => "rmg",
            Metric::Variance => "variance",
            Metric::DwEsg => "dw_esg",
            Metric::Vwci => "vwci",
            Metric::Gini => "gini",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Esg => "ESG",
            Metric::Rmg => "RMG",
            Metric::Variance => "Var",
            Metric::DwEsg => "DW-ESG",
            Metric::Vwci => "VWCI",
            Metric::Gini => "Gini",
        }
    }

    /// Metric-direction table shared with the statistics pipeline. Gini is
    /// lower-is-better.
    pub fn direction(self) -> Direction {
        match self {
            Metric::Variance | Metric::Gini => Direction::LowerIsBetter,
            _ => Direction::HigherIsBetter,
        }
    }

    pub fn framework(self) -> Framework {
        match self {
            Metric::Esg => Framework::Utilitarian,
            Metric::Rmg => Framework::Rawlsian,
            Metric::Variance => Framework::Libertarian,
            Metric::DwEsg => Framework::Prioritarian,
            Metric::Vwci => Framework::CareEthics,
            Metric::Gini => Framework::Egalitarian,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "esg" => Ok(Metric::Esg),
            "rmg" => Ok(Metric::Rmg),
            "variance" | "var" => Ok(Metric::Variance),
            "dw_esg" | "dwesg" => Ok(Metric::DwEsg),
            "vwci" => Ok(Metric::Vwci),
            "gini" => Ok(Metric::Gini),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

/// Per-patient CNSS values, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CnssVector(pub Vec<f64>);

impl CnssVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fraction of the patient's needs that receive a strictly positive amount.
pub fn cnss(patient: &Patient, row: &[f64]) -> Result<f64, MetricError> {
    if patient.needs.is_empty() {
        return Err(MetricError::EmptyNeeds(patient.id));
    }
    let met = patient.needs.iter().filter(|r| row[r.index()] > 0.0).count();
    Ok(met as f64 / patient.needs.len() as f64)
}

pub fn cnss_vector(cohort: &Cohort, alloc: &Allocation) -> Result<CnssVector, MetricError> {
    alloc.check_dims(cohort.len(), NUM_RESOURCES)?;
    cohort
        .patients
        .iter()
        .enumerate()
        .map(|(i, p)| cnss(p, alloc.row(i)))
        .collect::<Result<Vec<_>, _>>()
        .map(CnssVector)
}

fn check_len(expected: usize, got: usize) -> Result<(), MetricError> {
    if expected != got {
        return Err(MetricError::WeightLength { expected, got });
    }
    Ok(())
}

/// Expected survival gain `sum_i p_i * CNSS_i`.
pub fn esg(cohort: &Cohort, alloc: &Allocation) -> Result<f64, MetricError> {
    let cnss = cnss_vector(cohort, alloc)?;
    Ok(esg_from_cnss(cohort, &cnss))
}

pub fn esg_from_cnss(cohort: &Cohort, cnss: &CnssVector) -> f64 {
    cohort
        .patients
        .iter()
        .zip(cnss.values())
        .map(|(p, c)| p.survival_prob * c)
        .sum()
}

/// Rawlsian minimum guarantee: the smallest CNSS.
pub fn rmg(cnss: &CnssVector) -> Result<f64, MetricError> {
    cnss.values()
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(MetricError::EmptyVector)
}

/// Population variance of CNSS. Zero for an empty vector.
pub fn variance(cnss: &CnssVector) -> f64 {
    let v = cnss.values();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n
}

pub fn dw_esg(cohort: &Cohort, cnss: &CnssVector, weights: &WeightScheme) -> Result<f64, MetricError> {
    weights.expect_kind(WeightKind::Prioritarian)?;
    check_len(cohort.len(), weights.weights.len())?;
    check_len(cohort.len(), cnss.len())?;
    Ok(cohort
        .patients
        .iter()
        .zip(cnss.values())
        .zip(&weights.weights)
        .map(|((p, c), w)| w * p.survival_prob * c)
        .sum())
}

pub fn vwci(cnss: &CnssVector, weights: &WeightScheme) -> Result<f64, MetricError> {
    weights.expect_kind(WeightKind::Care)?;
    check_len(cnss.len(), weights.weights.len())?;
    Ok(cnss.values().iter().zip(&weights.weights).map(|(c, w)| w * c).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniValue {
    pub value: f64,
    /// Set when every entry is zero and the coefficient was defined as 0.
    pub degenerate: bool,
}

/// `G = 2 sum_i i h_(i) / (N sum_i h_(i)) - (N+1)/N` over the ascending sort.
pub fn gini(h: &[f64]) -> Result<GiniValue, MetricError> {
    if h.is_empty() {
        return Err(MetricError::EmptyVector);
    }
    if let Some(&bad) = h.iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(MetricError::NegativeEntry(bad));
    }
    let mut sorted = h.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Ok(GiniValue {
            value: 0.0,
            degenerate: true,
        });
    }
    // Sum of pairwise differences written over the gaps between consecutive
    // sorted values: equal values contribute exact zeros, so an all-equal
    // vector gives exactly 0 and no term can be negative.
    let n = sorted.len();
    let spread: f64 = sorted
        .windows(2)
        .enumerate()
        .map(|(k, w)| ((k + 1) * (n - k - 1)) as f64 * (w[1] - w[0]))
        .sum();
    let value = spread / (n as f64 * total);
    Ok(GiniValue {
        value,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Prioritarian,
    Care,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBand {
    pub min: u32,
    pub max: u32,
    pub score: f64,
}

/// Disadvantage score per attribute value, higher meaning more
/// historically disadvantaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub age_bands: Vec<AgeBand>,
    pub gender: BTreeMap<String, f64>,
    pub race: BTreeMap<String, f64>,
    pub ses: BTreeMap<String, f64>,
    pub citizenship: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    pub ses: f64,
    pub citizenship: f64,
    pub race: f64,
    pub age: f64,
    pub gender: f64,
}

impl AttributeWeights {
    fn total(&self) -> f64 {
        self.ses + self.citizenship + self.race + self.age + self.gender
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub scores: AttributeScores,
    pub prioritarian: AttributeWeights,
    pub care: AttributeWeights,
    /// Final weight is `floor + (1 - floor) * raw`.
    pub floor: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/weights.json")).expect("bundled weight config is valid")
    }
}

impl WeightConfig {
    fn lookup(table: &BTreeMap<String, f64>, attribute: &str, value: &str) -> Result<f64, MetricError> {
        table
            .get(value)
            .copied()
            .ok_or_else(|| MetricError::MissingAttributeScore {
                attribute: attribute.to_string(),
                value: value.to_string(),
            })
    }

    fn age_score(&self, age: u32) -> Result<f64, MetricError> {
        self.scores
            .age_bands
            .iter()
            .find(|b| b.min <= age && age <= b.max)
            .map(|b| b.score)
            .ok_or_else(|| MetricError::MissingAttributeScore {
                attribute: "age".into(),
                value: age.to_string(),
            })
    }

    /// Raw disadvantage score in `[0, 1]` before the floor is applied.
    pub fn raw_score(&self, patient: &Patient, kind: WeightKind) -> Result<f64, MetricError> {
        let w = match kind {
            WeightKind::Prioritarian => self.prioritarian,
            WeightKind::Care => self.care,
        };
        let s = &self.scores;
        let weighted = w.ses * Self::lookup(&s.ses, "ses", &patient.ses)?
            + w.citizenship * Self::lookup(&s.citizenship, "citizenship", &patient.citizenship)?
            + w.race * Self::lookup(&s.race, "race", &patient.race)?
            + w.age * self.age_score(patient.age)?
            + w.gender * Self::lookup(&s.gender, "gender", &patient.gender)?;
        Ok(weighted / w.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub weights: Vec<f64>,
}

impl WeightScheme {
    pub fn uniform(kind: WeightKind, n: usize) -> Self {
        WeightScheme {
            kind,
            weights: vec![1.0; n],
        }
    }

    fn expect_kind(&self, expected: WeightKind) -> Result<(), MetricError> {
        if self.kind != expected {
            return Err(MetricError::WeightKindMismatch {
                expected,
                got: self.kind,
            });
        }
        Ok(())
    }
}

pub fn compute_weights(cohort: &Cohort, kind: WeightKind, config: &WeightConfig) -> Result<WeightScheme, MetricError> {
    let weights = cohort
        .patients
        .iter()
        .map(|p| {
            config
                .raw_score(p, kind)
                .map(|raw| config.floor + (1.0 - config.floor) * raw)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WeightScheme { kind, weights })
}

/// What the Gini coefficient is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GiniBasis {
    #[default]
    Cnss,
    NursingHours,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricConfig {
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub gini_basis: GiniBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub esg: f64,
    pub rmg: f64,
    pub variance: f64,
    pub dw_esg: f64,
    pub vwci: f64,
    pub gini: f64,
    #[serde(default)]
    pub gini_degenerate: bool,
    pub feasible: bool,
    pub cnss: CnssVector,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Esg => self.esg,
            Metric::Rmg => self.rmg,
            Metric::Variance => self.variance,
            Metric::DwEsg => self.dw_esg,
            Metric::Vwci => self.vwci,
            Metric::Gini => self.gini,
        }
    }
}

/// Scores one allocation against one cohort: CNSS once, then all six
/// metrics plus the feasibility verdict.
pub fn metric_report(cohort: &Cohort, alloc: &Allocation, config: &MetricConfig) -> Result<MetricReport, MetricError> {
    let cnss = cnss_vector(cohort, alloc)?;
    let prior = compute_weights(cohort, WeightKind::Prioritarian, &config.weights)?;
    let care = compute_weights(cohort, WeightKind::Care, &config.weights)?;
    let gini_input: Vec<f64> = match config.gini_basis {
        GiniBasis::Cnss => cnss.values().to_vec(),
        GiniBasis::NursingHours => (0..alloc.rows())
            .map(|i| alloc.get(i, Resource::Nursing.index()).max(0.0))
            .collect(),
    };
    let g = gini(&gini_input)?;
    let feasible = validate_allocation(alloc, &cohort.capacity, cohort.len())?.feasible;
    Ok(MetricReport {
        esg: esg_from_cnss(cohort, &cnss),
        rmg: rmg(&cnss)?,
        variance: variance(&cnss),
        dw_esg: dw_esg(cohort, &cnss, &prior)?,
        vwci: vwci(&cnss, &care)?,
        gini: g.value,
        gini_degenerate: g.degenerate,
        feasible,
        cnss,
    })
}
