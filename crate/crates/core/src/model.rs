//! Domain types for the multi-resource allocation problem: resources,
//! capacities, patients, cohorts, allocation matrices and agent profiles.
//!
//! Allocations are parametric in the number of rows (patients) and columns
//! (resources). Hospital instances always use the six canonical resources;
//! the welfare oracle reuses the same matrix type with a single column.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of resources in a hospital instance.
pub const NUM_RESOURCES: usize = 6;

/// Absolute tolerance applied to column sums when checking feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown capacity variant `{0}` (expected standard, tight or abundant)")]
    UnknownVariant(String),
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("unknown framework `{0}`")]
    UnknownFramework(String),
    #[error("allocation has {got_rows}x{got_cols} entries, expected {want_rows}x{want_cols}")]
    DimensionMismatch {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("ragged allocation matrix: row {row} has {len} entries, expected {expected}")]
    RaggedMatrix { row: usize, len: usize, expected: usize },
    #[error("capacity for {resource} must be positive, got {value}")]
    NonPositiveCapacity { resource: String, value: f64 },
    #[error("invalid patient {id}: {reason}")]
    InvalidPatient { id: u32, reason: String },
    #[error("invalid cohort {cohort_id}: {reason}")]
    InvalidCohort { cohort_id: u64, reason: String },
    #[error("inconsistent agent profile: {0}")]
    InconsistentProfile(String),
}

/// The six scarce resources, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    #[serde(rename = "ICU")]
    Icu,
    Vent,
    MedA,
    MedB,
    Nursing,
    Surgery,
}

impl Resource {
    pub const ALL: [Resource; NUM_RESOURCES] = [
        Resource::Icu,
        Resource::Vent,
        Resource::MedA,
        Resource::MedB,
        Resource::Nursing,
        Resource::Surgery,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Resource> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Resource::Icu => "ICU",
            Resource::Vent => "Vent",
            Resource::MedA => "MedA",
            Resource::MedB => "MedB",
            Resource::Nursing => "Nursing",
            Resource::Surgery => "Surgery",
        }
    }

    /// ICU beds, ventilators and surgical slots come in whole units; the
    /// medications and nursing hours can be split.
    pub fn is_unit(self) -> bool {
        matches!(self, Resource::Icu | Resource::Vent | Resource::Surgery)
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resource {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        match key.as_str() {
            "icu" => Ok(Resource::Icu),
            "vent" | "ventilator" => Ok(Resource::Vent),
            "meda" => Ok(Resource::MedA),
            "medb" => Ok(Resource::MedB),
            "nursing" | "nurs" | "nurse" => Ok(Resource::Nursing),
            "surgery" | "surg" => Ok(Resource::Surgery),
            _ => Err(ModelError::UnknownResource(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityVariant {
    Standard,
    Tight,
    Abundant,
}

impl CapacityVariant {
    pub const ALL: [CapacityVariant; 3] = [
        CapacityVariant::Standard,
        CapacityVariant::Tight,
        CapacityVariant::Abundant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CapacityVariant::Standard => "standard",
            CapacityVariant::Tight => "tight",
            CapacityVariant::Abundant => "abundant",
        }
    }
}

impl fmt::Display for CapacityVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CapacityVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(CapacityVariant::Standard),
            "tight" => Ok(CapacityVariant::Tight),
            "abundant" => Ok(CapacityVariant::Abundant),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

/// Supply vector `R_j` per resource column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceCapacity {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<CapacityVariant>,
    pub supply: Vec<f64>,
}

impl ResourceCapacity {
    pub fn new(variant: Option<CapacityVariant>, supply: Vec<f64>) -> Result<Self, ModelError> {
        let cap = ResourceCapacity { variant, supply };
        cap.validate()?;
        Ok(cap)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (j, &value) in self.supply.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                let resource = if self.supply.len() == NUM_RESOURCES {
                    Resource::ALL[j].name().to_string()
                } else {
                    format!("column {j}")
                };
                return Err(ModelError::NonPositiveCapacity { resource, value });
            }
        }
        Ok(())
    }

    pub fn get(&self, resource: Resource) -> f64 {
        self.supply[resource.index()]
    }

    pub fn len(&self) -> usize {
        self.supply.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supply.is_empty()
    }
}

/// Configurable table of the three named supply vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityTable {
    pub standard: [f64; NUM_RESOURCES],
    pub tight: [f64; NUM_RESOURCES],
    pub abundant: [f64; NUM_RESOURCES],
}

impl Default for CapacityTable {
    fn default() -> Self {
        CapacityTable {
            standard: [3.0, 2.0, 60.0, 50.0, 80.0, 3.0],
            tight: [2.0, 1.0, 45.0, 35.0, 60.0, 2.0],
            abundant: [4.0, 3.0, 80.0, 70.0, 100.0, 4.0],
        }
    }
}

impl CapacityTable {
    pub fn capacity(&self, variant: CapacityVariant) -> ResourceCapacity {
        let supply = match variant {
            CapacityVariant::Standard => self.standard,
            CapacityVariant::Tight => self.tight,
            CapacityVariant::Abundant => self.abundant,
        };
        ResourceCapacity {
            variant: Some(variant),
            supply: supply.to_vec(),
        }
    }
}

/// Supply vector of a named variant using the default capacity table.
pub fn capacity_for_variant(variant: CapacityVariant) -> ResourceCapacity {
    CapacityTable::default().capacity(variant)
}

/// Like [`capacity_for_variant`], but parses the variant name first.
pub fn capacity_for_name(name: &str) -> Result<ResourceCapacity, ModelError> {
    Ok(capacity_for_variant(name.parse()?))
}

/// Label attached to a survival probability by the fixed discretization bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurvivalLabel {
    Acute,
    Low,
    Mid,
    High,
}

impl SurvivalLabel {
    pub const ALL: [SurvivalLabel; 4] = [
        SurvivalLabel::Acute,
        SurvivalLabel::Low,
        SurvivalLabel::Mid,
        SurvivalLabel::High,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurvivalLabel::Acute => "Acute",
            SurvivalLabel::Low => "Low",
            SurvivalLabel::Mid => "Mid",
            SurvivalLabel::High => "High",
        }
    }
}

impl fmt::Display for SurvivalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bins are half-open except the last: [0,0.2) Acute, [0.2,0.5) Low,
/// [0.5,0.7) Mid, [0.7,1] High.
pub fn discretize_survival(p: f64) -> Option<SurvivalLabel> {
    if !(0.0..=1.0).contains(&p) {
        return None;
    }
    Some(if p < 0.2 {
        SurvivalLabel::Acute
    } else if p < 0.5 {
        SurvivalLabel::Low
    } else if p < 0.7 {
        SurvivalLabel::Mid
    } else {
        SurvivalLabel::High
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    /// 1-based position in the cohort.
    pub id: u32,
    pub age: u32,
    pub gender: String,
    pub race: String,
    pub ses: String,
    pub citizenship: String,
    pub condition: String,
    pub needs: Vec<Resource>,
    pub survival_prob: f64,
    pub survival_label: SurvivalLabel,
    pub occupation: String,
    pub family_status: String,
    pub slot_id: String,
    /// Free-text urgency carried from the slot definition; never derived
    /// from the survival probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urgency: Option<String>,
}

/// Fields that must not repeat within one cohort.
pub type DemographicTuple<'a> = (u32, &'a str, &'a str, &'a str, &'a str);

impl Patient {
    pub fn demographic_tuple(&self) -> DemographicTuple<'_> {
        (self.age, &self.gender, &self.race, &self.ses, &self.citizenship)
    }

    pub fn needs_resource(&self, resource: Resource) -> bool {
        self.needs.contains(&resource)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::InvalidPatient { id: self.id, reason };
        if self.needs.is_empty() {
            return Err(fail("needs set is empty".into()));
        }
        let mut sorted = self.needs.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.needs.len() {
            return Err(fail("needs set contains duplicates".into()));
        }
        match discretize_survival(self.survival_prob) {
            None => Err(fail(format!(
                "survival probability {} outside [0, 1]",
                self.survival_prob
            ))),
            Some(label) if label != self.survival_label => Err(fail(format!(
                "survival label {} inconsistent with probability {}",
                self.survival_label, self.survival_prob
            ))),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub cohort_id: u64,
    pub seed: u64,
    pub patients: Vec<Patient>,
    pub capacity: ResourceCapacity,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn survival_probs(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.survival_prob).collect()
    }

    /// Index pairs `(i, j)` of patients sharing a full demographic tuple.
    pub fn diversity_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.patients.len() {
            for j in (i + 1)..self.patients.len() {
                if self.patients[i].demographic_tuple() == self.patients[j].demographic_tuple() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::InvalidCohort {
            cohort_id: self.cohort_id,
            reason,
        };
        if self.patients.is_empty() {
            return Err(fail("cohort has no patients".into()));
        }
        if self.capacity.len() != NUM_RESOURCES {
            return Err(fail(format!(
                "capacity has {} entries, expected {NUM_RESOURCES}",
                self.capacity.len()
            )));
        }
        self.capacity.validate()?;
        for (i, patient) in self.patients.iter().enumerate() {
            if patient.id as usize != i + 1 {
                return Err(fail(format!(
                    "patient at position {} has id {}, expected {}",
                    i,
                    patient.id,
                    i + 1
                )));
            }
            patient.validate()?;
        }
        if let Some((i, j)) = self.diversity_violations().first() {
            return Err(fail(format!(
                "patients {} and {} share an identical demographic profile",
                i + 1,
                j + 1
            )));
        }
        Ok(())
    }
}

/// Row-major `rows x cols` matrix of nonnegative quantities.
///
/// Serialized as an array of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Allocation {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Allocation {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// A zero matrix sized for a hospital cohort of `n` patients.
    pub fn zeros_for(n: usize) -> Self {
        Self::zeros(n, NUM_RESOURCES)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n = rows.len();
        let cols = rows.first().map_or(NUM_RESOURCES, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(ModelError::RaggedMatrix {
                    row: i,
                    len: row.len(),
                    expected: cols,
                });
            }
            data.extend(row);
        }
        Ok(Allocation { rows: n, cols, data })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::DimensionMismatch {
                got_rows: data.len() / cols.max(1),
                got_cols: cols,
                want_rows: rows,
                want_cols: cols,
            });
        }
        Ok(Allocation { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Allocation {
        Allocation {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn check_dims(&self, rows: usize, cols: usize) -> Result<(), ModelError> {
        if self.rows != rows || self.cols != cols {
            return Err(ModelError::DimensionMismatch {
                got_rows: self.rows,
                got_cols: self.cols,
                want_rows: rows,
                want_cols: cols,
            });
        }
        Ok(())
    }
}

impl Serialize for Allocation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Allocation::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Per-resource totals `sum_i a_ij`.
pub fn column_totals(alloc: &Allocation) -> Vec<f64> {
    let mut totals = vec![0.0; alloc.cols()];
    for i in 0..alloc.rows() {
        for (total, value) in totals.iter_mut().zip(alloc.row(i)) {
            *total += value;
        }
    }
    totals
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Column index; for hospital instances this is `Resource::index`.
    pub column: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<Resource>,
    pub total: f64,
    pub capacity: f64,
    pub overshoot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    /// `(row, column)` of negative entries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub negative_entries: Vec<(usize, usize)>,
}

impl FeasibilityResult {
    pub fn overshoot(&self, resource: Resource) -> Option<f64> {
        self.violations
            .iter()
            .find(|v| v.column == resource.index())
            .map(|v| v.overshoot)
    }
}

/// Checks the supply constraints column by column.
///
/// `expected_rows` is the size of the cohort the allocation is evaluated
/// against.
pub fn validate_allocation(
    alloc: &Allocation,
    capacity: &ResourceCapacity,
    expected_rows: usize,
) -> Result<FeasibilityResult, ModelError> {
    alloc.check_dims(expected_rows, capacity.len())?;
    let totals = column_totals(alloc);
    let hospital = capacity.len() == NUM_RESOURCES;
    let violations: Vec<Violation> = totals
        .iter()
        .zip(&capacity.supply)
        .enumerate()
        .filter(|(_, (&total, &cap))| total - cap > FEASIBILITY_TOL)
        .map(|(j, (&total, &cap))| Violation {
            column: j,
            resource: if hospital { Resource::from_index(j) } else { None },
            total,
            capacity: cap,
            overshoot: total - cap,
        })
        .collect();
    let mut negative_entries = Vec::new();
    for i in 0..alloc.rows() {
        for (j, &v) in alloc.row(i).iter().enumerate() {
            if v < 0.0 || v.is_nan() {
                negative_entries.push((i, j));
            }
        }
    }
    Ok(FeasibilityResult {
        feasible: violations.is_empty() && negative_entries.is_empty(),
        violations,
        negative_entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Utilitarian,
    Rawlsian,
    Egalitarian,
    Libertarian,
    Prioritarian,
    CareEthics,
}

impl Framework {
    pub const ALL: [Framework; 6] = [
        Framework::Utilitarian,
        Framework::Rawlsian,
        Framework::Egalitarian,
        Framework::Libertarian,
        Framework::Prioritarian,
        Framework::CareEthics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Framework::Utilitarian => "utilitarian",
            Framework::Rawlsian => "rawlsian",
            Framework::Egalitarian => "egalitarian",
            Framework::Libertarian => "libertarian",
            Framework::Prioritarian => "prioritarian",
            Framework::CareEthics => "care_ethics",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Framework::Utilitarian => "Utilitarian",
            Framework::Rawlsian => "Rawlsian",
            Framework::Egalitarian => "Egalitarian",
            Framework::Libertarian => "Libertarian",
            Framework::Prioritarian => "Prioritarian",
            Framework::CareEthics => "Care Ethics",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Framework {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match key.as_str() {
            "utilitarian" => Ok(Framework::Utilitarian),
            "rawlsian" => Ok(Framework::Rawlsian),
            "egalitarian" => Ok(Framework::Egalitarian),
            "libertarian" => Ok(Framework::Libertarian),
            "prioritarian" => Ok(Framework::Prioritarian),
            "care_ethics" | "care" | "careethics" => Ok(Framework::CareEthics),
            _ => Err(ModelError::UnknownFramework(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Aligned,
    Baseline,
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSource {
    None,
    AdversarialPrompt,
    BiasedCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub kind: ProfileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<Framework>,
    pub retrieval_enabled: bool,
    pub bias_source: BiasSource,
}

impl AgentProfile {
    pub fn aligned(framework: Framework, retrieval_enabled: bool) -> Self {
        AgentProfile {
            kind: ProfileKind::Aligned,
            framework: Some(framework),
            retrieval_enabled,
            bias_source: BiasSource::None,
        }
    }

    pub fn baseline() -> Self {
        AgentProfile {
            kind: ProfileKind::Baseline,
            framework: None,
            retrieval_enabled: false,
            bias_source: BiasSource::None,
        }
    }

    pub fn biased(bias_source: BiasSource) -> Self {
        AgentProfile {
            kind: ProfileKind::Biased,
            framework: None,
            retrieval_enabled: bias_source == BiasSource::BiasedCorpus,
            bias_source,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::InconsistentProfile(msg.to_string()));
        match self.kind {
            ProfileKind::Aligned => {
                if self.framework.is_none() {
                    return fail("aligned profile requires a framework");
                }
                if self.bias_source != BiasSource::None {
                    return fail("aligned profile cannot carry a bias source");
                }
            }
            ProfileKind::Baseline => {
                if self.framework.is_some() {
                    return fail("baseline profile has no framework");
                }
                if self.bias_source != BiasSource::None {
                    return fail("baseline profile cannot carry a bias source");
                }
                if self.retrieval_enabled {
                    return fail("baseline profile has no retrieval");
                }
            }
            ProfileKind::Biased => {
                if self.framework.is_some() {
                    return fail("biased profile has no framework");
                }
                if self.bias_source == BiasSource::None {
                    return fail("biased profile requires a bias source");
                }
            }
        }
        Ok(())
    }
}
