//! Brute-force welfare optimization over discretized allocation spaces.
//!
//! A [`DiscretizedSpace`] enumerates every grid allocation that satisfies
//! the supply constraints. [`argmax_set`] scans it for one functional and
//! [`check_nondegeneracy`] intersects the argmax sets of several. Verdicts
//! are only as strong as the grid: reports say "grid-certified at step s".

pub mod cake;
pub mod scan;

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{cnss_vector, gini};
use crate::model::{Allocation, Cohort};

pub use cake::{
    cake_utilities, cake_utilities_unchecked, verify_cake_claims, verify_cake_claims_relaxed, CakeParams, ClaimCheck,
    RefinementCheck, VerificationReport, ROBUST_TOL,
};

/// Default absolute tolerance for argmax membership.
pub const ARGMAX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid has {count} candidates, above the enumeration bound {bound}")]
    BoundExceeded { count: u128, bound: u128 },
    #[error("step {step} does not divide supply {supply} of column {column}")]
    StepDoesNotDivide { step: f64, supply: f64, column: usize },
    #[error("grid step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("allocation space is empty")]
    EmptySpace,
    #[error("need at least two functionals, got {0}")]
    TooFewFunctionals(usize),
    #[error("invalid cake parameters: {0}")]
    InvalidParams(String),
    #[error("step {step} cannot resolve thresholds; need step <= {max_step}")]
    StepTooCoarse { step: f64, max_step: f64 },
    #[error("{0}")]
    Utility(String),
}

/// Finite proxy for the feasible set: each column takes values
/// `k * supply / units` and column sums never exceed the supply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSpace {
    pub step: f64,
    pub supply: Vec<f64>,
    pub n: usize,
    pub enumeration_bound: u128,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

impl DiscretizedSpace {
    pub fn new(step: f64, supply: Vec<f64>, n: usize) -> Self {
        DiscretizedSpace {
            step,
            supply,
            n,
            enumeration_bound: 50_000_000,
        }
    }

    pub fn with_bound(mut self, bound: u128) -> Self {
        self.enumeration_bound = bound;
        self
    }

    pub fn k(&self) -> usize {
        self.supply.len()
    }

    /// Grid units per column, `supply_j / step`.
    pub fn units(&self) -> Result<Vec<u32>, OracleError> {
        if !(self.step > 0.0) {
            return Err(OracleError::NonPositiveStep(self.step));
        }
        self.supply
            .iter()
            .enumerate()
            .map(|(j, &r)| {
                let ratio = r / self.step;
                let rounded = ratio.round();
                if (ratio - rounded).abs() > 1e-9 || rounded < 1.0 {
                    Err(OracleError::StepDoesNotDivide {
                        step: self.step,
                        supply: r,
                        column: j,
                    })
                } else {
                    Ok(rounded as u32)
                }
            })
            .collect()
    }

    /// Number of grid points: per column, compositions of at most `units`
    /// into `n` parts, i.e. `C(units + n, n)`.
    pub fn count(&self) -> Result<u128, OracleError> {
        let units = self.units()?;
        Ok(units
            .iter()
            .map(|&u| binomial(u as u128 + self.n as u128, self.n as u128))
            .fold(1u128, |acc, c| acc.saturating_mul(c)))
    }

    /// Streams every feasible grid allocation exactly once. The first column
    /// is the outermost loop; within a column, compositions ascend
    /// lexicographically in patient order.
    pub fn enumerate(&self) -> Result<GridIter, OracleError> {
        if self.n == 0 || self.supply.is_empty() {
            return Err(OracleError::EmptySpace);
        }
        let count = self.count()?;
        if count > self.enumeration_bound {
            return Err(OracleError::BoundExceeded {
                count,
                bound: self.enumeration_bound,
            });
        }
        let units = self.units()?;
        Ok(GridIter {
            n: self.n,
            supply: self.supply.clone(),
            x: vec![vec![0; self.n]; units.len()],
            sums: vec![0; units.len()],
            units,
            done: false,
        })
    }
}

pub struct GridIter {
    n: usize,
    supply: Vec<f64>,
    units: Vec<u32>,
    x: Vec<Vec<u32>>,
    sums: Vec<u32>,
    done: bool,
}

impl GridIter {
    fn current(&self) -> Allocation {
        let k = self.units.len();
        let mut a = Allocation::zeros(self.n, k);
        for j in 0..k {
            for i in 0..self.n {
                a.set(i, j, self.supply[j] * self.x[j][i] as f64 / self.units[j] as f64);
            }
        }
        a
    }

    /// Advances column `j` to its next composition; `false` on wrap-around.
    fn advance_column(&mut self, j: usize) -> bool {
        let n = self.n;
        let col = &mut self.x[j];
        if self.sums[j] < self.units[j] {
            col[n - 1] += 1;
            self.sums[j] += 1;
            return true;
        }
        let i = match col.iter().rposition(|&v| v > 0) {
            Some(i) => i,
            None => return false,
        };
        if i == 0 {
            col.iter_mut().for_each(|v| *v = 0);
            self.sums[j] = 0;
            return false;
        }
        self.sums[j] -= col[i] - 1;
        col[i] = 0;
        col[i - 1] += 1;
        true
    }
}

impl Iterator for GridIter {
    type Item = Allocation;

    fn next(&mut self) -> Option<Allocation> {
        if self.done {
            return None;
        }
        let out = self.current();
        let mut j = self.units.len();
        loop {
            if j == 0 {
                self.done = true;
                break;
            }
            j -= 1;
            if self.advance_column(j) {
                break;
            }
        }
        Some(out)
    }
}

/// Per-individual utilities `U_i(a_i)` for an allocation.
pub type UtilityFn = Arc<dyn Fn(&Allocation) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Util,
    Egal,
    Rawls,
    Prior,
    Custom,
}

/// A scalar objective over allocations, always maximized.
#[derive(Clone)]
pub struct WelfareFunctional {
    pub name: String,
    pub kind: FunctionalKind,
    evaluator: Arc<dyn Fn(&Allocation) -> f64 + Send + Sync>,
}

impl fmt::Debug for WelfareFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WelfareFunctional")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish()
    }
}

/// Negative Gini of the utility vector. All-zero utilities score 0; any
/// negative utility makes the coefficient undefined and scores `-inf`.
pub fn egal_value(u: &[f64]) -> f64 {
    match gini(u) {
        Ok(g) => -g.value,
        Err(_) => f64::NEG_INFINITY,
    }
}

impl WelfareFunctional {
    pub fn custom(name: impl Into<String>, evaluator: impl Fn(&Allocation) -> f64 + Send + Sync + 'static) -> Self {
        WelfareFunctional {
            name: name.into(),
            kind: FunctionalKind::Custom,
            evaluator: Arc::new(evaluator),
        }
    }

    pub fn util(utilities: UtilityFn) -> Self {
        WelfareFunctional {
            name: "util".into(),
            kind: FunctionalKind::Util,
            evaluator: Arc::new(move |a| utilities(a).iter().sum()),
        }
    }

    pub fn egal(utilities: UtilityFn) -> Self {
        WelfareFunctional {
            name: "egal".into(),
            kind: FunctionalKind::Egal,
            evaluator: Arc::new(move |a| egal_value(&utilities(a))),
        }
    }

    pub fn rawls(utilities: UtilityFn) -> Self {
        WelfareFunctional {
            name: "rawls".into(),
            kind: FunctionalKind::Rawls,
            evaluator: Arc::new(move |a| utilities(a).into_iter().fold(f64::INFINITY, f64::min)),
        }
    }

    pub fn prior(utilities: UtilityFn, weights: Vec<f64>) -> Self {
        WelfareFunctional {
            name: "prior".into(),
            kind: FunctionalKind::Prior,
            evaluator: Arc::new(move |a| utilities(a).iter().zip(&weights).map(|(u, w)| u * w).sum()),
        }
    }

    /// The four standard functionals over one utility provider.
    pub fn standard_four(utilities: UtilityFn, prior_weights: Vec<f64>) -> Vec<Self> {
        vec![
            Self::util(utilities.clone()),
            Self::egal(utilities.clone()),
            Self::rawls(utilities.clone()),
            Self::prior(utilities, prior_weights),
        ]
    }

    pub fn evaluate(&self, alloc: &Allocation) -> f64 {
        (self.evaluator)(alloc)
    }
}

/// CNSS utilities of a hospital cohort.
pub fn cnss_utilities(cohort: Cohort) -> UtilityFn {
    Arc::new(move |a| {
        cnss_vector(&cohort, a)
            .map(|c| c.0)
            .unwrap_or_else(|_| vec![f64::NAN; cohort.len()])
    })
}

/// Single-resource linear utilities `U_i = slope_i * x_i`.
pub fn linear_utilities(slopes: Vec<f64>) -> UtilityFn {
    Arc::new(move |a| slopes.iter().enumerate().map(|(i, s)| s * a.get(i, 0)).collect())
}

/// Total order on allocations used to canonicalize argmax sets.
pub fn canonical_cmp(a: &Allocation, b: &Allocation) -> Ordering {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxSet {
    pub max_value: f64,
    pub members: Vec<Allocation>,
}

/// Every grid allocation whose value is within `tol` of the grid maximum,
/// canonically sorted.
pub fn argmax_set(
    functional: &WelfareFunctional,
    space: &DiscretizedSpace,
    tol: f64,
) -> Result<ArgmaxSet, OracleError> {
    let mut best = f64::NEG_INFINITY;
    let mut candidates: Vec<(f64, Allocation)> = Vec::new();
    for alloc in space.enumerate()? {
        let v = functional.evaluate(&alloc);
        if v.is_nan() {
            continue;
        }
        if v > best {
            best = v;
            candidates.retain(|(cv, _)| *cv >= best - tol);
        }
        if v >= best - tol {
            candidates.push((v, alloc));
        }
    }
    if candidates.is_empty() {
        return Err(OracleError::EmptySpace);
    }
    let mut members: Vec<Allocation> = candidates
        .into_iter()
        .filter(|(v, _)| *v >= best - tol)
        .map(|(_, a)| a)
        .collect();
    members.sort_by(canonical_cmp);
    Ok(ArgmaxSet {
        max_value: best,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub name: String,
    pub max_value: f64,
    pub argmax_count: usize,
    /// Up to [`MAX_LISTED_MEMBERS`] argmax members, canonically sorted.
    pub argmax: Vec<Allocation>,
}

pub const MAX_LISTED_MEMBERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvidence {
    pub first: String,
    pub second: String,
    pub intersect: bool,
    /// A maximizer of `first` and its shortfall under `second` when the two
    /// argmax sets are disjoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_maximizer: Option<Allocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall_under_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub certification: String,
    pub step: f64,
    pub tol: f64,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Allocation>,
    pub functionals: Vec<FunctionalSummary>,
    pub pairs: Vec<PairEvidence>,
}

fn summarize(name: &str, set: &ArgmaxSet) -> FunctionalSummary {
    FunctionalSummary {
        name: name.to_string(),
        max_value: set.max_value,
        argmax_count: set.members.len(),
        argmax: set.members.iter().take(MAX_LISTED_MEMBERS).cloned().collect(),
    }
}

/// Intersects the argmax sets of all functionals on the grid.
pub fn check_nondegeneracy(
    functionals: &[WelfareFunctional],
    space: &DiscretizedSpace,
    tol: f64,
) -> Result<NondegeneracyReport, OracleError> {
    if functionals.len() < 2 {
        return Err(OracleError::TooFewFunctionals(functionals.len()));
    }
    let sets = functionals
        .iter()
        .map(|f| argmax_set(f, space, tol))
        .collect::<Result<Vec<_>, _>>()?;
    let is_member = |m: usize, a: &Allocation| functionals[m].evaluate(a) >= sets[m].max_value - tol;

    let smallest = (0..sets.len())
        .min_by_key(|&m| sets[m].members.len())
        .expect("at least two functionals");
    let witness = sets[smallest]
        .members
        .iter()
        .find(|a| (0..functionals.len()).all(|m| is_member(m, a)))
        .cloned();

    let mut pairs = Vec::new();
    for a in 0..functionals.len() {
        for b in (a + 1)..functionals.len() {
            let shared = sets[a].members.iter().find(|x| is_member(b, x));
            let (first_maximizer, shortfall) = match shared {
                Some(_) => (None, None),
                None => {
                    let x = &sets[a].members[0];
                    (Some(x.clone()), Some(sets[b].max_value - functionals[b].evaluate(x)))
                }
            };
            pairs.push(PairEvidence {
                first: functionals[a].name.clone(),
                second: functionals[b].name.clone(),
                intersect: shared.is_some(),
                first_maximizer,
                shortfall_under_second: shortfall,
            });
        }
    }
    Ok(NondegeneracyReport {
        certification: format!("grid-certified at step {}", space.step),
        step: space.step,
        tol,
        degenerate: witness.is_some(),
        witness,
        functionals: functionals
            .iter()
            .zip(&sets)
            .map(|(f, s)| summarize(&f.name, s))
            .collect(),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(space: &DiscretizedSpace) -> Vec<Vec<f64>> {
        space.enumerate().unwrap().map(|a| a.as_slice().to_vec()).collect()
    }

    #[test]
    fn two_by_one_half_step_grid() {
        let space = DiscretizedSpace::new(0.5, vec![1.0], 2);
        assert_eq!(
            points(&space),
            vec![
                vec![0.0, 0.0],
                vec![0.0, 0.5],
                vec![0.0, 1.0],
                vec![0.5, 0.0],
                vec![0.5, 0.5],
                vec![1.0, 0.0],
            ]
        );
        assert_eq!(space.count().unwrap(), 6);
    }

    #[test]
    fn coarsest_grid_is_corners_plus_zero() {
        let space = DiscretizedSpace::new(1.0, vec![1.0], 3);
        assert_eq!(
            points(&space),
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0],
            ]
        );
    }

    #[test]
    fn stars_and_bars_count() {
        let space = DiscretizedSpace::new(0.05, vec![1.0], 6);
        assert_eq!(space.count().unwrap(), binomial(26, 6));
        assert_eq!(space.enumerate().unwrap().count() as u128, binomial(26, 6));
    }

    #[test]
    fn multi_column_count_is_product() {
        let space = DiscretizedSpace::new(1.0, vec![2.0, 1.0], 2);
        assert_eq!(space.count().unwrap(), 6 * 3);
        assert_eq!(space.enumerate().unwrap().count(), 18);
    }

    #[test]
    fn bound_is_enforced() {
        let space = DiscretizedSpace::new(0.01, vec![1.0], 6).with_bound(1000);
        match space.enumerate() {
            Err(OracleError::BoundExceeded { count, bound }) => {
                assert_eq!(count, binomial(106, 6));
                assert_eq!(bound, 1000);
            }
            other => panic!("unexpected {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn step_must_divide_supply() {
        let space = DiscretizedSpace::new(0.3, vec![1.0], 2);
        assert!(matches!(space.units(), Err(OracleError::StepDoesNotDivide { .. })));
    }

    #[test]
    fn constant_functional_keeps_everything() {
        let space = DiscretizedSpace::new(0.25, vec![1.0], 3);
        let f = WelfareFunctional::custom("const", |_| 1.0);
        let set = argmax_set(&f, &space, 0.0).unwrap();
        assert_eq!(set.members.len() as u128, space.count().unwrap());
    }

    #[test]
    fn identical_functionals_are_degenerate() {
        let space = DiscretizedSpace::new(0.25, vec![1.0], 3);
        let u = linear_utilities(vec![1.0, 2.0, 3.0]);
        let fs = vec![WelfareFunctional::util(u.clone()), WelfareFunctional::util(u)];
        let report = check_nondegeneracy(&fs, &space, ARGMAX_TOL).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.witness.unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn order_preserving_prior_agrees_with_util() {
        let space = DiscretizedSpace::new(0.25, vec![1.0], 3);
        let u = linear_utilities(vec![1.0, 2.0, 3.0]);
        let fs = vec![
            WelfareFunctional::util(u.clone()),
            WelfareFunctional::prior(u, vec![1.0, 1.5, 2.0]),
        ];
        let report = check_nondegeneracy(&fs, &space, ARGMAX_TOL).unwrap();
        assert!(report.degenerate);
        assert!(report.pairs[0].intersect);
    }

    #[test]
    fn util_and_rawls_disagree_on_linear_instance() {
        let space = DiscretizedSpace::new(0.25, vec![1.0], 3);
        let u = linear_utilities(vec![1.0, 2.0, 3.0]);
        let fs = vec![WelfareFunctional::util(u.clone()), WelfareFunctional::rawls(u)];
        let report = check_nondegeneracy(&fs, &space, ARGMAX_TOL).unwrap();
        assert!(!report.degenerate);
        let pair = &report.pairs[0];
        assert!(!pair.intersect);
        assert!(pair.shortfall_under_second.unwrap() > 0.0);
    }

    #[test]
    fn single_functional_is_rejected() {
        let space = DiscretizedSpace::new(0.5, vec![1.0], 2);
        let f = WelfareFunctional::custom("c", |_| 0.0);
        assert_eq!(
            check_nondegeneracy(&[f], &space, 0.0).unwrap_err(),
            OracleError::TooFewFunctionals(1)
        );
    }

    #[test]
    fn egal_value_conventions() {
        assert_eq!(egal_value(&[0.0, 0.0]), 0.0);
        assert_eq!(egal_value(&[1.0, -0.5]), f64::NEG_INFINITY);
        assert!((egal_value(&[1.0, 3.0]) + 0.25).abs() < 1e-12);
    }
}
