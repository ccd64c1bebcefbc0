//! The six-person cake-division instance and mechanical checks of its
//! non-degeneracy claims.
//!
//! Utilities on a unit cake (`x` in `[0, 1]`):
//! `U1 = x^alpha`, `U2 = x^beta`, `U3 = gamma*x`,
//! `U4 = delta*x - lambda*(x - xbar4)^2 * [x > xbar4]`,
//! `U5 = epsilon * [x > 0]`, `U6 = gamma*(x - xmin) * [x >= xmin]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scan::{scan_separable, separable_maxima, separable_sum_max, UtilityTables, FUNCTIONAL_NAMES};
use super::{DiscretizedSpace, FunctionalSummary, OracleError, UtilityFn, ARGMAX_TOL, MAX_LISTED_MEMBERS};
use crate::model::Allocation;

/// Tolerance used to re-check every cake claim for robustness.
pub const ROBUST_TOL: f64 = 1e-6;

pub const CAKE_N: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CakeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub xbar4: f64,
    pub xmin: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for CakeParams {
    fn default() -> Self {
        CakeParams {
            alpha: 2.0,
            beta: 0.5,
            gamma: 0.3,
            lambda: 100.0,
            xbar4: 0.05,
            xmin: 0.05,
            epsilon: 0.1,
            delta: 0.2,
        }
    }
}

impl CakeParams {
    /// Validated constructor.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        lambda: f64,
        xbar4: f64,
        xmin: f64,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self, OracleError> {
        let p = CakeParams {
            alpha,
            beta,
            gamma,
            lambda,
            xbar4,
            xmin,
            epsilon,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |msg: &str| Err(OracleError::InvalidParams(msg.to_string()));
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.lambda,
            self.xbar4,
            self.xmin,
            self.epsilon,
            self.delta,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(0.0 < self.gamma && self.gamma < self.beta && self.beta < 1.0 && 1.0 < self.alpha) {
            return bad("require 0 < gamma < beta < 1 < alpha");
        }
        if self.lambda < 50.0 {
            return bad("require lambda >= 50");
        }
        if !(self.xbar4 > 0.0 && self.xbar4 <= 0.2) {
            return bad("require 0 < xbar4 <= 0.2");
        }
        if !(self.xmin > 0.0 && self.xmin <= 0.2) {
            return bad("require 0 < xmin <= 0.2");
        }
        if !(self.epsilon > 0.0 && self.delta > 0.0) {
            return bad("require epsilon > 0 and delta > 0");
        }
        Ok(())
    }

    /// Utility of person `i` (0-based) at share `x`.
    pub fn utility(&self, i: usize, x: f64) -> f64 {
        match i {
            0 => x.powf(self.alpha),
            1 => x.powf(self.beta),
            2 => self.gamma * x,
            3 => {
                let over = if x > self.xbar4 {
                    self.lambda * (x - self.xbar4).powi(2)
                } else {
                    0.0
                };
                self.delta * x - over
            }
            4 => {
                if x > 0.0 {
                    self.epsilon
                } else {
                    0.0
                }
            }
            5 => {
                if x >= self.xmin {
                    self.gamma * (x - self.xmin)
                } else {
                    0.0
                }
            }
            _ => panic!("cake utilities are defined for six people, got index {i}"),
        }
    }

    pub fn utilities(&self, shares: &[f64]) -> Vec<f64> {
        shares.iter().enumerate().map(|(i, &x)| self.utility(i, x)).collect()
    }

    fn tables(&self, units: u32) -> UtilityTables {
        UtilityTables::build(CAKE_N, units, |i, x| self.utility(i, x))
    }
}

/// The six utilities as a provider for generic functionals. Validates the
/// parameters first.
pub fn cake_utilities(params: CakeParams) -> Result<UtilityFn, OracleError> {
    params.validate()?;
    Ok(cake_utilities_unchecked(params))
}

/// Like [`cake_utilities`] without the invariant gate, for negative controls.
pub fn cake_utilities_unchecked(params: CakeParams) -> UtilityFn {
    Arc::new(move |a: &Allocation| (0..a.rows()).map(|i| params.utility(i, a.get(i, 0))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub id: String,
    pub statement: String,
    /// Holds at both the default and the robustness tolerance.
    pub passed: bool,
    pub passed_default_tol: bool,
    pub passed_robust_tol: bool,
    pub detail: String,
    /// Grid points supporting the verdict (counterexamples on failure).
    pub witnesses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub step: f64,
    pub half_step: f64,
    pub util_max: f64,
    pub util_max_refined: f64,
    /// Allowed decrease. The coarse grid is a subset of the refined one, so
    /// the bound is zero up to rounding.
    pub bound: f64,
    pub decrease: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub certification: String,
    pub step: f64,
    pub tol: f64,
    pub robust_tol: f64,
    pub params: CakeParams,
    pub invariants_enforced: bool,
    pub grid_points: u128,
    /// Grid points evaluated individually; the rest were excluded by bounds.
    pub points_evaluated: u128,
    pub functionals: Vec<FunctionalSummary>,
    pub claims: Vec<ClaimCheck>,
    pub refinement: RefinementCheck,
    pub all_passed: bool,
}

impl VerificationReport {
    pub fn claim(&self, id: &str) -> Option<&ClaimCheck> {
        self.claims.iter().find(|c| c.id == id)
    }
}

/// Runs the three claims on the grid after checking the parameter invariants.
pub fn verify_cake_claims(params: CakeParams, step: f64) -> Result<VerificationReport, OracleError> {
    params.validate()?;
    verify(params, step, true)
}

/// Runs the claims without the parameter invariants (negative controls).
pub fn verify_cake_claims_relaxed(params: CakeParams, step: f64) -> Result<VerificationReport, OracleError> {
    verify(params, step, false)
}

fn to_shares(units: u32, p: &[u32]) -> Vec<f64> {
    p.iter().map(|&k| k as f64 / units as f64).collect()
}

fn to_allocation(units: u32, p: &[u32]) -> Allocation {
    Allocation::from_flat(CAKE_N, 1, to_shares(units, p)).expect("six shares")
}

/// Streaming tallies over the argmax sets at one tolerance.
#[derive(Default)]
struct Tally {
    counts: [u64; 4],
    listed: [Vec<Vec<u32>>; 4],
    util_non_corner: Vec<Vec<u32>>,
    util_has_corner: bool,
    rawls_without_x5: u64,
    rawls_without_x5_listed: Vec<Vec<u32>>,
    shared: u64,
    shared_listed: Vec<Vec<u32>>,
}

fn keep(list: &mut Vec<Vec<u32>>, x: &[u32]) {
    if list.len() < MAX_LISTED_MEMBERS {
        list.push(x.to_vec());
    }
}

impl Tally {
    fn record(&mut self, x: &[u32], member: [bool; 4], units: u32) {
        for (f, _) in member.iter().enumerate().filter(|(_, m)| **m) {
            self.counts[f] += 1;
            keep(&mut self.listed[f], x);
        }
        if member[0] {
            let corner = x[0] == units && x[1..].iter().all(|&k| k == 0);
            if corner {
                self.util_has_corner = true;
            } else {
                keep(&mut self.util_non_corner, x);
            }
        }
        if member[2] && x[4] == 0 {
            self.rawls_without_x5 += 1;
            keep(&mut self.rawls_without_x5_listed, x);
        }
        if member.iter().all(|&m| m) {
            self.shared += 1;
            keep(&mut self.shared_listed, x);
        }
    }

    /// (passed, witnesses, detail) for claims a, b, c.
    fn claims(&self) -> [(bool, &Vec<Vec<u32>>, String); 3] {
        let a = self.util_has_corner && self.counts[0] == 1;
        let a_detail = if a {
            "util argmax is the single corner".to_string()
        } else {
            format!(
                "util argmax has {} member(s); corner included: {}",
                self.counts[0], self.util_has_corner
            )
        };
        let b = self.counts[2] > 0 && self.rawls_without_x5 == 0;
        let b_detail = if b {
            format!("all {} rawls maximizer(s) have x5 > 0", self.counts[2])
        } else {
            format!(
                "{} of {} rawls maximizer(s) have x5 = 0",
                self.rawls_without_x5, self.counts[2]
            )
        };
        let c = self.shared == 0;
        let c_detail = if c {
            "argmax intersection is empty".to_string()
        } else {
            format!("{} allocation(s) maximize all four functionals", self.shared)
        };
        [
            (a, if a { &self.listed[0] } else { &self.util_non_corner }, a_detail),
            (
                b,
                if b {
                    &self.listed[2]
                } else {
                    &self.rawls_without_x5_listed
                },
                b_detail,
            ),
            (c, &self.shared_listed, c_detail),
        ]
    }
}

const CLAIMS: [(&str, &str); 3] = [
    ("a", "util argmax is exactly the corner (1,0,0,0,0,0)"),
    ("b", "every rawls maximizer gives person 5 a positive share"),
    ("c", "util, egal, rawls and prior (uniform weights) share no maximizer"),
];

fn verify(params: CakeParams, step: f64, enforced: bool) -> Result<VerificationReport, OracleError> {
    let max_step = params.xbar4.min(params.xmin) / 2.0;
    if !(step > 0.0) {
        return Err(OracleError::NonPositiveStep(step));
    }
    if step > max_step + 1e-12 {
        return Err(OracleError::StepTooCoarse { step, max_step });
    }
    let space = DiscretizedSpace::new(step, vec![1.0], CAKE_N).with_bound(u128::MAX);
    let units = space.units()?[0];
    let grid_points = space.count()?;

    let tables = params.tables(units);
    let uniform = vec![1.0; CAKE_N];
    let maxima = separable_maxima(&tables, &uniform).as_array();
    let tols = [ARGMAX_TOL, ROBUST_TOL];
    let mut tallies = [Tally::default(), Tally::default()];
    let (_, points_evaluated) = scan_separable(&tables, &uniform, ROBUST_TOL, &mut |x, v| {
        let v = v.as_array();
        for (tally, tol) in tallies.iter_mut().zip(tols) {
            let member = [0, 1, 2, 3].map(|f| v[f] >= maxima[f] - tol);
            if member.iter().any(|&m| m) {
                tally.record(x, member, units);
            }
        }
    });
    let refined = separable_sum_max(&params.tables(units * 2));

    let default_claims = tallies[0].claims();
    let robust_claims = tallies[1].claims();
    let claims = CLAIMS
        .iter()
        .zip(default_claims.iter().zip(robust_claims.iter()))
        .map(|((id, statement), (d, r))| {
            let passed = d.0 && r.0;
            let (witnesses, detail) = if !d.0 || r.0 { (d.1, &d.2) } else { (r.1, &r.2) };
            ClaimCheck {
                id: id.to_string(),
                statement: statement.to_string(),
                passed,
                passed_default_tol: d.0,
                passed_robust_tol: r.0,
                detail: if passed || !d.0 {
                    detail.clone()
                } else {
                    format!("{detail} (at tolerance {ROBUST_TOL})")
                },
                witnesses: witnesses.iter().map(|p| to_shares(units, p)).collect(),
            }
        })
        .collect::<Vec<_>>();

    let decrease = (maxima[0] - refined).max(0.0);
    let refinement = RefinementCheck {
        step,
        half_step: step / 2.0,
        util_max: maxima[0],
        util_max_refined: refined,
        bound: 0.0,
        decrease,
        passed: decrease <= 1e-12,
    };

    let functionals = FUNCTIONAL_NAMES
        .iter()
        .enumerate()
        .map(|(f, name)| FunctionalSummary {
            name: name.to_string(),
            max_value: maxima[f],
            argmax_count: tallies[0].counts[f] as usize,
            argmax: tallies[0].listed[f].iter().map(|p| to_allocation(units, p)).collect(),
        })
        .collect();
    let all_passed = claims.iter().all(|c| c.passed) && refinement.passed;
    Ok(VerificationReport {
        certification: format!("grid-certified at step {step}"),
        step,
        tol: ARGMAX_TOL,
        robust_tol: ROBUST_TOL,
        params,
        invariants_enforced: enforced,
        grid_points,
        points_evaluated,
        functionals,
        claims,
        refinement,
        all_passed,
    })
}
