//! Fast exact scan for single-resource problems with separable utilities,
//! `U_i(A) = f_i(x_i)`.
//!
//! Each person's utility is tabulated once per grid unit. Grid maxima of
//! util, prior and rawls come from dynamic programs over the tables (max-plus
//! and max-min); the egal maximum comes from a bounded depth-first search.
//! A second walk then visits, in the same order as
//! [`DiscretizedSpace::enumerate`](super::DiscretizedSpace::enumerate), every
//! grid point that lies within `tol` of at least one maximum. Subtrees are
//! skipped only when suffix bounds prove none of their points can qualify,
//! so the visited set is exactly what a full scan would report.
//!
//! Gini is computed as `sum_{i<j} |u_i - u_j| / (N * sum u)`, which equals
//! the sorted formula.

use serde::{Deserialize, Serialize};

/// Slack added to every pruning bound to absorb summation-order rounding.
const BOUND_SLACK: f64 = 1e-12;

/// Utility of person `i` at grid unit `k`, for `k` in `0..=units`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTables {
    pub units: u32,
    pub tables: Vec<Vec<f64>>,
}

impl UtilityTables {
    /// Tabulates `f(i, x)` at `x = k / units` for a unit supply.
    pub fn build(n: usize, units: u32, f: impl Fn(usize, f64) -> f64) -> Self {
        let tables = (0..n)
            .map(|i| (0..=units).map(|k| f(i, k as f64 / units as f64)).collect())
            .collect();
        UtilityTables { units, tables }
    }

    pub fn n(&self) -> usize {
        self.tables.len()
    }
}

/// Values of the four standard functionals at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Values {
    pub util: f64,
    pub egal: f64,
    pub rawls: f64,
    pub prior: f64,
}

impl Values {
    pub fn as_array(&self) -> [f64; 4] {
        [self.util, self.egal, self.rawls, self.prior]
    }
}

/// Index order used by [`Values::as_array`].
pub const FUNCTIONAL_NAMES: [&str; 4] = ["util", "egal", "rawls", "prior"];

/// Suffix dynamic programs: for persons `d..n` and a budget of `r` units,
/// the best weighted sum and the best minimum.
struct Suffix {
    util: Vec<Vec<f64>>,
    prior: Vec<Vec<f64>>,
    min: Vec<Vec<f64>>,
}

fn suffix_sum(tables: &UtilityTables, weights: &[f64]) -> Vec<Vec<f64>> {
    let n = tables.n();
    let u = tables.units as usize;
    let mut out = vec![vec![0.0; u + 1]; n + 1];
    for d in (0..n).rev() {
        for r in 0..=u {
            let mut best = f64::NEG_INFINITY;
            for k in 0..=r {
                let v = weights[d] * tables.tables[d][k] + out[d + 1][r - k];
                if v > best {
                    best = v;
                }
            }
            out[d][r] = best;
        }
    }
    out
}

fn suffix_min(tables: &UtilityTables) -> Vec<Vec<f64>> {
    let n = tables.n();
    let u = tables.units as usize;
    let mut out = vec![vec![f64::INFINITY; u + 1]; n + 1];
    for d in (0..n).rev() {
        for r in 0..=u {
            let mut best = f64::NEG_INFINITY;
            for k in 0..=r {
                let v = tables.tables[d][k].min(out[d + 1][r - k]);
                if v > best {
                    best = v;
                }
            }
            out[d][r] = best;
        }
    }
    out
}

impl Suffix {
    fn new(tables: &UtilityTables, weights: &[f64]) -> Self {
        Suffix {
            util: suffix_sum(tables, &vec![1.0; tables.n()]),
            prior: suffix_sum(tables, weights),
            min: suffix_min(tables),
        }
    }
}

/// Maximum of `sum_i f_i(x_i)` over compositions with slack, by max-plus
/// dynamic programming in `O(N * units^2)`.
pub fn separable_sum_max(tables: &UtilityTables) -> f64 {
    suffix_sum(tables, &vec![1.0; tables.n()])[0][tables.units as usize]
}

#[derive(Clone, Copy)]
struct Partial {
    sum: f64,
    wsum: f64,
    min: f64,
    pairs: f64,
    negative: bool,
}

const EMPTY: Partial = Partial {
    sum: 0.0,
    wsum: 0.0,
    min: f64::INFINITY,
    pairs: 0.0,
    negative: false,
};

struct Walker<'a> {
    t: &'a UtilityTables,
    w: &'a [f64],
    s: &'a Suffix,
    x: Vec<u32>,
    u: Vec<f64>,
    leaves: u128,
}

impl<'a> Walker<'a> {
    fn new(t: &'a UtilityTables, w: &'a [f64], s: &'a Suffix) -> Self {
        Walker {
            t,
            w,
            s,
            x: vec![0; t.n()],
            u: vec![0.0; t.n()],
            leaves: 0,
        }
    }

    fn push(&self, depth: usize, p: Partial, val: f64) -> Partial {
        let pairs = p.pairs + self.u[..depth].iter().map(|v| (v - val).abs()).sum::<f64>();
        Partial {
            sum: p.sum + val,
            wsum: p.wsum + self.w[depth] * val,
            min: p.min.min(val),
            pairs,
            negative: p.negative || val < 0.0,
        }
    }

    /// Best egal value any completion of `p` could reach, given that
    /// persons `depth..` share at most `rem` units.
    fn egal_bound(&self, depth: usize, rem: usize, p: &Partial) -> f64 {
        if p.negative {
            return f64::NEG_INFINITY;
        }
        let max_sum = p.sum + self.s.util[depth][rem];
        if max_sum > 0.0 {
            -(p.pairs / (self.t.n() as f64 * max_sum))
        } else {
            0.0
        }
    }

    fn values(&self, p: &Partial) -> Values {
        let egal = if p.negative {
            f64::NEG_INFINITY
        } else if p.sum == 0.0 {
            0.0
        } else {
            -(p.pairs / (self.t.n() as f64 * p.sum)).max(0.0)
        };
        Values {
            util: p.sum,
            egal,
            rawls: p.min,
            prior: p.wsum,
        }
    }

    /// Depth-first search for the egal maximum.
    fn egal_max(&mut self, depth: usize, rem: u32, p: Partial, best: &mut f64) {
        if depth == self.t.n() {
            self.leaves += 1;
            let v = self.values(&p).egal;
            if v > *best {
                *best = v;
            }
            return;
        }
        for k in 0..=rem {
            let val = self.t.tables[depth][k as usize];
            let next = self.push(depth, p, val);
            let left = (rem - k) as usize;
            if self.egal_bound(depth + 1, left, &next) + BOUND_SLACK < *best {
                continue;
            }
            self.u[depth] = val;
            self.egal_max(depth + 1, rem - k, next, best);
        }
    }

    /// Visits every point with some value within `tol` of its maximum.
    fn members(
        &mut self,
        depth: usize,
        rem: u32,
        p: Partial,
        floor: &[f64; 4],
        visit: &mut dyn FnMut(&[u32], &Values),
    ) {
        if depth == self.t.n() {
            self.leaves += 1;
            let v = self.values(&p);
            if v.as_array().iter().zip(floor).any(|(v, f)| v >= f) {
                visit(&self.x, &v);
            }
            return;
        }
        for k in 0..=rem {
            let val = self.t.tables[depth][k as usize];
            let next = self.push(depth, p, val);
            let left = (rem - k) as usize;
            let d = depth + 1;
            let open = next.sum + self.s.util[d][left] + BOUND_SLACK >= floor[0]
                || self.egal_bound(d, left, &next) + BOUND_SLACK >= floor[1]
                || next.min.min(self.s.min[d][left]) + BOUND_SLACK >= floor[2]
                || next.wsum + self.s.prior[d][left] + BOUND_SLACK >= floor[3];
            if !open {
                continue;
            }
            self.x[depth] = k;
            self.u[depth] = val;
            self.members(d, rem - k, next, floor, visit);
        }
        self.x[depth] = 0;
    }
}

/// Grid maxima of util, egal, rawls and prior.
pub fn separable_maxima(tables: &UtilityTables, prior_weights: &[f64]) -> Values {
    assert!(tables.n() >= 1, "scan needs at least one person");
    assert_eq!(prior_weights.len(), tables.n(), "one prior weight per person");
    let s = Suffix::new(tables, prior_weights);
    let u = tables.units as usize;
    let mut walker = Walker::new(tables, prior_weights, &s);
    let mut egal = f64::NEG_INFINITY;
    walker.egal_max(0, tables.units, EMPTY, &mut egal);
    Values {
        util: s.util[0][u],
        egal,
        rawls: s.min[0][u],
        prior: s.prior[0][u],
    }
}

/// Calls `visit` for every grid point whose value under at least one
/// functional lies within `tol` of that functional's maximum, in
/// lexicographic order of unit vectors. Returns the maxima and the number
/// of leaves evaluated.
pub fn scan_separable(
    tables: &UtilityTables,
    prior_weights: &[f64],
    tol: f64,
    visit: &mut dyn FnMut(&[u32], &Values),
) -> (Values, u128) {
    let maxima = separable_maxima(tables, prior_weights);
    let s = Suffix::new(tables, prior_weights);
    let m = maxima.as_array();
    let floor = [m[0] - tol, m[1] - tol, m[2] - tol, m[3] - tol];
    let mut walker = Walker::new(tables, prior_weights, &s);
    walker.members(0, tables.units, EMPTY, &floor, visit);
    (maxima, walker.leaves)
}

/// The four argmax sets (within `tol`) as sorted unit vectors.
pub fn separable_argmax_sets(tables: &UtilityTables, prior_weights: &[f64], tol: f64) -> (Values, [Vec<Vec<u32>>; 4]) {
    let mut sets: [Vec<Vec<u32>>; 4] = Default::default();
    let m = separable_maxima(tables, prior_weights).as_array();
    let (values, _) = scan_separable(tables, prior_weights, tol, &mut |x, v| {
        for (f, set) in sets.iter_mut().enumerate() {
            if v.as_array()[f] >= m[f] - tol {
                set.push(x.to_vec());
            }
        }
    });
    (values, sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(t: &UtilityTables, w: &[f64]) -> Vec<(Vec<u32>, Values)> {
        let s = Suffix::new(t, w);
        let mut out = Vec::new();
        let mut walker = Walker::new(t, w, &s);
        let floor = [f64::NEG_INFINITY; 4];
        walker.members(0, t.units, EMPTY, &floor, &mut |x, v| out.push((x.to_vec(), *v)));
        out
    }

    #[test]
    fn unpruned_walk_counts_every_point() {
        let t = UtilityTables::build(3, 4, |_, x| x);
        assert_eq!(brute(&t, &[1.0; 3]).len(), 35);
    }

    #[test]
    fn linear_util_goes_to_steepest() {
        let t = UtilityTables::build(3, 4, |i, x| (i + 1) as f64 * x);
        let (m, sets) = separable_argmax_sets(&t, &[1.0; 3], 1e-9);
        assert_eq!(sets[0], vec![vec![0, 0, 4]]);
        assert!((m.util - 3.0).abs() < 1e-12);
    }

    #[test]
    fn maxima_match_brute_force() {
        let t = UtilityTables::build(4, 8, |i, x| match i {
            0 => x * x,
            1 => x.sqrt(),
            2 => 0.3 * x,
            _ => 0.2 * x - 10.0 * (x - 0.25).max(0.0).powi(2),
        });
        let w = [0.5, 1.0, 2.0, 1.5];
        let all = brute(&t, &w);
        let m = separable_maxima(&t, &w).as_array();
        for f in 0..4 {
            let best = all
                .iter()
                .map(|(_, v)| v.as_array()[f])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - m[f]).abs() < 1e-12, "{}", FUNCTIONAL_NAMES[f]);
        }
        let (_, sets) = separable_argmax_sets(&t, &w, 1e-9);
        for f in 0..4 {
            let expected: Vec<Vec<u32>> = all
                .iter()
                .filter(|(_, v)| v.as_array()[f] >= m[f] - 1e-9)
                .map(|(x, _)| x.clone())
                .collect();
            assert_eq!(sets[f], expected, "{}", FUNCTIONAL_NAMES[f]);
        }
    }

    #[test]
    fn egal_zero_at_equal_utilities() {
        let t = UtilityTables::build(2, 2, |_, x| x);
        let (m, sets) = separable_argmax_sets(&t, &[1.0; 2], 1e-9);
        assert_eq!(m.egal, 0.0);
        assert_eq!(sets[1], vec![vec![0, 0], vec![1, 1]]);
    }
}
