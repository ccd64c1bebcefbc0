//! Paired hypothesis tests and effect sizes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::StatsError;

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
    /// Every difference was zero; nothing to test.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Differences left after dropping exact zeros.
    pub n: usize,
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

impl WilcoxonResult {
    pub fn degenerate(&self) -> bool {
        self.method == WilcoxonMethod::Degenerate
    }
}

/// Ranks of `|d|` with ties sharing their average rank, returned doubled
/// so that every rank is an integer.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled average is i+j+2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn nonzero(diffs: &[f64]) -> Result<Vec<f64>, StatsError> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(diffs.iter().copied().filter(|d| *d != 0.0).collect())
}

fn degenerate() -> WilcoxonResult {
    WilcoxonResult {
        n: 0,
        w_plus: 0.0,
        p_value: 1.0,
        method: WilcoxonMethod::Degenerate,
    }
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped;
/// tied magnitudes get average ranks. Exact for up to [`EXACT_MAX_N`]
/// nonzero differences, normal approximation with continuity correction
/// beyond.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let d = nonzero(diffs)?;
    if d.is_empty() {
        return Ok(degenerate());
    }
    if d.len() <= EXACT_MAX_N {
        wilcoxon_exact(&d)
    } else {
        wilcoxon_normal(&d)
    }
}

/// Exact null distribution of W+ over all 2^n sign assignments of the
/// observed ranks, computed by counting subset sums.
pub fn wilcoxon_exact(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let d = nonzero(diffs)?;
    if d.is_empty() {
        return Ok(degenerate());
    }
    if d.len() > 62 {
        return Err(StatsError::TooLargeForExact(d.len()));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed: u64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let all = 1u128 << d.len();
    let upper: u128 = counts[observed as usize..].iter().sum();
    let lower: u128 = counts[..=observed as usize].iter().sum();
    let tail = upper.min(lower) as f64 / all as f64;
    Ok(WilcoxonResult {
        n: d.len(),
        w_plus: observed as f64 / 2.0,
        p_value: (2.0 * tail).min(1.0),
        method: WilcoxonMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn wilcoxon_normal(diffs: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let d = nonzero(diffs)?;
    if d.is_empty() {
        return Ok(degenerate());
    }
    let n = d.len() as f64;
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| *r as f64 / 2.0)
        .sum();
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * (1.0 - standard_normal().cdf(z))).clamp(0.0, 1.0)
    };
    Ok(WilcoxonResult {
        n: d.len(),
        w_plus,
        p_value: p,
        method: WilcoxonMethod::NormalApprox,
    })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohensD {
    /// `None` when the pooled standard deviation is zero.
    pub d: Option<f64>,
    pub mean_diff: f64,
    pub pooled_sd: f64,
}

/// Cohen's d with the two-group pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<CohensD, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0)).sqrt();
    let mean_diff = mean(a) - mean(b);
    Ok(CohensD {
        d: (pooled > 0.0).then(|| mean_diff / pooled),
        mean_diff,
        pooled_sd: pooled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided paired t-test on the differences.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTestResult, StatsError> {
    if diffs.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: diffs.len(),
        });
    }
    let n = diffs.len() as f64;
    let m = mean(diffs);
    let sd = sample_variance(diffs).sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        let p = if m == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTestResult {
            t: if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY },
            df,
            p_value: p,
        });
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Distribution(e.to_string()))?;
    Ok(TTestResult {
        t,
        df,
        p_value: (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

/// Shapiro-Wilk normality test using Royston's approximations for the
/// coefficients and the null distribution of W (3 <= n <= 5000).
pub fn shapiro_wilk(x: &[f64]) -> Result<ShapiroWilk, StatsError> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if range == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let nf = n as f64;
    let norm = standard_normal();
    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=n)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let msq: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let an = m[n - 1] / msq.sqrt() + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        let (phi, tail) = if n > 5 {
            let an1 = m[n - 2] / msq.sqrt() + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            let phi = (msq - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2)) / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            a[n - 2] = an1;
            a[1] = -an1;
            (phi, 2)
        } else {
            ((msq - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an), 1)
        };
        a[n - 1] = an;
        a[0] = -an;
        for i in tail..n - tail {
            a[i] = m[i] / phi.sqrt();
        }
    }
    let mean_x = mean(&xs);
    let ss: f64 = xs.iter().map(|v| (v - mean_x).powi(2)).sum();
    let num: f64 = a.iter().zip(&xs).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = -2.273 + 0.459 * nf;
        let mu = poly(&[0.5440, -0.39978, 0.025054, -0.0006714], nf);
        let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
        let inner = gamma - (1.0 - w).ln();
        if inner <= 0.0 {
            0.0
        } else {
            let z = (-inner.ln() - mu) / sigma;
            1.0 - norm.cdf(z)
        }
    } else {
        let ln = nf.ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln).exp();
        let z = ((1.0 - w).ln() - mu) / sigma;
        1.0 - norm.cdf(z)
    };
    Ok(ShapiroWilk {
        w,
        p_value: p.clamp(0.0, 1.0),
    })
}
