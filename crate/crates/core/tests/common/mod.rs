//! Helpers shared by the integration suites: random instances and
//! deliberately naive reference implementations.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use arena_core::cohortgen::{generate_cohort, SamplerConfig};
use arena_core::metrics::WeightConfig;
use arena_core::model::{Allocation, CapacityVariant, Cohort, Patient, Resource, NUM_RESOURCES};
use arena_core::rng::{rng_from_seed, ArenaRng};

pub fn rng(seed: u64) -> ArenaRng {
    rng_from_seed(seed)
}

/// A generated cohort with a random capacity variant; with probability one
/// half every patient's needs are replaced by a random nonempty subset so
/// the suites are not limited to the bundled conditions.
pub fn random_cohort(rng: &mut ArenaRng, id: u64) -> Cohort {
    let config = SamplerConfig {
        capacity_variant: *CapacityVariant::ALL.choose(rng).unwrap(),
        ..SamplerConfig::default()
    };
    let mut cohort = generate_cohort(id, rng.gen(), &config).expect("default config generates");
    if rng.gen_bool(0.5) {
        for p in &mut cohort.patients {
            p.needs = random_needs(rng);
        }
    }
    cohort
}

pub fn random_needs(rng: &mut ArenaRng) -> Vec<Resource> {
    loop {
        let needs: Vec<Resource> = Resource::ALL.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
        if !needs.is_empty() {
            return needs;
        }
    }
}

/// Random nonnegative allocation; each entry is zero with probability
/// `zero_prob`, otherwise a small integer or a fractional amount.
pub fn random_allocation(rng: &mut ArenaRng, n: usize, zero_prob: f64) -> Allocation {
    let mut a = Allocation::zeros(n, NUM_RESOURCES);
    for i in 0..n {
        for j in 0..NUM_RESOURCES {
            if !rng.gen_bool(zero_prob) {
                let v = if rng.gen_bool(0.5) {
                    rng.gen_range(1..=20) as f64
                } else {
                    rng.gen_range(0.001..30.0)
                };
                a.set(i, j, v);
            }
        }
    }
    a
}

pub fn random_int_allocation(rng: &mut ArenaRng, n: usize, max: u32) -> Allocation {
    let mut a = Allocation::zeros(n, NUM_RESOURCES);
    for i in 0..n {
        for j in 0..NUM_RESOURCES {
            a.set(i, j, rng.gen_range(0..=max) as f64);
        }
    }
    a
}

// ---- naive reference implementations -------------------------------------

pub fn naive_cnss(p: &Patient, row: &[f64]) -> f64 {
    let mut met = 0.0;
    let mut total = 0.0;
    for r in &p.needs {
        total += 1.0;
        let mut positive = false;
        for (j, v) in row.iter().enumerate() {
            if j == r.index() && *v > 0.0 {
                positive = true;
            }
        }
        if positive {
            met += 1.0;
        }
    }
    met / total
}

pub fn naive_cnss_all(c: &Cohort, a: &Allocation) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..c.len() {
        out.push(naive_cnss(&c.patients[i], a.row(i)));
    }
    out
}

pub fn naive_weight(cfg: &WeightConfig, p: &Patient, prioritarian: bool) -> f64 {
    let w = if prioritarian { cfg.prioritarian } else { cfg.care };
    let s = &cfg.scores;
    let mut age = f64::NAN;
    for band in &s.age_bands {
        if p.age >= band.min && p.age <= band.max {
            age = band.score;
        }
    }
    let num = w.ses * s.ses[&p.ses]
        + w.citizenship * s.citizenship[&p.citizenship]
        + w.race * s.race[&p.race]
        + w.age * age
        + w.gender * s.gender[&p.gender];
    let den = w.ses + w.citizenship + w.race + w.age + w.gender;
    cfg.floor + (1.0 - cfg.floor) * (num / den)
}

/// Gini via the mean absolute difference, an independent form of the
/// sorted-rank formula.
pub fn naive_gini(h: &[f64]) -> f64 {
    let n = h.len() as f64;
    let total: f64 = h.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut diff = 0.0;
    for x in h {
        for y in h {
            diff += (x - y).abs();
        }
    }
    diff / (2.0 * n * total)
}

pub struct NaiveMetrics {
    pub esg: f64,
    pub rmg: f64,
    pub variance: f64,
    pub dw_esg: f64,
    pub vwci: f64,
    pub gini: f64,
}

pub fn naive_metrics(c: &Cohort, a: &Allocation, cfg: &WeightConfig) -> NaiveMetrics {
    let cnss = naive_cnss_all(c, a);
    let n = cnss.len() as f64;
    let mut esg = 0.0;
    let mut dw = 0.0;
    let mut vw = 0.0;
    let mut rmg = f64::INFINITY;
    let mut sum = 0.0;
    for (i, p) in c.patients.iter().enumerate() {
        esg += p.survival_prob * cnss[i];
        dw += naive_weight(cfg, p, true) * p.survival_prob * cnss[i];
        vw += naive_weight(cfg, p, false) * cnss[i];
        if cnss[i] < rmg {
            rmg = cnss[i];
        }
        sum += cnss[i];
    }
    let mean = sum / n;
    let mut var = 0.0;
    for x in &cnss {
        var += (x - mean) * (x - mean);
    }
    NaiveMetrics {
        esg,
        rmg,
        variance: var / n,
        dw_esg: dw,
        vwci: vw,
        gini: naive_gini(&cnss),
    }
}

/// Two-sided exact Wilcoxon p-value by listing every sign assignment of
/// average ranks.
pub fn naive_wilcoxon_p(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let below = d.iter().filter(|x| x.abs() < d[i].abs()).count() as f64;
        let equal = d.iter().filter(|x| x.abs() == d[i].abs()).count() as f64;
        ranks[i] = below + (equal + 1.0) / 2.0;
    }
    let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    let p = (2.0 * le.min(ge) as f64 / total).min(1.0);
    (observed, p)
}

/// Cosine top-k by full scan and full sort with the documented tie order.
pub fn brute_force_top_k(query: &[f32], docs: &[(String, usize, Vec<f32>)], k: usize) -> Vec<(String, usize)> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(f64, &String, usize)> = docs
        .iter()
        .map(|(id, ord, v)| {
            let dot: f64 = query.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            let den = qn * norm(v);
            (if den == 0.0 { 0.0 } else { dot / den }, id, *ord)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(_, id, ord)| (id.clone(), ord))
        .collect()
}
