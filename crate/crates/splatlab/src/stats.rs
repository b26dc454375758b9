//! Paired statistical protocol: t-test with Cohen's d, exact Wilcoxon
//! signed-rank, bootstrap correlation intervals, and the count-gap fit.
//!
//! The Student-t tail is computed from scratch (continued-fraction
//! regularized incomplete beta) so no statistics dependency is involved in
//! the published-number checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::RunRecord;

/// Two paired condition vectors, one entry per scene (or scene-seed pair).
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub labels: Vec<String>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Contract("paired sample lengths differ".into()));
        }
        if a.len() < 2 {
            return Err(Error::Contract("paired sample needs n >= 2".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("paired sample contains non-finite values".into()));
        }
        let labels = if labels.is_empty() {
            (0..a.len()).map(|i| format!("pair{i}")).collect()
        } else {
            if labels.len() != a.len() {
                return Err(Error::Contract("label count mismatch".into()));
            }
            labels
        };
        Ok(Self { a, b, labels })
    }

    pub fn diffs(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PairedEffect {
    pub t: f64,
    /// Two-sided p from the t distribution with n-1 degrees of freedom.
    pub p: f64,
    pub cohens_d: f64,
    pub mean_diff: f64,
    pub n: usize,
}

/// Paired t-test with Cohen's d: `d = mean(diff) / sd(diff)` (sample sd),
/// `t = d * sqrt(n)`.
pub fn paired_effect(sample: &PairedSample) -> Result<PairedEffect> {
    let diffs = sample.diffs();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateSample { mean_diff: mean });
    }
    let d = mean / sd;
    let t = d * (n as f64).sqrt();
    let p = student_t_two_sided_p(t, (n - 1) as f64);
    Ok(PairedEffect {
        t,
        p,
        cohens_d: d,
        mean_diff: mean,
        n,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct WilcoxonExact {
    /// Smaller of the positive/negative rank sums.
    pub w: f64,
    /// Exact two-sided p over all sign assignments of the observed ranks.
    pub p: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
}

/// Exact paired Wilcoxon signed-rank test. Zero differences are dropped
/// (Wilcoxon's original convention); ties share average ranks; the two-sided
/// p doubles the smaller exact tail of the enumerated null, capped at 1.
pub fn wilcoxon_exact(sample: &PairedSample) -> Result<WilcoxonExact> {
    let diffs: Vec<f64> = sample.diffs().into_iter().filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::NoInformation);
    }
    if n > 20 {
        return Err(Error::Contract(format!(
            "exact enumeration limited to n <= 20, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus: f64 = ranks.iter().sum::<f64>() - w_plus;

    let total = 1u64 << n;
    let mut count_le = 0u64;
    let mut count_ge = 0u64;
    let tol = 1e-9;
    for mask in 0..total {
        let mut w = 0.0;
        for (bit, r) in ranks.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                w += r;
            }
        }
        if w <= w_plus + tol {
            count_le += 1;
        }
        if w >= w_plus - tol {
            count_ge += 1;
        }
    }
    let tail = count_le.min(count_ge) as f64 / total as f64;
    let p = (2.0 * tail).min(1.0);
    Ok(WilcoxonExact {
        w: w_plus.min(w_minus),
        p,
        n_used: n,
    })
}

/// 1-based ranks with ties sharing the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // average of 1-based ranks i+1..=j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    /// Percentile bootstrap 95% interval for Pearson r.
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson and Spearman correlation with a paired-resampling percentile
/// bootstrap CI for r. Each resample draws from its own counter-seeded
/// stream, so the result does not depend on evaluation order.
pub fn correlate(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Contract("correlation inputs differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::Contract("correlation needs n >= 3".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("correlation inputs must be finite".into()));
    }
    let pearson = pearson_r(x, y)
        .ok_or_else(|| Error::UndefinedCorrelation("constant input".into()))?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let spearman = pearson_r(&rx, &ry)
        .ok_or_else(|| Error::UndefinedCorrelation("constant ranks".into()))?;

    let n = x.len();
    let mut rs = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        let mut bx = Vec::with_capacity(n);
        let mut by = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            bx.push(x[i]);
            by.push(y[i]);
        }
        if let Some(r) = pearson_r(&bx, &by) {
            rs.push(r);
        }
    }
    let (ci_low, ci_high) = if rs.is_empty() {
        (pearson, pearson)
    } else {
        rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (
            linear_percentile(&rs, 2.5),
            linear_percentile(&rs, 97.5),
        )
    };
    Ok(Correlation {
        pearson,
        spearman,
        ci_low,
        ci_high,
        resamples,
    })
}

/// Percentile with linear interpolation between order statistics
/// (`sorted` ascending, `q` in percent).
pub fn linear_percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CountGapFit {
    /// dB of gap per decade of Gaussian count.
    pub slope: f64,
    pub intercept: f64,
    pub pearson: f64,
    pub spearman: f64,
    /// Pearson r with the min-K and max-K records removed; `None` when fewer
    /// than 3 distinct counts remain.
    pub endpoint_dropped_r: Option<f64>,
}

/// Least-squares line of gap on log10(final count) across run records, plus
/// rank statistics and the endpoint-removed correlation.
pub fn fit_count_gap(records: &[RunRecord]) -> Result<CountGapFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| ((r.final_k as f64).log10(), r.gap))
        .collect();
    let mut distinct: Vec<u64> = records.iter().map(|r| r.final_k as u64).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Contract("need >= 3 records with distinct counts".into()));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let pearson = pearson_r(&x, &y)
        .ok_or_else(|| Error::UndefinedCorrelation("constant input".into()))?;
    let spearman = pearson_r(&average_ranks(&x), &average_ranks(&y))
        .ok_or_else(|| Error::UndefinedCorrelation("constant ranks".into()))?;

    let min_k = *distinct.first().unwrap();
    let max_k = *distinct.last().unwrap();
    let kept: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| (r.final_k as u64) != min_k && (r.final_k as u64) != max_k)
        .map(|r| ((r.final_k as f64).log10(), r.gap))
        .collect();
    let mut kept_distinct: Vec<u64> = records
        .iter()
        .filter(|r| (r.final_k as u64) != min_k && (r.final_k as u64) != max_k)
        .map(|r| r.final_k as u64)
        .collect();
    kept_distinct.sort_unstable();
    kept_distinct.dedup();
    let endpoint_dropped_r = if kept_distinct.len() >= 3 {
        let kx: Vec<f64> = kept.iter().map(|p| p.0).collect();
        let ky: Vec<f64> = kept.iter().map(|p| p.1).collect();
        pearson_r(&kx, &ky)
    } else {
        None
    };

    Ok(CountGapFit {
        slope,
        intercept,
        pearson,
        spearman,
        endpoint_dropped_r,
    })
}

// ---------------------------------------------------------------------------
// Student-t tail from scratch

/// Lanczos log-gamma (g = 7, n = 9), accurate to ~1e-13 for positive x.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_IT: usize = 400;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_IT {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a t statistic with `dof` degrees of freedom:
/// `I_{dof/(dof+t^2)}(dof/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    reg_inc_beta(dof / 2.0, 0.5, dof / (dof + t * t))
}
