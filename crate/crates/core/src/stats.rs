//! Summary metrics and distributional analysis of convergence times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TrialBatch;

/// Two-sided 99% normal quantile used for confidence-interval widths.
pub const Z_99: f64 = 2.576;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
    pub variance: f64,
    /// Moment estimator `m3 / m2^1.5`; 0 for constant samples.
    pub skewness: f64,
    /// Excess kurtosis `m4 / m2^2 - 3`; 0 for constant samples.
    pub kurtosis: f64,
    pub p25: f64,
    pub p75: f64,
    pub p99: f64,
    pub iqr: f64,
    pub success_rate: f64,
    pub conservative_factor: f64,
    pub efficiency: f64,
    pub ci_width_99: f64,
}

/// Points `(k, P(T > k))` at every distinct observed `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfSeries {
    pub points: Vec<(u64, f64)>,
}

pub fn summarize(batch: &TrialBatch) -> Result<SummaryStats> {
    summarize_sample(
        &batch.totals,
        batch.config.delta,
        batch.config.stages,
        batch.config.success_cutoff,
    )
}

/// Summary of raw totals; a trial succeeds when its total is at most `cutoff`.
pub fn summarize_sample(
    totals: &[u64],
    delta: f64,
    stages: usize,
    cutoff: u64,
) -> Result<SummaryStats> {
    let n = totals.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = totals.iter().map(|&t| t as f64).sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &t in totals {
        let d = t as f64 - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (nf - 1.0);
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let std = variance.sqrt();

    let mut sorted = totals.to_vec();
    sorted.sort_unstable();
    let p25 = percentile_nearest_rank(&sorted, 25.0) as f64;
    let p75 = percentile_nearest_rank(&sorted, 75.0) as f64;
    let p99 = percentile_nearest_rank(&sorted, 99.0) as f64;
    let successes = totals.iter().filter(|&&t| t <= cutoff).count();

    Ok(SummaryStats {
        n,
        mean,
        std,
        variance,
        skewness,
        kurtosis,
        p25,
        p75,
        p99,
        iqr: p75 - p25,
        success_rate: successes as f64 / nf,
        conservative_factor: conservative_factor(delta, mean, stages)?,
        efficiency: iteration_efficiency(mean, stages)?,
        ci_width_99: ci_width_99(std, n),
    })
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`, clamped to `[1, n]`.
pub fn percentile_nearest_rank(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// `C_f = (stages / delta) / mean`.
pub fn conservative_factor(delta: f64, mean: f64, stages: usize) -> Result<f64> {
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mean must be positive, got {mean}"
        )));
    }
    Ok((stages as f64 / delta) / mean)
}

/// `eta = stages / mean`: stage transitions per iteration.
pub fn iteration_efficiency(mean: f64, stages: usize) -> Result<f64> {
    if mean.is_nan() || mean < stages as f64 {
        return Err(Error::InvalidParameter(format!(
            "mean {mean} is below the minimum of {stages} iterations"
        )));
    }
    Ok(stages as f64 / mean)
}

/// Width of the 99% normal confidence interval for the mean.
pub fn ci_width_99(std: f64, n: usize) -> f64 {
    Z_99 * std / (n as f64).sqrt()
}

pub fn ccdf(totals: &[u64]) -> Result<CcdfSeries> {
    if totals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = totals.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut points = Vec::new();
    let mut i = 0;
    while i < n {
        let k = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == k {
            j += 1;
        }
        points.push((k, (n - j) as f64 / n as f64));
        i = j;
    }
    Ok(CcdfSeries { points })
}

/// Counts per distinct total, ascending.
pub fn histogram(totals: &[u64]) -> Vec<(u64, usize)> {
    let mut sorted = totals.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u64, usize)> = Vec::new();
    for t in sorted {
        match out.last_mut() {
            Some((k, c)) if *k == t => *c += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

/// OLS slope of `ln P(T > k)` against `k` over points with probability
/// strictly above `floor_prob`.
pub fn tail_decay_fit(series: &CcdfSeries, floor_prob: f64) -> Result<f64> {
    let usable: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|&&(_, p)| p > floor_prob && p > 0.0)
        .map(|&(k, p)| (k as f64, p.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientTail {
            usable: usable.len(),
        });
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in &usable {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(sxy / sxx)
}

/// `P(T = k)` for a sum of `stages` independent `Geometric(delta)` sojourns:
/// `C(k-1, stages-1) delta^stages (1-delta)^(k-stages)`, zero below `stages`.
pub fn negbin_pmf(k: u64, stages: usize, delta: f64) -> f64 {
    let r = stages as u64;
    if k < r {
        return 0.0;
    }
    if delta >= 1.0 {
        return if k == r { 1.0 } else { 0.0 };
    }
    let failures = (k - r) as f64;
    let mut ln_choose = 0.0;
    for i in 1..r {
        ln_choose += ((k - r + i) as f64 / i as f64).ln();
    }
    (ln_choose + r as f64 * delta.ln() + failures * (-delta).ln_1p()).exp()
}

/// `P(T > k)`, computed as the probability of fewer than `stages` successes
/// in `k` Bernoulli attempts.
pub fn negbin_survival(k: u64, stages: usize, delta: f64) -> f64 {
    if k < stages as u64 {
        return 1.0;
    }
    if delta >= 1.0 {
        return 0.0;
    }
    let kf = k as f64;
    let mut term = (-delta).ln_1p() * kf; // ln of the j = 0 term
    let mut total = term.exp();
    for j in 1..stages as u64 {
        let jf = j as f64;
        term += ((kf - jf + 1.0) / jf).ln() + delta.ln() - (-delta).ln_1p();
        total += term.exp();
    }
    total.min(1.0)
}

/// Smallest `k` whose cumulative mass reaches `q`, by summing the pmf.
///
/// # Panics
///
/// If `q` is not in `(0, 1)`.
pub fn negbin_quantile(q: f64, stages: usize, delta: f64) -> u64 {
    assert!(
        q > 0.0 && q < 1.0,
        "quantile level must lie in (0, 1), got {q}"
    );
    let r = stages as u64;
    let mut k = r;
    let mut pmf = negbin_pmf(r, stages, delta);
    let mut cdf = pmf;
    while cdf < q {
        // pmf(k+1) / pmf(k) = k / (k - r + 1) * (1 - delta)
        pmf *= k as f64 / (k - r + 1) as f64 * (1.0 - delta);
        k += 1;
        cdf += pmf;
        if pmf == 0.0 && cdf < q {
            // Mass exhausted by rounding; the remainder is below f64 resolution.
            break;
        }
    }
    k
}
