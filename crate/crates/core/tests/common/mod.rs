#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square statistic of `sample` against `Geometric(delta)` on
/// bins `1..=max_bin` with everything above pooled into the last bin.
/// Adjacent tail bins are merged until each expects at least 5 counts.
/// Returns `(statistic, degrees_of_freedom)`.
pub fn geometric_chi_square(
    sample: impl Iterator<Item = u64>,
    delta: f64,
    max_bin: u64,
) -> (f64, usize) {
    let mut observed = vec![0usize; max_bin as usize];
    let mut n = 0usize;
    for k in sample {
        let bin = k.clamp(1, max_bin) as usize - 1;
        observed[bin] += 1;
        n += 1;
    }
    let mut probs: Vec<f64> = (1..max_bin)
        .map(|k| (1.0 - delta).powi(k as i32 - 1) * delta)
        .collect();
    probs.push((1.0 - delta).powi(max_bin as i32 - 1));

    // Merge from the tail inward until the pooled bin expects >= 5.
    let mut obs = observed;
    while obs.len() > 2 && probs.last().unwrap() * (n as f64) < 5.0 {
        let p = probs.pop().unwrap();
        let o = obs.pop().unwrap();
        *probs.last_mut().unwrap() += p;
        *obs.last_mut().unwrap() += o;
    }
    let stat = obs
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    (stat, obs.len() - 1)
}

pub fn chi_square_critical(df: usize, level: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(level)
}

pub fn mean(xs: &[u64]) -> f64 {
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

/// Timestamps of rows that carry a corrective action.
pub fn trigger_times(rows: &[convlab::calibrate::TraceRow]) -> Vec<u64> {
    rows.iter()
        .filter(|r| r.action != convlab::calibrate::ActionKind::NoAction)
        .map(|r| r.timestamp)
        .collect()
}

/// A drift replay passes when nothing fires before `change` and the first
/// trigger lands within `lag` attempts after it.
pub fn drift_detected(rows: &[convlab::calibrate::TraceRow], change: u64, lag: u64) -> bool {
    match trigger_times(rows).first() {
        Some(&t) => t >= change && t < change + lag,
        None => false,
    }
}
