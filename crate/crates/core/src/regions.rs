//! Operational regions of the success probability and timeout budgeting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::stats::negbin_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionThresholds {
    pub marginal_upper: f64,
    pub practical_upper: f64,
}

impl Default for RegionThresholds {
    fn default() -> Self {
        Self {
            marginal_upper: 0.3,
            practical_upper: 0.6,
        }
    }
}

impl RegionThresholds {
    pub fn new(marginal_upper: f64, practical_upper: f64) -> Result<Self> {
        if !(0.0 < marginal_upper && marginal_upper < practical_upper && practical_upper < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < {marginal_upper} < {practical_upper} < 1"
            )));
        }
        Ok(Self {
            marginal_upper,
            practical_upper,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Marginal,
    Practical,
    HighPerformance,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Marginal => "Marginal",
            RegionLabel::Practical => "Practical",
            RegionLabel::HighPerformance => "HighPerformance",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Marginal" => Ok(RegionLabel::Marginal),
            "Practical" => Ok(RegionLabel::Practical),
            "HighPerformance" => Ok(RegionLabel::HighPerformance),
            other => Err(Error::InvalidParameter(format!("unknown region {other:?}"))),
        }
    }
}

/// Marginal below `marginal_upper`, Practical on the closed interval up to
/// `practical_upper`, HighPerformance above it.
pub fn classify(delta: f64, thresholds: RegionThresholds) -> Result<RegionLabel> {
    check_probability("delta", delta)?;
    Ok(classify_unchecked(delta, thresholds))
}

/// [`classify`] without the `(0, 1]` check; used for window estimates,
/// which may be exactly 0.
pub(crate) fn classify_unchecked(delta: f64, thresholds: RegionThresholds) -> RegionLabel {
    if delta < thresholds.marginal_upper {
        RegionLabel::Marginal
    } else if delta <= thresholds.practical_upper {
        RegionLabel::Practical
    } else {
        RegionLabel::HighPerformance
    }
}

/// Smallest `k >= stages` with `alpha (1 - delta)^k <= epsilon`.
///
/// This inverts the exponential envelope only. The exact survival of the
/// stage-sum carries a polynomial factor and can exceed `epsilon` at the
/// returned value; [`certified_timeout`] gives the exact answer.
pub fn recommended_timeout(delta: f64, epsilon: f64, alpha: f64, stages: usize) -> Result<u64> {
    check_probability("delta", delta)?;
    check_epsilon(epsilon)?;
    if alpha.is_nan() || alpha < 1.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 1, got {alpha}"
        )));
    }
    let floor = stages as u64;
    if delta == 1.0 {
        return Ok(floor);
    }
    let k = ((epsilon / alpha).ln() / (-delta).ln_1p()).ceil();
    Ok(floor.max(k as u64))
}

/// Smallest `k >= stages` with exact `P(T > k) <= epsilon` for the sum of
/// `stages` geometric sojourns.
pub fn certified_timeout(delta: f64, epsilon: f64, stages: usize) -> Result<u64> {
    check_probability("delta", delta)?;
    check_epsilon(epsilon)?;
    Ok(negbin_quantile(1.0 - epsilon, stages, delta))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::negbin_survival;

    fn label(d: f64) -> RegionLabel {
        classify(d, RegionThresholds::default()).unwrap()
    }

    #[test]
    fn region_examples() {
        assert_eq!(label(0.2), RegionLabel::Marginal);
        assert_eq!(label(0.3), RegionLabel::Practical);
        assert_eq!(label(0.6), RegionLabel::Practical);
        assert_eq!(label(0.9), RegionLabel::HighPerformance);
        assert_eq!(label(0.05), RegionLabel::Marginal);
        assert_eq!(label(1.0), RegionLabel::HighPerformance);
        assert!(classify(0.0, RegionThresholds::default()).is_err());
        assert!(classify(1.01, RegionThresholds::default()).is_err());
    }

    #[test]
    fn threshold_validation() {
        assert!(RegionThresholds::new(0.6, 0.3).is_err());
        assert!(RegionThresholds::new(0.0, 0.3).is_err());
        assert!(RegionThresholds::new(0.2, 1.0).is_err());
        let t = RegionThresholds::new(0.2, 0.5).unwrap();
        assert_eq!(classify(0.25, t).unwrap(), RegionLabel::Practical);
    }

    #[test]
    fn label_round_trips_through_str() {
        for l in [
            RegionLabel::Marginal,
            RegionLabel::Practical,
            RegionLabel::HighPerformance,
        ] {
            assert_eq!(l.as_str().parse::<RegionLabel>().unwrap(), l);
        }
        assert!("nope".parse::<RegionLabel>().is_err());
    }

    #[test]
    fn timeout_examples() {
        // ceil(ln 1e-6 / ln 0.5) = ceil(19.93)
        assert_eq!(recommended_timeout(0.5, 1e-6, 1.0, 4).unwrap(), 20);
        assert_eq!(recommended_timeout(1.0, 1e-6, 1.0, 4).unwrap(), 4);
        // ceil(ln 1e-6 / ln 0.9) = ceil(131.12)
        assert_eq!(recommended_timeout(0.1, 1e-6, 1.0, 4).unwrap(), 132);
        assert_eq!(recommended_timeout(0.99, 0.5, 1.0, 4).unwrap(), 4);
        assert!(recommended_timeout(0.5, 0.0, 1.0, 4).is_err());
        assert!(recommended_timeout(0.5, 1e-3, 0.5, 4).is_err());
    }

    #[test]
    fn exponential_envelope_under_covers_the_stage_sum() {
        // P(T > 20) = (1 + 20 + 190 + 1140) / 2^20 for delta = 0.5.
        let k = recommended_timeout(0.5, 1e-6, 1.0, 4).unwrap();
        let exact = negbin_survival(k, 4, 0.5);
        assert!((exact - 1351.0 / 1_048_576.0).abs() < 1e-15);
        assert!(exact > 1e-6);
    }

    #[test]
    fn certified_timeout_covers_the_exact_tail() {
        for &d in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &eps in &[1e-2, 1e-4, 1e-6] {
                let k = certified_timeout(d, eps, 4).unwrap();
                assert!(
                    negbin_survival(k, 4, d) <= eps * (1.0 + 1e-9),
                    "d={d} eps={eps}"
                );
                assert!(k == 4 || negbin_survival(k - 1, 4, d) > eps * (1.0 - 1e-9));
            }
        }
        assert_eq!(certified_timeout(1.0, 1e-6, 4).unwrap(), 4);
    }
}
