//! Interval-level aggregation of step scores.
//!
//! Every aggregator is wrapped with the filtration boundary conditions:
//! the empty interval scores `0` and the whole trajectory scores `+∞`.

use serde::{Deserialize, Serialize};

use crate::domain::{Interval, Trajectory, XScore};
use crate::error::{Error, Result};

/// How step scores are folded into one score for a contiguous interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorConfig {
    /// `Σ s_i / ℓ`.
    #[default]
    SumNorm,
    /// `max s_i + λ·(hi − lo)/ℓ`.
    MaxPenalty { lambda: f64 },
    /// `(1/β)·log Σ exp(β·ℓ·s_i) − log ℓ`, floored at zero.
    LogSumExp { beta: f64 },
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorConfig::SumNorm => Ok(()),
            AggregatorConfig::MaxPenalty { lambda } if lambda.is_finite() && lambda >= 0.0 => {
                Ok(())
            }
            AggregatorConfig::MaxPenalty { lambda } => {
                Err(Error::Config(format!("lambda must be >= 0, got {lambda}")))
            }
            AggregatorConfig::LogSumExp { beta } if beta.is_finite() && beta > 0.0 => Ok(()),
            AggregatorConfig::LogSumExp { beta } => {
                Err(Error::Config(format!("beta must be > 0, got {beta}")))
            }
        }
    }

    /// Max-with-penalty is only checked for monotonicity along the suffix and
    /// prefix chains, which are the only chains the filtrations walk.
    pub fn chains_only(&self) -> bool {
        matches!(self, AggregatorConfig::MaxPenalty { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorConfig::SumNorm => "sum",
            AggregatorConfig::MaxPenalty { .. } => "max",
            AggregatorConfig::LogSumExp { .. } => "lse",
        }
    }

    /// Aggregate of the non-empty slice `window` (the steps `lo..=hi`) of a
    /// trajectory of length `len`, without boundary overrides.
    fn fold(&self, window: &[f64], lo: usize, hi: usize, len: usize) -> f64 {
        let l = len as f64;
        match *self {
            AggregatorConfig::SumNorm => window.iter().sum::<f64>() / l,
            AggregatorConfig::MaxPenalty { lambda } => {
                let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + lambda * (hi - lo) as f64 / l
            }
            AggregatorConfig::LogSumExp { beta } => {
                let scaled = window.iter().map(|s| beta * l * s);
                let m = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + scaled.map(|x| (x - m).exp()).sum::<f64>().ln();
                (lse / beta - l.ln()).max(0.0)
            }
        }
    }
}

/// Plain aggregate of `iv` over `scores`: `0` for the empty interval, the
/// configured fold otherwise. The whole trajectory keeps its finite value.
pub fn raw_aggregate(cfg: &AggregatorConfig, scores: &[f64], iv: Interval) -> Result<f64> {
    iv.check_within(scores.len())?;
    Ok(match iv.bounds() {
        None => 0.0,
        Some((lo, hi)) => cfg.fold(&scores[lo - 1..hi], lo, hi, scores.len()),
    })
}

/// Aggregate with the filtration boundary conditions `g(∅) = 0`, `g(x) = +∞`.
pub fn aggregate_scores(cfg: &AggregatorConfig, scores: &[f64], iv: Interval) -> Result<XScore> {
    if iv == Interval::full(scores.len()) {
        return Ok(XScore::Infinite);
    }
    raw_aggregate(cfg, scores, iv).map(XScore::finite)
}

pub fn aggregate(cfg: &AggregatorConfig, t: &Trajectory, iv: Interval) -> Result<XScore> {
    aggregate_scores(cfg, t.scores()?, iv)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUNNING: [f64; 4] = [0.1, 0.5, 0.3, 0.1];

    fn brute_sum(scores: &[f64], lo: usize, hi: usize) -> f64 {
        let mut acc = 0.0;
        for (i, s) in scores.iter().enumerate() {
            if i + 1 >= lo && i < hi {
                acc += s;
            }
        }
        acc / scores.len() as f64
    }

    #[test]
    fn sum_norm_running_example() {
        let got =
            aggregate_scores(&AggregatorConfig::SumNorm, &RUNNING, Interval::new(2, 4)).unwrap();
        let oracle = brute_sum(&RUNNING, 2, 4);
        assert!((got.to_f64() - oracle).abs() < 1e-15);
        assert!((got.to_f64() - 0.225).abs() < 1e-12);
    }

    #[test]
    fn boundaries_for_every_kind() {
        for cfg in [
            AggregatorConfig::SumNorm,
            AggregatorConfig::MaxPenalty { lambda: 0.1 },
            AggregatorConfig::LogSumExp { beta: 1.0 },
        ] {
            assert_eq!(
                aggregate_scores(&cfg, &RUNNING, Interval::Empty).unwrap(),
                XScore::ZERO
            );
            assert!(aggregate_scores(&cfg, &RUNNING, Interval::full(4))
                .unwrap()
                .is_infinite());
            assert!(raw_aggregate(&cfg, &RUNNING, Interval::full(4))
                .unwrap()
                .is_finite());
        }
    }

    #[test]
    fn max_penalty_and_lse_values() {
        let max = AggregatorConfig::MaxPenalty { lambda: 0.2 };
        let v = raw_aggregate(&max, &RUNNING, Interval::new(2, 4)).unwrap();
        assert!((v - (0.5 + 0.2 * 2.0 / 4.0)).abs() < 1e-12);

        let lse = AggregatorConfig::LogSumExp { beta: 0.5 };
        let v = raw_aggregate(&lse, &RUNNING, Interval::new(3, 4)).unwrap();
        let direct =
            ((0.5f64 * 4.0 * 0.3).exp() + (0.5f64 * 4.0 * 0.1).exp()).ln() / 0.5 - 4f64.ln();
        assert!((v - direct.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = aggregate_scores(&AggregatorConfig::SumNorm, &RUNNING, Interval::new(2, 5));
        assert!(matches!(err, Err(Error::OutOfBounds { .. })));
        assert!(
            aggregate_scores(&AggregatorConfig::SumNorm, &RUNNING, Interval::new(0, 2)).is_err()
        );
    }

    #[test]
    fn config_validation_and_json() {
        assert!(AggregatorConfig::MaxPenalty { lambda: -0.1 }
            .validate()
            .is_err());
        assert!(AggregatorConfig::LogSumExp { beta: 0.0 }
            .validate()
            .is_err());
        let j = serde_json::to_string(&AggregatorConfig::LogSumExp { beta: 2.0 }).unwrap();
        assert_eq!(j, r#"{"kind":"log_sum_exp","beta":2.0}"#);
    }
}
