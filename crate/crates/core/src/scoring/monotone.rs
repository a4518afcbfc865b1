//! Brute-force check of interval monotonicity:
//! `inner ⊆ outer ⟹ g(inner) ≤ g(outer)`.

use rand::Rng;
use serde::Serialize;

use crate::domain::{Interval, Trajectory, XScore};
use crate::error::Result;
use crate::rng;
use crate::scoring::aggregate::{aggregate_scores, AggregatorConfig};

/// Longest trajectory enumerated exhaustively; longer ones are sampled.
pub const EXHAUSTIVE_MAX_LEN: usize = 12;
/// Nested pairs drawn per trajectory above [`EXHAUSTIVE_MAX_LEN`].
pub const SAMPLED_PAIRS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub inner: Interval,
    pub outer: Interval,
    pub inner_score: XScore,
    pub outer_score: XScore,
}

/// Pairs of nested non-empty intervals to test.
fn nested_pairs(len: usize, chains_only: bool) -> Vec<(Interval, Interval)> {
    let mut pairs = Vec::new();
    if chains_only {
        for a in 1..=len {
            for b in a + 1..=len {
                // suffix chain: c_{b:ℓ} ⊆ c_{a:ℓ}
                pairs.push((Interval::new(b, len), Interval::new(a, len)));
            }
        }
        for k in 1..=len {
            for m in k + 1..=len {
                pairs.push((Interval::new(1, k), Interval::new(1, m)));
            }
        }
        return pairs;
    }
    if len <= EXHAUSTIVE_MAX_LEN {
        for a in 1..=len {
            for d in a..=len {
                for b in a..=d {
                    for c in b..=d {
                        if (a, d) != (b, c) {
                            pairs.push((Interval::new(b, c), Interval::new(a, d)));
                        }
                    }
                }
            }
        }
    } else {
        let mut r = rng::stream(rng::derive_seed(0x6d6f_6e6f, len as u64));
        for _ in 0..SAMPLED_PAIRS {
            let a = r.gen_range(1..=len);
            let d = r.gen_range(a..=len);
            let b = r.gen_range(a..=d);
            let c = r.gen_range(b..=d);
            pairs.push((Interval::new(b, c), Interval::new(a, d)));
        }
    }
    pairs
}

/// Checks an arbitrary interval scorer on a score vector.
pub fn check_monotone_with<F>(scores: &[f64], chains_only: bool, mut g: F) -> Result<Vec<Violation>>
where
    F: FnMut(&[f64], Interval) -> Result<XScore>,
{
    let mut out = Vec::new();
    for (inner, outer) in nested_pairs(scores.len(), chains_only) {
        let (gi, go) = (g(scores, inner)?, g(scores, outer)?);
        if gi > go {
            out.push(Violation {
                inner,
                outer,
                inner_score: gi,
                outer_score: go,
            });
        }
    }
    Ok(out)
}

/// All monotonicity violations of `cfg` on `t`. Exhaustive over nested pairs
/// for `ℓ ≤ 12`, a fixed random sample of nested pairs beyond that. Max-with-
/// penalty is checked along the suffix and prefix chains only.
pub fn check_monotone(cfg: &AggregatorConfig, t: &Trajectory) -> Result<Vec<Violation>> {
    check_monotone_with(t.scores()?, cfg.chains_only(), |s, iv| {
        aggregate_scores(cfg, s, iv)
    })
}
