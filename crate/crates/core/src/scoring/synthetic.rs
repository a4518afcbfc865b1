//! Parametric stand-in for learned step scorers.
//!
//! The decisive-error step draws its score from `Beta(hi_alpha, hi_beta)`;
//! every other step draws i.i.d. from `Beta(lo_alpha, lo_beta)`. Discriminative
//! power is controlled by one knob: `hi_alpha`, with the other three shapes
//! held at their defaults. At `hi_alpha == lo_alpha` both laws coincide
//! (AUROC 0.5) and AUROC rises monotonically towards 1 as the knob grows.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::scoring::metrics::auroc;

pub const DEFAULT_LO_ALPHA: f64 = 2.0;
pub const DEFAULT_LO_BETA: f64 = 5.0;
/// Upper end of the `hi_alpha` search range used by [`tune_scorer`].
pub const KNOB_MAX: f64 = 500.0;
pub const TUNE_TOLERANCE: f64 = 0.03;
/// Steps used to verify a tuned configuration.
pub const VERIFY_STEPS: usize = 10_000;

const SEARCH_STEPS: usize = 40_000;
const BISECTION_ROUNDS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScorerConfig {
    pub hi_alpha: f64,
    pub hi_beta: f64,
    pub lo_alpha: f64,
    pub lo_beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_auroc: Option<f64>,
}

impl Default for SyntheticScorerConfig {
    /// An uninformative scorer: both laws equal.
    fn default() -> Self {
        Self::with_knob(DEFAULT_LO_ALPHA)
    }
}

impl SyntheticScorerConfig {
    /// Default shapes with `hi_alpha = knob`.
    pub fn with_knob(knob: f64) -> Self {
        Self {
            hi_alpha: knob,
            hi_beta: DEFAULT_LO_BETA,
            lo_alpha: DEFAULT_LO_ALPHA,
            lo_beta: DEFAULT_LO_BETA,
            target_auroc: None,
        }
    }

    /// Sharply peaked scorer: error step near 1, others near 0.
    pub fn near_oracle() -> Self {
        Self {
            hi_alpha: 50.0,
            hi_beta: 1.0,
            lo_alpha: 1.0,
            lo_beta: 50.0,
            target_auroc: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [self.hi_alpha, self.hi_beta, self.lo_alpha, self.lo_beta];
        if shapes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "Beta shapes must be positive: {shapes:?}"
            )));
        }
        if let Some(t) = self.target_auroc {
            if !(t > 0.5 && t < 1.0) {
                return Err(Error::Config(format!(
                    "target AUROC must lie in (0.5, 1), got {t}"
                )));
            }
        }
        Ok(())
    }

    fn laws(&self) -> Result<(Beta<f64>, Beta<f64>)> {
        self.validate()?;
        let bad = |e| Error::Config(format!("Beta law: {e}"));
        Ok((
            Beta::new(self.hi_alpha, self.hi_beta).map_err(bad)?,
            Beta::new(self.lo_alpha, self.lo_beta).map_err(bad)?,
        ))
    }
}

/// Scores for a trajectory of length `len` whose decisive error is `label`.
pub fn synth_step_scores<R: Rng + ?Sized>(
    cfg: &SyntheticScorerConfig,
    label: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if label == 0 || label > len {
        return Err(Error::Precondition(format!(
            "label {label} outside [1, {len}]"
        )));
    }
    let (hi, lo) = cfg.laws()?;
    Ok((1..=len)
        .map(|i| {
            let law = if i == label { &hi } else { &lo };
            law.sample(rng).clamp(0.0, 1.0)
        })
        .collect())
}

/// Empirical AUROC on `n_steps` steps, half drawn from each law.
pub fn measure_auroc<R: Rng + ?Sized>(
    cfg: &SyntheticScorerConfig,
    n_steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let (hi, lo) = cfg.laws()?;
    let n_pos = n_steps / 2;
    let mut scores = Vec::with_capacity(n_steps);
    let mut positive = Vec::with_capacity(n_steps);
    for i in 0..n_steps {
        let is_pos = i < n_pos;
        let law = if is_pos { &hi } else { &lo };
        scores.push(law.sample(rng));
        positive.push(is_pos);
    }
    auroc(&scores, &positive).ok_or(Error::Empty("measure_auroc needs both classes"))
}

/// Finds `hi_alpha` by bisection (in log space, over `[lo_alpha, KNOB_MAX]`)
/// so that the scorer's AUROC matches `target`, then verifies the result on a
/// fresh sample of [`VERIFY_STEPS`] steps.
///
/// Every bisection round measures on the same random stream, so the search
/// sees a nearly deterministic function of the knob.
pub fn tune_scorer<R: Rng + ?Sized>(target: f64, rng: &mut R) -> Result<SyntheticScorerConfig> {
    if !(target > 0.5 && target < 1.0) {
        return Err(Error::Config(format!(
            "target AUROC must lie in (0.5, 1), got {target}"
        )));
    }
    let search_seed: u64 = rng.gen();
    let verify_seed: u64 = rng.gen();
    let at = |knob: f64| -> Result<f64> {
        let mut r: StreamRng = rng::stream(search_seed);
        measure_auroc(
            &SyntheticScorerConfig::with_knob(knob),
            SEARCH_STEPS,
            &mut r,
        )
    };

    let (mut lo, mut hi) = (DEFAULT_LO_ALPHA.ln(), KNOB_MAX.ln());
    let mut iterations = 0;
    if at(KNOB_MAX)? >= target {
        for _ in 0..BISECTION_ROUNDS {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if at(mid.exp())? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let knob = (0.5 * (lo + hi)).exp();
    let mut cfg = SyntheticScorerConfig::with_knob(knob);
    cfg.target_auroc = Some(target);

    let reached = measure_auroc(&cfg, VERIFY_STEPS, &mut rng::stream(verify_seed))?;
    if (reached - target).abs() > TUNE_TOLERANCE {
        return Err(Error::Unattainable {
            target,
            reached,
            iterations,
        });
    }
    Ok(cfg)
}
