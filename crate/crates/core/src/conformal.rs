//! Split-conformal calibration and the filtration-based localizers.
//!
//! All methods use the "smaller is more conforming" orientation: a label is
//! covered when its conformal score is `≤ q̂`.
//!
//! | method | score                         | prediction set                      |
//! |--------|-------------------------------|-------------------------------------|
//! | VCP    | `1 − s_{j*}`                  | `{i : 1 − s_i ≤ q̂}`                 |
//! | LF     | `min_{j ≤ j*} g(c_{j:ℓ})`     | longest suffix with `g ≤ q̂`         |
//! | RF     | `min_{k ≥ j*} g(c_{1:k})`     | longest prefix with `g ≤ q̂`         |
//! | TWF    | `max(S_LF, S_RF)`             | LF set ∩ RF set                     |
//! | CRSVP  | see [`crate::hiercp`]         | one node of a binary sequence tree  |
//!
//! When `g` is monotone under interval inclusion the LF/RF minima collapse to
//! `g(c_{j*:ℓ})` and `g(c_{1:j*})`, and the set scans can stop at the first
//! interval that exceeds the threshold.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{argmax_lowest, Interval, PredictionSet, Trajectory, XScore};
use crate::error::{Error, Result};
use crate::hiercp;
use crate::rng::{self, StreamRng};
use crate::scoring::{aggregate_scores, AggregatorConfig};

pub const DEFAULT_JITTER: f64 = 1e-9;

const JITTER_STREAM: u64 = 0x6a69_7474_6572;
const PREDICT_STREAM: u64 = 0x0070_7265_6469_6374;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vcp,
    Lf,
    Rf,
    Twf,
    Crsvp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vcp,
        Method::Lf,
        Method::Rf,
        Method::Twf,
        Method::Crsvp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vcp => "vcp",
            Method::Lf => "lf",
            Method::Rf => "rf",
            Method::Twf => "twf",
            Method::Crsvp => "crsvp",
        }
    }

    /// Whether a prediction `set` for a trajectory of length `len` has the
    /// shape this method promises: LF suffixes, RF prefixes, TWF and CRSVP
    /// contiguous intervals, VCP any index set.
    pub fn shape_ok(&self, set: &PredictionSet, len: usize) -> bool {
        let in_range = match set {
            PredictionSet::Contiguous(iv) => iv.check_within(len).is_ok(),
            PredictionSet::Discrete(ix) => ix.iter().all(|&i| (1..=len).contains(&i)),
        };
        if !in_range {
            return false;
        }
        match (self, set) {
            (Method::Vcp, PredictionSet::Discrete(_)) => true,
            (Method::Lf, PredictionSet::Contiguous(iv)) => iv.is_empty() || iv.hi() == Some(len),
            (Method::Rf, PredictionSet::Contiguous(iv)) => iv.is_empty() || iv.lo() == Some(1),
            (Method::Twf, PredictionSet::Contiguous(_)) => true,
            (Method::Crsvp, PredictionSet::Contiguous(iv)) => !iv.is_empty(),
            _ => false,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub method: Method,
    pub alpha: f64,
    pub aggregator: AggregatorConfig,
    pub jitter_epsilon: f64,
    pub seed: u64,
    /// Use the monotone shortcuts (closed-form scores, early-exit scans).
    /// With `false`, scores take the generic minimum and scans visit every
    /// suffix or prefix.
    #[serde(default = "yes")]
    pub assume_monotone: bool,
    /// Replace an empty TWF set with the singleton at the highest step score.
    #[serde(default = "yes")]
    pub twf_fallback: bool,
}

fn yes() -> bool {
    true
}

impl ConformalConfig {
    pub fn new(method: Method, alpha: f64) -> Self {
        Self {
            method,
            alpha,
            aggregator: AggregatorConfig::SumNorm,
            jitter_epsilon: DEFAULT_JITTER,
            seed: 0,
            assume_monotone: true,
            twf_fallback: true,
        }
    }

    pub fn with_aggregator(mut self, aggregator: AggregatorConfig) -> Self {
        self.aggregator = aggregator;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.jitter_epsilon.is_finite() && self.jitter_epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_epsilon must be >= 0, got {}",
                self.jitter_epsilon
            )));
        }
        self.aggregator.validate()
    }
}

/// A prediction together with its cost in step-score evaluations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub set: PredictionSet,
    pub nfe: usize,
    /// True when the set is the TWF empty-set fallback singleton.
    #[serde(default)]
    pub fallback: bool,
}

/// Rank `k = ⌈(n+1)(1−α)⌉` of the conformal order statistic.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = x.round();
    // products like 10·0.8 land a hair above the integer in floating point
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// The `⌈(n+1)(1−α)⌉`-th smallest score, or `+∞` when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[XScore], alpha: f64) -> Result<XScore> {
    if scores.is_empty() {
        return Err(Error::Empty("conformal_quantile needs at least one score"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    if k > n {
        warn!("calibration set too small: rank {k} > n = {n} at alpha = {alpha}; q_hat = +inf");
        return Ok(XScore::Infinite);
    }
    let mut sorted = scores.to_vec();
    sorted.select_nth_unstable(k - 1);
    Ok(sorted[k - 1])
}

/// [`conformal_quantile`] after adding i.i.d. `U[0, ε)` noise to each finite
/// score, which breaks ties among calibration scores.
pub fn conformal_quantile_jittered<R: Rng + ?Sized>(
    scores: &[XScore],
    alpha: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<XScore> {
    if epsilon <= 0.0 {
        return conformal_quantile(scores, alpha);
    }
    let noisy: Vec<XScore> = scores
        .iter()
        .map(|s| match *s {
            XScore::Finite(v) => XScore::finite(v + rng.gen::<f64>() * epsilon),
            XScore::Infinite => XScore::Infinite,
        })
        .collect();
    conformal_quantile(&noisy, alpha)
}

// ---------------------------------------------------------------------------
// VCP

pub fn vcp_score(t: &Trajectory) -> Result<XScore> {
    let j = t.require_label()?;
    Ok(XScore::finite(1.0 - t.scores()?[j - 1]))
}

pub fn vcp_predict(t: &Trajectory, q_hat: XScore) -> Result<Prediction> {
    let s = t.scores()?;
    let set = s
        .iter()
        .enumerate()
        .filter(|(_, &v)| XScore::finite(1.0 - v) <= q_hat)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(Prediction {
        set: PredictionSet::Discrete(set),
        nfe: s.len(),
        fallback: false,
    })
}

// ---------------------------------------------------------------------------
// Left / right filtration

/// Which end the filtration removes steps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Removes from the left, keeping suffixes `c_{j:ℓ}`.
    Left,
    /// Removes from the right, keeping prefixes `c_{1:k}`.
    Right,
}

impl Side {
    /// Chain member with `m` steps.
    fn interval(self, len: usize, m: usize) -> Interval {
        match self {
            Side::Left => Interval::new(len + 1 - m, len),
            Side::Right => Interval::new(1, m),
        }
    }

    /// Size of the shortest chain member containing step `j`.
    fn reach(self, len: usize, j: usize) -> usize {
        match self {
            Side::Left => len + 1 - j,
            Side::Right => j,
        }
    }
}

/// Longest chain member with aggregate `≤ q̂`, with its NFE.
///
/// With `monotone`, scans from the single-step member upward and stops at the
/// first exceedance; otherwise every non-trivial member is scored. The whole
/// trajectory is never scored: its aggregate is `+∞` by definition.
pub fn filter_predict(
    side: Side,
    t: &Trajectory,
    agg: &AggregatorConfig,
    q_hat: XScore,
    monotone: bool,
) -> Result<Prediction> {
    let s = t.scores()?;
    let len = s.len();
    let done = |iv, nfe| Prediction {
        set: PredictionSet::Contiguous(iv),
        nfe,
        fallback: false,
    };
    // An infinite threshold still walks the chain since nothing exceeds it:
    // ℓ − 1 evaluations, and the unscored whole trajectory is admitted.
    let mut best = 0;
    let mut nfe = 0;
    for m in 1..len {
        nfe = m;
        if aggregate_scores(agg, s, side.interval(len, m))? <= q_hat {
            best = m;
        } else if monotone {
            break;
        }
    }
    if q_hat.is_infinite() {
        best = len;
    }
    Ok(done(side.interval(len, best), nfe))
}

/// Conformal score of a filtration: the smallest threshold keeping `j*`.
///
/// With `monotone` this is the aggregate of the shortest chain member that
/// contains the label; otherwise the minimum over all members containing it.
pub fn filter_score(
    side: Side,
    t: &Trajectory,
    agg: &AggregatorConfig,
    monotone: bool,
) -> Result<XScore> {
    let j = t.require_label()?;
    let s = t.scores()?;
    let len = s.len();
    let reach = side.reach(len, j);
    if monotone {
        return aggregate_scores(agg, s, side.interval(len, reach));
    }
    (reach..=len)
        .map(|m| aggregate_scores(agg, s, side.interval(len, m)))
        .try_fold(XScore::Infinite, |acc, g| g.map(|g| acc.min(g)))
}

pub fn lf_predict(t: &Trajectory, agg: &AggregatorConfig, q_hat: XScore) -> Result<Prediction> {
    filter_predict(Side::Left, t, agg, q_hat, true)
}

pub fn rf_predict(t: &Trajectory, agg: &AggregatorConfig, q_hat: XScore) -> Result<Prediction> {
    filter_predict(Side::Right, t, agg, q_hat, true)
}

/// `g(c_{j*:ℓ})`; `+∞` when `j* = 1`.
pub fn lf_score(t: &Trajectory, agg: &AggregatorConfig) -> Result<XScore> {
    filter_score(Side::Left, t, agg, true)
}

/// `g(c_{1:j*})`; `+∞` when `j* = ℓ`.
pub fn rf_score(t: &Trajectory, agg: &AggregatorConfig) -> Result<XScore> {
    filter_score(Side::Right, t, agg, true)
}

// ---------------------------------------------------------------------------
// Two-way filtration

pub fn twf_score_with(t: &Trajectory, agg: &AggregatorConfig, monotone: bool) -> Result<XScore> {
    let left = filter_score(Side::Left, t, agg, monotone)?;
    let right = filter_score(Side::Right, t, agg, monotone)?;
    Ok(left.max(right))
}

pub fn twf_score(t: &Trajectory, agg: &AggregatorConfig) -> Result<XScore> {
    twf_score_with(t, agg, true)
}

/// Intersection of the LF and RF sets. An empty intersection falls back to
/// the highest-scoring step when `fallback` is set. NFE is always `ℓ`: the
/// two scans together consume every step score in the worst case.
pub fn twf_predict_with(
    t: &Trajectory,
    agg: &AggregatorConfig,
    q_hat: XScore,
    monotone: bool,
    fallback: bool,
) -> Result<Prediction> {
    let left = filter_predict(Side::Left, t, agg, q_hat, monotone)?;
    let right = filter_predict(Side::Right, t, agg, q_hat, monotone)?;
    let (PredictionSet::Contiguous(a), PredictionSet::Contiguous(b)) = (&left.set, &right.set)
    else {
        unreachable!("filtrations return intervals");
    };
    let iv = a.intersect(b);
    let (iv, used_fallback) = if iv.is_empty() && fallback {
        (Interval::singleton(argmax_lowest(t.scores()?)), true)
    } else {
        (iv, false)
    };
    Ok(Prediction {
        set: PredictionSet::Contiguous(iv),
        nfe: t.len(),
        fallback: used_fallback,
    })
}

pub fn twf_predict(t: &Trajectory, agg: &AggregatorConfig, q_hat: XScore) -> Result<Prediction> {
    twf_predict_with(t, agg, q_hat, true, true)
}

// ---------------------------------------------------------------------------
// Calibration

/// Conformal score of `t` under `cfg`. `rng` feeds the CRSVP interpolation.
pub fn conformal_score<R: Rng + ?Sized>(
    cfg: &ConformalConfig,
    t: &Trajectory,
    rng: &mut R,
) -> Result<XScore> {
    let agg = &cfg.aggregator;
    match cfg.method {
        Method::Vcp => vcp_score(t),
        Method::Lf => filter_score(Side::Left, t, agg, cfg.assume_monotone),
        Method::Rf => filter_score(Side::Right, t, agg, cfg.assume_monotone),
        Method::Twf => twf_score_with(t, agg, cfg.assume_monotone),
        Method::Crsvp => hiercp::crsvp_score(t, agg, rng),
    }
}

/// A calibrated threshold plus everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    #[serde(flatten)]
    pub config: ConformalConfig,
    pub q_hat: XScore,
    pub n_cal: usize,
}

/// Scores every calibration trajectory and takes the conformal quantile.
///
/// CRSVP scores are interpolated node scores where a larger value means more
/// of the tree must be climbed to reach the label; taking the upper
/// `⌈(n+1)(1−α)⌉` order statistic of them is the same as the lower
/// `⌊(n+1)α⌋` order statistic of their negation (the conformity form).
pub fn calibrate(cfg: &ConformalConfig, cal_set: &[Trajectory]) -> Result<CalibratedModel> {
    cfg.validate()?;
    if cal_set.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let scores = cal_set
        .iter()
        .enumerate()
        .map(|(i, t)| conformal_score(cfg, t, &mut rng::child_stream(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut jitter = rng::child_stream(cfg.seed, JITTER_STREAM);
    let q_hat = conformal_quantile_jittered(&scores, cfg.alpha, cfg.jitter_epsilon, &mut jitter)?;
    Ok(CalibratedModel {
        config: *cfg,
        q_hat,
        n_cal: cal_set.len(),
    })
}

impl CalibratedModel {
    /// Stream for randomized prediction on `t`, keyed by its id so results
    /// do not depend on evaluation order.
    pub fn prediction_stream(&self, t: &Trajectory) -> StreamRng {
        rng::stream(rng::derive_seed_str(
            self.config.seed ^ PREDICT_STREAM,
            t.id(),
        ))
    }

    pub fn predict(&self, t: &Trajectory) -> Result<Prediction> {
        let mut r = self.prediction_stream(t);
        self.predict_with(t, &mut r)
    }

    pub fn predict_with<R: Rng + ?Sized>(&self, t: &Trajectory, rng: &mut R) -> Result<Prediction> {
        let cfg = &self.config;
        let agg = &cfg.aggregator;
        match cfg.method {
            Method::Vcp => vcp_predict(t, self.q_hat),
            Method::Lf => filter_predict(Side::Left, t, agg, self.q_hat, cfg.assume_monotone),
            Method::Rf => filter_predict(Side::Right, t, agg, self.q_hat, cfg.assume_monotone),
            Method::Twf => {
                twf_predict_with(t, agg, self.q_hat, cfg.assume_monotone, cfg.twf_fallback)
            }
            Method::Crsvp => hiercp::crsvp_predict(t, agg, self.q_hat, rng),
        }
    }
}
