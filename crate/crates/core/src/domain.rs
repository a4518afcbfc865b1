//! Domain values shared by every algorithm: the extended score domain,
//! 1-based step intervals, trajectories and prediction sets.
//!
//! Step indices are 1-based everywhere in the public API. A trajectory of
//! length `ℓ` has steps `1..=ℓ`; an interval `[j, k]` is the closed range of
//! steps `j..=k` and is empty when `j > k`.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// A non-negative score extended with an explicit `+∞`.
///
/// `+∞` is its own variant rather than `f64::INFINITY` so that ordering is
/// total and the JSON encoding (`"inf"`) is exact.
#[derive(Debug, Clone, Copy)]
pub enum XScore {
    Finite(f64),
    Infinite,
}

impl XScore {
    pub const ZERO: XScore = XScore::Finite(0.0);

    /// Wraps a finite value. Panics on NaN or infinities; use [`XScore::Infinite`]
    /// for the sentinel.
    pub fn finite(v: f64) -> Self {
        assert!(v.is_finite(), "XScore::finite called with {v}");
        XScore::Finite(v)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, XScore::Infinite)
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            XScore::Finite(v) => Some(v),
            XScore::Infinite => None,
        }
    }

    /// Lossy view as `f64`, mapping the sentinel to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

impl PartialEq for XScore {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for XScore {}

impl PartialOrd for XScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for XScore {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (XScore::Infinite, XScore::Infinite) => Ordering::Equal,
            (XScore::Infinite, _) => Ordering::Greater,
            (_, XScore::Infinite) => Ordering::Less,
            (XScore::Finite(a), XScore::Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for XScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XScore::Finite(v) => write!(f, "{v}"),
            XScore::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for XScore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            XScore::Finite(v) => s.serialize_f64(*v),
            XScore::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for XScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct XScoreVisitor;

        impl Visitor<'_> for XScoreVisitor {
            type Value = XScore;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<XScore, E> {
                if v.is_finite() {
                    Ok(XScore::Finite(v))
                } else {
                    Err(E::custom("non-finite number"))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<XScore, E> {
                Ok(XScore::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<XScore, E> {
                Ok(XScore::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<XScore, E> {
                match v {
                    "inf" => Ok(XScore::Infinite),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        d.deserialize_any(XScoreVisitor)
    }
}

/// A closed, 1-based range of steps `[lo, hi]`, or the canonical empty interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    Empty,
    Span { lo: usize, hi: usize },
}

impl Interval {
    /// Builds `[lo, hi]`, normalizing `lo > hi` to [`Interval::Empty`].
    pub fn new(lo: usize, hi: usize) -> Self {
        if lo > hi {
            Interval::Empty
        } else {
            Interval::Span { lo, hi }
        }
    }

    pub fn singleton(j: usize) -> Self {
        Interval::Span { lo: j, hi: j }
    }

    /// The whole trajectory `[1, len]`.
    pub fn full(len: usize) -> Self {
        Interval::new(1, len)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn bounds(&self) -> Option<(usize, usize)> {
        match *self {
            Interval::Empty => None,
            Interval::Span { lo, hi } => Some((lo, hi)),
        }
    }

    pub fn lo(&self) -> Option<usize> {
        self.bounds().map(|(lo, _)| lo)
    }

    pub fn hi(&self) -> Option<usize> {
        self.bounds().map(|(_, hi)| hi)
    }

    pub fn len(&self) -> usize {
        self.bounds().map_or(0, |(lo, hi)| hi - lo + 1)
    }

    pub fn contains(&self, j: usize) -> bool {
        self.bounds().is_some_and(|(lo, hi)| lo <= j && j <= hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        match (self.bounds(), other.bounds()) {
            (Some((a, b)), Some((c, d))) => Interval::new(a.max(c), b.min(d)),
            _ => Interval::Empty,
        }
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        match (self.bounds(), other.bounds()) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((a, b)), Some((c, d))) => c <= a && b <= d,
        }
    }

    /// Checks `1 ≤ lo ≤ hi ≤ len` for non-empty intervals.
    pub fn check_within(&self, len: usize) -> Result<()> {
        match self.bounds() {
            Some((lo, hi)) if lo == 0 || hi > len => Err(Error::OutOfBounds { lo, hi, len }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Empty => f.write_str("∅"),
            Interval::Span { lo, hi } => write!(f, "[{lo},{hi}]"),
        }
    }
}

// Encoded as `[lo, hi]`, or `null` when empty.
impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.bounds().map(|(lo, hi)| [lo, hi]).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Option<[usize; 2]> = Option::deserialize(d)?;
        Ok(match raw {
            None => Interval::Empty,
            Some([lo, hi]) => Interval::new(lo, hi),
        })
    }
}

/// One step of a trajectory as seen by algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<'a> {
    pub index: usize,
    pub score: Option<f64>,
    pub payload: Option<&'a str>,
}

/// A sequence of `ℓ ≥ 1` steps with optional per-step scores in `[0, 1]`,
/// optional opaque payloads and an optional decisive-error label `j*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    len: usize,
    label: Option<usize>,
    scores: Option<Vec<f64>>,
    steps: Option<Vec<String>>,
}

impl Trajectory {
    /// Builds a scored trajectory; its length is the number of scores.
    pub fn new(id: impl Into<String>, scores: Vec<f64>, label: Option<usize>) -> Result<Self> {
        Self::from_parts(id.into(), scores.len(), label, Some(scores), None)
    }

    /// Validating constructor used by file readers.
    pub fn from_parts(
        id: String,
        len: usize,
        label: Option<usize>,
        scores: Option<Vec<f64>>,
        steps: Option<Vec<String>>,
    ) -> Result<Self> {
        if len == 0 {
            return Err(Error::Precondition(format!(
                "trajectory `{id}` has zero steps"
            )));
        }
        if let Some(j) = label {
            if j == 0 || j > len {
                return Err(Error::Precondition(format!(
                    "trajectory `{id}`: label {j} outside [1, {len}]"
                )));
            }
        }
        if let Some(s) = &scores {
            if s.len() != len {
                return Err(Error::Precondition(format!(
                    "trajectory `{id}`: {} scores for {len} steps",
                    s.len()
                )));
            }
            if let Some(bad) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Precondition(format!(
                    "trajectory `{id}`: score {bad} outside [0, 1]"
                )));
            }
        }
        if let Some(p) = &steps {
            if p.len() != len {
                return Err(Error::Precondition(format!(
                    "trajectory `{id}`: {} payloads for {len} steps",
                    p.len()
                )));
            }
        }
        Ok(Self {
            id,
            len,
            label,
            scores,
            steps,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn require_label(&self) -> Result<usize> {
        self.label.ok_or_else(|| Error::Unlabeled {
            id: self.id.clone(),
        })
    }

    pub fn scores(&self) -> Result<&[f64]> {
        self.scores.as_deref().ok_or_else(|| Error::MissingScores {
            id: self.id.clone(),
        })
    }

    pub fn raw_scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn payloads(&self) -> Option<&[String]> {
        self.steps.as_deref()
    }

    /// Step `index` (1-based).
    pub fn step(&self, index: usize) -> Option<StepRecord<'_>> {
        if index == 0 || index > self.len {
            return None;
        }
        Some(StepRecord {
            index,
            score: self.scores.as_ref().map(|s| s[index - 1]),
            payload: self.steps.as_ref().map(|p| p[index - 1].as_str()),
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = StepRecord<'_>> + '_ {
        (1..=self.len).filter_map(move |i| self.step(i))
    }

    /// Replaces the step scores, e.g. with externally computed ones.
    pub fn with_scores(self, scores: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.id, self.len, self.label, Some(scores), self.steps)
    }

    pub fn with_payloads(self, steps: Vec<String>) -> Result<Self> {
        Self::from_parts(self.id, self.len, self.label, self.scores, Some(steps))
    }

    /// Index of the highest step score, lowest index on ties.
    pub fn argmax_step(&self) -> Result<usize> {
        Ok(argmax_lowest(self.scores()?))
    }
}

/// 1-based argmax with lowest-index tie-breaking. `scores` must be non-empty.
pub(crate) fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best + 1
}

/// A prediction set: a contiguous interval or an arbitrary sorted index set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSet {
    Contiguous(Interval),
    Discrete(Vec<usize>),
}

impl PredictionSet {
    /// Builds a discrete set, sorting and de-duplicating the indices.
    pub fn discrete(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        PredictionSet::Discrete(indices)
    }

    pub fn contains(&self, j: usize) -> bool {
        match self {
            PredictionSet::Contiguous(iv) => iv.contains(j),
            PredictionSet::Discrete(ix) => ix.binary_search(&j).is_ok(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            PredictionSet::Contiguous(iv) => iv.len(),
            PredictionSet::Discrete(ix) => ix.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// Lowest index in the set.
    pub fn first(&self) -> Option<usize> {
        match self {
            PredictionSet::Contiguous(iv) => iv.lo(),
            PredictionSet::Discrete(ix) => ix.first().copied(),
        }
    }

    pub fn as_interval(&self) -> Option<Interval> {
        match self {
            PredictionSet::Contiguous(iv) => Some(*iv),
            PredictionSet::Discrete(_) => None,
        }
    }

    /// True when the indices form one gap-free run (the empty set counts).
    pub fn is_contiguous(&self) -> bool {
        match self {
            PredictionSet::Contiguous(_) => true,
            PredictionSet::Discrete(ix) => ix.windows(2).all(|w| w[1] == w[0] + 1),
        }
    }
}

impl fmt::Display for PredictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionSet::Contiguous(iv) => iv.fmt(f),
            PredictionSet::Discrete(ix) => {
                f.write_str("{")?;
                for (n, i) in ix.iter().enumerate() {
                    if n > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{i}")?;
                }
                f.write_str("}")
            }
        }
    }
}
