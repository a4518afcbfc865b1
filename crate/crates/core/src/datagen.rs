//! Synthetic failed trajectories with controlled decisive-error positions,
//! density-variant subsampling and the JSONL trajectory format.
//!
//! JSONL schema, one object per line:
//!
//! ```text
//! {"id": string, "len": int, "label": int|null, "scores": [float]|null, "steps": [string]|null}
//! ```
//!
//! Scores are written with 17 significant digits so they read back bit-exact.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::domain::Trajectory;
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::scoring::{synth_step_scores, SyntheticScorerConfig};

/// One third of the normalized trajectory length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Third {
    Left,
    Mid,
    Right,
}

impl Third {
    pub const ALL: [Third; 3] = [Third::Left, Third::Mid, Third::Right];

    /// Third containing the normalized position `(j−1)/(ℓ−1)` (`0` when
    /// `ℓ = 1`), with bins `[0, ⅓)`, `[⅓, ⅔)` and `[⅔, 1]`. Computed in exact
    /// integer arithmetic.
    pub fn of(j: usize, len: usize) -> Third {
        let (num, den) = (3 * (j - 1), len.saturating_sub(1));
        if den == 0 || num < den {
            Third::Left
        } else if num < 2 * den {
            Third::Mid
        } else {
            Third::Right
        }
    }
}

/// Distribution of the decisive-error position within a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionLaw {
    #[default]
    Uniform,
    Left,
    Mid,
    Right,
}

impl PositionLaw {
    fn accepts(self, j: usize, len: usize) -> bool {
        match self {
            PositionLaw::Uniform => true,
            PositionLaw::Left => Third::of(j, len) == Third::Left,
            PositionLaw::Mid => Third::of(j, len) == Third::Mid,
            PositionLaw::Right => Third::of(j, len) == Third::Right,
        }
    }
}

impl fmt::Display for PositionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionLaw::Uniform => "uniform",
            PositionLaw::Left => "left",
            PositionLaw::Mid => "mid",
            PositionLaw::Right => "right",
        })
    }
}

impl FromStr for PositionLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PositionLaw::Uniform),
            "left" => Ok(PositionLaw::Left),
            "mid" => Ok(PositionLaw::Mid),
            "right" => Ok(PositionLaw::Right),
            other => Err(Error::Config(format!("unknown density `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub position: PositionLaw,
    pub scorer: SyntheticScorerConfig,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return Err(Error::Config(format!(
                "need 1 <= len_min <= len_max, got [{}, {}]",
                self.len_min, self.len_max
            )));
        }
        let feasible = (self.len_min..=self.len_max)
            .any(|len| (1..=len).any(|j| self.position.accepts(j, len)));
        if !feasible {
            return Err(Error::Config(format!(
                "no length in [{}, {}] admits a {} decisive-error position",
                self.len_min, self.len_max, self.position
            )));
        }
        self.scorer.validate()
    }
}

/// Draws `n` i.i.d. labeled, scored trajectories.
///
/// Record `i` uses its own stream derived from the seed, so the output is
/// identical whether records are generated serially or in parallel. A dense
/// position law samples `(ℓ, j*)` uniformly and rejects positions outside its
/// third, which matches generating uniformly and subsampling by third.
pub fn generate(cfg: &GenConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    par::map_indexed(cfg.n, |i| generate_one(cfg, i))
        .into_iter()
        .collect()
}

fn generate_one(cfg: &GenConfig, i: usize) -> Result<Trajectory> {
    let mut r = rng::child_stream(cfg.seed, i as u64);
    let (len, label) = loop {
        let len = r.gen_range(cfg.len_min..=cfg.len_max);
        let j = r.gen_range(1..=len);
        if cfg.position.accepts(j, len) {
            break (len, j);
        }
    };
    let scores = synth_step_scores(&cfg.scorer, label, len, &mut r)?;
    Trajectory::new(format!("traj-{i:06}"), scores, Some(label))
}

/// Keeps trajectories whose decisive error lies in `variant`'s third.
pub fn dense_subsample(dataset: &[Trajectory], variant: Third) -> Result<Vec<Trajectory>> {
    let mut kept = Vec::new();
    for t in dataset {
        if Third::of(t.require_label()?, t.len()) == variant {
            kept.push(t.clone());
        }
    }
    if kept.is_empty() {
        warn!("dense_subsample({variant:?}) kept no trajectories");
    }
    Ok(kept)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    len: usize,
    #[serde(default)]
    label: Option<usize>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    steps: Option<Vec<String>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    len: usize,
    label: Option<usize>,
    scores: Option<Vec<Box<RawValue>>>,
    steps: Option<&'a [String]>,
}

/// `v` with 17 significant digits.
fn f64_17(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.16e}")).expect("formatted float is valid JSON")
}

pub fn to_jsonl_line(t: &Trajectory) -> Result<String> {
    let rec = RecordOut {
        id: t.id(),
        len: t.len(),
        label: t.label(),
        scores: t
            .raw_scores()
            .map(|s| s.iter().map(|&v| f64_17(v)).collect()),
        steps: t.payloads(),
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn parse_jsonl_line(line: &str, line_no: usize) -> Result<Trajectory> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let rec: RecordIn = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    Trajectory::from_parts(rec.id, rec.len, rec.label, rec.scores, rec.steps)
        .map_err(|e| parse_err(e.to_string()))
}

pub fn write_jsonl_to<W: Write>(dataset: &[Trajectory], w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for t in dataset {
        writeln!(w, "{}", to_jsonl_line(t)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl_from<R: Read>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_jsonl_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_jsonl(dataset: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl_to(dataset, File::create(path)?)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    read_jsonl_from(File::open(path)?)
}
