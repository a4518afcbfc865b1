//! Evaluation: coverage and removal-rate metrics, the repeated random-split
//! harness, NFE accounting and the simulated rollback policy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, CalibratedModel, ConformalConfig, Method, Prediction};
use crate::domain::{argmax_lowest, Interval, PredictionSet, Trajectory, XScore};
use crate::error::{Error, Result};
use crate::par;
use crate::rng;

const ROLLBACK_STREAM: u64 = 0x726f_6c6c;

// ---------------------------------------------------------------------------
// Summation helpers

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

// ---------------------------------------------------------------------------
// Set metrics

/// Fraction of sets containing their label.
pub fn empirical_coverage(predictions: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty(
            "empirical_coverage needs at least one prediction",
        ));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &j)| p.contains(j))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mean of `1 − |C|/ℓ`.
pub fn removal_rate(predictions: &[PredictionSet], lengths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("removal_rate needs at least one prediction"));
    }
    if predictions.len() != lengths.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} lengths",
            predictions.len(),
            lengths.len()
        )));
    }
    let mut terms = Vec::with_capacity(lengths.len());
    for (p, &len) in predictions.iter().zip(lengths) {
        if p.size() > len {
            return Err(Error::Precondition(format!(
                "set of size {} for length {len}",
                p.size()
            )));
        }
        terms.push(1.0 - p.size() as f64 / len as f64);
    }
    Ok(compensated_sum(terms) / predictions.len() as f64)
}

// ---------------------------------------------------------------------------
// Split harness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    pub q_hat: XScore,
    pub ec: f64,
    /// Coverage counting TWF fallback singletons as misses.
    pub ec_no_fallback: f64,
    pub rr: f64,
    pub mean_nfe: f64,
    pub mean_len: f64,
    pub fallbacks: usize,
    /// Predictions whose shape breaks the method's contract.
    pub shape_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ec_mean: f64,
    pub ec_std: f64,
    pub ec_no_fallback_mean: f64,
    pub rr_mean: f64,
    pub rr_std: f64,
    pub nfe_mean: f64,
    pub len_mean: f64,
    pub shape_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConformalConfig,
    pub n_splits: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub aggregate: AggregateMetrics,
    pub per_split: Vec<SplitResult>,
}

/// Everything produced by one calibration/test split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub model: CalibratedModel,
    pub cal_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub predictions: Vec<Prediction>,
}

/// Number of calibration points for a dataset of `n` at `fraction`.
pub fn calibration_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Seed of split `index` under master `seed`.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, index as u64)
}

fn check_harness_inputs(dataset: &[Trajectory], n_splits: usize, fraction: f64) -> Result<()> {
    if dataset.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 trajectories to split, got {}",
            dataset.len()
        )));
    }
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be >= 1".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    for t in dataset {
        t.require_label()?;
        t.scores()?;
    }
    Ok(())
}

/// Runs split `index`: shuffle with the split's seed, calibrate on the first
/// `fraction` of the permutation, predict on the rest. The model's seed is
/// the split seed.
pub fn run_split(
    dataset: &[Trajectory],
    cfg: &ConformalConfig,
    fraction: f64,
    seed: u64,
    index: usize,
) -> Result<SplitOutcome> {
    let s = split_seed(seed, index);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(s));
    let n_cal = calibration_size(dataset.len(), fraction);
    let test_indices = order.split_off(n_cal);
    let cal_indices = order;

    let cal: Vec<Trajectory> = cal_indices.iter().map(|&i| dataset[i].clone()).collect();
    let model = calibrate(&cfg.with_seed(s), &cal)?;
    let predictions = test_indices
        .iter()
        .map(|&i| model.predict(&dataset[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitOutcome {
        model,
        cal_indices,
        test_indices,
        predictions,
    })
}

fn summarize_split(
    dataset: &[Trajectory],
    index: usize,
    out: &SplitOutcome,
) -> Result<SplitResult> {
    let method = out.model.config.method;
    let tests: Vec<&Trajectory> = out.test_indices.iter().map(|&i| &dataset[i]).collect();
    let labels: Vec<usize> = tests.iter().map(|t| t.label().expect("checked")).collect();
    let lengths: Vec<usize> = tests.iter().map(|t| t.len()).collect();
    let sets: Vec<PredictionSet> = out.predictions.iter().map(|p| p.set.clone()).collect();

    let ec = empirical_coverage(&sets, &labels)?;
    let fallback_hits = out
        .predictions
        .iter()
        .zip(&labels)
        .filter(|(p, &j)| p.fallback && p.set.contains(j))
        .count();
    let m = tests.len() as f64;
    Ok(SplitResult {
        split: index,
        q_hat: out.model.q_hat,
        ec,
        ec_no_fallback: ec - fallback_hits as f64 / m,
        rr: removal_rate(&sets, &lengths)?,
        mean_nfe: compensated_sum(out.predictions.iter().map(|p| p.nfe as f64)) / m,
        mean_len: compensated_sum(lengths.iter().map(|&l| l as f64)) / m,
        fallbacks: out.predictions.iter().filter(|p| p.fallback).count(),
        shape_violations: out
            .predictions
            .iter()
            .zip(&lengths)
            .filter(|(p, &len)| !method.shape_ok(&p.set, len))
            .count(),
    })
}

fn aggregate_splits(per_split: &[SplitResult]) -> AggregateMetrics {
    let col = |f: fn(&SplitResult) -> f64| per_split.iter().map(f).collect::<Vec<_>>();
    let (ec_mean, ec_std) = mean_std(&col(|s| s.ec));
    let (rr_mean, rr_std) = mean_std(&col(|s| s.rr));
    AggregateMetrics {
        ec_mean,
        ec_std,
        ec_no_fallback_mean: mean_std(&col(|s| s.ec_no_fallback)).0,
        rr_mean,
        rr_std,
        nfe_mean: mean_std(&col(|s| s.mean_nfe)).0,
        len_mean: mean_std(&col(|s| s.mean_len)).0,
        shape_violations: per_split.iter().map(|s| s.shape_violations).sum(),
    }
}

fn split_eval_impl(
    dataset: &[Trajectory],
    cfg: &ConformalConfig,
    n_splits: usize,
    fraction: f64,
    seed: u64,
    parallel: bool,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_harness_inputs(dataset, n_splits, fraction)?;
    let one = |i: usize| -> Result<SplitResult> {
        let out = run_split(dataset, cfg, fraction, seed, i)?;
        summarize_split(dataset, i, &out)
    };
    let per_split: Vec<SplitResult> = if parallel {
        par::map_indexed(n_splits, one)
    } else {
        par::map_indexed_serial(n_splits, one)
    }
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(EvalReport {
        config: *cfg,
        n_splits,
        split_fraction: fraction,
        seed,
        aggregate: aggregate_splits(&per_split),
        per_split,
    })
}

/// Repeated random calibration/test splits. Deterministic in `seed` and
/// independent of the worker count.
pub fn split_eval(
    dataset: &[Trajectory],
    cfg: &ConformalConfig,
    n_splits: usize,
    fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    split_eval_impl(dataset, cfg, n_splits, fraction, seed, true)
}

/// [`split_eval`] forced onto the calling thread.
pub fn split_eval_serial(
    dataset: &[Trajectory],
    cfg: &ConformalConfig,
    n_splits: usize,
    fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    split_eval_impl(dataset, cfg, n_splits, fraction, seed, false)
}

/// Mean NFE per method over the given reports.
pub fn count_nfe(reports: &[EvalReport]) -> Vec<(Method, f64)> {
    reports
        .iter()
        .map(|r| (r.config.method, r.aggregate.nfe_mean))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub alpha: f64,
    pub target: f64,
    pub ec_mean: f64,
    pub ec_std: f64,
    pub rr_mean: f64,
    pub upper_bound: f64,
}

/// Default α grid `0.05, 0.10, …, 0.95`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19)
        .map(|i| f64::from(i) * 0.05)
        .map(|a| (a * 100.0).round() / 100.0)
        .collect()
}

/// Empirical coverage for every `(method, α)` on the same split seeds.
pub fn coverage_curve(
    dataset: &[Trajectory],
    base: &ConformalConfig,
    methods: &[Method],
    alphas: &[f64],
    n_splits: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    check_harness_inputs(dataset, n_splits, fraction)?;
    let n_cal = calibration_size(dataset.len(), fraction) as f64;
    let mut out = Vec::new();
    for &method in methods {
        for &alpha in alphas {
            let cfg = ConformalConfig {
                method,
                alpha,
                ..*base
            };
            let r = split_eval(dataset, &cfg, n_splits, fraction, seed)?;
            out.push(CurvePoint {
                method,
                alpha,
                target: 1.0 - alpha,
                ec_mean: r.aggregate.ec_mean,
                ec_std: r.aggregate.ec_std,
                rr_mean: r.aggregate.rr_mean,
                upper_bound: 1.0 - alpha + 1.0 / (n_cal + 1.0),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rollback

/// First step of a non-empty set: where the process restarts.
pub fn rollback_point(set: &PredictionSet) -> Result<usize> {
    set.first()
        .ok_or_else(|| Error::Precondition("cannot roll back to an empty set".into()))
}

/// Success probabilities of a restarted run. A simulation stand-in for real
/// re-execution, not a measured quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryModel {
    /// Success probability when the rollback reaches the decisive error.
    pub p_cov: f64,
    /// Success probability when it does not.
    pub p_uncov: f64,
}

impl Default for RecoveryModel {
    fn default() -> Self {
        Self {
            p_cov: 0.85,
            p_uncov: 0.35,
        }
    }
}

impl RecoveryModel {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_cov, self.p_uncov] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "recovery probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollbackOutcome {
    pub success_rate: f64,
    pub coverage: f64,
    pub cost: f64,
}

/// Rollback metrics for one batch.
///
/// The rollback point is the first step of each set; coverage is the
/// fraction of points at or before the label and cost the mean fraction of
/// steps redone, `(ℓ − point + 1)/ℓ`. An empty set restarts nothing: it
/// counts as uncovered with zero cost. Success is one Bernoulli draw per
/// record from `recovery`.
pub fn rollback_metrics<R: Rng + ?Sized>(
    sets: &[PredictionSet],
    labels: &[usize],
    lengths: &[usize],
    recovery: &RecoveryModel,
    rng: &mut R,
) -> Result<RollbackOutcome> {
    recovery.validate()?;
    if sets.is_empty() {
        return Err(Error::Empty("rollback_metrics needs at least one set"));
    }
    if sets.len() != labels.len() || sets.len() != lengths.len() {
        return Err(Error::Precondition(
            "rollback inputs are not aligned".into(),
        ));
    }
    let (mut covered, mut success) = (0usize, 0usize);
    let mut costs = Vec::with_capacity(sets.len());
    for ((set, &label), &len) in sets.iter().zip(labels).zip(lengths) {
        let point = set.first().unwrap_or(len + 1);
        let hit = point <= label;
        covered += usize::from(hit);
        costs.push((len + 1 - point) as f64 / len as f64);
        let p = if hit {
            recovery.p_cov
        } else {
            recovery.p_uncov
        };
        success += usize::from(rng.gen_bool(p));
    }
    let m = sets.len() as f64;
    Ok(RollbackOutcome {
        success_rate: success as f64 / m,
        coverage: covered as f64 / m,
        cost: compensated_sum(costs) / m,
    })
}

/// Singleton at each trajectory's highest-scoring step.
pub fn top1_sets(trajectories: &[&Trajectory]) -> Result<Vec<PredictionSet>> {
    trajectories
        .iter()
        .map(|t| {
            Ok(PredictionSet::Contiguous(Interval::singleton(
                argmax_lowest(t.scores()?),
            )))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackReport {
    pub method: String,
    pub success_rate: f64,
    pub success_rate_std: f64,
    pub coverage: f64,
    pub coverage_std: f64,
    pub cost: f64,
    pub cost_std: f64,
    pub recovery: RecoveryModel,
    /// Success rates come from the recovery model, not from re-execution.
    pub simulated: bool,
}

fn rollback_report(
    name: &str,
    rows: &[RollbackOutcome],
    recovery: RecoveryModel,
) -> RollbackReport {
    let (success_rate, success_rate_std) =
        mean_std(&rows.iter().map(|r| r.success_rate).collect::<Vec<_>>());
    let (coverage, coverage_std) = mean_std(&rows.iter().map(|r| r.coverage).collect::<Vec<_>>());
    let (cost, cost_std) = mean_std(&rows.iter().map(|r| r.cost).collect::<Vec<_>>());
    RollbackReport {
        method: name.to_string(),
        success_rate,
        success_rate_std,
        coverage,
        coverage_std,
        cost,
        cost_std,
        recovery,
        simulated: true,
    }
}

/// Conformal rollback against the Top-1 baseline over repeated splits.
/// Returns the method's row followed by the `top1` row.
pub fn rollback_sim(
    dataset: &[Trajectory],
    cfg: &ConformalConfig,
    n_splits: usize,
    fraction: f64,
    recovery: &RecoveryModel,
    seed: u64,
) -> Result<Vec<RollbackReport>> {
    cfg.validate()?;
    recovery.validate()?;
    check_harness_inputs(dataset, n_splits, fraction)?;
    let rows = par::map_indexed(
        n_splits,
        |i| -> Result<(RollbackOutcome, RollbackOutcome)> {
            let out = run_split(dataset, cfg, fraction, seed, i)?;
            let tests: Vec<&Trajectory> = out.test_indices.iter().map(|&k| &dataset[k]).collect();
            let labels: Vec<usize> = tests.iter().map(|t| t.label().expect("checked")).collect();
            let lengths: Vec<usize> = tests.iter().map(|t| t.len()).collect();
            let sets: Vec<PredictionSet> = out.predictions.into_iter().map(|p| p.set).collect();
            let mut r = rng::child_stream(split_seed(seed, i), ROLLBACK_STREAM);
            let conformal = rollback_metrics(&sets, &labels, &lengths, recovery, &mut r)?;
            let top1 = rollback_metrics(&top1_sets(&tests)?, &labels, &lengths, recovery, &mut r)?;
            Ok((conformal, top1))
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (method_rows, top1_rows): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(vec![
        rollback_report(cfg.method.as_str(), &method_rows, *recovery),
        rollback_report("top1", &top1_rows, *recovery),
    ])
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Serialize)]
struct SplitRow<'a> {
    method: &'a str,
    alpha: f64,
    aggregator: &'a str,
    split: usize,
    q_hat: String,
    ec: f64,
    ec_no_fallback: f64,
    rr: f64,
    mean_nfe: f64,
    mean_len: f64,
    fallbacks: usize,
    shape_violations: usize,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One row per split for every report.
pub fn write_splits_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        for s in &r.per_split {
            wr.serialize(SplitRow {
                method: r.config.method.as_str(),
                alpha: r.config.alpha,
                aggregator: r.config.aggregator.name(),
                split: s.split,
                q_hat: s.q_hat.to_string(),
                ec: s.ec,
                ec_no_fallback: s.ec_no_fallback,
                rr: s.rr,
                mean_nfe: s.mean_nfe,
                mean_len: s.mean_len,
                fallbacks: s.fallbacks,
                shape_violations: s.shape_violations,
            })
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Wide table: one row per α with `<method>_ec_mean`, `<method>_ec_std`,
/// `<method>_rr_mean` columns.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut methods: Vec<Method> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for p in points {
        if !methods.contains(&p.method) {
            methods.push(p.method);
        }
        if !alphas.contains(&p.alpha) {
            alphas.push(p.alpha);
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["alpha".to_string(), "target".into(), "upper_bound".into()];
    for m in &methods {
        for c in ["ec_mean", "ec_std", "rr_mean"] {
            header.push(format!("{m}_{c}"));
        }
    }
    wr.write_record(&header).map_err(csv_err)?;
    for &a in &alphas {
        let at: Vec<&CurvePoint> = points.iter().filter(|p| p.alpha == a).collect();
        let ub = at.first().map_or(f64::NAN, |p| p.upper_bound);
        let mut row = vec![a.to_string(), (1.0 - a).to_string(), ub.to_string()];
        for m in &methods {
            match at.iter().find(|p| p.method == *m) {
                Some(p) => row.extend([p.ec_mean, p.ec_std, p.rr_mean].map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_rollback_csv<W: Write>(reports: &[RollbackReport], w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        success_rate: f64,
        success_rate_std: f64,
        coverage: f64,
        coverage_std: f64,
        cost: f64,
        cost_std: f64,
        p_cov: f64,
        p_uncov: f64,
        simulated: bool,
    }
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        wr.serialize(Row {
            method: &r.method,
            success_rate: r.success_rate,
            success_rate_std: r.success_rate_std,
            coverage: r.coverage,
            coverage_std: r.coverage_std,
            cost: r.cost,
            cost_std: r.cost_std,
            p_cov: r.recovery.p_cov,
            p_uncov: r.recovery.p_uncov,
            simulated: r.simulated,
        })
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig, PositionLaw};
    use crate::rng::stream;
    use crate::scoring::SyntheticScorerConfig;

    fn iv(lo: usize, hi: usize) -> PredictionSet {
        PredictionSet::Contiguous(Interval::new(lo, hi))
    }

    #[test]
    fn coverage_examples() {
        let full = vec![iv(1, 5), iv(1, 5)];
        assert_eq!(empirical_coverage(&full, &[2, 5]).unwrap(), 1.0);
        let empty = vec![iv(2, 1), iv(2, 1)];
        assert_eq!(empirical_coverage(&empty, &[2, 5]).unwrap(), 0.0);
        let half = vec![iv(1, 2), iv(1, 2)];
        assert_eq!(empirical_coverage(&half, &[2, 5]).unwrap(), 0.5);
        assert!(empirical_coverage(&[], &[]).is_err());
    }

    #[test]
    fn removal_examples() {
        assert_eq!(removal_rate(&[iv(1, 10)], &[10]).unwrap(), 0.0);
        assert!((removal_rate(&[iv(4, 4)], &[10]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(removal_rate(&[iv(2, 1)], &[10]).unwrap(), 1.0);
        assert!(
            (removal_rate(&[PredictionSet::Discrete(vec![1, 3])], &[4]).unwrap() - 0.5).abs()
                < 1e-12
        );
        assert!(removal_rate(&[iv(1, 5)], &[4]).is_err());
    }

    #[test]
    fn rollback_point_examples() {
        assert_eq!(rollback_point(&iv(3, 6)).unwrap(), 3);
        assert_eq!(
            rollback_point(&PredictionSet::Discrete(vec![2, 5, 7])).unwrap(),
            2
        );
        assert_eq!(rollback_point(&iv(4, 4)).unwrap(), 4);
        assert!(rollback_point(&iv(3, 2)).is_err());
    }

    #[test]
    fn rollback_metric_definitions() {
        let out = rollback_metrics(
            &[iv(3, 6)],
            &[4],
            &[8],
            &RecoveryModel::default(),
            &mut stream(1),
        )
        .unwrap();
        assert_eq!(out.coverage, 1.0);
        assert!((out.cost - 0.75).abs() < 1e-12);

        let sure = RecoveryModel {
            p_cov: 1.0,
            p_uncov: 0.0,
        };
        let sets = vec![iv(1, 3), iv(2, 5), iv(1, 1)];
        let out = rollback_metrics(&sets, &[2, 4, 1], &[5, 5, 3], &sure, &mut stream(2)).unwrap();
        assert_eq!(out.coverage, 1.0);
        assert_eq!(out.success_rate, 1.0);

        let miss = vec![iv(3, 5), iv(2, 1)];
        let out = rollback_metrics(&miss, &[1, 1], &[5, 5], &sure, &mut stream(2)).unwrap();
        assert_eq!(out.coverage, 0.0);
        assert_eq!(out.success_rate, 0.0);
        assert!((out.cost - 0.3).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v), 1.0);
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]).1, 0.0);
    }

    fn small_dataset() -> Vec<Trajectory> {
        generate(&GenConfig {
            n: 120,
            len_min: 5,
            len_max: 12,
            position: PositionLaw::Uniform,
            scorer: SyntheticScorerConfig::with_knob(5.0),
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn harness_is_deterministic_and_parallel_agnostic() {
        let data = small_dataset();
        let cfg = ConformalConfig::new(Method::Twf, 0.2);
        let a = split_eval(&data, &cfg, 20, 0.5, 9).unwrap();
        let b = split_eval(&data, &cfg, 20, 0.5, 9).unwrap();
        let c = split_eval_serial(&data, &cfg, 20, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.per_split.len(), 20);
        assert!(a
            .per_split
            .iter()
            .all(|s| (0.0..=1.0).contains(&s.ec) && (0.0..=1.0).contains(&s.rr)));
    }

    #[test]
    fn harness_rejects_tiny_or_unlabeled_data() {
        let data = small_dataset();
        let cfg = ConformalConfig::new(Method::Lf, 0.2);
        assert!(split_eval(&data[..1], &cfg, 5, 0.5, 1).is_err());
        assert!(split_eval(&data, &cfg, 0, 0.5, 1).is_err());
        let mut bad = data.clone();
        bad[0] = Trajectory::new("u", vec![0.1, 0.2], None).unwrap();
        assert!(split_eval(&bad, &cfg, 5, 0.5, 1).is_err());
    }

    #[test]
    fn harness_ec_matches_independent_pass() {
        let data = small_dataset();
        for method in Method::ALL {
            let cfg = ConformalConfig::new(method, 0.3);
            let report = split_eval(&data, &cfg, 5, 0.5, 4).unwrap();
            for (i, s) in report.per_split.iter().enumerate() {
                let out = run_split(&data, &cfg, 0.5, 4, i).unwrap();
                let mut hits = 0;
                for (p, &k) in out.predictions.iter().zip(&out.test_indices) {
                    let j = data[k].label().unwrap();
                    if match &p.set {
                        PredictionSet::Contiguous(iv) => {
                            iv.lo().is_some_and(|lo| lo <= j) && iv.hi().is_some_and(|hi| j <= hi)
                        }
                        PredictionSet::Discrete(ix) => ix.contains(&j),
                    } {
                        hits += 1;
                    }
                }
                assert_eq!(s.ec, hits as f64 / out.test_indices.len() as f64);
            }
        }
    }

    #[test]
    fn csv_outputs_have_headers() {
        let data = small_dataset();
        let cfg = ConformalConfig::new(Method::Lf, 0.2);
        let r = split_eval(&data, &cfg, 3, 0.5, 1).unwrap();
        let mut buf = Vec::new();
        write_splits_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,alpha,aggregator,split,q_hat,ec,"));
        assert_eq!(text.lines().count(), 4);

        let rb = rollback_sim(&data, &cfg, 3, 0.5, &RecoveryModel::default(), 1).unwrap();
        let mut buf = Vec::new();
        write_rollback_csv(&rb, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "method,success_rate,success_rate_std,coverage,coverage_std,cost,cost_std"
        ));
        assert!(text.contains("\ntop1,"));
    }

    #[test]
    fn alpha_grid() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[18], 0.95);
    }
}
