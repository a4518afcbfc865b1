//! Discrimination metrics for step scorers viewed as classifiers of the
//! decisive-error step.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
}

/// AUROC by the Mann–Whitney rank formula with mid-ranks, so ties count ½.
///
/// Returns `None` when either class is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision, treating tied scores as one threshold.
pub fn auprc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group_tp = order[i..=j].iter().filter(|&&k| positive[k]).count();
        tp += group_tp;
        seen += j - i + 1;
        ap += (group_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Some(ap)
}

/// Pools all steps into one binary task (step is / is not the decisive
/// error). Accuracy is the fraction of trajectories whose highest-scoring
/// step is the label, ties going to the lowest index.
pub fn scorer_metrics(dataset: &[Trajectory]) -> Result<ScorerMetrics> {
    if dataset.is_empty() {
        return Err(Error::Empty("scorer_metrics needs at least one trajectory"));
    }
    let mut scores = Vec::new();
    let mut positive = Vec::new();
    let mut hits = 0usize;
    for t in dataset {
        let label = t.require_label()?;
        let s = t.scores()?;
        scores.extend_from_slice(s);
        positive.extend((1..=s.len()).map(|i| i == label));
        if t.argmax_step()? == label {
            hits += 1;
        }
    }
    Ok(ScorerMetrics {
        // a dataset of single-step trajectories has no negatives
        auroc: auroc(&scores, &positive).unwrap_or(0.5),
        auprc: auprc(&scores, &positive).unwrap_or(0.0),
        accuracy: hits as f64 / dataset.len() as f64,
    })
}
