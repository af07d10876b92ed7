//! Binary-classifier evaluation: AUROC (rank form with tie handling), the
//! precision–recall step curve and its area, thresholded confusion metrics,
//! and decision-curve net benefit with treat-all/treat-none references.
//!
//! Positive predictions use `score >= threshold` everywhere.

use crate::error::{Error, Result};

fn metrics_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Metrics(msg.into()))
}

/// Scores with ground-truth labels.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl EvalSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return metrics_err("scores and labels must be non-empty and equal-length");
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return metrics_err("scores must lie in [0, 1]");
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.n_positive() as f64 / self.len() as f64
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half (average-rank Mann–Whitney form).
pub fn auroc(e: &EvalSet) -> Result<f64> {
    let n_pos = e.n_positive();
    let n_neg = e.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return metrics_err("AUROC needs both classes present");
    }
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e.scores[a].partial_cmp(&e.scores[b]).unwrap());
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && e.scores[order[j + 1]] == e.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if e.labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Points of the ROC curve as (fpr, tpr), swept from high to low threshold,
/// tie groups processed jointly. Starts at (0,0), ends at (1,1).
pub fn roc_points(e: &EvalSet) -> Result<Vec<(f64, f64)>> {
    let n_pos = e.n_positive();
    let n_neg = e.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return metrics_err("ROC needs both classes present");
    }
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e.scores[b].partial_cmp(&e.scores[a]).unwrap());
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && e.scores[order[j + 1]] == e.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if e.labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j + 1;
    }
    Ok(pts)
}

/// Points of the precision–recall curve as (recall, precision), swept from
/// high to low threshold with tie groups processed jointly.
pub fn pr_points(e: &EvalSet) -> Result<Vec<(f64, f64)>> {
    let n_pos = e.n_positive();
    if n_pos == 0 {
        return metrics_err("PR curve needs at least one positive");
    }
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e.scores[b].partial_cmp(&e.scores[a]).unwrap());
    let mut pts = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && e.scores[order[j + 1]] == e.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if e.labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        pts.push((
            tp as f64 / n_pos as f64,
            tp as f64 / (tp + fp) as f64,
        ));
        i = j + 1;
    }
    Ok(pts)
}

/// Area under the precision–recall step curve: `Σ (r_k − r_{k−1})·p_k` over
/// the threshold sweep, starting from recall 0.
pub fn auprc(e: &EvalSet) -> Result<f64> {
    let pts = pr_points(e)?;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in pts {
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Confusion counts and derived metrics at a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Standard confusion metrics, predicting positive when `score >= threshold`.
/// F1 is 0 when there are neither predicted nor actual positives.
pub fn confusion_metrics(e: &EvalSet, threshold: f64) -> ConfusionMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (s, &l) in e.scores.iter().zip(&e.labels) {
        let pred = *s >= threshold;
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / e.len() as f64;
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy,
        f1,
    }
}

/// Net benefit of the classifier at threshold probability `pt`, plus the
/// treat-all and treat-none references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetBenefit {
    pub model: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Decision-curve net benefit `TP/n − (FP/n)·pt/(1−pt)` at threshold `pt`.
pub fn net_benefit(e: &EvalSet, pt: f64) -> Result<NetBenefit> {
    if !(0.0 < pt && pt < 1.0) {
        return metrics_err("threshold probability must lie in (0, 1)");
    }
    let m = confusion_metrics(e, pt);
    let n = e.len() as f64;
    let odds = pt / (1.0 - pt);
    let prevalence = e.prevalence();
    Ok(NetBenefit {
        model: m.tp as f64 / n - m.fp as f64 / n * odds,
        treat_all: prevalence - (1.0 - prevalence) * odds,
        treat_none: 0.0,
    })
}

/// Net benefit sampled over `pt ∈ {0.01, 0.02, …, 0.99}`, for the decision
/// curve table.
pub fn decision_curve(e: &EvalSet) -> Result<Vec<(f64, NetBenefit)>> {
    (1..100)
        .map(|i| {
            let pt = i as f64 / 100.0;
            net_benefit(e, pt).map(|nb| (pt, nb))
        })
        .collect()
}
