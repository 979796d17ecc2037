use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold for the hard label.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Absent when the labels contain a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Confusion,
    pub n_samples: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

impl MetricsReport {
    pub fn from_confusion(counts: Confusion, auc: Option<f64>) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self {
            accuracy: ratio(counts.tp + counts.tn, counts.n()),
            auc,
            f1,
            precision,
            recall,
            counts,
            n_samples: counts.n(),
        }
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Sorting-based, exact (rank sums over tie groups).
pub fn auc(probs: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    // Twice the count of (pos > neg) pairs plus ties, kept integral.
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && probs[idx[j]] == probs[idx[i]] {
            j += 1;
        }
        let (mut pos_g, mut neg_g) = (0u128, 0u128);
        for &k in &idx[i..j] {
            if labels[k] == 1 { pos_g += 1 } else { neg_g += 1 }
        }
        twice += pos_g * (2 * neg_below + neg_g);
        neg_below += neg_g;
        i = j;
    }
    Some(twice as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

pub fn compute_metrics(probs: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    if probs.len() != labels.len() {
        return Err(Error::Data(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Data("metrics over an empty set".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not binary")));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Data(format!("probability {p} outside [0, 1]")));
    }
    let mut c = Confusion::default();
    for (&p, &l) in probs.iter().zip(labels) {
        match (p >= THRESHOLD, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(MetricsReport::from_confusion(c, auc(probs, labels)))
}
