//! Top-k accuracy, macro-F1 and confusion matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub acc1: f64,
    pub acc3: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
}

/// Class indices by descending probability, ties by ascending index.
pub fn ranked_classes(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

pub fn evaluate_predictions(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(StatError::EmptySplit);
    }
    if probs.len() != labels.len() {
        return Err(StatError::DimensionMismatch("prediction and label counts differ".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut top3 = 0u64;
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != classes {
            return Err(StatError::DimensionMismatch(format!("{} probabilities for {classes} classes", p.len())));
        }
        if y >= classes {
            return Err(StatError::InvalidLabel { label: y, classes });
        }
        let ranked = ranked_classes(p);
        confusion[y][ranked[0]] += 1;
        if ranked.iter().take(3).any(|&c| c == y) {
            top3 += 1;
        }
    }
    Ok(report_from_confusion(confusion, top3))
}

/// Metrics derived from a confusion matrix plus the count of top-3 hits.
pub fn report_from_confusion(confusion: Vec<Vec<u64>>, top3_hits: u64) -> EvalReport {
    let m = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..m).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..m)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / m as f64;
    EvalReport {
        samples: total,
        acc1: correct as f64 / total as f64,
        acc3: top3_hits as f64 / total as f64,
        macro_f1,
        confusion,
        per_class,
    }
}

impl EvalReport {
    /// Top-1 accuracy restricted to samples whose true class is in `classes`.
    pub fn accuracy_over(&self, classes: &[usize]) -> f64 {
        let hits: u64 = classes.iter().map(|&c| self.confusion[c][c]).sum();
        let total: u64 = classes.iter().map(|&c| self.confusion[c].iter().sum::<u64>()).sum();
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| StatError::InvalidArgument(e.to_string()))
    }

    /// Confusion matrix as an M×M comma-separated grid (rows = true class).
    pub fn confusion_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}
