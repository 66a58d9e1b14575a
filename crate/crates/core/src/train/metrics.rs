use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification metrics; `confusion[true][pred]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
}

/// Precision, recall and F1 treat 0/0 as 0.
pub fn metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "metrics need equal non-empty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::Invalid(format!(
                "class index out of range for {n_classes} classes"
            )));
        }
        confusion[y][p] += 1;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut precision = Vec::with_capacity(n_classes);
    let mut recall = Vec::with_capacity(n_classes);
    let mut f1 = Vec::with_capacity(n_classes);
    let mut support = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let row: usize = confusion[c].iter().sum();
        let col: usize = confusion.iter().map(|r| r[c]).sum();
        let (p, r) = (ratio(tp, col), ratio(tp, row));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        support.push(row);
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        macro_f1: f1.iter().sum::<f64>() / n_classes as f64,
        accuracy: correct as f64 / labels.len() as f64,
        precision,
        recall,
        f1,
        support,
        confusion,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
