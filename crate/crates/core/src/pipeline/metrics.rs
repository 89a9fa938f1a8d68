//! Evaluation metrics: per-dimension Macro-F1 and accuracy, sixteen-type
//! macro scores, head agreement, and the routing histogram.

use crate::error::{Error, Result};

/// Per-class precision/recall/F1 from raw counts. A class with no support and
/// no predictions contributes zeros.
fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let r = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f1)
}

/// Macro-F1 of a binary dimension: the unweighted mean of both classes' F1.
pub fn binary_macro_f1(labels: &[u8], preds: &[u8]) -> Result<f64> {
    if labels.len() != preds.len() || labels.is_empty() {
        return Err(Error::invalid(
            "labels and predictions must align and be non-empty",
        ));
    }
    let mut f1_sum = 0.0;
    for class in [1u8, 0u8] {
        let tp = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l == class && **p == class)
            .count();
        let fp = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l != class && **p == class)
            .count();
        let fn_ = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l == class && **p != class)
            .count();
        f1_sum += prf(tp, fp, fn_).2;
    }
    Ok(f1_sum / 2.0)
}

pub fn accuracy(labels: &[u8], preds: &[u8]) -> Result<f64> {
    if labels.len() != preds.len() || labels.is_empty() {
        return Err(Error::invalid(
            "labels and predictions must align and be non-empty",
        ));
    }
    let correct = labels.iter().zip(preds).filter(|(l, p)| l == p).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy plus macro precision/recall/F1 over all `n_classes` classes;
/// classes that never occur contribute zero to the macro averages.
pub fn multiclass_metrics(
    labels: &[usize],
    preds: &[usize],
    n_classes: usize,
) -> Result<(f64, f64, f64, f64)> {
    if labels.len() != preds.len() || labels.is_empty() {
        return Err(Error::invalid(
            "labels and predictions must align and be non-empty",
        ));
    }
    let correct = labels.iter().zip(preds).filter(|(l, p)| l == p).count();
    let acc = correct as f64 / labels.len() as f64;
    let (mut psum, mut rsum, mut fsum) = (0.0, 0.0, 0.0);
    for class in 0..n_classes {
        let tp = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l == class && **p == class)
            .count();
        let fp = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l != class && **p == class)
            .count();
        let fn_ = labels
            .iter()
            .zip(preds)
            .filter(|(l, p)| **l == class && **p != class)
            .count();
        let (p, r, f1) = prf(tp, fp, fn_);
        psum += p;
        rsum += r;
        fsum += f1;
    }
    let n = n_classes as f64;
    Ok((acc, psum / n, rsum / n, fsum / n))
}

/// Everything an evaluation run reports.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    /// Macro-F1 per dimension, ordered I/E, S/N, T/F, P/J.
    pub per_dimension_macro_f1: [f64; 4],
    pub macro_f1_avg: f64,
    pub per_dimension_accuracy: [f64; 4],
    pub accuracy_avg: f64,
    pub type16_accuracy: f64,
    pub type16_macro_precision: f64,
    pub type16_macro_recall: f64,
    pub type16_macro_f1: f64,
    /// Fraction of users whose four binary predictions imply the same type
    /// as the sixteen-way head.
    pub head_agreement_rate: f64,
    /// Inference-time winner counts per specialist.
    pub routing_histogram: Vec<usize>,
    /// Mean training loss per epoch (empty for standalone evaluation).
    pub loss_curve: Vec<f64>,
}

impl MetricsReport {
    /// Assemble the report from aligned per-user outcomes.
    pub fn from_outcomes(
        dim_labels: &[[u8; 4]],
        dim_preds: &[[u8; 4]],
        type_labels: &[usize],
        type_preds: &[usize],
        implied_types: &[usize],
        routing_histogram: Vec<usize>,
    ) -> Result<Self> {
        let mut per_dimension_macro_f1 = [0.0; 4];
        let mut per_dimension_accuracy = [0.0; 4];
        for d in 0..4 {
            let labels: Vec<u8> = dim_labels.iter().map(|l| l[d]).collect();
            let preds: Vec<u8> = dim_preds.iter().map(|p| p[d]).collect();
            per_dimension_macro_f1[d] = binary_macro_f1(&labels, &preds)?;
            per_dimension_accuracy[d] = accuracy(&labels, &preds)?;
        }
        let macro_f1_avg = per_dimension_macro_f1.iter().sum::<f64>() / 4.0;
        let accuracy_avg = per_dimension_accuracy.iter().sum::<f64>() / 4.0;
        let (type16_accuracy, type16_macro_precision, type16_macro_recall, type16_macro_f1) =
            multiclass_metrics(type_labels, type_preds, 16)?;
        let agree = type_preds
            .iter()
            .zip(implied_types)
            .filter(|(a, b)| a == b)
            .count();
        let head_agreement_rate = agree as f64 / type_preds.len() as f64;
        Ok(MetricsReport {
            per_dimension_macro_f1,
            macro_f1_avg,
            per_dimension_accuracy,
            accuracy_avg,
            type16_accuracy,
            type16_macro_precision,
            type16_macro_recall,
            type16_macro_f1,
            head_agreement_rate,
            routing_histogram,
            loss_curve: Vec::new(),
        })
    }
}
