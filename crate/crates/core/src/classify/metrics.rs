//! One-vs-rest macro metrics and their aggregation over runs.

use std::fmt;

use diffcore::Elem;
use serde::Serialize;

use super::model::Classifier;
use super::train::{argmax, predict_proba};
use crate::datapipe::{Dataset, LabeledImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub support: usize,
    /// `None` when the class is absent from the evaluated set.
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    /// `None` when every sample belongs to this class.
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub per_class: Vec<ClassMetrics>,
    pub seed: Option<u64>,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` without both positives and negatives.
pub fn one_vs_rest_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || neg.is_empty() {
        return None;
    }
    neg.sort_by(f64::total_cmp);
    // twice the Mann-Whitney U, kept integral so the result is exact
    let mut twice_u: u64 = 0;
    for (&s, _) in scores.iter().zip(positive).filter(|(_, &p)| p) {
        let below = neg.partition_point(|&v| v < s);
        let not_above = neg.partition_point(|&v| v <= s);
        twice_u += 2 * below as u64 + (not_above - below) as u64;
    }
    Some(twice_u as f64 / (2 * n_pos * neg.len()) as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Metrics from class-probability rows (`probs[i]` has one entry per class).
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Data(format!("{} score rows for {} labels", probs.len(), labels.len())));
    }
    if let Some(row) = probs.iter().find(|r| r.len() != num_classes) {
        return Err(Error::Data(format!("score row of length {} for {num_classes} classes", row.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!("label {l} out of range")));
    }
    let n = labels.len();
    let predicted: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut per_class = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let support = positive.iter().filter(|&&p| p).count();
        let scores: Vec<f64> = probs.iter().map(|r| r[k]).collect();
        let auc = one_vs_rest_auc(&scores, &positive);
        if auc.is_none() {
            log::warn!("class {k}: AUC undefined ({support} of {n} samples positive), excluded from the mean");
        }
        let tp = (0..n).filter(|&i| positive[i] && predicted[i] == k).count();
        let tn = (0..n).filter(|&i| !positive[i] && predicted[i] != k).count();
        per_class.push(ClassMetrics {
            support,
            auc,
            sensitivity: (support > 0).then(|| tp as f64 / support as f64),
            specificity: (support < n).then(|| tn as f64 / (n - support) as f64),
        });
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        auc: mean_defined(per_class.iter().map(|c| c.auc)),
        sensitivity: mean_defined(per_class.iter().map(|c| c.sensitivity)),
        specificity: mean_defined(per_class.iter().map(|c| c.specificity)),
        per_class,
        seed: None,
    })
}

pub fn evaluate<T: Elem>(model: &Classifier<T>, test: &Dataset) -> Result<MetricsReport> {
    let refs: Vec<&LabeledImage> = test.images.iter().collect();
    let p = predict_proba(model, &refs)?;
    let k = model.num_classes();
    let rows: Vec<Vec<f64>> = p
        .data()
        .chunks(k)
        .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect();
    let labels: Vec<usize> = test.images.iter().map(|i| i.label).collect();
    compute_metrics(&rows, &labels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub auc: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Data("no runs to aggregate".into()));
    }
    let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        runs: reports.len(),
        accuracy: col(|r| r.accuracy),
        auc: col(|r| r.auc),
        sensitivity: col(|r| r.sensitivity),
        specificity: col(|r| r.specificity),
    })
}
