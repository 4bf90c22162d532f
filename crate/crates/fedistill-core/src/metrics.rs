//! Evaluation quantities: per-user accuracy, fairness statistics, and
//! teacher-round histograms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distill::TeacherChoice;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{forward, ModelParams};
use crate::tensor::Tensor;

/// Percent of rows whose argmax logit matches the label; argmax ties go
/// to the lowest class index.
pub fn accuracy(params: &ModelParams, features: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::data("accuracy: empty evaluation set"));
    }
    if features.rows() != labels.len() {
        return Err(Error::dimension(format!(
            "accuracy: {} feature rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let logits = forward(params, features)?;
    let classes = logits.cols();
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = logits.at(r, 0);
        for c in 1..classes {
            let v = logits.at(r, c);
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// [`accuracy`] over a subset of a dataset given by indices.
pub fn accuracy_on(params: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::data("accuracy: empty evaluation set"));
    }
    let (x, labels) = dataset.gather(indices)?;
    accuracy(params, &x, &labels)
}

/// Arithmetic mean and sample standard deviation (divisor K-1) of
/// per-user accuracies. Lower deviation means a more uniform — fairer —
/// spread of personalization quality across users.
pub fn fairness_stats(per_user: &[f64]) -> Result<(f64, f64)> {
    if per_user.len() < 2 {
        return Err(Error::size(format!(
            "fairness_stats needs at least 2 users, got {}",
            per_user.len()
        )));
    }
    let n = per_user.len() as f64;
    let mean = per_user.iter().sum::<f64>() / n;
    let ss: f64 = per_user.iter().map(|&v| (v - mean) * (v - mean)).sum();
    Ok((mean, math::sqrt(ss / (n - 1.0))))
}

/// Counts of clients per chosen teacher round; counts sum to the number
/// of choices.
pub fn teacher_histogram(choices: &[TeacherChoice]) -> BTreeMap<u32, usize> {
    let mut hist = BTreeMap::new();
    for choice in choices {
        *hist.entry(choice.round).or_insert(0) += 1;
    }
    hist
}

/// One method's per-user accuracy column with its summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: String,
    pub per_user: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

impl MethodAccuracy {
    pub fn new(method: impl Into<String>, per_user: Vec<f64>) -> Result<Self> {
        let (mean, std_dev) = fairness_stats(&per_user)?;
        Ok(Self {
            method: method.into(),
            per_user,
            mean,
            std_dev,
        })
    }
}

/// Per-user accuracy columns for every evaluated method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub methods: Vec<MethodAccuracy>,
}

impl AccuracyTable {
    /// Re-derives every summary row and checks it against the stored
    /// values within `tol`.
    pub fn verify(&self, tol: f64) -> Result<()> {
        for m in &self.methods {
            let (mean, std_dev) = fairness_stats(&m.per_user)?;
            if math::abs(mean - m.mean) > tol || math::abs(std_dev - m.std_dev) > tol {
                return Err(Error::contract(format!(
                    "accuracy table column '{}' is inconsistent: stored ({}, {}), \
                     recomputed ({mean}, {std_dev})",
                    m.method, m.mean, m.std_dev
                )));
            }
        }
        Ok(())
    }
}

/// Per-user matrix of test accuracy over the (λ, T) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGrid {
    pub client: usize,
    pub lambda_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `accuracy[i][j]` belongs to `(lambda_grid[i], t_grid[j])`.
    pub test_accuracy: Vec<Vec<f64>>,
}

impl InteractionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.test_accuracy.len() != self.lambda_grid.len()
            || self
                .test_accuracy
                .iter()
                .any(|row| row.len() != self.t_grid.len())
        {
            return Err(Error::dimension(format!(
                "interaction grid for client {} is not {}x{}",
                self.client,
                self.lambda_grid.len(),
                self.t_grid.len()
            )));
        }
        Ok(())
    }
}
