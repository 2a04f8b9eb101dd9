//! Numeric carriers for classifier outputs and the operations that turn raw
//! log-scores into posteriors and predictions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-domain floor. Linear probabilities below `exp(LOG_FLOOR)` are
/// clamped up to it on output, and zero probabilities map to it on input.
pub const LOG_FLOOR: f64 = -700.0;

/// `exp(LOG_FLOOR)`.
pub fn prob_floor() -> f64 {
    LOG_FLOOR.exp()
}

/// Tolerance on row and vector sums for probability-valued types.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Natural log of a probability, floored at `LOG_FLOOR`.
#[inline]
pub fn floored_ln(p: f64) -> f64 {
    if p <= 0.0 {
        LOG_FLOOR
    } else {
        p.ln().max(LOG_FLOOR)
    }
}

/// `log(sum(exp(row)))` with the usual max shift.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place normalization of a row of unnormalized log values into linear
/// probabilities, floored at `exp(LOG_FLOOR)`.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let floor = prob_floor();
    for v in row.iter_mut() {
        *v = (*v / total).max(floor);
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

fn check_class_names(names: &[String], k: usize) -> std::result::Result<(), String> {
    if names.len() != k {
        return Err(format!("{} class names for {} classes", names.len(), k));
    }
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(format!("duplicate class name {name:?}"));
        }
    }
    Ok(())
}

/// N x K raw log-scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScoreMatrix {
    values: Vec<f64>,
    n: usize,
    k: usize,
    class_names: Vec<String>,
}

impl LogScoreMatrix {
    pub fn new(values: Vec<f64>, n: usize, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(Error::InvalidScores(format!("need at least 2 classes, got {k}")));
        }
        if n < 1 {
            return Err(Error::InvalidScores("need at least one sample".into()));
        }
        check_class_names(&class_names, k).map_err(Error::InvalidScores)?;
        if values.len() != n * k {
            return Err(Error::InvalidScores(format!("{} values for a {n}x{k} matrix", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidScores(format!("non-finite score at row {}, class {}", pos / k, pos % k)));
        }
        Ok(Self { values, n, k, class_names })
    }

    pub fn from_rows(rows: &[Vec<f64>], class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::InvalidScores(format!("row {bad} has {} entries, expected {k}", rows[bad].len())));
        }
        Self::new(rows.concat(), rows.len(), class_names)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(values, indices.len(), self.class_names.clone())
    }
}

/// N x K row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    values: Vec<f64>,
    n: usize,
    k: usize,
    class_names: Vec<String>,
}

impl PosteriorMatrix {
    pub fn new(values: Vec<f64>, n: usize, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(Error::InvalidPosteriors(format!("need at least 2 classes, got {k}")));
        }
        check_class_names(&class_names, k).map_err(Error::InvalidPosteriors)?;
        if values.len() != n * k {
            return Err(Error::InvalidPosteriors(format!("{} values for a {n}x{k} matrix", values.len())));
        }
        for (i, row) in values.chunks_exact(k).enumerate() {
            if let Some(j) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidPosteriors(format!("entry ({i}, {j}) = {} outside [0, 1]", row[j])));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidPosteriors(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { values, n, k, class_names })
    }

    pub fn from_rows(rows: &[Vec<f64>], class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::InvalidPosteriors(format!("row {bad} has {} entries, expected {k}", rows[bad].len())));
        }
        Self::new(rows.concat(), rows.len(), class_names)
    }

    /// Build from unnormalized log values, normalizing every row.
    pub(crate) fn from_unnormalized_logs(mut values: Vec<f64>, n: usize, class_names: Vec<String>) -> Self {
        let k = class_names.len();
        for row in values.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        Self { values, n, k, class_names }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Floored natural logs of all entries, row-major.
    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|&p| floored_ln(p)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { values, n: indices.len(), k: self.k, class_names: self.class_names.clone() }
    }
}

/// Probability vector over K classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PriorVector(Vec<f64>);

impl PriorVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidPrior(format!("need at least 2 classes, got {}", probs.len())));
        }
        if let Some(j) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidPrior(format!("entry {j} = {} outside [0, 1]", probs[j])));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidPrior(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Rescale nonnegative weights to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidPrior("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidPrior("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the first zero entry, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.0.iter().position(|&p| p <= 0.0)
    }
}

impl TryFrom<Vec<f64>> for PriorVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PriorVector> for Vec<f64> {
    fn from(p: PriorVector) -> Self {
        p.0
    }
}

/// Class indices, each below `n_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(pos) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::InvalidLabels(format!(
                "label {} at position {pos} is not below {n_classes}",
                labels[pos]
            )));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self { labels: indices.iter().map(|&i| self.labels[i]).collect(), n_classes: self.n_classes }
    }
}

/// Per-label token log-probabilities of a multi-token label name.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbSequence {
    per_label: Vec<Vec<f64>>,
}

impl TokenLogProbSequence {
    pub fn new(per_label: Vec<Vec<f64>>) -> Result<Self> {
        for (label, tokens) in per_label.iter().enumerate() {
            check_tokens(label, tokens)?;
        }
        Ok(Self { per_label })
    }

    pub fn per_label(&self) -> &[Vec<f64>] {
        &self.per_label
    }
}

fn check_tokens(label: usize, tokens: &[f64]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyLabel { label });
    }
    if let Some(token) = tokens.iter().position(|&t| !t.is_finite() || t > 0.0) {
        return Err(Error::InvalidTokenProb { label, token, value: tokens[token] });
    }
    Ok(())
}

/// Log-probability of a whole label name from the chain of its per-token
/// conditional log-probabilities.
pub fn compose_tokens(tokens: &[f64]) -> Result<f64> {
    check_tokens(0, tokens)?;
    Ok(compensated_sum(tokens))
}

/// Neumaier summation.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// One log-score per label.
pub fn compose_label_score(tokens: &TokenLogProbSequence) -> Vec<f64> {
    tokens.per_label.iter().map(|t| compensated_sum(t)).collect()
}

/// Row-wise softmax of log-scores, computed with a per-row max shift.
pub fn normalize_scores(scores: &LogScoreMatrix) -> PosteriorMatrix {
    PosteriorMatrix::from_unnormalized_logs(scores.values.clone(), scores.n, scores.class_names.clone())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(posteriors: &PosteriorMatrix) -> LabelVector {
    LabelVector { labels: posteriors.rows().map(argmax).collect(), n_classes: posteriors.k }
}
