//! Error rate, cross-entropy (nats), cross-entropy normalized by a
//! prior-only system, and seeded bootstrap over test samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scores::{argmax, floored_ln, LabelVector, PosteriorMatrix, PriorVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 100, seed: 0 }
    }
}

/// Mean and population standard deviation over resamples, plus the raw
/// per-resample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricStats {
    fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_resamples: usize,
    pub seed: u64,
    pub error_rate: MetricStats,
    pub cross_entropy: MetricStats,
    pub normalized_cross_entropy: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_samples: usize,
    pub error_rate: f64,
    pub cross_entropy: f64,
    pub naive_cross_entropy: f64,
    pub normalized_cross_entropy: f64,
    pub reference_prior: PriorVector,
    pub bootstrap: Option<BootstrapSummary>,
}

fn check_lengths(posteriors: &PosteriorMatrix, labels: &LabelVector) -> Result<()> {
    if posteriors.n_samples() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} posterior rows but {} labels",
            posteriors.n_samples(),
            labels.len()
        )));
    }
    if posteriors.n_classes() != labels.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "posteriors have {} classes, labels declare {}",
            posteriors.n_classes(),
            labels.n_classes()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidLabels("no samples to evaluate".into()));
    }
    Ok(())
}

pub fn error_rate(posteriors: &PosteriorMatrix, labels: &LabelVector) -> Result<f64> {
    check_lengths(posteriors, labels)?;
    let wrong = posteriors.rows().zip(labels.labels()).filter(|(row, &y)| argmax(row) != y).count();
    Ok(wrong as f64 / labels.len() as f64)
}

pub fn cross_entropy(posteriors: &PosteriorMatrix, labels: &LabelVector) -> Result<f64> {
    check_lengths(posteriors, labels)?;
    let total: f64 = posteriors.rows().zip(labels.labels()).map(|(row, &y)| -floored_ln(row[y])).sum();
    Ok(total / labels.len() as f64)
}

/// Cross-entropy of a system that outputs `prior` for every sample.
pub fn naive_cross_entropy(prior: &PriorVector, labels: &LabelVector) -> Result<f64> {
    Ok(naive_losses(prior, labels)?.iter().sum::<f64>() / labels.len() as f64)
}

fn naive_losses(prior: &PriorVector, labels: &LabelVector) -> Result<Vec<f64>> {
    if prior.len() != labels.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "prior has {} classes, labels declare {}",
            prior.len(),
            labels.n_classes()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidLabels("no samples to evaluate".into()));
    }
    labels
        .labels()
        .iter()
        .map(|&y| match prior.probs()[y] {
            p if p > 0.0 => Ok(-p.ln()),
            _ => Err(Error::ZeroClassCount { class: y }),
        })
        .collect()
}

/// Class frequencies of `labels`.
pub fn empirical_prior(labels: &LabelVector) -> Result<PriorVector> {
    if labels.is_empty() {
        return Err(Error::InvalidLabels("no samples to evaluate".into()));
    }
    let n = labels.len() as f64;
    PriorVector::new(labels.class_counts().iter().map(|&c| c as f64 / n).collect())
}

pub fn normalized_cross_entropy(
    posteriors: &PosteriorMatrix,
    labels: &LabelVector,
    reference_prior: &PriorVector,
) -> Result<f64> {
    let ce = cross_entropy(posteriors, labels)?;
    let naive = naive_cross_entropy(reference_prior, labels)?;
    if naive <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(ce / naive)
}

/// Per-sample quantities every metric is a mean of.
struct SampleTerms {
    wrong: Vec<f64>,
    loss: Vec<f64>,
    naive: Vec<f64>,
}

impl SampleTerms {
    fn new(posteriors: &PosteriorMatrix, labels: &LabelVector, reference: &PriorVector) -> Result<Self> {
        check_lengths(posteriors, labels)?;
        let naive = naive_losses(reference, labels)?;
        let mut wrong = Vec::with_capacity(labels.len());
        let mut loss = Vec::with_capacity(labels.len());
        for (row, &y) in posteriors.rows().zip(labels.labels()) {
            wrong.push(if argmax(row) != y { 1.0 } else { 0.0 });
            loss.push(-floored_ln(row[y]));
        }
        Ok(Self { wrong, loss, naive })
    }

    fn metrics(&self, indices: &[usize]) -> Result<(f64, f64, f64)> {
        let n = indices.len() as f64;
        let mean = |v: &[f64]| indices.iter().map(|&i| v[i]).sum::<f64>() / n;
        let (er, ce, naive) = (mean(&self.wrong), mean(&self.loss), mean(&self.naive));
        if naive <= 0.0 {
            return Err(Error::DegenerateReference);
        }
        Ok((er, ce, ce / naive))
    }
}

/// Point estimates on the full set. The reference prior defaults to the
/// class frequencies of `labels`.
pub fn evaluate(
    posteriors: &PosteriorMatrix,
    labels: &LabelVector,
    reference_prior: Option<&PriorVector>,
) -> Result<EvaluationReport> {
    let reference = match reference_prior {
        Some(p) => p.clone(),
        None => empirical_prior(labels)?,
    };
    let terms = SampleTerms::new(posteriors, labels, &reference)?;
    let all: Vec<usize> = (0..labels.len()).collect();
    let (error_rate, cross_entropy, normalized_cross_entropy) = terms.metrics(&all)?;
    let naive_cross_entropy = all.iter().map(|&i| terms.naive[i]).sum::<f64>() / all.len() as f64;
    Ok(EvaluationReport {
        n_samples: labels.len(),
        error_rate,
        cross_entropy,
        naive_cross_entropy,
        normalized_cross_entropy,
        reference_prior: reference,
        bootstrap: None,
    })
}

/// Sample indices of bootstrap resample `resample`, drawn with replacement
/// from a generator keyed on `(seed, resample)` only.
pub fn bootstrap_indices(n: usize, seed: u64, resample: u64) -> Vec<usize> {
    let mut rng = CounterRng::derive(seed, resample);
    (0..n).map(|_| rng.below(n as u64) as usize).collect()
}

pub fn bootstrap_evaluate(
    posteriors: &PosteriorMatrix,
    labels: &LabelVector,
    cfg: &BootstrapConfig,
    reference_prior: Option<&PriorVector>,
) -> Result<EvaluationReport> {
    if cfg.n_resamples < 1 {
        return Err(Error::InvalidConfig("n_resamples must be at least 1".into()));
    }
    if labels.len() < 2 {
        return Err(Error::InvalidLabels("bootstrap needs at least two samples".into()));
    }
    let n = labels.len();
    let resamples: Vec<Vec<usize>> = (0..cfg.n_resamples as u64).map(|r| bootstrap_indices(n, cfg.seed, r)).collect();
    bootstrap_with_indices(posteriors, labels, reference_prior, cfg.seed, &resamples)
}

/// Bootstrap over caller-supplied resamples.
pub fn bootstrap_with_indices(
    posteriors: &PosteriorMatrix,
    labels: &LabelVector,
    reference_prior: Option<&PriorVector>,
    seed: u64,
    resamples: &[Vec<usize>],
) -> Result<EvaluationReport> {
    let mut report = evaluate(posteriors, labels, reference_prior)?;
    if resamples.is_empty() {
        return Err(Error::InvalidConfig("no resamples".into()));
    }
    let terms = SampleTerms::new(posteriors, labels, &report.reference_prior)?;
    let mut er = Vec::with_capacity(resamples.len());
    let mut ce = Vec::with_capacity(resamples.len());
    let mut nce = Vec::with_capacity(resamples.len());
    for indices in resamples {
        if indices.is_empty() || indices.iter().any(|&i| i >= labels.len()) {
            return Err(Error::InvalidConfig("resample indices out of range".into()));
        }
        let (e, c, r) = terms.metrics(indices)?;
        er.push(e);
        ce.push(c);
        nce.push(r);
    }
    report.bootstrap = Some(BootstrapSummary {
        n_resamples: resamples.len(),
        seed,
        error_rate: MetricStats::from_values(er),
        cross_entropy: MetricStats::from_values(ce),
        normalized_cross_entropy: MetricStats::from_values(nce),
    });
    Ok(report)
}
