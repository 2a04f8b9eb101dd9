//! Prior adaptation of classifier posteriors.
//!
//! A posterior produced under a mismatched class prior is reweighted by the
//! ratio of a target prior to the prior implicit in the model, then
//! renormalized per row. The model prior is estimated by averaging
//! posteriors over unlabelled in-domain queries. Two flavours exist:
//!
//! - naive: the shift is `log(target) - log(model_prior)` directly;
//! - iterative: the shift `beta` solves the stationarity condition of
//!   cross-entropy-trained affine calibration with the scale fixed at one,
//!   found by fixed-point iteration over the per-row normalizers.
//!
//! Running the naive flavour with a handful of content-free queries as the
//! training set gives the classic content-free calibration baseline; no
//! separate code path is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{log_sum_exp, prob_floor, LabelVector, PosteriorMatrix, PriorVector};

/// Where the target (deployment) prior comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetPriorSpec {
    /// `1/K` for every class.
    Uniform,
    /// `(N_k + smoothing) / (N + K * smoothing)` from labelled samples.
    Empirical {
        labels: LabelVector,
        smoothing: f64,
    },
    Explicit(PriorVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub max_iterations: usize,
    /// Stop once the max-abs change in `beta` drops below this.
    pub tolerance: f64,
    /// Weight of the new iterate, in `(0, 1]`.
    pub damping: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, damping: 1.0 }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    /// Adapted posteriors of the matrix the adaptation was applied to.
    pub adapted: PosteriorMatrix,
    pub model_prior: PriorVector,
    pub target_prior: PriorVector,
    /// Per-class log shift. For the naive flavour this is
    /// `log(target) - log(model_prior)`.
    pub beta: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Snapshot handed to the observer of [`solve_beta_fixed_point_observed`].
#[derive(Debug, Clone)]
pub struct IterationState<'a> {
    pub iteration: usize,
    pub beta: &'a [f64],
    /// Max-abs change from the previous iterate; `None` on the first one.
    pub delta: Option<f64>,
}

/// Column means of the posterior matrix.
pub fn estimate_model_prior(train_posteriors: &PosteriorMatrix) -> Result<PriorVector> {
    let n = train_posteriors.n_samples();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let mut sums = vec![0.0; train_posteriors.n_classes()];
    for row in train_posteriors.rows() {
        for (s, p) in sums.iter_mut().zip(row) {
            *s += p;
        }
    }
    PriorVector::new(sums.into_iter().map(|s| s / n as f64).collect())
}

pub fn resolve_target_prior(spec: &TargetPriorSpec, k: usize) -> Result<PriorVector> {
    match spec {
        TargetPriorSpec::Uniform => PriorVector::uniform(k),
        TargetPriorSpec::Empirical { labels, smoothing } => {
            if labels.n_classes() != k {
                return Err(Error::ShapeMismatch(format!(
                    "labels declare {} classes, expected {k}",
                    labels.n_classes()
                )));
            }
            if !(smoothing.is_finite() && *smoothing >= 0.0) {
                return Err(Error::InvalidConfig(format!("smoothing must be >= 0, got {smoothing}")));
            }
            let counts = labels.class_counts();
            if *smoothing == 0.0 {
                if let Some(class) = counts.iter().position(|&c| c == 0) {
                    return Err(Error::ZeroClassCount { class });
                }
            }
            let denom = labels.len() as f64 + k as f64 * smoothing;
            PriorVector::new(counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect())
        }
        TargetPriorSpec::Explicit(prior) => {
            if prior.len() != k {
                return Err(Error::ShapeMismatch(format!("prior has {} classes, expected {k}", prior.len())));
            }
            Ok(prior.clone())
        }
    }
}

fn check_width(what: &str, len: usize, k: usize) -> Result<()> {
    if len != k {
        return Err(Error::ShapeMismatch(format!("{what} has {len} classes, posteriors have {k}")));
    }
    Ok(())
}

fn positive_log_prior(prior: &PriorVector) -> Result<Vec<f64>> {
    if let Some(class) = prior.first_zero() {
        return Err(Error::DegeneratePrior { class });
    }
    Ok(prior.probs().iter().map(|p| p.ln()).collect())
}

/// Adds `beta` to the log posteriors and renormalizes each row.
pub fn apply_beta(posteriors: &PosteriorMatrix, beta: &[f64]) -> Result<PosteriorMatrix> {
    let k = posteriors.n_classes();
    check_width("beta", beta.len(), k)?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidConfig("beta must be finite".into()));
    }
    let mut logs = posteriors.log_values();
    for row in logs.chunks_exact_mut(k) {
        for (v, b) in row.iter_mut().zip(beta) {
            *v += b;
        }
    }
    Ok(PosteriorMatrix::from_unnormalized_logs(logs, posteriors.n_samples(), posteriors.class_names().to_vec()))
}

/// Replaces `model_prior` with `target_prior` in every row of
/// `test_posteriors`.
pub fn adapt_naive(
    test_posteriors: &PosteriorMatrix,
    model_prior: &PriorVector,
    target_prior: &PriorVector,
) -> Result<AdaptationResult> {
    let k = test_posteriors.n_classes();
    check_width("model prior", model_prior.len(), k)?;
    check_width("target prior", target_prior.len(), k)?;
    let log_model = positive_log_prior(model_prior)?;
    let log_target = positive_log_prior(target_prior)?;
    let beta: Vec<f64> = log_target.iter().zip(&log_model).map(|(t, m)| t - m).collect();
    Ok(AdaptationResult {
        adapted: apply_beta(test_posteriors, &beta)?,
        model_prior: model_prior.clone(),
        target_prior: target_prior.clone(),
        beta,
        iterations_used: 0,
        converged: true,
    })
}

pub fn solve_beta_fixed_point(
    train_posteriors: &PosteriorMatrix,
    target_prior: &PriorVector,
    cfg: &FixedPointConfig,
) -> Result<AdaptationResult> {
    solve_beta_fixed_point_observed(train_posteriors, target_prior, cfg, |_| {})
}

/// [`solve_beta_fixed_point`] that reports every iterate to `observer`.
pub fn solve_beta_fixed_point_observed<F>(
    train_posteriors: &PosteriorMatrix,
    target_prior: &PriorVector,
    cfg: &FixedPointConfig,
    mut observer: F,
) -> Result<AdaptationResult>
where
    F: FnMut(&IterationState<'_>),
{
    cfg.validate()?;
    let k = train_posteriors.n_classes();
    let n = train_posteriors.n_samples();
    check_width("target prior", target_prior.len(), k)?;
    let log_target = positive_log_prior(target_prior)?;
    let model_prior = estimate_model_prior(train_posteriors)?;
    let floor = prob_floor();
    for class in 0..k {
        if train_posteriors.rows().all(|row| row[class] <= floor) {
            return Err(Error::DegenerateColumn { class });
        }
    }

    let log_p = train_posteriors.log_values();
    // exp(gamma_i), the per-row normalizer; all ones before the first update.
    let mut row_scale = vec![1.0; n];
    let mut beta = vec![0.0; k];
    let mut converged = false;
    let mut iterations_used = 0;

    for iteration in 1..=cfg.max_iterations {
        iterations_used = iteration;
        let mut weighted = vec![0.0; k];
        for (row, scale) in train_posteriors.rows().zip(&row_scale) {
            for (w, p) in weighted.iter_mut().zip(row) {
                *w += p * scale;
            }
        }
        let proposal: Vec<f64> = weighted.iter().zip(&log_target).map(|(w, t)| t - (w / n as f64).ln()).collect();
        if proposal.iter().any(|b| !b.is_finite()) {
            break;
        }

        let delta = if iteration == 1 {
            beta = proposal;
            None
        } else {
            let mut delta = 0.0f64;
            for (b, new) in beta.iter_mut().zip(&proposal) {
                let next = (1.0 - cfg.damping) * *b + cfg.damping * new;
                delta = delta.max((next - *b).abs());
                *b = next;
            }
            Some(delta)
        };
        observer(&IterationState { iteration, beta: &beta, delta });

        let mut shifted = vec![0.0; k];
        for (lp, scale) in log_p.chunks_exact(k).zip(row_scale.iter_mut()) {
            for ((s, l), b) in shifted.iter_mut().zip(lp).zip(&beta) {
                *s = l + b;
            }
            *scale = (-log_sum_exp(&shifted)).exp();
        }

        if matches!(delta, Some(d) if d < cfg.tolerance) {
            converged = true;
            break;
        }
    }

    Ok(AdaptationResult {
        adapted: apply_beta(train_posteriors, &beta)?,
        model_prior,
        target_prior: target_prior.clone(),
        beta,
        iterations_used,
        converged,
    })
}

/// Per-class mean of the calibrated posteriors minus the target prior.
pub fn stationarity_residual(adapted: &PosteriorMatrix, target_prior: &PriorVector) -> Result<Vec<f64>> {
    let mean = estimate_model_prior(adapted)?;
    Ok(mean.probs().iter().zip(target_prior.probs()).map(|(m, t)| m - t).collect())
}
