//! Supervised affine calibration in the log-posterior domain.
//!
//! `log P~(k | x) = alpha * log P(k | x) + beta_k - logsumexp_k'(...)`, with
//! a scalar `alpha` shared across classes, trained by minimizing the mean
//! negative log calibrated posterior of the true class.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{log_sum_exp, LabelVector, PosteriorMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// `alpha` and `beta` both free.
    Full,
    /// `alpha = 1`, `beta` free.
    AlphaFixedOne,
    /// `beta = 0`, `alpha` free (temperature scaling).
    TemperatureOnly,
}

impl CalibrationMode {
    fn alpha_free(self) -> bool {
        !matches!(self, CalibrationMode::AlphaFixedOne)
    }

    fn beta_free(self) -> bool {
        !matches!(self, CalibrationMode::TemperatureOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub mode: CalibrationMode,
    pub alpha: f64,
    pub beta: Vec<f64>,
}

impl AffineParams {
    pub fn identity(k: usize, mode: CalibrationMode) -> Self {
        Self { mode, alpha: 1.0, beta: vec![0.0; k] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("affine parameters must be finite".into()));
        }
        match self.mode {
            CalibrationMode::AlphaFixedOne if self.alpha != 1.0 => {
                Err(Error::InvalidConfig("alpha must be 1 in alpha-fixed-one mode".into()))
            }
            CalibrationMode::TemperatureOnly if self.beta.iter().any(|&b| b != 0.0) => {
                Err(Error::InvalidConfig("beta must be 0 in temperature-only mode".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once the max-abs gradient over free parameters is below this.
    pub gradient_tolerance: f64,
    /// Starting point; identity when `None`.
    pub initial: Option<AffineParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-8, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: AffineParams,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

fn check_params(posteriors: &PosteriorMatrix, params: &AffineParams) -> Result<()> {
    params.validate()?;
    if params.beta.len() != posteriors.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "beta has {} classes, posteriors have {}",
            params.beta.len(),
            posteriors.n_classes()
        )));
    }
    Ok(())
}

fn check_labels(posteriors: &PosteriorMatrix, labels: &LabelVector) -> Result<()> {
    if labels.len() != posteriors.n_samples() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} samples", labels.len(), posteriors.n_samples())));
    }
    if labels.n_classes() != posteriors.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "labels declare {} classes, posteriors have {}",
            labels.n_classes(),
            posteriors.n_classes()
        )));
    }
    Ok(())
}

pub fn apply_affine(posteriors: &PosteriorMatrix, params: &AffineParams) -> Result<PosteriorMatrix> {
    check_params(posteriors, params)?;
    let k = posteriors.n_classes();
    let mut logs = posteriors.log_values();
    for row in logs.chunks_exact_mut(k) {
        for (v, b) in row.iter_mut().zip(&params.beta) {
            *v = params.alpha * *v + b;
        }
    }
    Ok(PosteriorMatrix::from_unnormalized_logs(logs, posteriors.n_samples(), posteriors.class_names().to_vec()))
}

pub fn cross_entropy_loss(posteriors: &PosteriorMatrix, labels: &LabelVector, params: &AffineParams) -> Result<f64> {
    check_params(posteriors, params)?;
    check_labels(posteriors, labels)?;
    Ok(Objective::new(posteriors, labels).loss(params.alpha, &params.beta))
}

/// Analytic gradient of [`cross_entropy_loss`] with respect to `alpha` and
/// every `beta_k`, regardless of which parameters the mode leaves free.
pub fn loss_gradient(posteriors: &PosteriorMatrix, labels: &LabelVector, params: &AffineParams) -> Result<Gradient> {
    check_params(posteriors, params)?;
    check_labels(posteriors, labels)?;
    let (_, grad, _) = Objective::new(posteriors, labels).evaluate(params.alpha, &params.beta, false);
    Ok(Gradient { alpha: grad[0], beta: grad[1..].to_vec() })
}

/// Mean calibrated-posterior cross-entropy over a fixed training set.
struct Objective<'a> {
    log_p: Vec<f64>,
    labels: &'a [usize],
    k: usize,
}

impl<'a> Objective<'a> {
    fn new(posteriors: &PosteriorMatrix, labels: &'a LabelVector) -> Self {
        Self { log_p: posteriors.log_values(), labels: labels.labels(), k: posteriors.n_classes() }
    }

    fn n(&self) -> usize {
        self.labels.len()
    }

    fn logits(&self, row: &[f64], alpha: f64, beta: &[f64], out: &mut [f64]) {
        for ((o, l), b) in out.iter_mut().zip(row).zip(beta) {
            *o = alpha * l + b;
        }
    }

    fn loss(&self, alpha: f64, beta: &[f64]) -> f64 {
        let mut z = vec![0.0; self.k];
        let mut total = 0.0;
        for (row, &y) in self.log_p.chunks_exact(self.k).zip(self.labels) {
            self.logits(row, alpha, beta, &mut z);
            total += log_sum_exp(&z) - z[y];
        }
        total / self.n() as f64
    }

    /// Loss, gradient over `[alpha, beta_0..]` and, if asked, the Hessian.
    fn evaluate(&self, alpha: f64, beta: &[f64], with_hessian: bool) -> (f64, Vec<f64>, Option<DMatrix<f64>>) {
        let k = self.k;
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        let mut grad = vec![0.0; k + 1];
        let mut hess = with_hessian.then(|| DMatrix::<f64>::zeros(k + 1, k + 1));
        for (row, &y) in self.log_p.chunks_exact(k).zip(self.labels) {
            self.logits(row, alpha, beta, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[y];
            let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            for j in 0..k {
                let residual = p[j] - if j == y { 1.0 } else { 0.0 };
                grad[0] += residual * row[j];
                grad[j + 1] += residual;
            }
            if let Some(h) = hess.as_mut() {
                let mean_log: f64 = p.iter().zip(row).map(|(pj, lj)| pj * lj).sum();
                let mut h_aa = 0.0;
                for j in 0..k {
                    let centered = row[j] - mean_log;
                    h_aa += p[j] * centered * centered;
                    h[(0, j + 1)] += p[j] * centered;
                    h[(j + 1, j + 1)] += p[j];
                    for m in 0..k {
                        h[(j + 1, m + 1)] -= p[j] * p[m];
                    }
                }
                h[(0, 0)] += h_aa;
            }
        }
        let n = self.n() as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        if let Some(h) = hess.as_mut() {
            *h /= n;
            for j in 1..=k {
                h[(j, 0)] = h[(0, j)];
            }
        }
        (loss / n, grad, hess)
    }
}

fn free_indices(mode: CalibrationMode, k: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(k + 1);
    if mode.alpha_free() {
        idx.push(0);
    }
    if mode.beta_free() {
        idx.extend(1..=k);
    }
    idx
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimizes the calibration cross-entropy over the parameters `mode`
/// leaves free. Steps along the Newton direction of the free block
/// (gradient direction when that is not a descent direction) with Armijo
/// backtracking by halving. Starts at identity unless told otherwise.
pub fn fit_affine(
    train_posteriors: &PosteriorMatrix,
    labels: &LabelVector,
    mode: CalibrationMode,
    cfg: &FitConfig,
) -> Result<FitResult> {
    check_labels(train_posteriors, labels)?;
    if train_posteriors.n_samples() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if cfg.gradient_tolerance.is_nan() || cfg.gradient_tolerance <= 0.0 {
        return Err(Error::InvalidConfig("gradient_tolerance must be positive".into()));
    }
    let k = train_posteriors.n_classes();
    if mode.beta_free() {
        if let Some(class) = labels.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::ZeroClassCount { class });
        }
    }
    let start = match &cfg.initial {
        Some(p) => AffineParams { mode, ..p.clone() },
        None => AffineParams::identity(k, mode),
    };
    check_params(train_posteriors, &start)?;

    let objective = Objective::new(train_posteriors, labels);
    let free = free_indices(mode, k);
    let mut theta: Vec<f64> = std::iter::once(start.alpha).chain(start.beta.iter().copied()).collect();
    let (mut loss, mut grad, mut hess) = objective.evaluate(theta[0], &theta[1..], true);
    let initial_loss = loss;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        if g_free.amax() < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let h = hess.as_ref().expect("hessian requested");
        let h_free = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let mut direction = newton_direction(h_free, &g_free).unwrap_or_else(|| -&g_free);
        let mut slope = g_free.dot(&direction);
        if slope.is_nan() || slope >= 0.0 {
            direction = -&g_free;
            slope = -g_free.norm_squared();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut candidate = theta.clone();
            for (d, &i) in direction.iter().zip(&free) {
                candidate[i] += step * d;
            }
            let cand_loss = objective.loss(candidate[0], &candidate[1..]);
            if cand_loss.is_finite() && cand_loss <= loss + ARMIJO_C * step * slope {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // No representable decrease left along this direction.
            break;
        };
        theta = next;
        (loss, grad, hess) = objective.evaluate(theta[0], &theta[1..], true);
    }
    if !converged {
        let g_max = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        converged = g_max < cfg.gradient_tolerance;
    }

    let params = AffineParams { mode, alpha: theta[0], beta: canonical_zeros(&theta[1..]) };
    Ok(FitResult { params, loss, initial_loss, iterations, converged })
}

fn canonical_zeros(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect()
}

/// Solves `(H + ridge) d = -g`. The beta block of `H` is singular along the
/// all-ones direction (a common shift of beta does not change the
/// posteriors), so a tiny ridge keeps the factorization defined; `g` has no
/// component along that direction.
fn newton_direction(mut h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    for i in 0..h.nrows() {
        h[(i, i)] += 1e-10 * scale;
    }
    let d = h.cholesky()?.solve(&(-g));
    d.iter().all(|v| v.is_finite()).then_some(d)
}
