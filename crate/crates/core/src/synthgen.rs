//! Synthetic miscalibrated classifier outputs with a controllable prior
//! mismatch.
//!
//! Sample `i` draws from `CounterRng::derive(seed, i)`: one uniform picks the
//! label by inverse CDF over `true_prior`, then one standard normal per class
//! in class order. The log-score of class `k` is
//! `margin * [k == label] + model_bias[k] + noise_scale * normal_k`.
//!
//! Scores carry no log-prior term, so with zero bias the averaged posterior
//! matches the true prior only when that prior is uniform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scores::{default_class_names, LabelVector, LogScoreMatrix, PriorVector};

pub const DEFAULT_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub n: usize,
    pub true_prior: PriorVector,
    pub model_bias: Vec<f64>,
    pub noise_scale: f64,
    pub margin: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Uniform true prior, no bias, unit noise.
    pub fn new(k: usize, n: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            k,
            n,
            true_prior: PriorVector::uniform(k)?,
            model_bias: vec![0.0; k],
            noise_scale: 1.0,
            margin: DEFAULT_MARGIN,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be at least 2".into()));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.true_prior.len() != self.k || self.model_bias.len() != self.k {
            return Err(Error::InvalidConfig("true_prior and model_bias must have k entries".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("noise_scale must be finite and >= 0".into()));
        }
        if !self.margin.is_finite() || self.model_bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("margin and model_bias must be finite".into()));
        }
        Ok(())
    }
}

fn draw_label(u: f64, prior: &[f64]) -> usize {
    let mut cumulative = 0.0;
    for (k, &p) in prior.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return k;
        }
    }
    // Rounding left u above the last partial sum.
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn generate(cfg: &SynthConfig) -> Result<(LogScoreMatrix, LabelVector)> {
    cfg.validate()?;
    let mut values = Vec::with_capacity(cfg.n * cfg.k);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = CounterRng::derive(cfg.seed, i as u64);
        let y = draw_label(rng.next_f64(), cfg.true_prior.probs());
        labels.push(y);
        for k in 0..cfg.k {
            let signal = if k == y { cfg.margin } else { 0.0 };
            values.push(signal + cfg.model_bias[k] + cfg.noise_scale * rng.standard_normal());
        }
    }
    Ok((LogScoreMatrix::new(values, cfg.n, default_class_names(cfg.k))?, LabelVector::new(labels, cfg.k)?))
}
