//! Browser bindings for the demo page in `www/`.
//!
//! Every entry point takes a JSON scenario and returns a JSON string. A
//! failure is returned as `{"error": "..."}` rather than thrown, so the page
//! needs a single code path. The plain Rust functions behind the bindings are
//! what the tests exercise.

use priorcal::adaptation::{
    adapt_naive, apply_beta, estimate_model_prior, resolve_target_prior, solve_beta_fixed_point,
    solve_beta_fixed_point_observed, FixedPointConfig, TargetPriorSpec,
};
use priorcal::calibration::{apply_affine, cross_entropy_loss, fit_affine, AffineParams, CalibrationMode, FitConfig};
use priorcal::metrics::evaluate;
use priorcal::scores::{normalize_scores, LabelVector, PosteriorMatrix, PriorVector};
use priorcal::synthgen::{generate, SynthConfig, DEFAULT_MARGIN};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

/// A synthetic train/test pair. Both sets share the model bias and true
/// prior; they differ only in their seeds.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Per-class additive bias in nats; missing entries are zero.
    pub bias: Vec<f64>,
    /// Unnormalized class weights; uniform when empty.
    pub true_prior: Vec<f64>,
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            k: 4,
            n_train: 100,
            n_test: 1000,
            bias: vec![2.0],
            true_prior: Vec::new(),
            margin: DEFAULT_MARGIN,
            noise: 1.0,
            seed: 0,
        }
    }
}

struct Data {
    train: PosteriorMatrix,
    train_labels: LabelVector,
    test: PosteriorMatrix,
    test_labels: LabelVector,
}

impl Scenario {
    fn config(&self, n: usize, seed: u64) -> priorcal::Result<SynthConfig> {
        let mut cfg = SynthConfig::new(self.k, n, seed)?;
        cfg.model_bias = (0..self.k).map(|j| self.bias.get(j).copied().unwrap_or(0.0)).collect();
        if !self.true_prior.is_empty() {
            cfg.true_prior = PriorVector::from_weights(&self.true_prior)?;
        }
        cfg.margin = self.margin;
        cfg.noise_scale = self.noise;
        Ok(cfg)
    }

    fn data(&self) -> priorcal::Result<Data> {
        let (train, train_labels) = generate(&self.config(self.n_train, self.seed.wrapping_mul(2))?)?;
        let (test, test_labels) = generate(&self.config(self.n_test, self.seed.wrapping_mul(2).wrapping_add(1))?)?;
        Ok(Data { train: normalize_scores(&train), train_labels, test: normalize_scores(&test), test_labels })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodRow {
    pub method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_cross_entropy: Option<f64>,
    /// Mean test posterior per class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_posterior: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub test_prior: Vec<f64>,
    pub rows: Vec<MethodRow>,
}

fn row(method: &'static str, adapted: priorcal::Result<PosteriorMatrix>, labels: &LabelVector) -> MethodRow {
    let scored = adapted.and_then(|p| {
        let report = evaluate(&p, labels, None)?;
        Ok((report, estimate_model_prior(&p)?))
    });
    match scored {
        Ok((report, mean)) => MethodRow {
            method,
            error_rate: Some(report.error_rate),
            normalized_cross_entropy: Some(report.normalized_cross_entropy),
            mean_posterior: Some(mean.probs().to_vec()),
            error: None,
        },
        Err(e) => MethodRow {
            method,
            error_rate: None,
            normalized_cross_entropy: None,
            mean_posterior: None,
            error: Some(e.to_string()),
        },
    }
}

/// Scores the unadapted test posteriors and every adaptation method, each
/// learned on the train set.
pub fn compare_methods(scenario: &Scenario) -> priorcal::Result<Comparison> {
    let d = scenario.data()?;
    let k = scenario.k;
    let fp = FixedPointConfig::default();
    let uniform = PriorVector::uniform(k)?;
    let labels = &d.test_labels;

    let ucpa_naive = estimate_model_prior(&d.train).and_then(|m| adapt_naive(&d.test, &m, &uniform)).map(|r| r.adapted);
    let ucpa = solve_beta_fixed_point(&d.train, &uniform, &fp).and_then(|r| apply_beta(&d.test, &r.beta));
    let sucpa = resolve_target_prior(&TargetPriorSpec::Empirical { labels: d.train_labels.clone(), smoothing: 0.0 }, k)
        .and_then(|t| solve_beta_fixed_point(&d.train, &t, &fp))
        .and_then(|r| apply_beta(&d.test, &r.beta));
    let affine = fit_affine(&d.train, &d.train_labels, CalibrationMode::Full, &FitConfig::default())
        .and_then(|f| apply_affine(&d.test, &f.params));

    Ok(Comparison {
        test_prior: priorcal::metrics::empirical_prior(labels)?.probs().to_vec(),
        rows: vec![
            row("unadapted", Ok(d.test.clone()), labels),
            row("ucpa-naive", ucpa_naive, labels),
            row("ucpa", ucpa, labels),
            row("sucpa", sucpa, labels),
            row("affine", affine, labels),
        ],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub beta: Vec<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub converged: bool,
    pub model_prior: Vec<f64>,
}

/// Every iterate of the uniform-target fixed point on the train set.
pub fn fixed_point_trace(scenario: &Scenario, damping: f64) -> priorcal::Result<Trace> {
    let d = scenario.data()?;
    let cfg = FixedPointConfig { damping, ..Default::default() };
    let mut steps = Vec::new();
    let result = solve_beta_fixed_point_observed(&d.train, &PriorVector::uniform(scenario.k)?, &cfg, |s| {
        steps.push(TraceStep { iteration: s.iteration, beta: s.beta.to_vec(), delta: s.delta })
    })?;
    Ok(Trace { steps, converged: result.converged, model_prior: result.model_prior.probs().to_vec() })
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCurve {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub fitted_alpha: f64,
    pub fitted_loss: f64,
}

/// Train cross-entropy of temperature scaling over a grid of `alpha` in
/// `[lo, hi]`, plus the fitted optimum.
pub fn temperature_curve(scenario: &Scenario, lo: f64, hi: f64, points: usize) -> priorcal::Result<LossCurve> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo && points >= 2) {
        return Err(priorcal::Error::InvalidConfig("need lo < hi and at least two points".into()));
    }
    let d = scenario.data()?;
    let alphas: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let losses = alphas
        .iter()
        .map(|&alpha| {
            let params = AffineParams { mode: CalibrationMode::TemperatureOnly, alpha, beta: vec![0.0; scenario.k] };
            cross_entropy_loss(&d.train, &d.train_labels, &params)
        })
        .collect::<priorcal::Result<Vec<_>>>()?;
    let fit = fit_affine(&d.train, &d.train_labels, CalibrationMode::TemperatureOnly, &FitConfig::default())?;
    Ok(LossCurve { alphas, losses, fitted_alpha: fit.params.alpha, fitted_loss: fit.loss })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct TraceRequest {
    #[serde(flatten)]
    scenario: Scenario,
    damping: f64,
}

impl Default for TraceRequest {
    fn default() -> Self {
        Self { scenario: Scenario::default(), damping: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct CurveRequest {
    #[serde(flatten)]
    scenario: Scenario,
    lo: f64,
    hi: f64,
    points: usize,
}

impl Default for CurveRequest {
    fn default() -> Self {
        Self { scenario: Scenario::default(), lo: 0.1, hi: 3.0, points: 60 }
    }
}

fn respond<Req, Resp>(request: &str, run: impl FnOnce(Req) -> priorcal::Result<Resp>) -> String
where
    Req: serde::de::DeserializeOwned,
    Resp: Serialize,
{
    let result = serde_json::from_str::<Req>(request)
        .map_err(|e| e.to_string())
        .and_then(|req| run(req).map_err(|e| e.to_string()))
        .and_then(|resp| serde_json::to_string(&resp).map_err(|e| e.to_string()));
    result.unwrap_or_else(|e| serde_json::json!({ "error": e }).to_string())
}

#[wasm_bindgen(js_name = compareMethods)]
pub fn compare_methods_json(request: &str) -> String {
    respond(request, |s: Scenario| compare_methods(&s))
}

#[wasm_bindgen(js_name = fixedPointTrace)]
pub fn fixed_point_trace_json(request: &str) -> String {
    respond(request, |r: TraceRequest| fixed_point_trace(&r.scenario, r.damping))
}

#[wasm_bindgen(js_name = temperatureCurve)]
pub fn temperature_curve_json(request: &str) -> String {
    respond(request, |r: CurveRequest| temperature_curve(&r.scenario, r.lo, r.hi, r.points))
}
