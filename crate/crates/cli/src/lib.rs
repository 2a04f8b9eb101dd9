//! Subcommands of the `priorcal` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use priorcal::adaptation::{
    adapt_naive, apply_beta, estimate_model_prior, resolve_target_prior, solve_beta_fixed_point, FixedPointConfig,
    TargetPriorSpec,
};
use priorcal::calibration::{apply_affine, fit_affine, AffineParams, CalibrationMode, FitConfig};
use priorcal::io::{self, ScoreFile};
use priorcal::metrics::{bootstrap_evaluate, evaluate, BootstrapConfig, EvaluationReport};
use priorcal::scores::{normalize_scores, LabelVector, PriorVector};
use priorcal::synthgen::{generate, SynthConfig, DEFAULT_MARGIN};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(priorcal::Error),
    #[error("{0}")]
    Internal(priorcal::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<priorcal::Error> for CliError {
    fn from(e: priorcal::Error) -> Self {
        CliError::Data(e)
    }
}

fn written(r: priorcal::Result<()>) -> Result<(), CliError> {
    r.map_err(CliError::Internal)
}

#[derive(Debug, Parser)]
#[command(name = "priorcal", version, about = "Prior adaptation and calibration of classifier posteriors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compose per-token log-probabilities into one log-score per class.
    Ingest {
        /// Token log-probability file (JSONL).
        tokens: PathBuf,
        /// Output score file (JSONL).
        out: PathBuf,
    },
    /// Adapt test posteriors to a target prior learned from train scores.
    Adapt(AdaptArgs),
    /// Fit affine calibration on labelled train scores and apply it to test.
    Calibrate(CalibrateArgs),
    /// Error rate, cross-entropy and normalized cross-entropy of posteriors.
    Evaluate(EvaluateArgs),
    /// Write a synthetic labelled score file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    UcpaNaive,
    SucpaNaive,
    Ucpa,
    Sucpa,
}

impl Method {
    fn semi_supervised(self) -> bool {
        matches!(self, Method::SucpaNaive | Method::Sucpa)
    }

    fn iterative(self) -> bool {
        matches!(self, Method::Ucpa | Method::Sucpa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    Uniform,
    Empirical,
    File,
}

#[derive(Debug, clap::Args)]
pub struct AdaptArgs {
    /// Unlabelled (or labelled) in-domain score file used to learn the shift.
    #[arg(long)]
    pub train: PathBuf,
    /// Score file the learned shift is applied to.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Target prior; ucpa methods require uniform. Defaults to uniform for
    /// ucpa, and to file (with --prior-file) or empirical for sucpa.
    #[arg(long, value_enum)]
    pub prior: Option<PriorSource>,
    #[arg(long)]
    pub prior_file: Option<PathBuf>,
    /// Additive smoothing for empirical priors.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Adapted posteriors (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Adaptation metadata (JSON); defaults to `<out>.meta.json`.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Affine,
    Alpha1,
    Temperature,
}

impl From<ModeArg> for CalibrationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Affine => CalibrationMode::Full,
            ModeArg::Alpha1 => CalibrationMode::AlphaFixedOne,
            ModeArg::Temperature => CalibrationMode::TemperatureOnly,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct CalibrateArgs {
    /// Labelled train score file.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Fitted parameters (JSON); defaults to `<out>.params.json`.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gradient_tolerance: f64,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Posterior file (JSONL).
    #[arg(long)]
    pub posteriors: PathBuf,
    /// Labelled score file with the same ids; defaults to labels stored in
    /// the posterior file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Prior of the naive reference system; empirical test labels by default.
    #[arg(long, value_enum, default_value_t = PriorSource::Empirical)]
    pub reference_prior: PriorSource,
    #[arg(long)]
    pub prior_file: Option<PathBuf>,
    /// Number of bootstrap resamples; 0 disables the bootstrap.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Comma-separated per-class log offsets; zeros by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bias: Option<Vec<f64>>,
    /// Comma-separated class weights for labels; uniform by default.
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// On-disk prior: either exact probabilities or weights to be rescaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

pub fn read_prior_file(path: &Path, class_names: &[String]) -> Result<PriorVector, CliError> {
    let file: PriorFile = io::read_json(path)?;
    if let Some(names) = &file.class_names {
        if names != class_names {
            return Err(CliError::Usage(format!(
                "{}: class names {names:?} do not match {class_names:?}",
                path.display()
            )));
        }
    }
    let prior = match (file.prior, file.weights) {
        (Some(p), None) => PriorVector::new(p)?,
        (None, Some(w)) => PriorVector::from_weights(&w)?,
        _ => return Err(CliError::Usage(format!("{}: give exactly one of \"prior\" or \"weights\"", path.display()))),
    };
    if prior.len() != class_names.len() {
        return Err(CliError::Usage(format!(
            "{}: prior has {} classes, expected {}",
            path.display(),
            prior.len(),
            class_names.len()
        )));
    }
    Ok(prior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSidecar {
    pub method: Method,
    pub prior: PriorSource,
    pub class_names: Vec<String>,
    pub model_prior: PriorVector,
    pub target_prior: PriorVector,
    pub beta: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

fn default_sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn same_classes(a: &ScoreFile, b: &ScoreFile, what: &str) -> Result<(), CliError> {
    if a.scores.class_names() != b.scores.class_names() {
        return Err(CliError::Usage(format!(
            "{what}: class names differ ({:?} vs {:?})",
            a.scores.class_names(),
            b.scores.class_names()
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { tokens, out } => cmd_ingest(&tokens, &out),
        Command::Adapt(args) => cmd_adapt(&args).map(|_| ()),
        Command::Calibrate(args) => cmd_calibrate(&args).map(|_| ()),
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            print!("{}", summary(&report));
            Ok(())
        }
        Command::Synth(args) => cmd_synth(&args),
    }
}

pub fn cmd_ingest(tokens: &Path, out: &Path) -> Result<(), CliError> {
    let file = io::ingest_token_scores(tokens)?;
    written(io::write_scores(out, &file.ids, &file.scores, file.labels.as_ref()))
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<AdaptSidecar, CliError> {
    let train = io::read_scores(&args.train)?;
    let test = io::read_scores(&args.test)?;
    same_classes(&train, &test, "train and test")?;
    let k = train.scores.n_classes();
    let names = train.scores.class_names().to_vec();

    let source = match (args.method.semi_supervised(), args.prior) {
        (false, None | Some(PriorSource::Uniform)) => PriorSource::Uniform,
        (false, Some(other)) => {
            return Err(CliError::Usage(format!("{:?} assumes a uniform target prior, got {other:?}", args.method)))
        }
        (true, Some(p)) => p,
        (true, None) if args.prior_file.is_some() => PriorSource::File,
        (true, None) => PriorSource::Empirical,
    };
    let spec = match source {
        PriorSource::Uniform => TargetPriorSpec::Uniform,
        PriorSource::Empirical => {
            let labels = train.labels.clone().ok_or_else(|| {
                CliError::Usage(format!(
                    "{}: empirical target prior needs a label on every train record (or pass --prior-file)",
                    args.train.display()
                ))
            })?;
            TargetPriorSpec::Empirical { labels, smoothing: args.smoothing }
        }
        PriorSource::File => {
            let path =
                args.prior_file.as_ref().ok_or_else(|| CliError::Usage("--prior file needs --prior-file".into()))?;
            TargetPriorSpec::Explicit(read_prior_file(path, &names)?)
        }
    };
    let target = resolve_target_prior(&spec, k)?;

    let train_post = normalize_scores(&train.scores);
    let test_post = normalize_scores(&test.scores);
    let (adapted, model_prior, beta, iterations_used, converged) = if args.method.iterative() {
        let cfg =
            FixedPointConfig { max_iterations: args.max_iterations, tolerance: args.tolerance, damping: args.damping };
        let fp = solve_beta_fixed_point(&train_post, &target, &cfg)?;
        if !fp.converged {
            log::warn!("fixed point did not converge within {} iterations", fp.iterations_used);
        }
        (apply_beta(&test_post, &fp.beta)?, fp.model_prior, fp.beta, fp.iterations_used, fp.converged)
    } else {
        let model_prior = estimate_model_prior(&train_post)?;
        let r = adapt_naive(&test_post, &model_prior, &target)?;
        (r.adapted, r.model_prior, r.beta, r.iterations_used, r.converged)
    };

    written(io::write_posteriors(&args.out, &test.ids, &adapted, test.labels.as_ref()))?;
    let sidecar = AdaptSidecar {
        method: args.method,
        prior: source,
        class_names: names,
        model_prior,
        target_prior: target,
        beta,
        iterations_used,
        converged,
    };
    let path = args.sidecar.clone().unwrap_or_else(|| default_sidecar(&args.out, ".meta.json"));
    written(io::write_json(&sidecar, path))?;
    Ok(sidecar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSidecar {
    pub params: AffineParams,
    pub train_loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<CalibrationSidecar, CliError> {
    let train = io::read_scores(&args.train)?;
    let test = io::read_scores(&args.test)?;
    same_classes(&train, &test, "train and test")?;
    let labels = train.labels.as_ref().ok_or_else(|| {
        CliError::Usage(format!("{}: calibration needs a label on every train record", args.train.display()))
    })?;
    let cfg =
        FitConfig { max_iterations: args.max_iterations, gradient_tolerance: args.gradient_tolerance, initial: None };
    let fit = fit_affine(&normalize_scores(&train.scores), labels, args.mode.into(), &cfg)?;
    if !fit.converged {
        log::warn!("calibration did not converge within {} iterations", fit.iterations);
    }
    let calibrated = apply_affine(&normalize_scores(&test.scores), &fit.params)?;
    written(io::write_posteriors(&args.out, &test.ids, &calibrated, test.labels.as_ref()))?;
    let sidecar = CalibrationSidecar {
        params: fit.params,
        train_loss: fit.loss,
        initial_loss: fit.initial_loss,
        iterations: fit.iterations,
        converged: fit.converged,
    };
    let path = args.params_out.clone().unwrap_or_else(|| default_sidecar(&args.out, ".params.json"));
    written(io::write_json(&sidecar, path))?;
    Ok(sidecar)
}

fn labels_for(args: &EvaluateArgs, ids: &[String], stored: Option<LabelVector>) -> Result<LabelVector, CliError> {
    let Some(path) = &args.labels else {
        return stored
            .ok_or_else(|| CliError::Usage(format!("{}: no labels stored; pass --labels", args.posteriors.display())));
    };
    let source = io::read_scores(path)?;
    let labels =
        source.labels.ok_or_else(|| CliError::Usage(format!("{}: every record needs a label", path.display())))?;
    if source.ids.len() != ids.len() {
        return Err(CliError::Usage(format!(
            "{} posteriors but {} labels in {}",
            ids.len(),
            source.ids.len(),
            path.display()
        )));
    }
    if source.ids != ids {
        return Err(CliError::Usage(format!("ids in {} do not match the posterior file", path.display())));
    }
    Ok(labels)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluationReport, CliError> {
    let file = io::read_posteriors(&args.posteriors)?;
    let labels = labels_for(args, &file.ids, file.labels)?;
    if labels.n_classes() != file.posteriors.n_classes() {
        return Err(CliError::Usage("label file and posterior file declare different class counts".into()));
    }
    let reference = match args.reference_prior {
        PriorSource::Empirical => None,
        PriorSource::Uniform => Some(PriorVector::uniform(file.posteriors.n_classes())?),
        PriorSource::File => {
            let path = args
                .prior_file
                .as_ref()
                .ok_or_else(|| CliError::Usage("--reference-prior file needs --prior-file".into()))?;
            Some(read_prior_file(path, file.posteriors.class_names())?)
        }
    };
    let report = if args.bootstrap > 0 {
        let cfg = BootstrapConfig { n_resamples: args.bootstrap, seed: args.seed };
        bootstrap_evaluate(&file.posteriors, &labels, &cfg, reference.as_ref())?
    } else {
        evaluate(&file.posteriors, &labels, reference.as_ref())?
    };
    written(io::write_report(&report, &args.report))?;
    Ok(report)
}

pub fn summary(report: &EvaluationReport) -> String {
    let mut s = format!(
        "samples                   {}\nerror rate                {:.4}\ncross-entropy             {:.4}\nnormalized cross-entropy  {:.4}\n",
        report.n_samples, report.error_rate, report.cross_entropy, report.normalized_cross_entropy
    );
    if let Some(b) = &report.bootstrap {
        s.push_str(&format!(
            "bootstrap ({} resamples, seed {})\n  error rate  {:.4} +- {:.4}\n  xent        {:.4} +- {:.4}\n  nxent       {:.4} +- {:.4}\n",
            b.n_resamples,
            b.seed,
            b.error_rate.mean,
            b.error_rate.std,
            b.cross_entropy.mean,
            b.cross_entropy.std,
            b.normalized_cross_entropy.mean,
            b.normalized_cross_entropy.std
        ));
    }
    s
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig::new(args.k, args.n, args.seed)?;
    cfg.noise_scale = args.noise;
    cfg.margin = args.margin;
    if let Some(bias) = &args.bias {
        cfg.model_bias = bias.clone();
    }
    if let Some(weights) = &args.prior {
        cfg.true_prior = PriorVector::from_weights(weights)?;
    }
    let (scores, labels) = generate(&cfg)?;
    let ids: Vec<String> = (0..args.n).map(|i| format!("s{i}")).collect();
    written(io::write_scores(&args.out, &ids, &scores, Some(&labels)))
}
