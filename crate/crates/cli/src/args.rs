use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tqa_core::eval::verify::Check;
use tqa_core::eval::TailWindow;
use tqa_core::synth::{Dependence, SynthSpec};
use tqa_core::{
    AggressiveForm, Budgeter, CoefficientMode, ErrorVariant, Method, MethodConfig, Predictor, ScaleSource, ScoreKind,
    Window,
};

#[derive(Debug, Parser)]
#[command(name = "tqa", version, about = "Conformal prediction intervals for time-series panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel.
    Generate(GenerateArgs),
    /// Build intervals for every test series of a panel.
    Predict(PredictArgs),
    /// Compute coverage, tail coverage, efficiency and width metrics.
    Evaluate(EvaluateArgs),
    /// Run one of the built-in guarantee checks.
    Verify(VerifyArgs),
    /// Export metrics tables and coverage curves for interval files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Independent,
    Persistent,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_cal: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value_t = Mode::Independent)]
    pub mode: Mode,
    /// Log-scale standard deviation of the per-series scale (persistent mode).
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// Level shift applied to test series only.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    /// Replace the oracle forecasts with per-step linear regressions on this many lags.
    #[arg(long)]
    pub fit_order: Option<usize>,
}

impl SynthArgs {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_train: self.n_train,
            n_cal: self.n_cal,
            n_test: self.n_test,
            horizon: self.horizon,
            dependence: match self.mode {
                Mode::Independent => Dependence::Independent,
                Mode::Persistent => Dependence::Persistent { strength: self.strength },
            },
            drift: self.drift,
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Panel CSV to write.
    #[arg(long, short, default_value = "panel.csv")]
    pub out: PathBuf,
    /// Manifest JSON to write (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Settings shared by every command that runs a method.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = ScoreKind::AbsResidual)]
    pub score: ScoreKind,
    #[arg(long, default_value_t = ScaleSource::External)]
    pub scale: ScaleSource,
    #[arg(long, default_value_t = Predictor::Ms)]
    pub predictor: Predictor,
    #[arg(long, default_value_t = Budgeter::Conservative)]
    pub budgeter: Budgeter,
    #[arg(long, default_value_t = AggressiveForm::Multiplicative)]
    pub aggressive_form: AggressiveForm,
    #[arg(long = "coefficient", default_value_t = CoefficientMode::Exact)]
    pub coefficient_mode: CoefficientMode,
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.005)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub level_floor: f64,
    #[arg(long, default_value_t = ErrorVariant::Asymptotic)]
    pub error_variant: ErrorVariant,
    /// Randomize between the two candidate order statistics for exact coverage.
    #[arg(long)]
    pub smoothing: bool,
}

impl MethodArgs {
    pub fn config(&self, method: Method, seed: u64) -> MethodConfig {
        MethodConfig {
            alpha: self.alpha,
            method,
            score: self.score,
            scale: self.scale,
            predictor: self.predictor,
            budgeter: self.budgeter,
            aggressive_form: self.aggressive_form,
            coefficient_mode: self.coefficient_mode,
            beta: self.beta,
            gamma: self.gamma,
            level_floor: self.level_floor,
            error_variant: self.error_variant,
            smoothing: self.smoothing,
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Panel CSV to read.
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, default_value_t = Method::Split)]
    pub method: Method,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interval CSV to write.
    #[arg(long, short, default_value = "intervals.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricArgs {
    /// `lastK` or `full`.
    #[arg(long, default_value = "last20")]
    pub window: Window,
    #[arg(long, default_value_t = 0.1)]
    pub tail_fraction: f64,
    /// Steps used for per-series coverage in the tail metric.
    #[arg(long, value_enum, default_value_t = TailWindowArg::Active)]
    pub tail_window: TailWindowArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailWindowArg {
    Active,
    Full,
}

impl From<TailWindowArg> for TailWindow {
    fn from(t: TailWindowArg) -> Self {
        match t {
            TailWindowArg::Active => TailWindow::Active,
            TailWindowArg::Full => TailWindow::Full,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Interval CSVs to evaluate; each is labelled by its file stem.
    #[arg(long, num_args = 1.., conflicts_with_all = ["panel", "synthetic"])]
    pub intervals: Vec<PathBuf>,
    /// Panel CSV to run the methods on.
    #[arg(long, conflicts_with = "synthetic")]
    pub panel: Option<PathBuf>,
    /// Generate a fresh synthetic panel for every repetition.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Methods to run on the panel.
    #[arg(long, value_delimiter = ',', default_value = "split,tqa_budget,tqa_error")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub method_args: MethodArgs,
    /// Number of repetitions; repetition `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Report JSON to write.
    #[arg(long, short, default_value = "report.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Check to run, by name (see `Check`).
    #[arg(long)]
    pub theorem: Check,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Calibration series.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.005)]
    pub gamma: f64,
    /// Sequence length for the error-rate check.
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = ErrorVariant::Asymptotic)]
    pub error_variant: ErrorVariant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report JSON to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Interval CSVs; each is labelled by its file stem.
    #[arg(long, num_args = 1.., required = true)]
    pub intervals: Vec<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Also write `tail_curves.csv` and `step_coverage.csv`.
    #[arg(long)]
    pub curves: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
