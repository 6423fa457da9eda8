//! Experiment configuration: JSON with a strict schema (unknown keys are a
//! hard error) and full default resolution. The resolved config is echoed
//! into every output directory and is itself a valid config that reproduces
//! the run.

use std::path::{Path, PathBuf};

use blur_core::objectives::AnalyticProblemId;
use blur_core::pipeline::UnlearnConfig;
use blur_core::updaters::{StepSchedule, UpdateRule};
use blur_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step-size settings as written in configs. The theorem kind derives its
/// horizon-scaled step from the problem constants and the run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant {
        eta: f64,
    },
    Theorem {
        #[serde(default = "default_bench_c")]
        c: f64,
        #[serde(default = "default_bench_lf")]
        l_f: f64,
    },
}

fn default_bench_c() -> f64 {
    blur_core::objectives::BENCH_C
}

fn default_bench_lf() -> f64 {
    blur_core::objectives::BENCH_LIPSCHITZ
}

impl ScheduleConfig {
    pub fn build(&self, rule: &UpdateRule, steps: usize) -> Result<StepSchedule> {
        match self {
            ScheduleConfig::Constant { eta } => Ok(StepSchedule::constant(*eta)),
            ScheduleConfig::Theorem { c, l_f } => match rule {
                UpdateRule::Blur { gamma, .. } => {
                    Ok(StepSchedule::theorem_for(*c, *l_f, *gamma, steps))
                }
                UpdateRule::WeightedSum { .. } => Err(Error::invalid(
                    "schedule",
                    "theorem schedule applies to the blur rule only",
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleRunConfig {
    pub problem: AnalyticProblemId,
    pub rule: UpdateRule,
    pub schedule: ScheduleConfig,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Start point; defaults to the problem's seeded start.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Example1Variant {
    Exact,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1Config {
    pub rule: UpdateRule,
    #[serde(default = "default_example1_variant")]
    pub variant: Example1Variant,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_example1_eta")]
    pub eta: f64,
    #[serde(default = "default_example1_steps")]
    pub steps: usize,
    #[serde(default = "default_example1_theta0")]
    pub theta0: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_example1_variant() -> Example1Variant {
    Example1Variant::Exact
}
fn default_mu() -> f64 {
    blur_core::objectives::DEFAULT_SMOOTHING_RADIUS
}
fn default_example1_eta() -> f64 {
    1e-2
}
fn default_example1_steps() -> usize {
    5000
}
fn default_example1_theta0() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum GradcheckTarget {
    All,
    Objectives,
    Losses,
    Toylm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_gradcheck_target")]
    pub target: GradcheckTarget,
    #[serde(default = "default_gradcheck_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_gradcheck_target() -> GradcheckTarget {
    GradcheckTarget::All
}
fn default_gradcheck_points() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyConfig {
    #[serde(default = "default_rate_seed")]
    pub seed: u64,
    #[serde(default = "default_t_values")]
    pub t_values: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_rate_seed() -> u64 {
    7
}
fn default_t_values() -> Vec<usize> {
    vec![100, 1000, 10_000]
}
fn default_gamma() -> f64 {
    blur_core::updaters::DEFAULT_GAMMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnExperimentConfig {
    #[serde(default)]
    pub pipeline: UnlearnConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSweepConfig {
    #[serde(default)]
    pub pipeline: UnlearnConfig,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaBetaGridConfig {
    #[serde(default)]
    pub pipeline: UnlearnConfig,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_gammas() -> Vec<f64> {
    vec![0.8, 1.0, 1.2]
}
fn default_betas() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentDemoConfig {
    #[serde(default)]
    pub pipeline: UnlearnConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_lambda() -> f64 {
    blur_core::updaters::DEFAULT_LAMBDA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineDemoConfig {
    #[serde(default)]
    pub pipeline: UnlearnConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Any experiment the harness can run.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    SingleRun(SingleRunConfig),
    Example1(Example1Config),
    Gradcheck(GradcheckConfig),
    RateStudy(RateStudyConfig),
    UnlearnPipeline(UnlearnExperimentConfig),
    LambdaSweep(LambdaSweepConfig),
    GammaBetaGrid(GammaBetaGridConfig),
    AlignmentDemo(AlignmentDemoConfig),
    CosineDemo(CosineDemoConfig),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::SingleRun(_) => "single_run",
            ExperimentConfig::Example1(_) => "example1",
            ExperimentConfig::Gradcheck(_) => "gradcheck",
            ExperimentConfig::RateStudy(_) => "rate_study",
            ExperimentConfig::UnlearnPipeline(_) => "unlearn_pipeline",
            ExperimentConfig::LambdaSweep(_) => "lambda_sweep",
            ExperimentConfig::GammaBetaGrid(_) => "gamma_beta_grid",
            ExperimentConfig::AlignmentDemo(_) => "alignment_demo",
            ExperimentConfig::CosineDemo(_) => "cosine_demo",
        }
    }

    pub fn output_dir(&self) -> Option<&PathBuf> {
        match self {
            ExperimentConfig::SingleRun(c) => c.output_dir.as_ref(),
            ExperimentConfig::Example1(c) => c.output_dir.as_ref(),
            ExperimentConfig::Gradcheck(c) => c.output_dir.as_ref(),
            ExperimentConfig::RateStudy(c) => c.output_dir.as_ref(),
            ExperimentConfig::UnlearnPipeline(c) => c.output_dir.as_ref(),
            ExperimentConfig::LambdaSweep(c) => c.output_dir.as_ref(),
            ExperimentConfig::GammaBetaGrid(c) => c.output_dir.as_ref(),
            ExperimentConfig::AlignmentDemo(c) => c.output_dir.as_ref(),
            ExperimentConfig::CosineDemo(c) => c.output_dir.as_ref(),
        }
    }

    pub fn set_output_dir(&mut self, dir: PathBuf) {
        let slot = match self {
            ExperimentConfig::SingleRun(c) => &mut c.output_dir,
            ExperimentConfig::Example1(c) => &mut c.output_dir,
            ExperimentConfig::Gradcheck(c) => &mut c.output_dir,
            ExperimentConfig::RateStudy(c) => &mut c.output_dir,
            ExperimentConfig::UnlearnPipeline(c) => &mut c.output_dir,
            ExperimentConfig::LambdaSweep(c) => &mut c.output_dir,
            ExperimentConfig::GammaBetaGrid(c) => &mut c.output_dir,
            ExperimentConfig::AlignmentDemo(c) => &mut c.output_dir,
            ExperimentConfig::CosineDemo(c) => &mut c.output_dir,
        };
        *slot = Some(dir);
    }
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: message.into(),
    }
}

/// Parses a config JSON string. The `experiment` key selects the schema; all
/// remaining keys are matched strictly against it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| parse_err("config must be a JSON object"))?;
    let kind = obj
        .remove("experiment")
        .ok_or_else(|| parse_err("missing required key `experiment`"))?;
    let kind = kind
        .as_str()
        .ok_or_else(|| parse_err("`experiment` must be a string"))?
        .to_string();

    fn typed<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
        serde_json::from_value(value).map_err(|e| parse_err(format!("config error: {e}")))
    }

    Ok(match kind.as_str() {
        "single_run" => ExperimentConfig::SingleRun(typed(value)?),
        "example1" => ExperimentConfig::Example1(typed(value)?),
        "gradcheck" => ExperimentConfig::Gradcheck(typed(value)?),
        "rate_study" | "rates" => ExperimentConfig::RateStudy(typed(value)?),
        "unlearn_pipeline" | "unlearn" => ExperimentConfig::UnlearnPipeline(typed(value)?),
        "lambda_sweep" => ExperimentConfig::LambdaSweep(typed(value)?),
        "gamma_beta_grid" => ExperimentConfig::GammaBetaGrid(typed(value)?),
        "alignment_demo" => ExperimentConfig::AlignmentDemo(typed(value)?),
        "cosine_demo" => ExperimentConfig::CosineDemo(typed(value)?),
        other => {
            return Err(parse_err(format!("unknown experiment kind {other:?}")));
        }
    })
}

/// Serializes a fully-resolved config, `experiment` key included.
pub fn render_config(config: &ExperimentConfig) -> Result<String> {
    fn with_kind<T: Serialize>(kind: &str, inner: &T) -> Result<String> {
        let mut value =
            serde_json::to_value(inner).map_err(|e| parse_err(format!("serialize: {e}")))?;
        let obj = value.as_object_mut().expect("configs are objects");
        obj.insert(
            "experiment".to_string(),
            serde_json::Value::String(kind.to_string()),
        );
        serde_json::to_string_pretty(&value).map_err(|e| parse_err(format!("serialize: {e}")))
    }
    match config {
        ExperimentConfig::SingleRun(c) => with_kind(config.kind(), c),
        ExperimentConfig::Example1(c) => with_kind(config.kind(), c),
        ExperimentConfig::Gradcheck(c) => with_kind(config.kind(), c),
        ExperimentConfig::RateStudy(c) => with_kind(config.kind(), c),
        ExperimentConfig::UnlearnPipeline(c) => with_kind(config.kind(), c),
        ExperimentConfig::LambdaSweep(c) => with_kind(config.kind(), c),
        ExperimentConfig::GammaBetaGrid(c) => with_kind(config.kind(), c),
        ExperimentConfig::AlignmentDemo(c) => with_kind(config.kind(), c),
        ExperimentConfig::CosineDemo(c) => with_kind(config.kind(), c),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(parse_err(format!("config not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Output root resolution: explicit config value, else `BLUR_OUT_DIR`, else
/// `./blur_out`, with the experiment kind as a subdirectory.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = config.output_dir() {
        return dir.clone();
    }
    let root = std::env::var_os("BLUR_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("blur_out"));
    root.join(config.kind())
}
