//! Command-line harness for the bi-level unlearning library.
//!
//! Subcommands either load a JSON experiment config (`run`) or build one from
//! flags; both paths share the same execution machinery, write a resolved
//! config echo next to their outputs, and are bit-deterministic given the
//! same config and seed.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use blur_core::losses::LossKind;
use blur_core::pipeline::UnlearnConfig;
use blur_core::toylm::Layer;
use blur_core::updaters::UpdateRule;
use config::{
    load_config, Example1Config, Example1Variant, ExperimentConfig, GammaBetaGridConfig,
    GradcheckConfig, GradcheckTarget, LambdaSweepConfig, RateStudyConfig,
    UnlearnExperimentConfig,
};
use experiments::{execute, ExitStatus};

#[derive(Parser)]
#[command(
    name = "blur",
    version,
    about = "Bi-level unlearning experiments: update rules, losses, and a toy testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
enum RuleArg {
    Blur,
    WeightedSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
enum LossArg {
    Ga,
    Npo,
    Simnpo,
    Rmu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
enum SweepKind {
    Lambda,
    GammaBeta,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// The 1-d bilevel example: flat-bottomed lower objective, quadratic
    /// upper objective.
    Example1 {
        #[arg(long, value_enum, default_value = "blur")]
        rule: RuleArg,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "exact")]
        variant: Example1Variant,
        #[arg(long, default_value_t = 0.05)]
        mu: f64,
        #[arg(long, default_value_t = 1e-2)]
        eta: f64,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 3.0)]
        theta0: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        target: GradcheckTarget,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence-rate study on the nonconvex benchmark with the
    /// horizon-scaled step size.
    Rates {
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        t_values: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full toy unlearning pipeline: corpora, finetune, unlearn, evaluate.
    Unlearn {
        #[arg(long, value_enum, default_value = "blur")]
        rule: RuleArg,
        #[arg(long, value_enum, default_value = "npo")]
        loss: LossArg,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 6.0)]
        rmu_c: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter sweeps over the toy unlearning pipeline.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn unlearn_config_from_flags(
    rule: RuleArg,
    loss: LossArg,
    gamma: f64,
    lambda: f64,
    beta: f64,
    alpha: f64,
    rmu_c: f64,
    eta: f64,
    steps: usize,
    seed: u64,
) -> UnlearnConfig {
    let mut pipeline = UnlearnConfig::default();
    pipeline.corpus.seed = seed;
    pipeline.eta = eta;
    pipeline.steps = steps;
    pipeline.rule = match rule {
        RuleArg::Blur => UpdateRule::blur(gamma),
        RuleArg::WeightedSum => UpdateRule::weighted_sum(lambda),
    };
    pipeline.forget_loss = match loss {
        LossArg::Ga => LossKind::GaForget,
        LossArg::Npo => LossKind::NpoForget { beta },
        LossArg::Simnpo => LossKind::SimNpoForget { beta, alpha },
        LossArg::Rmu => LossKind::RmuForget {
            layer: Layer::HiddenOut,
            c: rmu_c,
            seed,
        },
    };
    pipeline.retain_loss = match loss {
        LossArg::Rmu => LossKind::RmuRetain {
            layer: Layer::HiddenOut,
        },
        _ => LossKind::CrossEntropyRetain,
    };
    pipeline
}

/// Parses `argv` and executes. Exit code 0 on success, 1 on configuration or
/// usage errors, 2 on numerical aborts.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; route everything to stderr and
            // reserve exit code 1 for usage/config problems
            eprint!("{e}");
            return 1;
        }
    };

    let mut config = match build_config(cli.command) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    match execute(&mut config) {
        Ok(ExitStatus::Success) => 0,
        Ok(ExitStatus::NumericalAbort) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn build_config(command: Command) -> blur_core::Result<ExperimentConfig> {
    Ok(match command {
        Command::Run { config } => load_config(&config)?,
        Command::Example1 {
            rule,
            gamma,
            lambda,
            variant,
            mu,
            eta,
            steps,
            theta0,
            out,
        } => ExperimentConfig::Example1(Example1Config {
            rule: match rule {
                RuleArg::Blur => UpdateRule::blur(gamma),
                RuleArg::WeightedSum => UpdateRule::weighted_sum(lambda),
            },
            variant,
            mu,
            eta,
            steps,
            theta0,
            output_dir: out,
        }),
        Command::Gradcheck {
            target,
            points,
            seed,
            out,
        } => ExperimentConfig::Gradcheck(GradcheckConfig {
            target,
            points,
            seed,
            output_dir: out,
        }),
        Command::Rates {
            t_values,
            gamma,
            seed,
            out,
        } => ExperimentConfig::RateStudy(RateStudyConfig {
            seed,
            t_values,
            gamma,
            output_dir: out,
        }),
        Command::Unlearn {
            rule,
            loss,
            gamma,
            lambda,
            beta,
            alpha,
            rmu_c,
            eta,
            steps,
            seed,
            out,
        } => ExperimentConfig::UnlearnPipeline(UnlearnExperimentConfig {
            pipeline: unlearn_config_from_flags(
                rule, loss, gamma, lambda, beta, alpha, rmu_c, eta, steps, seed,
            ),
            output_dir: out,
        }),
        Command::Sweep { kind, seed, out } => {
            let mut pipeline = UnlearnConfig::default();
            pipeline.corpus.seed = seed;
            match kind {
                SweepKind::Lambda => ExperimentConfig::LambdaSweep(LambdaSweepConfig {
                    pipeline,
                    lambdas: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
                    output_dir: out,
                }),
                SweepKind::GammaBeta => ExperimentConfig::GammaBetaGrid(GammaBetaGridConfig {
                    pipeline,
                    gammas: vec![0.8, 1.0, 1.2],
                    betas: vec![0.05, 0.1, 0.2],
                    output_dir: out,
                }),
            }
        }
    })
}
