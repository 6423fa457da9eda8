//! Experiment execution: each configured experiment writes a resolved config
//! echo, plot-ready CSVs, and a summary JSON into its output directory.

use std::fs;
use std::path::Path;

use blur_core::diagnostics::{rate_slope, temporal_averages, RunStatus, StepRecord};
use blur_core::gradcheck::{check, FdSpec};
use blur_core::objectives::{
    bench_start, make_problem, nonconvex_bench, quadratic_pair, quadratic_pair_start,
    AnalyticProblemId, BilevelProblem, Example1Lower, Example1SmoothedLower, Example1Upper,
    Objective, BENCH_C, BENCH_LIPSCHITZ,
};
use blur_core::pipeline::{select_best, unlearn_pipeline, UnlearnConfig, UnlearnOutcome};
use blur_core::toylm::{
    generate_corpus, uniform_chance, write_secrets, write_sequences, ToyLm, ToyLmConfig,
};
use blur_core::trace::{write_trace, CsvTraceSink};
use blur_core::updaters::{run, StepSchedule, UpdateRule};
use blur_core::vecmath::ParamVector;
use blur_core::{Error, Result};
use serde_json::json;

use crate::config::{
    render_config, resolve_output_dir, AlignmentDemoConfig, CosineDemoConfig, Example1Config,
    Example1Variant, ExperimentConfig, GammaBetaGridConfig, GradcheckConfig, GradcheckTarget,
    LambdaSweepConfig, RateStudyConfig, SingleRunConfig, UnlearnExperimentConfig,
};

/// Outcome classification for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    NumericalAbort,
}

/// Resolves defaults, writes the config echo, and dispatches the experiment.
pub fn execute(config: &mut ExperimentConfig) -> Result<ExitStatus> {
    let out_dir = resolve_output_dir(config);
    config.set_output_dir(out_dir.clone());
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("resolved_config.json"), render_config(config)?)?;

    match config {
        ExperimentConfig::SingleRun(c) => run_single(c, &out_dir),
        ExperimentConfig::Example1(c) => run_example1(c, &out_dir),
        ExperimentConfig::Gradcheck(c) => run_gradcheck(c, &out_dir),
        ExperimentConfig::RateStudy(c) => run_rate_study(c, &out_dir),
        ExperimentConfig::UnlearnPipeline(c) => run_unlearn(c, &out_dir),
        ExperimentConfig::LambdaSweep(c) => run_lambda_sweep(c, &out_dir),
        ExperimentConfig::GammaBetaGrid(c) => run_gamma_beta_grid(c, &out_dir),
        ExperimentConfig::AlignmentDemo(c) => run_alignment_demo(c, &out_dir),
        ExperimentConfig::CosineDemo(c) => run_cosine_demo(c, &out_dir),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(
        path,
        serde_json::to_string_pretty(value).expect("serializable summary"),
    )?;
    Ok(())
}

fn default_start(problem_id: &AnalyticProblemId, seed: u64, dim: usize) -> ParamVector {
    match problem_id {
        AnalyticProblemId::Example1Exact | AnalyticProblemId::Example1Smoothed { .. } => {
            ParamVector::new(vec![3.0]).expect("finite")
        }
        AnalyticProblemId::QuadraticPair { seed: s } => quadratic_pair_start(*s),
        AnalyticProblemId::NonconvexBench { seed: s } => {
            let _ = (seed, dim);
            bench_start(*s)
        }
    }
}

fn run_single(config: &SingleRunConfig, out_dir: &Path) -> Result<ExitStatus> {
    let problem = make_problem(&config.problem)?;
    let theta0 = match &config.theta0 {
        Some(values) => {
            let v = ParamVector::new(values.clone())?;
            if v.dim() != problem.dim() {
                return Err(Error::DimensionMismatch {
                    expected: problem.dim(),
                    got: v.dim(),
                });
            }
            v
        }
        None => default_start(&config.problem, config.seed, problem.dim()),
    };
    let schedule = config.schedule.build(&config.rule, config.steps)?;
    let mut sink = CsvTraceSink::create(&out_dir.join("trace.csv"))?;
    let outcome = run(
        &problem,
        &theta0,
        &config.rule,
        &schedule,
        config.steps,
        &mut sink,
    )?;
    drop(sink);

    let (avg_gf2, avg_combined) = temporal_averages(&outcome.trace)
        .map(|(a, b)| (Some(a), Some(b)))
        .unwrap_or((None, None));
    let last = outcome.trace.records.last();
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "status": status_str(outcome.trace.meta.status),
            "steps_recorded": outcome.trace.len(),
            "theta_final": outcome.theta.as_slice(),
            "final_f": last.map(|r| r.f_val),
            "final_r": last.map(|r| r.r_val),
            "avg_grad_f_sq": avg_gf2,
            "avg_grad_f_sq_plus_u_sq": avg_combined,
        }),
    )?;
    Ok(exit_of(outcome.trace.meta.status))
}

fn status_str(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Completed => "completed",
        RunStatus::AbortedNonFinite => "aborted_nonfinite",
    }
}

fn exit_of(status: RunStatus) -> ExitStatus {
    match status {
        RunStatus::Completed => ExitStatus::Success,
        RunStatus::AbortedNonFinite => ExitStatus::NumericalAbort,
    }
}

fn example1_lower(variant: Example1Variant, mu: f64) -> Result<Box<dyn Objective>> {
    Ok(match variant {
        Example1Variant::Exact => Box::new(Example1Lower),
        Example1Variant::Smoothed => Box::new(Example1SmoothedLower::new(mu)?),
    })
}

/// The 1-d bilevel example. The bilevel rule runs on (lower, upper) as usual.
/// The weighted-sum baseline follows the example's regularized form, which
/// penalizes the upper objective with `lambda` times the lower one, so its
/// run descends `h + lambda * w`: realized by running the rule on the
/// transposed pair.
fn run_example1(config: &Example1Config, out_dir: &Path) -> Result<ExitStatus> {
    config.rule.validate()?;
    let problem = match &config.rule {
        UpdateRule::Blur { .. } => BilevelProblem::new(
            example1_lower(config.variant, config.mu)?,
            Box::new(Example1Upper),
            Some(2.0),
        )?,
        UpdateRule::WeightedSum { .. } => BilevelProblem::new(
            Box::new(Example1Upper),
            example1_lower(config.variant, config.mu)?,
            None,
        )?,
    };

    let theta0 = ParamVector::new(vec![config.theta0])?;
    let mut best_dist_to_1 = (config.theta0 - 1.0).abs();
    let mut csv = CsvTraceSink::create(&out_dir.join("trace.csv"))?;
    let mut sink = |record: &StepRecord, theta: &ParamVector| -> Result<()> {
        best_dist_to_1 = best_dist_to_1.min((theta[0] - 1.0).abs());
        blur_core::updaters::StepSink::on_step(&mut csv, record, theta)
    };
    let outcome = run(
        &problem,
        &theta0,
        &config.rule,
        &StepSchedule::constant(config.eta),
        config.steps,
        &mut sink,
    )?;

    let theta_final = outcome.theta[0];
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "status": status_str(outcome.trace.meta.status),
            "theta_final": theta_final,
            "dist_to_bilevel_solution": (theta_final - 1.0).abs(),
            "best_dist_to_bilevel_solution": best_dist_to_1,
            "dist_to_unconstrained_upper_min": (theta_final - 2.0).abs(),
        }),
    )?;
    Ok(exit_of(outcome.trace.meta.status))
}

fn gradcheck_analytic(seed: u64, points: usize, report: &mut Vec<serde_json::Value>) -> bool {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9cad_c4ec);
    let spec = FdSpec::with_tolerances(1e-6, 1e-8);
    let mut all_pass = true;

    let quad = quadratic_pair(7).expect("construction");
    let bench = nonconvex_bench(7).expect("construction");
    let smoothed = Example1SmoothedLower::new(0.05).expect("valid mu");
    let targets: Vec<(&str, &dyn Objective)> = vec![
        ("example1_smoothed_lower", &smoothed),
        ("example1_upper", &Example1Upper),
        ("quadratic_forget", quad.forget.as_ref()),
        ("quadratic_retain", quad.retain.as_ref()),
        ("bench_forget", bench.forget.as_ref()),
        ("bench_retain", bench.retain.as_ref()),
    ];
    for (name, obj) in targets {
        let mut worst = 0.0f64;
        let mut pass = true;
        let mut checked = 0;
        while checked < points {
            let theta = ParamVector::new(
                (0..obj.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            )
            .expect("finite");
            if name.starts_with("example1_smoothed") {
                let t: f64 = theta[0];
                if ((t - 1.0).abs() - 0.05).abs() < 1e-3 || ((t + 1.0).abs() - 0.05).abs() < 1e-3 {
                    continue;
                }
            }
            let r = check(obj, &theta, &spec).expect("finite evaluations");
            worst = worst.max(r.max_rel_err);
            pass &= r.pass;
            checked += 1;
        }
        all_pass &= pass;
        report.push(json!({"target": name, "pass": pass, "max_rel_err": worst}));
    }
    all_pass
}

fn gradcheck_losses(seed: u64, points: usize, report: &mut Vec<serde_json::Value>) -> bool {
    use blur_core::losses::{LmLossObjective, LossKind, ReferenceModel};
    use blur_core::toylm::{CorpusConfig, Layer};
    use std::sync::Arc;

    let cfg = ToyLmConfig {
        vocab_size: 12,
        hidden_dim: 6,
    };
    let corpus = CorpusConfig {
        seed: seed ^ 0x6c05_5e5,
        vocab_size: 12,
        n_retain: 8,
        n_forget: 6,
        n_secrets: 1,
        seq_len: 8,
    };
    let (retain, forget) = generate_corpus(&corpus).expect("valid corpus");
    let retain_seqs = Arc::new(retain.sequences.clone());
    let forget_seqs = Arc::new(forget.sequences.clone());
    let anchor = ToyLm::new_seeded(cfg, seed ^ 0xa0c);
    let forget_ref =
        Arc::new(ReferenceModel::new(&anchor, forget_seqs.clone()).expect("valid batch"));
    let retain_ref =
        Arc::new(ReferenceModel::new(&anchor, retain_seqs.clone()).expect("valid batch"));

    let losses: Vec<(&str, LmLossObjective)> = vec![
        (
            "cross_entropy_retain",
            LmLossObjective::new(cfg, LossKind::CrossEntropyRetain, retain_seqs.clone(), None)
                .expect("valid"),
        ),
        (
            "ga_forget",
            LmLossObjective::new(cfg, LossKind::GaForget, forget_seqs.clone(), None)
                .expect("valid"),
        ),
        (
            "npo_forget",
            LmLossObjective::new(
                cfg,
                LossKind::NpoForget { beta: 0.3 },
                forget_seqs.clone(),
                Some(forget_ref),
            )
            .expect("valid"),
        ),
        (
            "simnpo_forget",
            LmLossObjective::new(
                cfg,
                LossKind::SimNpoForget {
                    beta: 0.8,
                    alpha: 0.2,
                },
                forget_seqs.clone(),
                None,
            )
            .expect("valid"),
        ),
        (
            "rmu_retain",
            LmLossObjective::new(
                cfg,
                LossKind::RmuRetain {
                    layer: Layer::HiddenOut,
                },
                retain_seqs.clone(),
                Some(retain_ref),
            )
            .expect("valid"),
        ),
        (
            "rmu_forget",
            LmLossObjective::new(
                cfg,
                LossKind::RmuForget {
                    layer: Layer::HiddenOut,
                    c: 2.0,
                    seed: 3,
                },
                forget_seqs.clone(),
                None,
            )
            .expect("valid"),
        ),
    ];

    // losses reach O(10) values, so the FD step floor must sit well above
    // eps * |f| / tol_abs for the rounding term to stay below tolerance
    let spec = FdSpec {
        step_abs: 5e-6,
        ..FdSpec::with_tolerances(1e-5, 1e-8)
    };
    let mut all_pass = true;
    for (name, obj) in &losses {
        let mut worst = 0.0f64;
        let mut pass = true;
        for k in 0..points as u64 {
            let theta = ToyLm::new_seeded(cfg, seed ^ (0x8000 + k)).into_params();
            let r = check(obj, &theta, &spec).expect("finite evaluations");
            worst = worst.max(r.max_rel_err);
            pass &= r.pass;
        }
        all_pass &= pass;
        report.push(json!({"target": name, "pass": pass, "max_rel_err": worst}));
    }
    all_pass
}

fn run_gradcheck(config: &GradcheckConfig, out_dir: &Path) -> Result<ExitStatus> {
    let mut entries = Vec::new();
    let mut all_pass = true;
    if matches!(config.target, GradcheckTarget::All | GradcheckTarget::Objectives) {
        all_pass &= gradcheck_analytic(config.seed, config.points, &mut entries);
    }
    if matches!(
        config.target,
        GradcheckTarget::All | GradcheckTarget::Losses | GradcheckTarget::Toylm
    ) {
        all_pass &= gradcheck_losses(config.seed, config.points, &mut entries);
    }
    write_json(
        &out_dir.join("gradcheck.json"),
        &json!({"pass": all_pass, "points": config.points, "targets": entries}),
    )?;
    for e in &entries {
        println!(
            "gradcheck {}: {}",
            e["target"].as_str().unwrap_or("?"),
            if e["pass"].as_bool().unwrap_or(false) {
                "PASS"
            } else {
                "FAIL"
            }
        );
    }
    Ok(if all_pass {
        ExitStatus::Success
    } else {
        ExitStatus::NumericalAbort
    })
}

/// One horizon-scaled run per requested length; slopes fitted on the
/// temporal averages.
fn run_rate_study(config: &RateStudyConfig, out_dir: &Path) -> Result<ExitStatus> {
    if config.t_values.len() < 3 {
        return Err(Error::invalid("t_values", "need at least three horizons"));
    }
    let problem = nonconvex_bench(config.seed)?;
    let theta0 = bench_start(config.seed);
    let rule = UpdateRule::blur(config.gamma);

    let mut rows = Vec::new();
    let mut grad_points = Vec::new();
    let mut combined_points = Vec::new();
    for &t in &config.t_values {
        let schedule = StepSchedule::theorem_for(BENCH_C, BENCH_LIPSCHITZ, config.gamma, t);
        let mut sink = CsvTraceSink::create(&out_dir.join(format!("trace_t{t}.csv")))?;
        let outcome = run(&problem, &theta0, &rule, &schedule, t, &mut sink)?;
        if outcome.trace.meta.status != RunStatus::Completed {
            return Ok(ExitStatus::NumericalAbort);
        }
        let (avg_gf2, avg_combined) = temporal_averages(&outcome.trace)?;
        rows.push((t, avg_gf2, avg_combined, schedule.eta()));
        grad_points.push((t as f64, avg_gf2));
        combined_points.push((t as f64, avg_combined));
    }

    let mut csv = String::from("t,avg_grad_f_sq,avg_grad_f_sq_plus_u_sq,eta\n");
    for (t, a, b, eta) in &rows {
        csv.push_str(&format!("{t},{a},{b},{eta}\n"));
    }
    fs::write(out_dir.join("rates.csv"), csv)?;

    let slope_grad = rate_slope(&grad_points)?;
    let slope_combined = rate_slope(&combined_points)?;
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "gamma": config.gamma,
            "c": BENCH_C,
            "l_f": BENCH_LIPSCHITZ,
            "slope_avg_grad_f_sq": slope_grad,
            "slope_avg_grad_f_sq_plus_u_sq": slope_combined,
        }),
    )?;
    println!("rate slopes: grad {slope_grad:.3}, combined {slope_combined:.3}");
    Ok(ExitStatus::Success)
}

fn snapshots_csv(outcome: &UnlearnOutcome) -> String {
    let mut text = String::from("step,verb_mem,know_mem_forget,know_mem_retain\n");
    for s in &outcome.snapshots {
        text.push_str(&format!(
            "{},{},{},{}\n",
            s.step, s.report.verb_mem, s.report.know_mem_forget, s.report.know_mem_retain
        ));
    }
    text
}

fn unlearn_summary(outcome: &UnlearnOutcome, pipeline: &UnlearnConfig) -> serde_json::Value {
    let chance = uniform_chance(
        pipeline.corpus.vocab_size,
        outcome
            .forget
            .secrets
            .first()
            .map(|s| s.continuation.len())
            .unwrap_or(1),
    );
    let best = select_best(&outcome.snapshots, 3.0 * chance).map(|s| {
        json!({
            "step": s.step,
            "verb_mem": s.report.verb_mem,
            "know_mem_forget": s.report.know_mem_forget,
            "know_mem_retain": s.report.know_mem_retain,
        })
    });
    json!({
        "status": status_str(outcome.trace.meta.status),
        "chance": chance,
        "before": outcome.before,
        "after": outcome.after,
        "best_snapshot_rule": "max retain metric subject to forget metric <= 3x chance",
        "best_snapshot": best,
    })
}

fn persist_unlearn(outcome: &UnlearnOutcome, pipeline: &UnlearnConfig, dir: &Path) -> Result<()> {
    write_trace(&outcome.trace, &dir.join("trace.csv"))?;
    fs::write(dir.join("snapshots.csv"), snapshots_csv(outcome))?;
    write_sequences(&outcome.retain, &dir.join("retain.txt"))?;
    write_sequences(&outcome.forget, &dir.join("forget.txt"))?;
    write_secrets(&outcome.forget.secrets, &dir.join("secrets.tsv"))?;
    write_json(&dir.join("summary.json"), &unlearn_summary(outcome, pipeline))?;
    Ok(())
}

fn run_unlearn(config: &UnlearnExperimentConfig, out_dir: &Path) -> Result<ExitStatus> {
    let outcome = unlearn_pipeline(&config.pipeline, None)?;
    persist_unlearn(&outcome, &config.pipeline, out_dir)?;
    Ok(exit_of(outcome.trace.meta.status))
}

fn run_lambda_sweep(config: &LambdaSweepConfig, out_dir: &Path) -> Result<ExitStatus> {
    let mut grid = String::from(
        "cell,lambda,before_know_mem_forget,before_know_mem_retain,after_know_mem_forget,after_know_mem_retain,after_verb_mem\n",
    );
    let mut worst = ExitStatus::Success;
    for (idx, &lambda) in config.lambdas.iter().enumerate() {
        let mut cell = config.pipeline.clone();
        cell.rule = UpdateRule::weighted_sum(lambda);
        cell.forget_loss = match cell.forget_loss {
            // the weighted-sum baselines pair the likelihood forget loss with
            // cross-entropy retain (the GradDiff family)
            f @ (blur_core::losses::LossKind::GaForget
            | blur_core::losses::LossKind::NpoForget { .. }
            | blur_core::losses::LossKind::SimNpoForget { .. }) => f,
            _ => blur_core::losses::LossKind::GaForget,
        };
        let cell_dir = out_dir.join(format!("cell_{idx:03}_lambda_{lambda}"));
        fs::create_dir_all(&cell_dir)?;
        let outcome = unlearn_pipeline(&cell, None)?;
        persist_unlearn(&outcome, &cell, &cell_dir)?;
        if outcome.trace.meta.status != RunStatus::Completed {
            worst = ExitStatus::NumericalAbort;
        }
        grid.push_str(&format!(
            "{idx},{lambda},{},{},{},{},{}\n",
            outcome.before.know_mem_forget,
            outcome.before.know_mem_retain,
            outcome.after.know_mem_forget,
            outcome.after.know_mem_retain,
            outcome.after.verb_mem,
        ));
    }
    fs::write(out_dir.join("grid.csv"), grid)?;
    Ok(worst)
}

fn run_gamma_beta_grid(config: &GammaBetaGridConfig, out_dir: &Path) -> Result<ExitStatus> {
    let mut grid = String::from(
        "cell,gamma,beta,after_know_mem_forget,after_know_mem_retain,after_verb_mem\n",
    );
    let mut worst = ExitStatus::Success;
    let mut idx = 0usize;
    for &gamma in &config.gammas {
        for &beta in &config.betas {
            let mut cell = config.pipeline.clone();
            cell.rule = UpdateRule::blur(gamma);
            cell.forget_loss = blur_core::losses::LossKind::NpoForget { beta };
            let cell_dir = out_dir.join(format!("cell_{idx:03}_gamma_{gamma}_beta_{beta}"));
            fs::create_dir_all(&cell_dir)?;
            let outcome = unlearn_pipeline(&cell, None)?;
            persist_unlearn(&outcome, &cell, &cell_dir)?;
            if outcome.trace.meta.status != RunStatus::Completed {
                worst = ExitStatus::NumericalAbort;
            }
            grid.push_str(&format!(
                "{idx},{gamma},{beta},{},{},{}\n",
                outcome.after.know_mem_forget,
                outcome.after.know_mem_retain,
                outcome.after.verb_mem,
            ));
            idx += 1;
        }
    }
    fs::write(out_dir.join("grid.csv"), grid)?;
    Ok(worst)
}

fn sign_changes(values: impl Iterator<Item = Option<f64>>) -> usize {
    let mut changes = 0;
    let mut last: Option<f64> = None;
    for v in values.flatten() {
        if let Some(prev) = last {
            if prev * v < 0.0 {
                changes += 1;
            }
        }
        last = Some(v);
    }
    changes
}

/// Paired weighted-sum and bilevel runs on the same finetuned model, for the
/// alignment-trajectory comparison.
fn run_alignment_demo(config: &AlignmentDemoConfig, out_dir: &Path) -> Result<ExitStatus> {
    let mut ws = config.pipeline.clone();
    ws.rule = UpdateRule::weighted_sum(config.lambda);
    ws.forget_loss = blur_core::losses::LossKind::GaForget;
    let ws_out = unlearn_pipeline(&ws, None)?;
    write_trace(&ws_out.trace, &out_dir.join("weighted_sum_trace.csv"))?;

    let mut bl = config.pipeline.clone();
    bl.rule = UpdateRule::blur(config.gamma);
    let bl_out = unlearn_pipeline(&bl, None)?;
    write_trace(&bl_out.trace, &out_dir.join("blur_trace.csv"))?;

    let ws_changes = sign_changes(ws_out.trace.records.iter().map(|r| r.align_f));
    let bl_changes = sign_changes(bl_out.trace.records.iter().map(|r| r.align_f));
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "weighted_sum_align_f_sign_changes": ws_changes,
            "blur_align_f_sign_changes": bl_changes,
            "lambda": config.lambda,
            "gamma": config.gamma,
        }),
    )?;
    if ws_out.trace.meta.status != RunStatus::Completed
        || bl_out.trace.meta.status != RunStatus::Completed
    {
        return Ok(ExitStatus::NumericalAbort);
    }
    Ok(ExitStatus::Success)
}

fn run_cosine_demo(config: &CosineDemoConfig, out_dir: &Path) -> Result<ExitStatus> {
    let mut ws = config.pipeline.clone();
    ws.rule = UpdateRule::weighted_sum(config.lambda);
    let outcome = unlearn_pipeline(&ws, None)?;
    write_trace(&outcome.trace, &out_dir.join("trace.csv"))?;
    let cosines: Vec<f64> = outcome
        .trace
        .records
        .iter()
        .filter_map(|r| r.cos_fr)
        .collect();
    let negative = cosines.iter().filter(|&&c| c < 0.0).count();
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "steps_with_cosine": cosines.len(),
            "fraction_negative": if cosines.is_empty() { 0.0 } else { negative as f64 / cosines.len() as f64 },
            "mean_cosine": if cosines.is_empty() { 0.0 } else { cosines.iter().sum::<f64>() / cosines.len() as f64 },
        }),
    )?;
    Ok(exit_of(outcome.trace.meta.status))
}
