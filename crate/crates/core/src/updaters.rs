//! Descent-direction kernels and the iteration loop.
//!
//! Two rules are provided. The weighted-sum rule descends
//! `grad f + lambda * grad r` with a fixed weight. The BLUR rule keeps a
//! scaled forget gradient and adds only the component of the retain gradient
//! orthogonal to it:
//!
//! ```text
//! u = gamma * g_f + g_r - (<g_f, g_r> / ||g_f||^2) * g_f
//! ```
//!
//! which guarantees `<g_f, u> = gamma * ||g_f||^2` at every step, so the
//! update never trades forget progress away regardless of how the two
//! gradients conflict.

use crate::diagnostics::{
    alignment, cosine, RunStatus, RunTrace, StepRecord, TraceMeta, DIAGNOSTIC_FLOOR,
};
use crate::error::{Error, Result};
use crate::objectives::BilevelProblem;
use crate::vecmath::{dot, norm_sq, step_from, ParamVector};

/// Default norm floor below which the BLUR projection is considered
/// degenerate and the rule steps on the retain gradient alone.
pub const DEFAULT_GRAD_FLOOR: f64 = 1e-12;
/// Default forget-gradient scale.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Default retain weight for the weighted-sum rule.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Strategy selecting the per-step descent direction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    Blur {
        gamma: f64,
        #[serde(default = "default_floor")]
        grad_floor: f64,
    },
    WeightedSum {
        lambda: f64,
    },
}

fn default_floor() -> f64 {
    DEFAULT_GRAD_FLOOR
}

impl UpdateRule {
    pub fn blur(gamma: f64) -> Self {
        UpdateRule::Blur {
            gamma,
            grad_floor: DEFAULT_GRAD_FLOOR,
        }
    }

    pub fn weighted_sum(lambda: f64) -> Self {
        UpdateRule::WeightedSum { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UpdateRule::Blur { gamma, grad_floor } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(Error::invalid(
                        "gamma",
                        format!("must be positive, got {gamma}"),
                    ));
                }
                if !(*grad_floor >= 0.0) || !grad_floor.is_finite() {
                    return Err(Error::invalid(
                        "grad_floor",
                        format!("must be nonnegative, got {grad_floor}"),
                    ));
                }
            }
            UpdateRule::WeightedSum { lambda } => {
                if !(*lambda >= 0.0) || !lambda.is_finite() {
                    return Err(Error::invalid(
                        "lambda",
                        format!("must be nonnegative, got {lambda}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Floor used when deciding whether direction diagnostics are defined.
    pub fn grad_floor(&self) -> f64 {
        match self {
            UpdateRule::Blur { grad_floor, .. } => *grad_floor,
            UpdateRule::WeightedSum { .. } => DIAGNOSTIC_FLOOR,
        }
    }
}

/// Step-size schedule. Both kinds hold the step constant within a run; the
/// `Theorem` kind derives it from the problem constants and the horizon:
/// `eta = (2 / c1) * sqrt(c / l_f) / sqrt(t)` with `c1 = (2 + gamma) * c`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { eta: f64 },
    Theorem { c: f64, c1: f64, l_f: f64, t: usize },
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Self {
        StepSchedule::Constant { eta }
    }

    /// Builds the horizon-scaled schedule for a BLUR rule with scale `gamma`.
    pub fn theorem_for(c: f64, l_f: f64, gamma: f64, t: usize) -> Self {
        StepSchedule::Theorem {
            c,
            c1: (2.0 + gamma) * c,
            l_f,
            t,
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            StepSchedule::Constant { eta } => *eta,
            StepSchedule::Theorem { c, c1, l_f, t } => {
                (2.0 / c1) * (c / l_f).sqrt() / (*t as f64).sqrt()
            }
        }
    }

    fn validate(&self, rule: &UpdateRule, steps: usize) -> Result<()> {
        match self {
            StepSchedule::Constant { eta } => {
                // eta == 0 is allowed: a null step leaves theta unchanged.
                if !(*eta >= 0.0) || !eta.is_finite() {
                    return Err(Error::invalid(
                        "eta",
                        format!("must be nonnegative, got {eta}"),
                    ));
                }
            }
            StepSchedule::Theorem { c, c1, l_f, t } => {
                if !(*c > 0.0) || !(*l_f > 0.0) {
                    return Err(Error::invalid(
                        "schedule",
                        format!("constants must be positive (c={c}, l_f={l_f})"),
                    ));
                }
                let gamma = match rule {
                    UpdateRule::Blur { gamma, .. } => *gamma,
                    UpdateRule::WeightedSum { .. } => {
                        return Err(Error::invalid(
                            "schedule",
                            "theorem schedule applies to the blur rule only",
                        ));
                    }
                };
                let expect = (2.0 + gamma) * c;
                if (c1 - expect).abs() > 1e-9 * expect.abs() {
                    return Err(Error::invalid(
                        "c1",
                        format!("must equal (2 + gamma) * c = {expect}, got {c1}"),
                    ));
                }
                if *t != steps {
                    return Err(Error::invalid(
                        "t",
                        format!("schedule horizon {t} does not match run length {steps}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The orthogonalized update direction and the per-step multiplier estimate.
///
/// Above the floor, `u = gamma*g_f + g_r - proj_{g_f}(g_r)` and
/// `zeta_hat = gamma - <g_f,g_r>/||g_f||^2`; at or below it the rule falls
/// back to a pure retain step (`u = g_r`, no multiplier).
pub fn blur_direction(
    g_f: &ParamVector,
    g_r: &ParamVector,
    gamma: f64,
    grad_floor: f64,
) -> (ParamVector, Option<f64>) {
    assert_eq!(g_f.dim(), g_r.dim(), "blur_direction: dimension mismatch");
    let nf2 = norm_sq(g_f);
    if nf2.sqrt() <= grad_floor {
        return (g_r.clone(), None);
    }
    let ratio = dot(g_f, g_r) / nf2;
    // two projection passes: the second removes the rounding residual left by
    // the first, keeping <g_f, u> = gamma ||g_f||^2 tight even when the
    // retain gradient dwarfs the forget gradient
    let w = crate::vecmath::axpy_combine(&[1.0, -ratio], &[g_r, g_f]);
    let correction = dot(g_f, &w) / nf2;
    let u = crate::vecmath::axpy_combine(&[gamma - correction, 1.0], &[g_f, &w]);
    (u, Some(gamma - ratio))
}

/// `u_hat = g_f + lambda * g_r`.
pub fn weighted_sum_direction(g_f: &ParamVector, g_r: &ParamVector, lambda: f64) -> ParamVector {
    assert_eq!(
        g_f.dim(),
        g_r.dim(),
        "weighted_sum_direction: dimension mismatch"
    );
    crate::vecmath::axpy_combine(&[1.0, lambda], &[g_f, g_r])
}

/// Receives each step's record together with the post-step iterate; lets the
/// harness stream traces to disk and lets tests inspect the trajectory.
pub trait StepSink {
    fn on_step(&mut self, record: &StepRecord, theta_after: &ParamVector) -> Result<()>;
}

/// Sink that drops everything.
pub struct NullSink;

impl StepSink for NullSink {
    fn on_step(&mut self, _record: &StepRecord, _theta_after: &ParamVector) -> Result<()> {
        Ok(())
    }
}

impl<F> StepSink for F
where
    F: FnMut(&StepRecord, &ParamVector) -> Result<()>,
{
    fn on_step(&mut self, record: &StepRecord, theta_after: &ParamVector) -> Result<()> {
        self(record, theta_after)
    }
}

/// Result of an iteration run: the final iterate and the recorded trace.
/// On a numerical abort the trace is partial and its status says so.
pub struct RunOutcome {
    pub theta: ParamVector,
    pub trace: RunTrace,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.trace.meta.status == RunStatus::Completed
    }
}

/// Iterates `theta(t+1) = theta(t) - eta * direction(theta(t))` for `steps`
/// steps, recording one [`StepRecord`] per iteration.
///
/// Full-batch deterministic gradients throughout: given identical inputs the
/// trajectory and trace are bit-identical. Non-finite losses, gradients, or
/// iterates abort the run, returning the partial trace with
/// [`RunStatus::AbortedNonFinite`].
pub fn run(
    problem: &BilevelProblem,
    theta0: &ParamVector,
    rule: &UpdateRule,
    schedule: &StepSchedule,
    steps: usize,
    sink: &mut dyn StepSink,
) -> Result<RunOutcome> {
    rule.validate()?;
    schedule.validate(rule, steps)?;
    if steps == 0 {
        return Err(Error::invalid("steps", "must run at least one step"));
    }
    if theta0.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: theta0.dim(),
        });
    }

    let eta = schedule.eta();
    let floor = rule.grad_floor();
    let mut theta = theta0.clone();
    let mut trace = RunTrace {
        records: Vec::with_capacity(steps),
        meta: TraceMeta {
            rule: Some(rule.clone()),
            schedule: Some(schedule.clone()),
            problem_id: None,
            seed: None,
            status: RunStatus::Completed,
        },
    };

    for step in 0..steps {
        let f_val = problem.forget.value(&theta);
        let r_val = problem.retain.value(&theta);
        if !f_val.is_finite() || !r_val.is_finite() {
            trace.meta.status = RunStatus::AbortedNonFinite;
            return Ok(RunOutcome { theta, trace });
        }
        let g_f = problem.forget.gradient(&theta);
        let g_r = problem.retain.gradient(&theta);

        let (direction, zeta_hat) = match rule {
            UpdateRule::Blur { gamma, grad_floor } => {
                blur_direction(&g_f, &g_r, *gamma, *grad_floor)
            }
            UpdateRule::WeightedSum { lambda } => {
                // zeta recorded as lambda so weighted-sum traces stay
                // comparable with BLUR traces in the same columns.
                (weighted_sum_direction(&g_f, &g_r, *lambda), Some(*lambda))
            }
        };

        let nf = norm_sq(&g_f).sqrt();
        let nr = norm_sq(&g_r).sqrt();
        let record = StepRecord {
            step,
            f_val,
            r_val,
            grad_f_norm: nf,
            grad_r_norm: nr,
            u_norm: norm_sq(&direction).sqrt(),
            cos_fr: if nf > floor && nr > floor {
                cosine(&g_f, &g_r)
            } else {
                None
            },
            align_f: if nf > floor {
                alignment(&g_f, &direction)
            } else {
                None
            },
            align_r: if nr > floor {
                alignment(&g_r, &direction)
            } else {
                None
            },
            zeta_hat,
            eta,
        };

        match step_from(&theta, eta, &direction) {
            Ok(next) => {
                theta = next;
                sink.on_step(&record, &theta)?;
                trace.records.push(record);
            }
            Err(_) => {
                trace.meta.status = RunStatus::AbortedNonFinite;
                return Ok(RunOutcome { theta, trace });
            }
        }
    }

    Ok(RunOutcome { theta, trace })
}
