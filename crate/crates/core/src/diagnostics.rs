//! Per-step instrumentation: alignment, cosine similarity, stationarity
//! residuals, temporal averages, and rate-law slope fitting.

use crate::error::{Error, Result};
use crate::updaters::{StepSchedule, UpdateRule};
use crate::vecmath::{dot, norm_sq, ParamVector};

/// Norm threshold below which direction-dependent diagnostics are omitted.
pub const DIAGNOSTIC_FLOOR: f64 = 1e-12;

/// One iteration of a run: losses, gradient norms, and direction diagnostics.
///
/// Optional fields are absent when a gradient norm sits at or below the floor
/// (the corresponding ratio is undefined there).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub f_val: f64,
    pub r_val: f64,
    pub grad_f_norm: f64,
    pub grad_r_norm: f64,
    pub u_norm: f64,
    pub cos_fr: Option<f64>,
    pub align_f: Option<f64>,
    pub align_r: Option<f64>,
    pub zeta_hat: Option<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    AbortedNonFinite,
}

/// Context a trace was produced under. Traces read back from disk carry only
/// the records, so every field here is optional except the status.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TraceMeta {
    pub rule: Option<UpdateRule>,
    pub schedule: Option<StepSchedule>,
    pub problem_id: Option<String>,
    pub seed: Option<u64>,
    pub status: RunStatus,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self {
            rule: None,
            schedule: None,
            problem_id: None,
            seed: None,
            status: RunStatus::Completed,
        }
    }
}

/// Ordered per-step records plus run context.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    pub meta: TraceMeta,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Normalized alignment `<g, d> / ||g||^2`: positive when stepping along `-d`
/// decreases the objective whose gradient is `g`. `None` for zero `g`.
pub fn alignment(g: &ParamVector, d: &ParamVector) -> Option<f64> {
    let n2 = norm_sq(g);
    if n2 <= DIAGNOSTIC_FLOOR * DIAGNOSTIC_FLOOR {
        return None;
    }
    Some(dot(g, d) / n2)
}

/// Cosine similarity clamped to [-1, 1] against rounding. `None` when either
/// vector is (numerically) zero.
pub fn cosine(g_f: &ParamVector, g_r: &ParamVector) -> Option<f64> {
    let nf = norm_sq(g_f).sqrt();
    let nr = norm_sq(g_r).sqrt();
    if nf <= DIAGNOSTIC_FLOOR || nr <= DIAGNOSTIC_FLOOR {
        return None;
    }
    Some((dot(g_f, g_r) / (nf * nr)).clamp(-1.0, 1.0))
}

/// Residuals of the two stationarity targets: `||g_r + zeta * g_f||` and
/// `||g_f||`, both computed directly from their definitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub lower_stationarity: f64,
}

pub fn kkt_residuals(g_f: &ParamVector, g_r: &ParamVector, zeta_hat: f64) -> KktResiduals {
    assert_eq!(g_f.dim(), g_r.dim(), "kkt_residuals: dimension mismatch");
    let mut acc = 0.0;
    for (rf, rr) in g_f.iter().zip(g_r.iter()) {
        let v = rr + zeta_hat * rf;
        acc += v * v;
    }
    KktResiduals {
        stationarity: acc.sqrt(),
        lower_stationarity: norm_sq(g_f).sqrt(),
    }
}

/// `(1/T) sum ||grad f||^2` and `(1/T) sum (||grad f||^2 + ||u||^2)` over the
/// recorded steps.
pub fn temporal_averages(trace: &RunTrace) -> Result<(f64, f64)> {
    if trace.records.is_empty() {
        return Err(Error::EmptyInput {
            what: "temporal_averages requires a nonempty trace",
        });
    }
    let t = trace.records.len() as f64;
    let mut sum_gf2 = 0.0;
    let mut sum_u2 = 0.0;
    for rec in &trace.records {
        sum_gf2 += rec.grad_f_norm * rec.grad_f_norm;
        sum_u2 += rec.u_norm * rec.u_norm;
    }
    Ok((sum_gf2 / t, (sum_gf2 + sum_u2) / t))
}

/// Least-squares slope of `log(avg)` against `log(T)`.
///
/// Requires at least three strictly positive points.
pub fn rate_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::invalid(
            "points",
            format!("rate fit needs >= 3 points, got {}", points.len()),
        ));
    }
    if let Some((t, v)) = points.iter().find(|(t, v)| !(*t > 0.0) || !(*v > 0.0)) {
        return Err(Error::invalid(
            "points",
            format!("rate fit needs positive values, got ({t}, {v})"),
        ));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (t, v) in points {
        let x = t.ln();
        let y = v.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
