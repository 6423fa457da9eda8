//! Differentiable objectives and the analytic bilevel test problems.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vecmath::ParamVector;

/// A differentiable (or subdifferentiable) scalar objective with hand-derived
/// gradients. Evaluation is pure and thread-safe.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &ParamVector) -> f64;
    fn gradient(&self, theta: &ParamVector) -> ParamVector;
}

/// A lower-level (forget) and upper-level (retain) objective pair.
pub struct BilevelProblem {
    pub forget: Box<dyn Objective>,
    pub retain: Box<dyn Objective>,
    /// Optimal lower-level value, when known analytically.
    pub known_lower_opt: Option<f64>,
}

impl BilevelProblem {
    pub fn new(
        forget: Box<dyn Objective>,
        retain: Box<dyn Objective>,
        known_lower_opt: Option<f64>,
    ) -> Result<Self> {
        if forget.dim() != retain.dim() {
            return Err(Error::DimensionMismatch {
                expected: forget.dim(),
                got: retain.dim(),
            });
        }
        Ok(Self {
            forget,
            retain,
            known_lower_opt,
        })
    }

    pub fn dim(&self) -> usize {
        self.forget.dim()
    }
}

/// Identifiers for the built-in analytic problems, addressable from harness
/// configs by name.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticProblemId {
    Example1Exact,
    Example1Smoothed {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    QuadraticPair {
        seed: u64,
    },
    NonconvexBench {
        seed: u64,
    },
}

fn default_mu() -> f64 {
    DEFAULT_SMOOTHING_RADIUS
}

/// Default Huber radius for the smoothed 1-d problem.
pub const DEFAULT_SMOOTHING_RADIUS: f64 = 0.05;

/// Dimension of the seeded quadratic pair.
pub const QUADRATIC_PAIR_DIM: usize = 6;
/// Row count of the quadratic forget map; the forget-optimal set is an affine
/// subspace of dimension `QUADRATIC_PAIR_DIM - QUADRATIC_PAIR_RANK`.
pub const QUADRATIC_PAIR_RANK: usize = 3;

/// Dimension of the nonconvex benchmark pair.
pub const BENCH_DIM: usize = 6;
/// Half-width of the soft clamping box.
pub const BENCH_BOX: f64 = 3.0;
/// Uniform bound on |f|, |r|, ||grad f||, ||grad r|| for the benchmark.
pub const BENCH_C: f64 = 7.0;
/// Gradient Lipschitz constant of the benchmark forget objective.
pub const BENCH_LIPSCHITZ: f64 = 1.4;

// ---------------------------------------------------------------------------
// Example 1: lower w(t) = |t-1| + |t+1|, upper h(t) = (t-2)^2.
// ---------------------------------------------------------------------------

/// `w(t) = |t-1| + |t+1|`, minimized (value 2) exactly on [-1, 1].
///
/// The reported gradient is the minimum-norm subgradient: 0 on the whole flat
/// region including both kinks, +-2 outside.
pub struct Example1Lower;

impl Objective for Example1Lower {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), 1, "Example1Lower is one-dimensional");
        let t = theta[0];
        (t - 1.0).abs() + (t + 1.0).abs()
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), 1, "Example1Lower is one-dimensional");
        let t = theta[0];
        let g = if t > 1.0 {
            2.0
        } else if t < -1.0 {
            -2.0
        } else {
            0.0
        };
        ParamVector::new(vec![g]).expect("finite subgradient")
    }
}

/// `h(t) = (t-2)^2`.
pub struct Example1Upper;

impl Objective for Example1Upper {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), 1, "Example1Upper is one-dimensional");
        let t = theta[0];
        (t - 2.0) * (t - 2.0)
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), 1, "Example1Upper is one-dimensional");
        ParamVector::new(vec![2.0 * (theta[0] - 2.0)]).expect("finite gradient")
    }
}

fn huber(z: f64, mu: f64) -> f64 {
    if z.abs() <= mu {
        z * z / (2.0 * mu) + mu / 2.0
    } else {
        z.abs()
    }
}

fn huber_deriv(z: f64, mu: f64) -> f64 {
    if z.abs() <= mu {
        z / mu
    } else {
        z.signum()
    }
}

/// Huber-smoothed variant of [`Example1Lower`]: each |z| term becomes
/// `z^2/(2 mu) + mu/2` inside radius `mu`. C^1 with a `2/mu`-Lipschitz
/// gradient; its flat minimum (value 2) is the shrunken interval
/// `[-1 + mu, 1 - mu]`.
pub struct Example1SmoothedLower {
    mu: f64,
}

impl Example1SmoothedLower {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Objective for Example1SmoothedLower {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), 1, "Example1SmoothedLower is one-dimensional");
        let t = theta[0];
        huber(t - 1.0, self.mu) + huber(t + 1.0, self.mu)
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), 1, "Example1SmoothedLower is one-dimensional");
        let t = theta[0];
        let g = huber_deriv(t - 1.0, self.mu) + huber_deriv(t + 1.0, self.mu);
        ParamVector::new(vec![g]).expect("finite gradient")
    }
}

// ---------------------------------------------------------------------------
// Quadratic pair: f = ||A(theta - a)||^2, r = ||B(theta - b)||^2.
// ---------------------------------------------------------------------------

/// `||M(theta - center)||^2` with gradient `2 M^T M (theta - center)`.
pub struct QuadraticObjective {
    rows: Vec<Vec<f64>>, // M, one Vec per row
    center: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(rows: Vec<Vec<f64>>, center: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput {
                what: "quadratic objective needs at least one row",
            });
        }
        let dim = center.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: rows.iter().map(|r| r.len()).find(|&l| l != dim).unwrap_or(0),
            });
        }
        Ok(Self { rows, center })
    }

    fn residual(&self, theta: &ParamVector) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(theta.as_slice())
                    .zip(&self.center)
                    .map(|((m, t), c)| m * (t - c))
                    .sum::<f64>()
            })
            .collect()
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), self.dim());
        self.residual(theta).iter().map(|v| v * v).sum()
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim());
        let res = self.residual(theta);
        let mut g = vec![0.0; self.dim()];
        for (row, r) in self.rows.iter().zip(&res) {
            for (gi, m) in g.iter_mut().zip(row) {
                *gi += 2.0 * m * r;
            }
        }
        ParamVector::new(g).expect("finite gradient")
    }
}

/// Orthonormal basis of the null space of `rows` via Gram-Schmidt against the
/// row space; used to place the retain minimizer inside the forget-optimal
/// subspace so the pair admits an exact stationary point.
fn null_space_basis(rows: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let orthonormalize = |v: &[f64], basis: &[Vec<f64>]| -> Option<Vec<f64>> {
        let mut w = v.to_vec();
        for b in basis {
            let proj: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= proj * bi;
            }
        }
        let n: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-10 {
            return None;
        }
        for wi in w.iter_mut() {
            *wi /= n;
        }
        Some(w)
    };
    // span the row space first, then extend with coordinate vectors
    for row in rows {
        if let Some(q) = orthonormalize(row, &basis) {
            basis.push(q);
        }
    }
    let row_rank = basis.len();
    for i in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        if let Some(q) = orthonormalize(&e, &basis) {
            basis.push(q);
        }
    }
    basis.split_off(row_rank)
}

struct QuadraticParts {
    a_rows: Vec<Vec<f64>>,
    b_rows: Vec<Vec<f64>>,
    a_center: Vec<f64>,
    b_center: Vec<f64>,
}

const QUAD_SEED_TAG: u64 = 0x71ad_1234_5678_9abc;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms; plenty for test-problem generation.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn quadratic_parts(seed: u64) -> QuadraticParts {
    let d = QUADRATIC_PAIR_DIM;
    let k = QUADRATIC_PAIR_RANK;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ QUAD_SEED_TAG);

    let mut a_rows = vec![vec![0.0; d]; k];
    for (i, row) in a_rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.7 * gaussian(&mut rng) + if i == j { 0.5 } else { 0.0 };
        }
    }
    let mut b_rows = vec![vec![0.0; d]; d];
    for (i, row) in b_rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.2 * gaussian(&mut rng) + if i == j { 1.0 } else { 0.0 };
        }
    }
    let a_center: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();

    let null = null_space_basis(&a_rows, d);
    let coeffs: Vec<f64> = (0..null.len()).map(|_| gaussian(&mut rng)).collect();
    let mut b_center = a_center.clone();
    for (c, nvec) in coeffs.iter().zip(&null) {
        for (bc, nv) in b_center.iter_mut().zip(nvec) {
            *bc += c * nv;
        }
    }
    QuadraticParts {
        a_rows,
        b_rows,
        a_center,
        b_center,
    }
}

/// Seeded quadratic forget/retain pair.
///
/// The forget map has rank [`QUADRATIC_PAIR_RANK`], so its optimal set is an
/// affine subspace, and the retain center is placed inside that subspace: the
/// pair has an exact point where both the lower-level gradient and the
/// stationarity residual vanish.
pub fn quadratic_pair(seed: u64) -> Result<BilevelProblem> {
    let parts = quadratic_parts(seed);
    BilevelProblem::new(
        Box::new(QuadraticObjective::new(parts.a_rows, parts.a_center)?),
        Box::new(QuadraticObjective::new(parts.b_rows, parts.b_center)?),
        Some(0.0),
    )
}

/// The bilevel solution of the seeded quadratic pair: the retain center,
/// which lies inside the forget-optimal subspace by construction.
pub fn quadratic_pair_solution(seed: u64) -> ParamVector {
    ParamVector::new(quadratic_parts(seed).b_center).expect("finite center")
}

/// Seeded start point for quadratic-pair runs, unit-Gaussian off the solution.
pub fn quadratic_pair_start(seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ QUAD_SEED_TAG ^ 0xffff);
    let b = quadratic_parts(seed).b_center;
    ParamVector::new(b.into_iter().map(|x| x + gaussian(&mut rng)).collect())
        .expect("finite start point")
}

// ---------------------------------------------------------------------------
// Nonconvex benchmark: coordinate-wise sinusoid plus a weak quadratic
// envelope, soft-clamped to a box so values and gradients are bounded.
// ---------------------------------------------------------------------------

/// `sum_i sin(c(t_i) + phase_i) + 0.01 (c(t_i) - shift_i)^2` with
/// `c(z) = B tanh(z / B)`.
pub struct BenchObjective {
    phases: Vec<f64>,
    shifts: Vec<f64>,
    box_half_width: f64,
}

impl BenchObjective {
    pub fn new(phases: Vec<f64>, shifts: Vec<f64>, box_half_width: f64) -> Result<Self> {
        if phases.len() != shifts.len() {
            return Err(Error::DimensionMismatch {
                expected: phases.len(),
                got: shifts.len(),
            });
        }
        if phases.is_empty() {
            return Err(Error::EmptyInput {
                what: "bench objective needs at least one coordinate",
            });
        }
        Ok(Self {
            phases,
            shifts,
            box_half_width,
        })
    }

    fn clamp(&self, z: f64) -> (f64, f64) {
        let b = self.box_half_width;
        let t = (z / b).tanh();
        (b * t, 1.0 - t * t)
    }
}

impl Objective for BenchObjective {
    fn dim(&self) -> usize {
        self.phases.len()
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), self.dim());
        theta
            .iter()
            .zip(&self.phases)
            .zip(&self.shifts)
            .map(|((&t, &p), &s)| {
                let (c, _) = self.clamp(t);
                (c + p).sin() + 0.01 * (c - s) * (c - s)
            })
            .sum()
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim());
        let g: Vec<f64> = theta
            .iter()
            .zip(&self.phases)
            .zip(&self.shifts)
            .map(|((&t, &p), &s)| {
                let (c, dc) = self.clamp(t);
                ((c + p).cos() + 0.02 * (c - s)) * dc
            })
            .collect();
        ParamVector::new(g).expect("finite gradient")
    }
}

/// Seeded smooth nonconvex pair with bounded gradients (bound [`BENCH_C`]).
pub fn nonconvex_bench(seed: u64) -> Result<BilevelProblem> {
    let d = BENCH_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe_7c4_0001);
    let two_pi = 2.0 * std::f64::consts::PI;
    let phase = Uniform::new(0.0, two_pi);
    let shift = Uniform::new(-1.0, 1.0);
    let phases_f: Vec<f64> = (0..d).map(|_| phase.sample(&mut rng)).collect();
    let phases_r: Vec<f64> = (0..d).map(|_| phase.sample(&mut rng)).collect();
    let shifts_r: Vec<f64> = (0..d).map(|_| shift.sample(&mut rng)).collect();
    BilevelProblem::new(
        Box::new(BenchObjective::new(phases_f, vec![0.0; d], BENCH_BOX)?),
        Box::new(BenchObjective::new(phases_r, shifts_r, BENCH_BOX)?),
        None,
    )
}

/// Seeded start point for benchmark runs, inside the central basin region.
pub fn bench_start(seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe_7c4_0500);
    let u = Uniform::new(-1.0, 1.0);
    ParamVector::new((0..BENCH_DIM).map(|_| u.sample(&mut rng)).collect())
        .expect("finite start point")
}

/// Builds a named analytic problem with `known_lower_opt` populated where a
/// closed form exists.
pub fn make_problem(id: &AnalyticProblemId) -> Result<BilevelProblem> {
    match id {
        AnalyticProblemId::Example1Exact => BilevelProblem::new(
            Box::new(Example1Lower),
            Box::new(Example1Upper),
            Some(2.0),
        ),
        AnalyticProblemId::Example1Smoothed { mu } => BilevelProblem::new(
            Box::new(Example1SmoothedLower::new(*mu)?),
            Box::new(Example1Upper),
            Some(2.0),
        ),
        AnalyticProblemId::QuadraticPair { seed } => quadratic_pair(*seed),
        AnalyticProblemId::NonconvexBench { seed } => nonconvex_bench(*seed),
    }
}

/// Wraps a pair of closures as an [`Objective`]; handy for tests and ad-hoc
/// gradient checks.
pub struct FnObjective<F, G>
where
    F: Fn(&ParamVector) -> f64 + Send + Sync,
    G: Fn(&ParamVector) -> ParamVector + Send + Sync,
{
    dim: usize,
    value_fn: F,
    grad_fn: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&ParamVector) -> f64 + Send + Sync,
    G: Fn(&ParamVector) -> ParamVector + Send + Sync,
{
    pub fn new(dim: usize, value_fn: F, grad_fn: G) -> Self {
        Self {
            dim,
            value_fn,
            grad_fn,
        }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&ParamVector) -> f64 + Send + Sync,
    G: Fn(&ParamVector) -> ParamVector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        (self.value_fn)(theta)
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        (self.grad_fn)(theta)
    }
}
