//! Shared oracles for the integration tests: double-double (~31 significant
//! digits) arithmetic for extended-precision recomputations, a dense linear
//! solver, and seeded vector generation. Everything here is independent of
//! the library's own computation paths.

#![allow(dead_code)]

use blur_core::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s1, e1) = two_sum(self.hi, other.hi);
        let e = e1 + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s1, e);
        Dd { hi, lo }
    }

    pub fn add_f64(self, x: f64) -> Dd {
        self.add(Dd::from(x))
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(Dd {
            hi: -other.hi,
            lo: -other.lo,
        })
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, x: f64) -> Dd {
        self.mul(Dd::from(x))
    }

    /// One Newton refinement on the f64 quotient; accurate to ~1e-30 relative.
    pub fn div(self, other: Dd) -> Dd {
        let q0 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q0));
        let q1 = r.hi / other.hi;
        let r2 = r.sub(other.mul_f64(q1));
        let q2 = r2.hi / other.hi;
        let (hi, lo) = quick_two_sum(q0, q1 + q2);
        Dd { hi, lo }
    }
}

/// Extended-precision dot product.
pub fn dd_dot(a: &[f64], b: &[f64]) -> Dd {
    assert_eq!(a.len(), b.len());
    let mut acc = Dd::ZERO;
    for (x, y) in a.iter().zip(b) {
        let (p, e) = two_prod(*x, *y);
        acc = acc.add(Dd { hi: p, lo: e });
    }
    acc
}

/// Extended-precision recomputation of the orthogonalized update direction
/// `gamma * g_f + g_r - (<g_f,g_r>/||g_f||^2) * g_f`.
pub fn dd_blur_direction(g_f: &[f64], g_r: &[f64], gamma: f64) -> Vec<f64> {
    let ratio = dd_dot(g_f, g_r).div(dd_dot(g_f, g_f));
    let coeff = Dd::from(gamma).sub(ratio);
    g_f.iter()
        .zip(g_r)
        .map(|(f, r)| coeff.mul_f64(*f).add_f64(*r).value())
        .collect()
}

/// Extended-precision cosine similarity.
pub fn dd_cosine(a: &[f64], b: &[f64]) -> f64 {
    let num = dd_dot(a, b);
    let den = (dd_dot(a, a).value() * dd_dot(b, b).value()).sqrt();
    num.value() / den
}

/// Gaussian elimination with partial pivoting; panics on singular systems.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        assert!(a[pivot][col].abs() > 1e-12, "singular system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub fn gauss_pv(rng: &mut ChaCha8Rng, dim: usize) -> ParamVector {
    ParamVector::new(gauss_vec(rng, dim)).unwrap()
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1e-300)
}
