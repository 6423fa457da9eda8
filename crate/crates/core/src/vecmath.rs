//! Dense vector arithmetic for parameter vectors and gradients.
//!
//! All reductions use a fixed left-to-right summation order so that a run is
//! bit-reproducible given the same inputs.

use crate::error::{Error, Result};

/// A flat vector of 64-bit parameter coordinates.
///
/// Every constructor rejects non-finite entries; library code only ever holds
/// finite vectors, and update loops re-validate after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wraps `values`, rejecting NaN/Inf entries and zero length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput {
                what: "ParamVector requires at least one coordinate",
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("ParamVector coordinate {i}"),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "ParamVector dimension must be positive");
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new((0..dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Euclidean norm, via [`norm_sq`].
    pub fn norm(&self) -> f64 {
        norm_sq(self).sqrt()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Inner product with left-to-right accumulation.
///
/// Panics on dimension mismatch: that is a caller bug, not a recoverable
/// condition.
pub fn dot(a: &ParamVector, b: &ParamVector) -> f64 {
    assert_eq!(
        a.dim(),
        b.dim(),
        "dot: dimension mismatch ({} vs {})",
        a.dim(),
        b.dim()
    );
    let mut acc = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        acc += x * y;
    }
    acc
}

/// Squared Euclidean norm; zero exactly when the vector is zero.
pub fn norm_sq(a: &ParamVector) -> f64 {
    dot(a, a)
}

/// Linear combination `sum_i coeffs[i] * vecs[i]`.
///
/// Panics when the lists are empty, lengths differ, or the vectors do not
/// share a dimension.
pub fn axpy_combine(coeffs: &[f64], vecs: &[&ParamVector]) -> ParamVector {
    assert!(!coeffs.is_empty(), "axpy_combine: empty coefficient list");
    assert_eq!(
        coeffs.len(),
        vecs.len(),
        "axpy_combine: {} coefficients vs {} vectors",
        coeffs.len(),
        vecs.len()
    );
    let dim = vecs[0].dim();
    for v in vecs {
        assert_eq!(v.dim(), dim, "axpy_combine: dimension mismatch");
    }
    let mut out = vec![0.0; dim];
    for (c, v) in coeffs.iter().zip(vecs) {
        for (o, x) in out.iter_mut().zip(&v.values) {
            *o += c * x;
        }
    }
    ParamVector { values: out }
}

/// `theta - eta * u`, re-validated for finiteness.
///
/// Returns an error (rather than panicking) so that iteration loops can abort
/// with a partial trace when a step produces Inf/NaN.
pub fn step_from(theta: &ParamVector, eta: f64, u: &ParamVector) -> Result<ParamVector> {
    assert_eq!(theta.dim(), u.dim(), "step_from: dimension mismatch");
    let values: Vec<f64> = theta
        .values
        .iter()
        .zip(&u.values)
        .map(|(t, d)| t - eta * d)
        .collect();
    ParamVector::new(values)
}
