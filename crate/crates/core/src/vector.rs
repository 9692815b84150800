//! Small dense-vector helpers over `f64` slices.

use crate::{Error, Result};

/// Norm below which a vector is treated as zero.
pub const MIN_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `acc += scale * v`
pub fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

pub fn scaled(v: &[f64], scale: f64) -> Vec<f64> {
    v.iter().map(|x| x * scale).collect()
}

/// Rescales `v` to unit L2 norm.
///
/// Vectors with norm at or below [`MIN_NORM`] are rejected rather than
/// mapped to an arbitrary direction.
pub fn normalize_embedding(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() || n <= MIN_NORM {
        return Err(Error::ZeroNorm { norm: n });
    }
    Ok(scaled(v, 1.0 / n))
}

/// Unweighted mean of equal-length vectors. Panics on an empty slice.
pub fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        axpy(&mut acc, 1.0, v);
    }
    let inv = 1.0 / vectors.len() as f64;
    acc.iter_mut().for_each(|x| *x *= inv);
    acc
}
