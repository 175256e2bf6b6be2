//! Small dense-vector helpers shared by every module.

/// Vectors whose Euclidean norm is within this distance of 1 are treated as
/// already unit length and left bit-for-bit untouched.
///
/// The slack is wide enough to absorb 32-bit storage rounding, so a dataset
/// that went through the binary format re-ingests without changing.
pub const UNIT_NORM_SLACK: f64 = 1e-6;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit norm unless it already is (within [`UNIT_NORM_SLACK`]).
///
/// Returns `false` when the vector has zero (or non-finite) norm.
pub fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = norm(v);
    if !n.is_finite() || n == 0.0 {
        return false;
    }
    if (n - 1.0).abs() > UNIT_NORM_SLACK {
        v.iter_mut().for_each(|x| *x /= n);
    }
    true
}

/// Unconditional division by the norm. Used where exact unit norm matters
/// more than bit stability (synthetic generation).
pub fn normalize_exact(v: &mut [f64]) -> bool {
    let n = norm(v);
    if !n.is_finite() || n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

pub fn is_unit(v: &[f64], tol: f64) -> bool {
    (norm(v) - 1.0).abs() <= tol
}
