//! Dense least squares via Householder QR.

use crate::error::{Error, Result};
use crate::num::Real;

/// Minimizes `‖A·c − y‖² + λ‖c‖²` for row-major `rows` (each of length `p`).
///
/// Solved as the stacked system `[A; √λ·I]·c ≈ [y; 0]` with Householder QR,
/// which avoids forming the normal equations.
pub fn ridge_least_squares<T: Real>(rows: &[Vec<T>], y: &[T], lambda: T) -> Result<Vec<T>> {
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.len() != y.len() || rows.iter().any(|r| r.len() != p) {
        return Err(Error::DegenerateFit("design matrix is empty or ragged".into()));
    }
    let m = rows.len() + p;
    // column-major copy of the stacked matrix
    let mut a = vec![T::zero(); m * p];
    for (i, r) in rows.iter().enumerate() {
        for j in 0..p {
            a[j * m + i] = r[j];
        }
    }
    let root = lambda.max(T::zero()).sqrt();
    for j in 0..p {
        a[j * m + rows.len() + j] = root;
    }
    let mut b: Vec<T> = y.to_vec();
    b.resize(m, T::zero());

    for k in 0..p {
        let col = &a[k * m..(k + 1) * m];
        let norm = col[k..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(Error::DegenerateFit(format!("column {k} is zero")));
        }
        let alpha = if col[k] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = col[k..].to_vec();
        v[0] -= alpha;
        let vv = v.iter().map(|&x| x * x).sum::<T>();
        if vv == T::zero() {
            continue;
        }
        for j in k..p {
            let c = &mut a[j * m + k..(j + 1) * m];
            let dot = v.iter().zip(c.iter()).map(|(&x, &y)| x * y).sum::<T>();
            let f = (dot + dot) / vv;
            for (ci, &vi) in c.iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
        let dot = v.iter().zip(&b[k..]).map(|(&x, &y)| x * y).sum::<T>();
        let f = (dot + dot) / vv;
        for (bi, &vi) in b[k..].iter_mut().zip(&v) {
            *bi -= f * vi;
        }
    }
    // back substitution on the upper triangle
    let mut c = vec![T::zero(); p];
    for k in (0..p).rev() {
        let diag = a[k * m + k];
        if diag.abs() <= T::epsilon() * T::of(1e3) {
            return Err(Error::DegenerateFit(format!("rank deficient at column {k}")));
        }
        let mut s = b[k];
        for j in k + 1..p {
            s -= a[j * m + k] * c[j];
        }
        c[k] = s / diag;
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateFit("non-finite coefficients".into()));
    }
    Ok(c)
}
