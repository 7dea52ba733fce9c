//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Mat<T> = DMatrix<T>;

pub fn fro<T: Real>(m: &Mat<T>) -> T {
    m.norm()
}

pub fn trace_of_product<T: Real>(a: &Mat<T>, b: &Mat<T>) -> T {
    // trace(A B) without forming the product
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = T::zero();
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn symmetrize<T: Real>(m: &Mat<T>) -> Mat<T> {
    let half = T::lit(0.5);
    (m + m.transpose()) * half
}

pub fn max_abs<T: Real>(m: &Mat<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn ensure_square<T: Real>(m: &Mat<T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// 2-norm condition number from the singular values.
pub fn cond2<T: Real>(m: &Mat<T>) -> T {
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(T::zero(), |a, &v| a.max(v));
    let smin = sv.iter().fold(smax, |a, &v| a.min(v));
    if smin <= T::zero() {
        return T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    }
    smax / smin
}

/// Inverse of a small square matrix, refusing matrices whose condition
/// number exceeds the scalar's cap.
pub fn guarded_inverse<T: Real>(m: &Mat<T>, what: &'static str) -> Result<Mat<T>> {
    ensure_square(m)?;
    let cond = cond2(m);
    if !(cond.as_f64() <= T::COND_CAP) {
        return Err(Error::Singular { what, cond: cond.as_f64() });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { what, cond: cond.as_f64() })
}

/// Orthonormal basis of the range of `x` via Householder QR with column
/// pivoting. Fails if the numerical rank (diagonal of R relative to its
/// leading entry, threshold `1e-12`) is below the column count.
pub fn orth<T: Real>(x: &Mat<T>) -> Result<Mat<T>> {
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::Dimension(format!(
            "cannot orthogonalize {}x{} (more columns than rows)",
            x.nrows(),
            k
        )));
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let tol = T::lit(1e-12) * lead;
    let rank = (0..k).take_while(|&i| r[(i, i)].abs() > tol).count();
    if lead <= T::zero() || rank < k {
        return Err(Error::RankDeficient { rank, wanted: k });
    }
    Ok(qr.q())
}

/// Orthonormal `n×k` basis whose leading columns span the range of `x`,
/// completed by further Householder directions when `x` is numerically
/// rank deficient; returns the basis and the detected rank. Fails only for
/// a numerically zero `x`.
pub fn orth_completed<T: Real>(x: &Mat<T>) -> Result<(Mat<T>, usize)> {
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::Dimension(format!(
            "cannot orthogonalize {}x{} (more columns than rows)",
            x.nrows(),
            k
        )));
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let tol = T::lit(1e-12) * lead;
    let rank = (0..k).take_while(|&i| r[(i, i)].abs() > tol).count();
    if !(lead > T::zero()) || !lead.is_finite() {
        return Err(Error::RankDeficient { rank: 0, wanted: k });
    }
    Ok((qr.q(), rank))
}

pub fn all_finite<T: Real>(m: &Mat<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `|a − b| / max(|a|, |b|)`, absolute when both vanish.
pub fn rel_diff<T: Real>(a: T, b: T) -> f64 {
    let (a, b) = (a.as_f64(), b.as_f64());
    let d = (a - b).abs();
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Relative Frobenius difference of two matrices.
pub fn rel_diff_mat<T: Real>(a: &Mat<T>, b: &Mat<T>) -> f64 {
    let s = fro(a).max(fro(b)).as_f64();
    let d = fro(&(a - b)).as_f64();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}
