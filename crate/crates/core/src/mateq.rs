//! Dense Lyapunov and Sylvester solvers (Bartels–Stewart).
//!
//! Both coefficient matrices are reduced to real Schur form and the
//! transformed equation is solved by blockwise substitution over the 1×1 and
//! 2×2 diagonal blocks, entirely in real arithmetic. A [`RealSchur`] is
//! immutable once built, so a factorization of a large state matrix can be
//! shared by many solves with different small right-hand coefficients.

use nalgebra::linalg::Schur;

use crate::error::{Error, Result};
use crate::linalg::{fro, max_abs, symmetrize, Mat};
use crate::scalar::Real;
use crate::system::LqoSystem;

/// Real Schur factorization `A = U T Uᵀ` with `T` upper quasi-triangular.
#[derive(Debug, Clone)]
pub struct RealSchur<T: Real> {
    a: Mat<T>,
    u: Mat<T>,
    t: Mat<T>,
    /// `(start, size)` of each diagonal block, size 1 or 2, in order.
    blocks: Vec<(usize, usize)>,
    t_scale: T,
}

impl<T: Real> RealSchur<T> {
    pub fn new(a: &Mat<T>) -> Result<Self> {
        crate::linalg::ensure_square(a)?;
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if !crate::linalg::all_finite(a) {
            return Err(Error::NonFinite("Schur decomposition input"));
        }
        let schur =
            Schur::try_new(a.clone(), T::eps(), 100 * n.max(10)).ok_or(Error::SchurFailed)?;
        let (u, mut t) = schur.unpack();

        // Flush negligible subdiagonal entries and collect the block layout.
        for i in 0..n {
            for j in 0..i.saturating_sub(1) {
                t[(i, j)] = T::zero();
            }
        }
        for i in 0..n.saturating_sub(1) {
            let local = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if t[(i + 1, i)].abs() <= T::eps() * local {
                t[(i + 1, i)] = T::zero();
            }
        }
        let mut blocks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != T::zero() {
                if i + 2 < n && t[(i + 2, i + 1)] != T::zero() {
                    return Err(Error::SchurFailed);
                }
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        let t_scale = max_abs(&t);
        Ok(Self { a: a.clone(), u, t, blocks, t_scale })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The factored matrix.
    pub fn matrix(&self) -> &Mat<T> {
        &self.a
    }

    pub fn unitary(&self) -> &Mat<T> {
        &self.u
    }

    pub fn quasi_triangular(&self) -> &Mat<T> {
        &self.t
    }

    /// Eigenvalues as `(re, im)` pairs read off the diagonal blocks.
    pub fn eigenvalues(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.dim());
        for &(s, size) in &self.blocks {
            if size == 1 {
                out.push((self.t[(s, s)], T::zero()));
                continue;
            }
            let (a, b) = (self.t[(s, s)], self.t[(s, s + 1)]);
            let (c, d) = (self.t[(s + 1, s)], self.t[(s + 1, s + 1)]);
            let half = T::lit(0.5);
            let mid = (a + d) * half;
            let disc = ((a - d) * half).powi(2) + b * c;
            if disc >= T::zero() {
                let s = disc.sqrt();
                out.push((mid + s, T::zero()));
                out.push((mid - s, T::zero()));
            } else {
                let s = (-disc).sqrt();
                out.push((mid, s));
                out.push((mid, -s));
            }
        }
        out
    }

    /// Largest real part over the spectrum.
    pub fn spectral_abscissa(&self) -> T {
        self.eigenvalues()
            .into_iter()
            .map(|(re, _)| re)
            .fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b))
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa() < T::zero()
    }

    fn ensure_stable(&self) -> Result<()> {
        let abscissa = self.spectral_abscissa();
        if abscissa < T::zero() {
            Ok(())
        } else {
            Err(Error::Unstable { abscissa: abscissa.as_f64() })
        }
    }
}

/// Which of the two sign/transpose patterns a Sylvester equation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SylvesterForm {
    /// `A X + X A_rᵀ + F = 0`
    Standard,
    /// `Aᵀ X + X A_r + F = 0`
    Transposed,
}

/// A Sylvester equation with coefficient matrices `a_left` (n×n),
/// `a_right` (r×r) and right-hand side `rhs` (n×r).
#[derive(Debug, Clone, Copy)]
pub struct SylvesterProblem<'a, T: Real> {
    pub a_left: &'a Mat<T>,
    pub a_right: &'a Mat<T>,
    pub rhs: &'a Mat<T>,
    pub form: SylvesterForm,
}

/// Residual report attached to every solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveCertificate<T: Real> {
    pub residual_fro: T,
    pub relative_residual: T,
}

/// Solves a Sylvester problem, factoring both coefficient matrices.
pub fn solve_sylvester<T: Real>(
    problem: &SylvesterProblem<'_, T>,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    let left = RealSchur::new(problem.a_left)?;
    let right = RealSchur::new(problem.a_right)?;
    solve_sylvester_factored(&left, &right, problem.rhs, problem.form)
}

/// Solves `op(L) X + X op(R) + F = 0` given Schur factors of `L` and `R`,
/// with `op` determined by `form`.
pub fn solve_sylvester_factored<T: Real>(
    left: &RealSchur<T>,
    right: &RealSchur<T>,
    rhs: &Mat<T>,
    form: SylvesterForm,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    let (n, r) = (left.dim(), right.dim());
    if rhs.nrows() != n || rhs.ncols() != r {
        return Err(Error::Dimension(format!(
            "Sylvester rhs is {}x{}, expected {n}x{r}",
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let (left_trans, right_trans) = match form {
        SylvesterForm::Standard => (false, true),
        SylvesterForm::Transposed => (true, false),
    };
    let g = left.u.transpose() * rhs * &right.u;
    let y = quasi_triangular_sylvester(left, left_trans, right, right_trans, &(-g))?;
    let x = &left.u * y * right.u.transpose();
    if !crate::linalg::all_finite(&x) {
        return Err(Error::NonFinite("Sylvester solve"));
    }
    let cert = certify(left.matrix(), right.matrix(), &x, rhs, form);
    check_certificate(&cert, "Sylvester equation")?;
    Ok((x, cert))
}

/// Residual of `op(L) X + X op(R) + F` in the given form.
pub fn sylvester_residual<T: Real>(
    l: &Mat<T>,
    r: &Mat<T>,
    x: &Mat<T>,
    f: &Mat<T>,
    form: SylvesterForm,
) -> Mat<T> {
    match form {
        SylvesterForm::Standard => l * x + x * r.transpose() + f,
        SylvesterForm::Transposed => l.tr_mul(x) + x * r + f,
    }
}

fn certify<T: Real>(
    l: &Mat<T>,
    r: &Mat<T>,
    x: &Mat<T>,
    f: &Mat<T>,
    form: SylvesterForm,
) -> SolveCertificate<T> {
    let residual_fro = fro(&sylvester_residual(l, r, x, f, form));
    let xn = fro(x);
    let denom = fro(l) * xn + xn * fro(r) + fro(f);
    let relative_residual = if denom > T::zero() { residual_fro / denom } else { residual_fro };
    SolveCertificate { residual_fro, relative_residual }
}

fn check_certificate<T: Real>(cert: &SolveCertificate<T>, what: &'static str) -> Result<()> {
    let rel = cert.relative_residual.as_f64();
    if rel.is_finite() && rel <= T::RESIDUAL_TOL {
        Ok(())
    } else {
        Err(Error::Residual { what, relative: rel, limit: T::RESIDUAL_TOL })
    }
}

/// Solves `op(TL) Y + Y op(TR) = C` for quasi-triangular `TL`, `TR`.
///
/// Column blocks of `Y` are swept in the order dictated by `op(TR)` and,
/// within each, row blocks in the order dictated by `op(TL)`; every step is
/// an at most 4×4 dense solve.
fn quasi_triangular_sylvester<T: Real>(
    left: &RealSchur<T>,
    left_trans: bool,
    right: &RealSchur<T>,
    right_trans: bool,
    c: &Mat<T>,
) -> Result<Mat<T>> {
    let (tl, tr) = (&left.t, &right.t);
    let (n, r) = (tl.nrows(), tr.nrows());
    let mut y = Mat::<T>::zeros(n, r);
    let threshold = T::lit(T::PIVOT_TOL) * (left.t_scale + right.t_scale);

    // op(TR)[l, k]
    let op_r = |l: usize, k: usize| if right_trans { tr[(k, l)] } else { tr[(l, k)] };
    let op_l = |i: usize, l: usize| if left_trans { tl[(l, i)] } else { tl[(i, l)] };

    let col_blocks: Vec<(usize, usize)> = if right_trans {
        right.blocks.iter().rev().copied().collect()
    } else {
        right.blocks.clone()
    };
    let row_blocks: Vec<(usize, usize)> = if left_trans {
        left.blocks.clone()
    } else {
        left.blocks.iter().rev().copied().collect()
    };

    let mut rhs = Mat::<T>::zeros(n, 2);
    for (kb, &(k0, kq)) in col_blocks.iter().enumerate() {
        // Right coupling with already computed column blocks.
        for b in 0..kq {
            let k = k0 + b;
            for i in 0..n {
                rhs[(i, b)] = c[(i, k)];
            }
            for &(l0, lq) in &col_blocks[..kb] {
                for l in l0..l0 + lq {
                    let coef = op_r(l, k);
                    if coef != T::zero() {
                        for i in 0..n {
                            rhs[(i, b)] -= y[(i, l)] * coef;
                        }
                    }
                }
            }
        }

        for &(i0, iq) in &row_blocks {
            let mut local = [[T::zero(); 2]; 2];
            for a in 0..iq {
                let i = i0 + a;
                for b in 0..kq {
                    let k = k0 + b;
                    let mut acc = rhs[(i, b)];
                    // Left coupling with already computed rows of this column block.
                    if left_trans {
                        for l in 0..i0 {
                            acc -= tl[(l, i)] * y[(l, k)];
                        }
                    } else {
                        for l in i0 + iq..n {
                            acc -= tl[(i, l)] * y[(l, k)];
                        }
                    }
                    local[a][b] = acc;
                }
            }
            let sol = small_sylvester(
                iq,
                kq,
                |a, c2| op_l(i0 + a, i0 + c2),
                |d, b| op_r(k0 + d, k0 + b),
                &local,
                threshold,
            )?;
            for a in 0..iq {
                for b in 0..kq {
                    y[(i0 + a, k0 + b)] = sol[a][b];
                }
            }
        }
    }
    Ok(y)
}

/// Solves `L Y + Y R = C` for `s×s` `L` and `q×q` `R` (s, q ≤ 2) via the
/// Kronecker form and Gaussian elimination with partial pivoting.
fn small_sylvester<T: Real>(
    s: usize,
    q: usize,
    l: impl Fn(usize, usize) -> T,
    r: impl Fn(usize, usize) -> T,
    c: &[[T; 2]; 2],
    threshold: T,
) -> Result<[[T; 2]; 2]> {
    let dim = s * q;
    let mut k = [[T::zero(); 5]; 4];
    let idx = |a: usize, b: usize| a + s * b;
    for a in 0..s {
        for b in 0..q {
            let row = idx(a, b);
            for c2 in 0..s {
                k[row][idx(c2, b)] += l(a, c2);
            }
            for d in 0..q {
                k[row][idx(a, d)] += r(d, b);
            }
            k[row][4] = c[a][b];
        }
    }
    for col in 0..dim {
        let piv = (col..dim)
            .max_by(|&x, &y| k[x][col].abs().partial_cmp(&k[y][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if !(k[piv][col].abs() > threshold) {
            return Err(Error::SpectralOverlap {
                pivot: k[piv][col].abs().as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        k.swap(col, piv);
        for row in col + 1..dim {
            let f = k[row][col] / k[col][col];
            if f != T::zero() {
                for j in col..dim {
                    let v = k[col][j];
                    k[row][j] -= f * v;
                }
                let v = k[col][4];
                k[row][4] -= f * v;
            }
        }
    }
    let mut x = [T::zero(); 4];
    for row in (0..dim).rev() {
        let mut acc = k[row][4];
        for j in row + 1..dim {
            acc -= k[row][j] * x[j];
        }
        x[row] = acc / k[row][row];
    }
    let mut out = [[T::zero(); 2]; 2];
    for a in 0..s {
        for b in 0..q {
            out[a][b] = x[idx(a, b)];
        }
    }
    Ok(out)
}

/// Solves the Lyapunov equation `op(A) X + X op(A)ᵀ + F = 0` for stable `A`
/// and returns the symmetrized solution.
///
/// `Standard` gives `A X + X Aᵀ + F = 0`; `Transposed` gives
/// `Aᵀ X + X A + F = 0`.
pub fn solve_lyapunov_factored<T: Real>(
    schur: &RealSchur<T>,
    rhs: &Mat<T>,
    form: SylvesterForm,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    schur.ensure_stable()?;
    let (x, _) = solve_sylvester_factored(schur, schur, rhs, form)?;
    let x = symmetrize(&x);
    let cert = certify(schur.matrix(), schur.matrix(), &x, rhs, form);
    check_certificate(&cert, "Lyapunov equation")?;
    Ok((x, cert))
}

/// Reachability Gramian: `A P + P Aᵀ + B Bᵀ = 0`.
pub fn solve_lyapunov_reach<T: Real>(
    a: &Mat<T>,
    b: &Mat<T>,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    let schur = RealSchur::new(a)?;
    reach_gramian_factored(&schur, b)
}

pub fn reach_gramian_factored<T: Real>(
    schur: &RealSchur<T>,
    b: &Mat<T>,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    solve_lyapunov_factored(schur, &(b * b.transpose()), SylvesterForm::Standard)
}

/// Quadratic-output observability Gramian:
/// `Aᵀ Q + Q A + Cᵀ C + Σ_k M_k P M_k = 0`.
pub fn solve_lyapunov_qo_obsv<T: Real>(
    sys: &LqoSystem<T>,
    p_gram: &Mat<T>,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    let schur = RealSchur::new(sys.a())?;
    qo_gramian_factored(&schur, sys, p_gram)
}

pub fn qo_gramian_factored<T: Real>(
    schur: &RealSchur<T>,
    sys: &LqoSystem<T>,
    p_gram: &Mat<T>,
) -> Result<(Mat<T>, SolveCertificate<T>)> {
    let mut rhs = sys.c().tr_mul(sys.c());
    for m in sys.m_quad() {
        rhs += m * p_gram * m;
    }
    solve_lyapunov_factored(schur, &rhs, SylvesterForm::Transposed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat<f64> {
        Mat::from_row_slice(rows, cols, v)
    }

    fn random_stable(n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Mat<f64> = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = RealSchur::new(&r).unwrap().eigenvalues().iter().map(|(a, b): &(f64, f64)| a.hypot(*b)).fold(0.0, f64::max);
        r - Mat::identity(n, n) * (shift + 0.3)
    }

    #[test]
    fn scalar_reachability() {
        let (p, cert) = solve_lyapunov_reach(&m(1, 1, &[-1.0]), &m(1, 1, &[2f64.sqrt()])).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(cert.relative_residual < 1e-15);
    }

    #[test]
    fn decoupled_reachability() {
        // B Bᵀ = diag(4, 6)
        let b = m(2, 1, &[2.0, 0.0]);
        let b = Mat::from_columns(&[b.column(0).into_owned(), m(2, 1, &[0.0, 6f64.sqrt()]).column(0).into_owned()]);
        let (p, _) = solve_lyapunov_reach(&m(2, 2, &[-2.0, 0.0, 0.0, -3.0]), &b).unwrap();
        assert!((p - Mat::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn random_lyapunov_residual() {
        let a = random_stable(5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Mat::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let (p, cert) = solve_lyapunov_reach(&a, &b).unwrap();
        assert!(cert.relative_residual <= 1e-12, "{cert:?}");
        assert_eq!(p, p.transpose());
        let direct = fro(&(&a * &p + &p * a.transpose() + &b * b.transpose()));
        assert!(direct / (2.0 * fro(&a) * fro(&p)) <= 1e-12);
    }

    #[test]
    fn sylvester_scalar() {
        let (x, _) = solve_sylvester(&SylvesterProblem {
            a_left: &m(1, 1, &[-1.0]),
            a_right: &m(1, 1, &[-2.0]),
            rhs: &m(1, 1, &[3.0]),
            form: SylvesterForm::Standard,
        })
        .unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sylvester_rowwise() {
        let (x, _) = solve_sylvester(&SylvesterProblem {
            a_left: &(-Mat::identity(2, 2)),
            a_right: &m(1, 1, &[-1.0]),
            rhs: &m(2, 1, &[2.0, 4.0]),
            form: SylvesterForm::Standard,
        })
        .unwrap();
        assert!((x - m(2, 1, &[1.0, 2.0])).norm() < 1e-15);
    }

    #[test]
    fn sylvester_spectral_overlap() {
        let err = solve_sylvester(&SylvesterProblem {
            a_left: &m(1, 1, &[-1.0]),
            a_right: &m(1, 1, &[1.0]),
            rhs: &m(1, 1, &[1.0]),
            form: SylvesterForm::Standard,
        })
        .unwrap_err();
        assert!(matches!(err, Error::SpectralOverlap { .. }), "{err}");
    }

    #[test]
    fn sylvester_both_forms_with_complex_blocks() {
        // rotation-like blocks force 2x2 Schur blocks on both sides
        let a = m(3, 3, &[-1.0, 2.0, 0.3, -2.0, -1.0, 0.1, 0.0, 0.5, -0.5]);
        let ar = m(2, 2, &[-0.2, 1.0, -1.0, -0.2]);
        let f = m(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        for form in [SylvesterForm::Standard, SylvesterForm::Transposed] {
            let (x, cert) = solve_sylvester(&SylvesterProblem { a_left: &a, a_right: &ar, rhs: &f, form }).unwrap();
            assert!(cert.relative_residual < 1e-14, "{form:?} {cert:?}");
            assert!(fro(&sylvester_residual(&a, &ar, &x, &f, form)) < 1e-13);
        }
    }

    #[test]
    fn transpose_duality() {
        // Aᵀ X + X A_r + F = 0  <=>  A_rᵀ Xᵀ + Xᵀ A + Fᵀ = 0
        let a = random_stable(6, 5);
        let ar = random_stable(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Mat::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let (x, _) = solve_sylvester(&SylvesterProblem { a_left: &a, a_right: &ar, rhs: &f, form: SylvesterForm::Transposed }).unwrap();
        let ft = f.transpose();
        let (y, _) = solve_sylvester(&SylvesterProblem { a_left: &ar.transpose(), a_right: &a.transpose(), rhs: &ft, form: SylvesterForm::Standard }).unwrap();
        assert!((x.transpose() - y).norm() / x.norm() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let a = random_stable(7, 1);
        let b = Mat::from_fn(7, 2, |i, j| (i + 2 * j) as f64 * 0.1);
        let p1 = solve_lyapunov_reach(&a, &b).unwrap().0;
        let p2 = solve_lyapunov_reach(&a, &b).unwrap().0;
        assert_eq!(p1, p2);
    }

    #[test]
    fn unstable_lyapunov_rejected() {
        let err = solve_lyapunov_reach(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }
}
