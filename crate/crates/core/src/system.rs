//! LQO realizations, projection and error-system assembly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cond2, fro, symmetrize, Mat};
use crate::mateq::RealSchur;
use crate::scalar::Real;

/// State-space realization `ẋ = Ax + Bu`, `y_k = (Cx)_k + xᵀM_k x`.
///
/// The quadratic output matrices are stored symmetrized; since only the
/// symmetric part of `M_k` enters `xᵀM_k x`, this loses nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct LqoSystem<T: Real> {
    a: Mat<T>,
    b: Mat<T>,
    c: Mat<T>,
    m_quad: Vec<Mat<T>>,
}

impl<T: Real> LqoSystem<T> {
    pub fn new(a: Mat<T>, b: Mat<T>, c: Mat<T>, m_quad: Vec<Mat<T>>) -> Result<Self> {
        let violations = dimension_violations(&a, &b, &c, &m_quad);
        if !violations.is_empty() {
            return Err(Error::Dimension(violations.join("; ")));
        }
        let m_quad = m_quad.iter().map(symmetrize).collect();
        Ok(Self { a, b, c, m_quad })
    }

    pub fn a(&self) -> &Mat<T> {
        &self.a
    }

    pub fn b(&self) -> &Mat<T> {
        &self.b
    }

    pub fn c(&self) -> &Mat<T> {
        &self.c
    }

    pub fn m_quad(&self) -> &[Mat<T>] {
        &self.m_quad
    }

    /// State dimension `n`.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Input count `m`.
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Output count `p`.
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `(n, m, p)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.order(), self.inputs(), self.outputs())
    }

    /// Largest real part of `λ(A)`.
    pub fn spectral_abscissa(&self) -> Result<T> {
        Ok(RealSchur::new(&self.a)?.spectral_abscissa())
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.spectral_abscissa()? < T::zero())
    }

    /// Same system with the input matrix replaced.
    pub fn with_b(&self, b: Mat<T>) -> Result<Self> {
        Self::new(self.a.clone(), b, self.c.clone(), self.m_quad.clone())
    }

    /// Same system with the state matrix replaced.
    pub fn with_a(&self, a: Mat<T>) -> Result<Self> {
        Self::new(a, self.b.clone(), self.c.clone(), self.m_quad.clone())
    }

    /// Same system with the linear output matrix replaced.
    pub fn with_c(&self, c: Mat<T>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), c, self.m_quad.clone())
    }

    /// Same system with the quadratic output matrices replaced.
    pub fn with_m(&self, m_quad: Vec<Mat<T>>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), m_quad)
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> LqoSystem<U> {
        let conv = |m: &Mat<T>| m.map(|v| U::lit(v.as_f64()));
        LqoSystem {
            a: conv(&self.a),
            b: conv(&self.b),
            c: conv(&self.c),
            m_quad: self.m_quad.iter().map(conv).collect(),
        }
    }
}

fn dimension_violations<T: Real>(a: &Mat<T>, b: &Mat<T>, c: &Mat<T>, m: &[Mat<T>]) -> Vec<String> {
    let mut out = Vec::new();
    let n = a.nrows();
    if a.ncols() != n {
        out.push(format!("A is {}x{}, not square", a.nrows(), a.ncols()));
    }
    if n == 0 {
        out.push("state order n must be at least 1".into());
    }
    if b.nrows() != n {
        out.push(format!("B has {} rows, expected {n}", b.nrows()));
    }
    if b.ncols() == 0 {
        out.push("input count m must be at least 1".into());
    }
    if c.ncols() != n {
        out.push(format!("C has {} columns, expected {n}", c.ncols()));
    }
    let p = c.nrows();
    if p == 0 {
        out.push("output count p must be at least 1".into());
    }
    if m.len() != p {
        out.push(format!("{} quadratic output matrices given, expected p = {p}", m.len()));
    }
    for (k, mk) in m.iter().enumerate() {
        if mk.nrows() != n || mk.ncols() != n {
            out.push(format!("M_{} is {}x{}, expected {n}x{n}", k + 1, mk.nrows(), mk.ncols()));
        }
    }
    out
}

/// Outcome of [`validate`] / [`validate_parts`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub dimension_violations: Vec<String>,
    /// `‖M_k − M_kᵀ‖_F` per output.
    pub asymmetry: Vec<f64>,
    pub symmetric: bool,
    pub spectral_abscissa: Option<f64>,
    pub stable: Option<bool>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.dimension_violations.is_empty() && self.symmetric && self.stable != Some(false)
    }
}

/// Checks a constructed system. Report-only: never fails.
pub fn validate<T: Real>(sys: &LqoSystem<T>, check_stability: bool) -> ValidationReport {
    validate_parts(&sys.a, &sys.b, &sys.c, &sys.m_quad, check_stability)
}

/// Checks raw matrices before construction (so asymmetry is visible).
pub fn validate_parts<T: Real>(
    a: &Mat<T>,
    b: &Mat<T>,
    c: &Mat<T>,
    m_quad: &[Mat<T>],
    check_stability: bool,
) -> ValidationReport {
    let dimension_violations = dimension_violations(a, b, c, m_quad);
    let mut symmetric = true;
    let asymmetry = m_quad
        .iter()
        .map(|m| {
            if !m.is_square() {
                symmetric = false;
                return f64::NAN;
            }
            let asym = fro(&(m - m.transpose())).as_f64();
            if asym > 1e-12 * fro(m).as_f64() {
                symmetric = false;
            }
            asym
        })
        .collect();
    let spectral_abscissa = if check_stability && a.is_square() && a.nrows() > 0 {
        RealSchur::new(a).ok().map(|s| s.spectral_abscissa().as_f64())
    } else {
        None
    };
    ValidationReport {
        dimension_violations,
        asymmetry,
        symmetric,
        spectral_abscissa,
        stable: spectral_abscissa.map(|s| s < 0.0),
    }
}

/// `(M + Mᵀ)/2`
pub fn symmetrize_quadratic<T: Real>(m_raw: &Mat<T>) -> Result<Mat<T>> {
    crate::linalg::ensure_square(m_raw)?;
    Ok(symmetrize(m_raw))
}

/// The `p×n²` matrix whose row `k` is the row-major vectorization of `M_k`,
/// so that `m_flat (x⊗x)` stacks the quadratic outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerOutputMatrix<T: Real> {
    pub m_flat: Mat<T>,
}

impl<T: Real> KroneckerOutputMatrix<T> {
    pub fn state_dim(&self) -> usize {
        (self.m_flat.ncols() as f64).sqrt().round() as usize
    }

    /// Row `k` reshaped back into `n×n`.
    pub fn reshape_row(&self, k: usize) -> Mat<T> {
        let n = self.state_dim();
        Mat::from_fn(n, n, |i, j| self.m_flat[(k, i * n + j)])
    }

    /// `m_flat (x ⊗ x)`
    pub fn apply(&self, x: &Mat<T>) -> Mat<T> {
        let n = x.nrows();
        let kron = Mat::from_fn(n * n, 1, |idx, _| x[(idx / n, 0)] * x[(idx % n, 0)]);
        &self.m_flat * kron
    }
}

pub fn kronecker_output<T: Real>(sys: &LqoSystem<T>) -> KroneckerOutputMatrix<T> {
    let n = sys.order();
    let p = sys.outputs();
    let m_flat = Mat::from_fn(p, n * n, |k, idx| sys.m_quad[k][(idx / n, idx % n)]);
    KroneckerOutputMatrix { m_flat }
}

/// Right and left projection bases `V`, `W` (both `n×r`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair<T: Real> {
    pub v: Mat<T>,
    pub w: Mat<T>,
}

/// Petrov–Galerkin projection with the oblique correction `(WᵀV)⁻¹`.
pub fn project<T: Real>(sys: &LqoSystem<T>, proj: &ProjectionPair<T>) -> Result<LqoSystem<T>> {
    let (v, w) = (&proj.v, &proj.w);
    let n = sys.order();
    if v.nrows() != n || w.nrows() != n || v.ncols() != w.ncols() || v.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "projection bases {}x{} and {}x{} do not fit order {n}",
            v.nrows(),
            v.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let gram = w.tr_mul(v);
    let cond = cond2(&gram);
    if !(cond.as_f64() <= T::COND_CAP) {
        return Err(Error::Projection { cond: cond.as_f64() });
    }
    let lu = gram.lu();
    let solve = |rhs: Mat<T>| lu.solve(&rhs).ok_or(Error::Projection { cond: f64::INFINITY });
    let a_r = solve(w.tr_mul(&(&sys.a * v)))?;
    let b_r = solve(w.tr_mul(&sys.b))?;
    let c_r = &sys.c * v;
    let m_r = sys.m_quad.iter().map(|m| v.tr_mul(&(m * v))).collect();
    LqoSystem::new(a_r, b_r, c_r, m_r)
}

/// Realization of `S − S_r` of order `n + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem<T: Real> {
    pub sys: LqoSystem<T>,
    pub fom_order: usize,
    pub rom_order: usize,
}

pub fn assemble_error_system<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<ErrorSystem<T>> {
    if fom.inputs() != rom.inputs() || fom.outputs() != rom.outputs() {
        return Err(Error::Dimension(format!(
            "FOM has (m, p) = ({}, {}), ROM has ({}, {})",
            fom.inputs(),
            fom.outputs(),
            rom.inputs(),
            rom.outputs()
        )));
    }
    let (n, r) = (fom.order(), rom.order());
    let block_diag = |x: &Mat<T>, y: &Mat<T>| {
        let mut out = Mat::zeros(n + r, n + r);
        out.view_mut((0, 0), (n, n)).copy_from(x);
        out.view_mut((n, n), (r, r)).copy_from(y);
        out
    };
    let a = block_diag(&fom.a, &rom.a);
    let mut b = Mat::zeros(n + r, fom.inputs());
    b.view_mut((0, 0), (n, fom.inputs())).copy_from(&fom.b);
    b.view_mut((n, 0), (r, fom.inputs())).copy_from(&rom.b);
    let mut c = Mat::zeros(fom.outputs(), n + r);
    c.view_mut((0, 0), (fom.outputs(), n)).copy_from(&fom.c);
    c.view_mut((0, n), (fom.outputs(), r)).copy_from(&(-&rom.c));
    let m = fom
        .m_quad
        .iter()
        .zip(&rom.m_quad)
        .map(|(mk, mkr)| block_diag(mk, &(-mkr)))
        .collect();
    Ok(ErrorSystem { sys: LqoSystem::new(a, b, c, m)?, fom_order: n, rom_order: r })
}
