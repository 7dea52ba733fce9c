//! Gramians, H2 inner products/norms/errors, Volterra kernels and the
//! quadrature oracle for the H2 norm.

use crate::error::{Error, Result};
use crate::linalg::{trace_of_product, Mat};
use crate::mateq::{
    qo_gramian_factored, reach_gramian_factored, solve_lyapunov_factored, solve_sylvester_factored,
    RealSchur, SylvesterForm,
};
use crate::scalar::Real;
use crate::system::{assemble_error_system, LqoSystem};

/// A system together with the real Schur factorization of its state matrix,
/// so repeated solves against it (e.g. inside an iteration) factor once.
#[derive(Debug, Clone)]
pub struct Prepared<T: Real> {
    sys: LqoSystem<T>,
    schur: RealSchur<T>,
}

impl<T: Real> Prepared<T> {
    pub fn new(sys: &LqoSystem<T>) -> Result<Self> {
        Ok(Self { sys: sys.clone(), schur: RealSchur::new(sys.a())? })
    }

    pub fn sys(&self) -> &LqoSystem<T> {
        &self.sys
    }

    pub fn schur(&self) -> &RealSchur<T> {
        &self.schur
    }

    pub fn is_stable(&self) -> bool {
        self.schur.is_stable()
    }

    pub fn require_stable(&self, reduced: bool) -> Result<()> {
        if self.is_stable() {
            return Ok(());
        }
        let abscissa = self.schur.spectral_abscissa().as_f64();
        Err(if reduced { Error::UnstableReduced { abscissa } } else { Error::Unstable { abscissa } })
    }
}

/// Reachability Gramian `P`, quadratic-output observability Gramian `Q`,
/// its linear part `Q1` and optionally the per-output parts `Q2^(k)`.
#[derive(Debug, Clone)]
pub struct GramianSet<T: Real> {
    pub p_gram: Mat<T>,
    pub q_gram: Mat<T>,
    pub q1_gram: Mat<T>,
    pub q2_parts: Option<Vec<Mat<T>>>,
}

pub fn gramians<T: Real>(sys: &LqoSystem<T>, with_parts: bool) -> Result<GramianSet<T>> {
    gramians_prepared(&Prepared::new(sys)?, with_parts)
}

pub fn gramians_prepared<T: Real>(prep: &Prepared<T>, with_parts: bool) -> Result<GramianSet<T>> {
    prep.require_stable(false)?;
    let sys = prep.sys();
    let (p_gram, _) = reach_gramian_factored(&prep.schur, sys.b())?;
    let (q_gram, _) = qo_gramian_factored(&prep.schur, sys, &p_gram)?;
    let q1_rhs = sys.c().tr_mul(sys.c());
    let (q1_gram, _) = solve_lyapunov_factored(&prep.schur, &q1_rhs, SylvesterForm::Transposed)?;
    let q2_parts = if with_parts {
        let parts = sys
            .m_quad()
            .iter()
            .map(|m| {
                let rhs = m * &p_gram * m;
                solve_lyapunov_factored(&prep.schur, &rhs, SylvesterForm::Transposed).map(|(q, _)| q)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(parts)
    } else {
        None
    };
    Ok(GramianSet { p_gram, q_gram, q1_gram, q2_parts })
}

fn check_compatible<T: Real>(s: &LqoSystem<T>, s_r: &LqoSystem<T>) -> Result<()> {
    if s.inputs() != s_r.inputs() || s.outputs() != s_r.outputs() {
        return Err(Error::Dimension(format!(
            "systems have (m, p) = ({}, {}) and ({}, {})",
            s.inputs(),
            s.outputs(),
            s_r.inputs(),
            s_r.outputs()
        )));
    }
    Ok(())
}

/// `X`: `A X + X A_rᵀ + B B_rᵀ = 0`.
pub fn cross_x<T: Real>(fom: &Prepared<T>, rom: &Prepared<T>) -> Result<Mat<T>> {
    let rhs = fom.sys().b() * rom.sys().b().transpose();
    Ok(solve_sylvester_factored(&fom.schur, &rom.schur, &rhs, SylvesterForm::Standard)?.0)
}

/// `Aᵀ Z + Z A_r − weight·Σ_k M_k X M_kr − Cᵀ C_r = 0`.
///
/// `weight = 1` gives the coupling solution `Z`, `weight = 2` the left
/// projector of the two-sided iteration, `weight = 0` the linear part `Z1`.
pub fn cross_z_weighted<T: Real>(
    fom: &Prepared<T>,
    rom: &Prepared<T>,
    x: &Mat<T>,
    weight: T,
) -> Result<Mat<T>> {
    let (s, s_r) = (fom.sys(), rom.sys());
    let mut rhs = -s.c().tr_mul(s_r.c());
    if weight != T::zero() {
        for (m, m_r) in s.m_quad().iter().zip(s_r.m_quad()) {
            rhs -= m * x * m_r * weight;
        }
    }
    Ok(solve_sylvester_factored(&fom.schur, &rom.schur, &rhs, SylvesterForm::Transposed)?.0)
}

/// `Z`: `Aᵀ Z + Z A_r − Σ_k M_k X M_kr − Cᵀ C_r = 0`.
pub fn cross_z<T: Real>(fom: &Prepared<T>, rom: &Prepared<T>, x: &Mat<T>) -> Result<Mat<T>> {
    cross_z_weighted(fom, rom, x, T::one())
}

/// `⟨S, S_r⟩_H2 = −tr(Bᵀ Z B_r)`.
pub fn h2_inner_product<T: Real>(s: &LqoSystem<T>, s_r: &LqoSystem<T>) -> Result<T> {
    check_compatible(s, s_r)?;
    let (fom, rom) = (Prepared::new(s)?, Prepared::new(s_r)?);
    fom.require_stable(false)?;
    rom.require_stable(true)?;
    let x = cross_x(&fom, &rom)?;
    let z = cross_z(&fom, &rom, &x)?;
    Ok(-trace_of_product(&s.b().transpose(), &(z * s_r.b())))
}

/// `⟨S, S_r⟩_H2 = tr(C X C_rᵀ) + Σ_k tr(Xᵀ M_k X M_kr)`, the form that needs
/// only `X`.
pub fn h2_inner_product_p_form<T: Real>(s: &LqoSystem<T>, s_r: &LqoSystem<T>) -> Result<T> {
    check_compatible(s, s_r)?;
    let (fom, rom) = (Prepared::new(s)?, Prepared::new(s_r)?);
    fom.require_stable(false)?;
    rom.require_stable(true)?;
    let x = cross_x(&fom, &rom)?;
    Ok(p_form_value(s, s_r, &x))
}

fn p_form_value<T: Real>(s: &LqoSystem<T>, s_r: &LqoSystem<T>, x: &Mat<T>) -> T {
    let mut acc = trace_of_product(&(s.c() * x), &s_r.c().transpose());
    for (m, m_r) in s.m_quad().iter().zip(s_r.m_quad()) {
        acc += trace_of_product(&(x.tr_mul(m) * x), m_r);
    }
    acc
}

/// `‖S‖²_H2 = tr(Bᵀ Q B)`.
pub fn h2_norm_sq<T: Real>(sys: &LqoSystem<T>) -> Result<T> {
    h2_norm_sq_prepared(&Prepared::new(sys)?)
}

pub fn h2_norm_sq_prepared<T: Real>(prep: &Prepared<T>) -> Result<T> {
    prep.require_stable(false)?;
    let sys = prep.sys();
    let (p, _) = reach_gramian_factored(&prep.schur, sys.b())?;
    let (q, _) = qo_gramian_factored(&prep.schur, sys, &p)?;
    Ok(trace_of_product(&sys.b().transpose(), &(q * sys.b())))
}

/// `‖S‖²_H2 = tr(C P Cᵀ) + Σ_k tr(P M_k P M_k)`.
pub fn h2_norm_sq_p_form<T: Real>(sys: &LqoSystem<T>) -> Result<T> {
    let prep = Prepared::new(sys)?;
    prep.require_stable(false)?;
    let (p, _) = reach_gramian_factored(&prep.schur, sys.b())?;
    Ok(p_form_value(sys, sys, &p))
}

/// The three terms of the squared error
/// `J = tr(BᵀQB) + 2 tr(BᵀZB_r) + tr(B_rᵀQ_rB_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H2ErrorParts<T: Real> {
    pub fom_norm_sq: T,
    /// `tr(Bᵀ Z B_r) = −⟨S, S_r⟩`
    pub cross: T,
    pub rom_norm_sq: T,
}

impl<T: Real> H2ErrorParts<T> {
    pub fn error_sq(&self) -> T {
        self.fom_norm_sq + T::lit(2.0) * self.cross + self.rom_norm_sq
    }
}

/// `‖S − S_r‖²_H2`.
pub fn h2_error<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<T> {
    let prep = Prepared::new(fom)?;
    let norm = h2_norm_sq_prepared(&prep)?;
    Ok(h2_error_parts(&prep, norm, rom)?.error_sq())
}

/// Error terms against a prepared FOM whose squared norm is already known.
pub fn h2_error_parts<T: Real>(
    fom: &Prepared<T>,
    fom_norm_sq: T,
    rom_sys: &LqoSystem<T>,
) -> Result<H2ErrorParts<T>> {
    check_compatible(fom.sys(), rom_sys)?;
    let rom = Prepared::new(rom_sys)?;
    fom.require_stable(false)?;
    rom.require_stable(true)?;
    let x = cross_x(fom, &rom)?;
    let z = cross_z(fom, &rom, &x)?;
    let cross = trace_of_product(&fom.sys().b().transpose(), &(z * rom_sys.b()));
    let rom_norm_sq = h2_norm_sq_prepared(&rom)?;
    Ok(H2ErrorParts { fom_norm_sq, cross, rom_norm_sq })
}

/// Right-hand side of the output bound
/// `sup_t ‖y − y_r‖²_∞ ≤ ‖S − S_r‖²_H2 (‖u‖²_L2 + ‖u⊗u‖²_L2)`.
pub fn linf_bound_rhs<T: Real>(
    fom: &LqoSystem<T>,
    rom: &LqoSystem<T>,
    input_l2: T,
    input_kron_l2: T,
) -> Result<T> {
    let err = h2_error(fom, rom)?;
    Ok(linf_bound_from_error(err, input_l2, input_kron_l2))
}

/// Same bound from an already computed squared error (clamped at zero to
/// absorb roundoff for near-identical systems).
pub fn linf_bound_from_error<T: Real>(error_sq: T, input_l2: T, input_kron_l2: T) -> T {
    error_sq.max(T::zero()) * (input_l2 * input_l2 + input_kron_l2 * input_kron_l2)
}

/// Evaluates the Volterra kernels `h1(t) = C e^{At} B` and
/// `h2(t1, t2) = M (e^{At1}B ⊗ e^{At2}B)`.
#[derive(Debug, Clone)]
pub struct KernelEvaluator<T: Real> {
    sys: LqoSystem<T>,
}

impl<T: Real> KernelEvaluator<T> {
    pub fn new(sys: &LqoSystem<T>) -> Self {
        Self { sys: sys.clone() }
    }

    /// `e^{At} B`
    pub fn state_response(&self, t: T) -> Mat<T> {
        (self.sys.a() * t).exp() * self.sys.b()
    }

    /// `C e^{At} B` (p×m)
    pub fn h1(&self, t: T) -> Mat<T> {
        self.sys.c() * self.state_response(t)
    }

    /// `M (e^{At1}B ⊗ e^{At2}B)` (p×m²); row `k` is the row-major
    /// vectorization of `E(t1)ᵀ M_k E(t2)` with `E(t) = e^{At}B`.
    pub fn h2(&self, t1: T, t2: T) -> Mat<T> {
        let (e1, e2) = (self.state_response(t1), self.state_response(t2));
        let m = self.sys.inputs();
        let mut out = Mat::zeros(self.sys.outputs(), m * m);
        for (k, mk) in self.sys.m_quad().iter().enumerate() {
            let blk = e1.tr_mul(&(mk * &e2));
            for a in 0..m {
                for b in 0..m {
                    out[(k, a * m + b)] = blk[(a, b)];
                }
            }
        }
        out
    }
}

// 8-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Nodes and weights of the composite 8-point Gauss–Legendre rule with
/// `panels` equal panels on `[a, b]`.
pub fn gauss_legendre_composite(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * GL_NODES.len());
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// Composite rule on `[0, horizon]` graded towards `t = 0`: intervals
/// `[0, t0], [t0, 2t0], [2t0, 4t0], …` with `panels` panels each, so fast
/// initial transients of stiff systems are resolved without refining the
/// slow tail.
pub fn graded_gauss_legendre(horizon: f64, t0: f64, panels: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (mut a, mut b) = (0.0, t0.min(horizon));
    while a < horizon {
        out.extend(gauss_legendre_composite(a, b, panels));
        a = b;
        b = (2.0 * b).min(horizon);
    }
    out
}

/// `‖h1‖²_L2(0,T) + ‖h2‖²_L2((0,T)²)` for a tensor-product Gauss rule.
///
/// The 2-D tensor sum `Σ_ij w_i w_j ‖E_iᵀ M_k E_j‖²_F` factors as
/// `tr(M_k G M_k G)` with `G = Σ_i w_i E_i E_iᵀ`, which is how it is
/// evaluated; the 1-D part is `tr(C G Cᵀ)`.
fn kernel_energy<T: Real>(kernels: &KernelEvaluator<T>, rule: &[(f64, f64)]) -> T {
    let n = kernels.sys.order();
    let mut g = Mat::<T>::zeros(n, n);
    for &(t, w) in rule {
        let e = kernels.state_response(T::lit(t));
        g += &e * e.transpose() * T::lit(w);
    }
    let sys = &kernels.sys;
    let mut acc = trace_of_product(&(sys.c() * &g), &sys.c().transpose());
    for m in sys.m_quad() {
        let mg = m * &g;
        acc += trace_of_product(&mg, &mg);
    }
    acc
}

/// Squared `‖h1‖² + ‖h2‖²` over `[0, T]` with the kernels of an error system
/// differenced before squaring.
///
/// With `L = [√w_i E_i]` the 1-D part is `‖C L‖²_F` and the 2-D part
/// `Σ_k ‖Lᵀ M_k L‖²_F`; every entry of `C L` and `Lᵀ M_k L` is a kernel
/// difference computed directly, so a vanishing error is resolved to
/// roundoff of the kernels rather than roundoff of `‖S‖²`.
fn difference_energy<T: Real>(kernels: &KernelEvaluator<T>, rule: &[(f64, f64)]) -> T {
    let sys = &kernels.sys;
    let m = sys.inputs();
    let mut l = Mat::<T>::zeros(sys.order(), rule.len() * m);
    for (i, &(t, w)) in rule.iter().enumerate() {
        let e = kernels.state_response(T::lit(t)) * T::lit(w.sqrt());
        l.columns_mut(i * m, m).copy_from(&e);
    }
    let mut acc = (sys.c() * &l).norm_squared();
    const CHUNK: usize = 256;
    for mk in sys.m_quad() {
        let ml = mk * &l;
        let mut start = 0;
        while start < ml.ncols() {
            let width = CHUNK.min(ml.ncols() - start);
            acc += l.tr_mul(&ml.columns(start, width)).norm_squared();
            start += width;
        }
    }
    acc
}

/// Horizon from the decay rate, panel doubling and horizon extension until
/// the value is stable to `rtol/10`; changes below the absolute `floor`
/// count as settled.
fn adaptive_quadrature(
    abscissa: f64,
    t0: f64,
    scale: f64,
    rtol: f64,
    floor: f64,
    max_panels: usize,
    energy: impl Fn(&[(f64, f64)]) -> f64,
) -> Result<f64> {
    let target = rtol / 10.0;
    let close = |a: f64, b: f64| (a - b).abs() <= (target * a.abs()).max(floor);
    let mut horizon = (10.0 * scale / rtol).ln() / abscissa.abs();
    let integrate = |horizon: f64| -> Result<f64> {
        let mut panels = 1usize;
        let mut prev = energy(&graded_gauss_legendre(horizon, t0, panels));
        while panels < max_panels {
            panels *= 2;
            let next = energy(&graded_gauss_legendre(horizon, t0, panels));
            if close(next, prev) {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Quadrature(format!("no panel convergence on [0, {horizon:.3}]")))
    };
    let mut value = integrate(horizon)?;
    for _ in 0..8 {
        let extended = integrate(1.5 * horizon)?;
        let settled = close(extended, value);
        value = extended;
        horizon *= 1.5;
        if settled {
            return Ok(value);
        }
    }
    Err(Error::Quadrature(format!("tail not negligible at horizon {horizon:.3}")))
}

/// Fastest time scale of `ẋ = Ax`, bounded via `‖A‖_F ≥ max |λ|`.
fn fast_time_scale<T: Real>(sys: &LqoSystem<T>) -> f64 {
    1.0 / sys.a().norm().as_f64().max(f64::MIN_POSITIVE)
}

/// Size of the kernels' energy, used for the horizon estimate.
fn energy_scale<T: Real>(sys: &LqoSystem<T>, abscissa: f64) -> f64 {
    let e0 = sys.b().norm().as_f64().powi(2);
    let lin = sys.c().norm().as_f64().powi(2) * e0;
    let quad: f64 = sys.m_quad().iter().map(|m| m.norm().as_f64().powi(2) * e0 * e0).sum();
    ((lin + quad) / abscissa.abs()).max(1.0)
}

fn stable_abscissa<T: Real>(sys: &LqoSystem<T>) -> Result<f64> {
    let abscissa = sys.spectral_abscissa()?.as_f64();
    if abscissa >= 0.0 {
        return Err(Error::Unstable { abscissa });
    }
    Ok(abscissa)
}

/// H2 norm squared by direct quadrature of the Volterra kernels; an
/// oracle independent of the matrix-equation solvers.
///
/// The horizon is chosen from the spectral abscissa so the neglected tail
/// is below `rtol/10` (and confirmed by extending it), and the panel count
/// of a rule graded towards `t = 0` is doubled until successive values
/// agree to `rtol/10`.
pub fn kernel_quadrature_h2<T: Real>(sys: &LqoSystem<T>, rtol: f64) -> Result<T> {
    if !(rtol >= 1e-8) {
        return Err(Error::Config(format!("quadrature rtol {rtol:e} below 1e-8")));
    }
    let abscissa = stable_abscissa(sys)?;
    let kernels = KernelEvaluator::new(sys);
    let scale = energy_scale(sys, abscissa);
    let value = adaptive_quadrature(abscissa, fast_time_scale(sys), scale, rtol, f64::MIN_POSITIVE, 512, |rule| {
        kernel_energy(&kernels, rule).as_f64()
    })?;
    Ok(T::lit(value))
}

/// `‖S − S_r‖²_H2` by quadrature of the kernel differences.
///
/// Unlike the Gramian formula, which subtracts quantities of size `‖S‖²`,
/// this resolves errors down to roughly `eps · ‖S‖` (relative to `‖S‖`),
/// so it can certify near-exact reduced models.
pub fn kernel_quadrature_h2_error<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>, rtol: f64) -> Result<T> {
    if !(rtol >= 1e-8) {
        return Err(Error::Config(format!("quadrature rtol {rtol:e} below 1e-8")));
    }
    let err = assemble_error_system(fom, rom)?;
    let abscissa = stable_abscissa(&err.sys)?;
    let kernels = KernelEvaluator::new(&err.sys);
    let scale = energy_scale(fom, abscissa);
    // values below roundoff of the kernels squared are noise
    let floor = (T::eps().as_f64() * T::eps().as_f64()) * scale;
    let value = adaptive_quadrature(abscissa, fast_time_scale(&err.sys), scale, rtol, floor, 64, |rule| {
        difference_energy(&kernels, rule).as_f64()
    })?;
    Ok(T::lit(value))
}
