//! Coupling equations of the error system, gradients of the squared H2
//! error and the first-order optimality residuals.

use crate::error::{Error, Result};
use crate::h2::{cross_x, cross_z, cross_z_weighted, Prepared};
use crate::linalg::{fro, guarded_inverse, Mat};
use crate::mateq::{qo_gramian_factored, reach_gramian_factored, solve_lyapunov_factored, SylvesterForm};
use crate::scalar::Real;
use crate::system::{LqoSystem, ProjectionPair};

/// Solutions of the six matrix equations tying a FOM to a ROM:
///
/// ```text
/// A_r P_r + P_r A_rᵀ + B_r B_rᵀ = 0
/// A_rᵀ Q_r + Q_r A_r + Σ M_kr P_r M_kr + C_rᵀ C_r = 0
/// A_rᵀ Q1_r + Q1_r A_r + C_rᵀ C_r = 0
/// A X + X A_rᵀ + B B_rᵀ = 0
/// Aᵀ Z + Z A_r − Σ M_k X M_kr − Cᵀ C_r = 0
/// Aᵀ Z1 + Z1 A_r − Cᵀ C_r = 0
/// ```
#[derive(Debug, Clone)]
pub struct CouplingSolutions<T: Real> {
    pub x: Mat<T>,
    pub z: Mat<T>,
    pub z1: Mat<T>,
    pub p_r: Mat<T>,
    pub q_r: Mat<T>,
    pub q1_r: Mat<T>,
}

fn check_dims<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<()> {
    if fom.inputs() != rom.inputs() || fom.outputs() != rom.outputs() {
        return Err(Error::Dimension(format!(
            "FOM (m, p) = ({}, {}) but ROM ({}, {})",
            fom.inputs(),
            fom.outputs(),
            rom.inputs(),
            rom.outputs()
        )));
    }
    Ok(())
}

pub fn coupling_solutions<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<CouplingSolutions<T>> {
    coupling_solutions_prepared(&Prepared::new(fom)?, &Prepared::new(rom)?)
}

/// As [`coupling_solutions`] with both Schur factorizations supplied.
///
/// The cross solutions need only disjoint spectra; an unstable ROM is
/// reported as [`Error::UnstableReduced`] because the reduced Gramians do
/// not exist.
pub fn coupling_solutions_prepared<T: Real>(fom: &Prepared<T>, rom: &Prepared<T>) -> Result<CouplingSolutions<T>> {
    check_dims(fom.sys(), rom.sys())?;
    if !fom.is_stable() {
        return Err(Error::Unstable { abscissa: fom.schur().spectral_abscissa().as_f64() });
    }
    if !rom.is_stable() {
        return Err(Error::UnstableReduced { abscissa: rom.schur().spectral_abscissa().as_f64() });
    }
    let x = cross_x(fom, rom)?;
    let z = cross_z(fom, rom, &x)?;
    let z1 = cross_z_weighted(fom, rom, &x, T::zero())?;
    let s_r = rom.sys();
    let (p_r, _) = reach_gramian_factored(rom.schur(), s_r.b())?;
    let (q_r, _) = qo_gramian_factored(rom.schur(), s_r, &p_r)?;
    let (q1_r, _) = solve_lyapunov_factored(rom.schur(), &s_r.c().tr_mul(s_r.c()), SylvesterForm::Transposed)?;
    Ok(CouplingSolutions { x, z, z1, p_r, q_r, q1_r })
}

/// Gradients of `J = ‖S − S_r‖²_H2` with respect to the ROM matrices.
#[derive(Debug, Clone)]
pub struct GradientSet<T: Real> {
    pub grad_a: Mat<T>,
    pub grad_b: Mat<T>,
    pub grad_c: Mat<T>,
    pub grad_m: Vec<Mat<T>>,
    pub norm_a: T,
    pub norm_b: T,
    pub norm_c: T,
    /// Frobenius norm over all `∇_{M_kr} J` stacked.
    pub norm_m: T,
}

/// The stationarity residuals; each is half the matching gradient:
///
/// ```text
/// res_a = (2Q_r − Q1_r) P_r + (2Z − Z1)ᵀ X
/// res_b = (2Q_r − Q1_r) B_r + (2Z − Z1)ᵀ B
/// res_c = C_r P_r − C X
/// res_m = P_r M_kr P_r − Xᵀ M_k X
/// ```
fn residual_parts<T: Real>(
    fom: &LqoSystem<T>,
    rom: &LqoSystem<T>,
    cs: &CouplingSolutions<T>,
) -> (Mat<T>, Mat<T>, Mat<T>, Vec<Mat<T>>) {
    let two = T::lit(2.0);
    let q_mix = &cs.q_r * two - &cs.q1_r;
    let z_mix_t = (&cs.z * two - &cs.z1).transpose();
    let res_a = &q_mix * &cs.p_r + &z_mix_t * &cs.x;
    let res_b = &q_mix * rom.b() + &z_mix_t * fom.b();
    let res_c = rom.c() * &cs.p_r - fom.c() * &cs.x;
    let res_m = fom
        .m_quad()
        .iter()
        .zip(rom.m_quad())
        .map(|(m, m_r)| &cs.p_r * m_r * &cs.p_r - cs.x.tr_mul(m) * &cs.x)
        .collect();
    (res_a, res_b, res_c, res_m)
}

fn stacked_norm<T: Real>(ms: &[Mat<T>]) -> T {
    ms.iter().map(|m| m.norm_squared()).fold(T::zero(), |a, b| a + b).sqrt()
}

pub fn gradients<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>, coupling: &CouplingSolutions<T>) -> GradientSet<T> {
    let two = T::lit(2.0);
    let (ra, rb, rc, rm) = residual_parts(fom, rom, coupling);
    let grad_m: Vec<Mat<T>> = rm.into_iter().map(|m| m * two).collect();
    let (grad_a, grad_b, grad_c) = (ra * two, rb * two, rc * two);
    GradientSet {
        norm_a: fro(&grad_a),
        norm_b: fro(&grad_b),
        norm_c: fro(&grad_c),
        norm_m: stacked_norm(&grad_m),
        grad_a,
        grad_b,
        grad_c,
        grad_m,
    }
}

/// Optimality residuals with a scale-free summary.
#[derive(Debug, Clone)]
pub struct FoncResiduals<T: Real> {
    pub res_a: Mat<T>,
    pub res_b: Mat<T>,
    pub res_c: Mat<T>,
    pub res_m: Vec<Mat<T>>,
    pub norm_a: T,
    pub norm_b: T,
    pub norm_c: T,
    pub norm_m: T,
    /// `max` over the conditions of `‖res‖_F / (‖reference‖_F + ε)` with
    /// references `‖Q_r‖‖P_r‖`, `‖Q_r‖‖B_r‖`, `‖C‖‖X‖` and `‖XᵀM_kX‖`.
    pub combined: T,
}

pub fn fonc_residuals<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<FoncResiduals<T>> {
    let cs = coupling_solutions(fom, rom)?;
    Ok(fonc_from_coupling(fom, rom, &cs))
}

pub fn fonc_from_coupling<T: Real>(
    fom: &LqoSystem<T>,
    rom: &LqoSystem<T>,
    cs: &CouplingSolutions<T>,
) -> FoncResiduals<T> {
    let (res_a, res_b, res_c, res_m) = residual_parts(fom, rom, cs);
    let eps = T::eps();
    let qn = fro(&cs.q_r);
    let mut combined = fro(&res_a) / (qn * fro(&cs.p_r) + eps);
    combined = combined.max(fro(&res_b) / (qn * fro(rom.b()) + eps));
    combined = combined.max(fro(&res_c) / (fro(fom.c()) * fro(&cs.x) + eps));
    for (res, m) in res_m.iter().zip(fom.m_quad()) {
        let reference = fro(&(cs.x.tr_mul(m) * &cs.x));
        combined = combined.max(fro(res) / (reference + eps));
    }
    FoncResiduals {
        norm_a: fro(&res_a),
        norm_b: fro(&res_b),
        norm_c: fro(&res_c),
        norm_m: stacked_norm(&res_m),
        res_a,
        res_b,
        res_c,
        res_m,
        combined,
    }
}

/// `V = X P_r⁻¹`, `W = −(2Z − Z1)(2Q_r − Q1_r)⁻¹`; at a stationary point
/// `WᵀV = I` and projecting with this pair reproduces the ROM.
pub fn optimal_projectors<T: Real>(
    _fom: &LqoSystem<T>,
    _rom: &LqoSystem<T>,
    cs: &CouplingSolutions<T>,
) -> Result<ProjectionPair<T>> {
    let two = T::lit(2.0);
    let p_inv = guarded_inverse(&cs.p_r, "P_r")?;
    let q_mix_inv = guarded_inverse(&(&cs.q_r * two - &cs.q1_r), "2Q_r - Q1_r")?;
    let v = &cs.x * p_inv;
    let w = -((&cs.z * two - &cs.z1) * q_mix_inv);
    Ok(ProjectionPair { v, w })
}

/// Per-parameter-group outcome of [`gradient_fd_check`].
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    /// `max |fd − g| / max |g|` per group (absolute when `g ≡ 0`).
    pub dev_a: f64,
    pub dev_b: f64,
    pub dev_c: f64,
    pub dev_m: f64,
    /// `max |fd − g|` over all entries, for points where `g ≈ 0`.
    pub max_abs_deviation: f64,
    /// Entries whose perturbation destabilized the ROM (group, k, i, j).
    pub skipped: Vec<(char, usize, usize, usize)>,
}

impl FdReport {
    pub fn max_deviation(&self) -> f64 {
        self.dev_a.max(self.dev_b).max(self.dev_c).max(self.dev_m)
    }
}

/// Compares the analytic gradients with central differences of
/// [`crate::h2::h2_error`] using absolute step `step`.
///
/// Off-diagonal entries of each `M_kr` are perturbed symmetrically, by
/// `step/2` at `(i, j)` and at `(j, i)`, so the difference quotient
/// approximates `∇_{M_kr}J[i, j]`.
pub fn gradient_fd_check<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>, step: f64) -> Result<FdReport> {
    if !(1e-8..=1e-2).contains(&step) {
        return Err(Error::Config(format!("finite-difference step {step:e} outside [1e-8, 1e-2]")));
    }
    let cs = coupling_solutions(fom, rom)?;
    let grads = gradients(fom, rom, &cs);
    let prep = Prepared::new(fom)?;
    let fom_norm = crate::h2::h2_norm_sq_prepared(&prep)?;
    let eval = |s: &LqoSystem<T>| -> Option<f64> {
        crate::h2::h2_error_parts(&prep, fom_norm, s).ok().map(|p| p.error_sq().as_f64())
    };
    let h = T::lit(step);
    let mut report = FdReport::default();

    let central = |plus: Result<LqoSystem<T>>, minus: Result<LqoSystem<T>>| -> Option<f64> {
        let (jp, jm) = (eval(&plus.ok()?)?, eval(&minus.ok()?)?);
        Some((jp - jm) / (2.0 * step))
    };
    let mut abs_dev = 0.0f64;
    let mut deviation = |pairs: &[(f64, f64)]| -> f64 {
        let gmax = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        let dmax = pairs.iter().map(|p| (p.0 - p.1).abs()).fold(0.0, f64::max);
        abs_dev = abs_dev.max(dmax);
        if gmax > 0.0 {
            dmax / gmax
        } else {
            dmax
        }
    };

    let r = rom.order();
    let mut pairs = Vec::new();
    for i in 0..r {
        for j in 0..r {
            let bump = |s: T| {
                let mut a = rom.a().clone();
                a[(i, j)] += s;
                rom.with_a(a)
            };
            match central(bump(h), bump(-h)) {
                Some(fd) => pairs.push((fd, grads.grad_a[(i, j)].as_f64())),
                None => report.skipped.push(('A', 0, i, j)),
            }
        }
    }
    report.dev_a = deviation(&pairs);

    pairs.clear();
    for i in 0..r {
        for j in 0..rom.inputs() {
            let bump = |s: T| {
                let mut b = rom.b().clone();
                b[(i, j)] += s;
                rom.with_b(b)
            };
            match central(bump(h), bump(-h)) {
                Some(fd) => pairs.push((fd, grads.grad_b[(i, j)].as_f64())),
                None => report.skipped.push(('B', 0, i, j)),
            }
        }
    }
    report.dev_b = deviation(&pairs);

    pairs.clear();
    for i in 0..rom.outputs() {
        for j in 0..r {
            let bump = |s: T| {
                let mut c = rom.c().clone();
                c[(i, j)] += s;
                rom.with_c(c)
            };
            match central(bump(h), bump(-h)) {
                Some(fd) => pairs.push((fd, grads.grad_c[(i, j)].as_f64())),
                None => report.skipped.push(('C', 0, i, j)),
            }
        }
    }
    report.dev_c = deviation(&pairs);

    pairs.clear();
    let half = T::lit(0.5);
    for k in 0..rom.outputs() {
        for i in 0..r {
            for j in i..r {
                let bump = |s: T| {
                    let mut ms = rom.m_quad().to_vec();
                    if i == j {
                        ms[k][(i, i)] += s;
                    } else {
                        ms[k][(i, j)] += s * half;
                        ms[k][(j, i)] += s * half;
                    }
                    rom.with_m(ms)
                };
                match central(bump(h), bump(-h)) {
                    Some(fd) => {
                        // symmetric perturbation measures the average of the
                        // (i, j) and (j, i) partials
                        let g = (grads.grad_m[k][(i, j)] + grads.grad_m[k][(j, i)]) * half;
                        pairs.push((fd, g.as_f64()));
                    }
                    None => report.skipped.push(('M', k, i, j)),
                }
            }
        }
    }
    report.dev_m = deviation(&pairs);
    report.max_abs_deviation = abs_dev;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::h2::{gramians, h2_error};
    use crate::linalg::rel_diff_mat;
    use crate::mateq::{solve_sylvester, SylvesterProblem};
    use crate::models::random_stable_lqo;

    fn scalar(a: f64, b: f64, c: f64, m: f64) -> LqoSystem<f64> {
        let s = |v: f64| Mat::from_element(1, 1, v);
        LqoSystem::new(s(a), s(b), s(c), vec![s(m)]).unwrap()
    }

    #[test]
    fn scalar_pair_values() {
        let (s, s_r) = (scalar(-1.0, 1.0, 1.0, 1.0), scalar(-2.0, 1.0, 1.0, 1.0));
        let cs = coupling_solutions(&s, &s_r).unwrap();
        assert!((cs.x[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((cs.z[(0, 0)] + 4.0 / 9.0).abs() < 1e-15);
        assert!((cs.p_r[(0, 0)] - 0.25).abs() < 1e-15);
        let g = gradients(&s, &s_r, &cs);
        assert!((g.grad_m[0][(0, 0)] + 7.0 / 72.0).abs() < 1e-15);
        let f = fonc_residuals(&s, &s_r).unwrap();
        assert!((f.res_m[0][(0, 0)] + 7.0 / 144.0).abs() < 1e-15);
        let fd = gradient_fd_check(&s, &s_r, 1e-6).unwrap();
        assert!(fd.max_deviation() < 1e-7, "{fd:?}");
    }

    #[test]
    fn self_point() {
        let s = random_stable_lqo::<f64>(5, 2, 2, 1, 0.5).unwrap();
        let cs = coupling_solutions(&s, &s).unwrap();
        let g = gramians(&s, false).unwrap();
        assert!(rel_diff_mat(&cs.x, &g.p_gram) < 1e-12);
        assert!(rel_diff_mat(&cs.p_r, &g.p_gram) < 1e-12);
        assert!(rel_diff_mat(&cs.q_r, &g.q_gram) < 1e-12);
        // the coupling sign convention gives Z = −Q at the self-point
        assert!(rel_diff_mat(&(-&cs.z), &g.q_gram) < 1e-12);
        let f = fonc_from_coupling(&s, &s, &cs);
        assert!(f.combined <= 1e-10, "{}", f.combined);
        let grads = gradients(&s, &s, &cs);
        let scale = fro(&g.q_gram) * fro(&g.p_gram);
        for n in [grads.norm_a, grads.norm_b, grads.norm_c, grads.norm_m] {
            assert!(n <= 1e-10 * scale);
        }
        let pp = optimal_projectors(&s, &s, &cs).unwrap();
        assert!((pp.w.tr_mul(&pp.v) - Mat::identity(5, 5)).norm() < 1e-8);
        let fd = gradient_fd_check(&s, &s, 1e-4).unwrap();
        assert!(fd.skipped.is_empty());
        // zero-gradient point: only absolute deviations are meaningful
        assert!(fd.max_abs_deviation < 1e-6 * scale, "{fd:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let s = random_stable_lqo::<f64>(10, 2, 2, seed, 0.5).unwrap();
            let s_r = random_stable_lqo::<f64>(3, 2, 2, 100 + seed, 0.5).unwrap();
            let fd = gradient_fd_check(&s, &s_r, 1e-6).unwrap();
            assert!(fd.skipped.is_empty());
            assert!(fd.max_deviation() <= 1e-5, "{fd:?}");
            let g = gradients(&s, &s_r, &coupling_solutions(&s, &s_r).unwrap());
            for gm in &g.grad_m {
                assert!((gm - gm.transpose()).norm() <= 1e-13 * gm.norm());
            }
        }
    }

    #[test]
    fn fd_step_refinement_improves() {
        let s = random_stable_lqo::<f64>(6, 1, 1, 4, 0.5).unwrap();
        let s_r = random_stable_lqo::<f64>(2, 1, 1, 5, 0.5).unwrap();
        let devs: Vec<f64> =
            [1e-2, 1e-4, 1e-6].iter().map(|&h| gradient_fd_check(&s, &s_r, h).unwrap().max_deviation()).collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        assert!(gradient_fd_check(&s, &s_r, 1.0).is_err());
    }

    #[test]
    fn residuals_are_half_gradients() {
        let s = random_stable_lqo::<f64>(7, 2, 2, 9, 0.5).unwrap();
        let s_r = random_stable_lqo::<f64>(3, 2, 2, 10, 0.5).unwrap();
        let cs = coupling_solutions(&s, &s_r).unwrap();
        let (g, f) = (gradients(&s, &s_r, &cs), fonc_from_coupling(&s, &s_r, &cs));
        assert!(rel_diff_mat(&(g.grad_a * 0.5), &f.res_a) <= 1e-13);
        assert!(rel_diff_mat(&(g.grad_b * 0.5), &f.res_b) <= 1e-13);
        assert!(rel_diff_mat(&(g.grad_c * 0.5), &f.res_c) <= 1e-13);
        assert!(rel_diff_mat(&(&g.grad_m[1] * 0.5), &f.res_m[1]) <= 1e-13);
    }

    #[test]
    fn lti_and_pure_quadratic_collapse() {
        let s = random_stable_lqo::<f64>(6, 2, 1, 3, 0.5).unwrap();
        let s_r = random_stable_lqo::<f64>(2, 2, 1, 4, 0.5).unwrap();

        let lti = s.with_m(vec![Mat::zeros(6, 6)]).unwrap();
        let lti_r = s_r.with_m(vec![Mat::zeros(2, 2)]).unwrap();
        let cs = coupling_solutions(&lti, &lti_r).unwrap();
        assert!(rel_diff_mat(&cs.z, &cs.z1) < 1e-12);
        assert!(rel_diff_mat(&cs.q_r, &cs.q1_r) < 1e-12);
        let g = gradients(&lti, &lti_r, &cs);
        let wilson_a = (&cs.q1_r * &cs.p_r + cs.z1.transpose() * &cs.x) * 2.0;
        assert!(rel_diff_mat(&g.grad_a, &wilson_a) < 1e-12);

        let qo = s.with_c(Mat::zeros(1, 6)).unwrap();
        let qo_r = s_r.with_c(Mat::zeros(1, 2)).unwrap();
        let cs = coupling_solutions(&qo, &qo_r).unwrap();
        let g = gradients(&qo, &qo_r, &cs);
        let expect_a = (&cs.q_r * &cs.p_r + cs.z.transpose() * &cs.x) * 4.0;
        let expect_b = (&cs.q_r * qo_r.b() + cs.z.transpose() * qo.b()) * 4.0;
        assert!(rel_diff_mat(&g.grad_a, &expect_a) < 1e-12);
        assert!(rel_diff_mat(&g.grad_b, &expect_b) < 1e-12);
    }

    #[test]
    fn degenerate_rom_projectors() {
        // duplicated states: the second copy of the state is never excited
        let s = random_stable_lqo::<f64>(4, 1, 1, 2, 0.5).unwrap();
        let a_r = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let rom = LqoSystem::new(a_r, Mat::from_row_slice(2, 1, &[1.0, 1.0]), Mat::from_row_slice(1, 2, &[1.0, 1.0]), vec![Mat::identity(2, 2)]).unwrap();
        let cs = coupling_solutions(&s, &rom).unwrap();
        assert!(matches!(optimal_projectors(&s, &rom, &cs), Err(Error::Singular { .. })));
    }

    #[test]
    fn unstable_rom_reported() {
        let s = scalar(-1.0, 1.0, 1.0, 1.0);
        assert!(matches!(coupling_solutions(&s, &scalar(0.5, 1.0, 1.0, 1.0)), Err(Error::UnstableReduced { .. })));
        assert!(h2_error(&s, &scalar(0.5, 1.0, 1.0, 1.0)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // tr(DᵀW) = tr(FᵀY) for A Y + Y A_rᵀ + D = 0, Aᵀ W + W A_r + F = 0
            #[test]
            fn trace_swap(seed in 0u64..100_000, n in 1usize..12, r in 1usize..5) {
                let s = random_stable_lqo::<f64>(n, r, 1, seed, 0.3).unwrap();
                let s_r = random_stable_lqo::<f64>(r, n, 1, seed ^ 0xabc, 0.3).unwrap();
                let d = s.b().clone();
                let f = s_r.b().transpose();
                let (y, _) = solve_sylvester(&SylvesterProblem { a_left: s.a(), a_right: s_r.a(), rhs: &d, form: SylvesterForm::Standard }).unwrap();
                let (w, _) = solve_sylvester(&SylvesterProblem { a_left: s.a(), a_right: s_r.a(), rhs: &f, form: SylvesterForm::Transposed }).unwrap();
                let lhs = d.tr_mul(&w).trace();
                let rhs = f.tr_mul(&y).trace();
                prop_assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(rhs.abs()).max(1e-300));
            }
        }
    }
}
