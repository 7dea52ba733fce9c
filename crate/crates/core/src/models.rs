//! Benchmark and test-instance generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::mateq::RealSchur;
use crate::scalar::Real;
use crate::system::LqoSystem;

/// 1-D advection–diffusion `v_t = α v_xx − β v_x` on `(0, 1)` with Dirichlet
/// input `v(t,0) = u₀` and Neumann input `α v_x(t,1) = u₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvectionDiffusionConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AdvectionDiffusionConfig {
    fn default() -> Self {
        Self { n: 300, alpha: 0.01, beta: 1.0 }
    }
}

impl AdvectionDiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.n < 3 {
            return Err(Error::Config(format!("n must be at least 3, got {}", self.n)));
        }
        Ok(())
    }
}

/// Finite-difference semi-discretization on the nodes `x_i = i h`,
/// `i = 1..n`, `h = 1/n`: central differences for diffusion, first-order
/// upwind for advection, the Dirichlet value folded into the load of the
/// first node and the Neumann flux imposed through a ghost node at `x = 1`.
///
/// The output is the discretized tracking cost `(h/2)‖x − 1‖²` minus its
/// constant part, i.e. `C = −h 1ᵀ`, `M = (h/2) I`; the returned offset
/// `(h/2) n = 1/2` restores the cost as `y + offset`.
pub fn build_advection_diffusion<T: Real>(cfg: &AdvectionDiffusionConfig) -> Result<(LqoSystem<T>, T)> {
    cfg.validate()?;
    let n = cfg.n;
    let h = 1.0 / n as f64;
    let diff = cfg.alpha / (h * h);
    let adv = cfg.beta / h;
    let mut a = Mat::<T>::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i)] = T::lit(-2.0 * diff - adv);
        if i > 0 {
            a[(i, i - 1)] = T::lit(diff + adv);
        }
        a[(i, i + 1)] = T::lit(diff);
    }
    a[(n - 1, n - 2)] = T::lit(2.0 * diff + adv);
    a[(n - 1, n - 1)] = T::lit(-2.0 * diff - adv);

    let mut b = Mat::<T>::zeros(n, 2);
    b[(0, 0)] = T::lit(diff + adv);
    b[(n - 1, 1)] = T::lit(2.0 / h);
    let c = Mat::from_element(1, n, T::lit(-h));
    let m = Mat::<T>::identity(n, n) * T::lit(h / 2.0);
    let sys = LqoSystem::new(a, b, c, vec![m])?;
    Ok((sys, T::lit(h / 2.0 * n as f64)))
}

/// Random LQO system with `max Re λ(A) ≤ −spectral_gap`.
///
/// `A = R − (spectral_gap + ρ(R)) I` with `R` Gaussian scaled by `1/√n`;
/// `B`, `C` Gaussian; `M_k` symmetric Gaussian scaled by `1/√n`.
pub fn random_stable_lqo<T: Real>(
    n: usize,
    m: usize,
    p: usize,
    seed: u64,
    spectral_gap: f64,
) -> Result<LqoSystem<T>> {
    if !(spectral_gap > 0.0) {
        return Err(Error::Config(format!("spectral gap must be positive, got {spectral_gap}")));
    }
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::Config("n, m and p must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize, scale: f64| {
        Mat::<f64>::from_fn(rows, cols, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
    };
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let r = gauss(n, n, inv_sqrt_n);
    let b = gauss(n, m, 1.0);
    let c = gauss(p, n, 1.0);
    let ms: Vec<Mat<f64>> = (0..p)
        .map(|_| {
            let g = gauss(n, n, inv_sqrt_n);
            (&g + g.transpose()) * 0.5
        })
        .collect();
    let rho = RealSchur::new(&r)?
        .eigenvalues()
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max);
    let a = r - Mat::identity(n, n) * (spectral_gap + rho);
    let conv = |x: &Mat<f64>| x.map(T::lit);
    LqoSystem::new(conv(&a), conv(&b), conv(&c), ms.iter().map(conv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advection_diffusion_setup() {
        let (sys, offset) = build_advection_diffusion::<f64>(&AdvectionDiffusionConfig::default()).unwrap();
        assert_eq!(sys.dims(), (300, 2, 1));
        assert!(sys.c().iter().all(|&v| (v + 1.0 / 300.0).abs() < 1e-18));
        assert_eq!(sys.m_quad()[0], Mat::identity(300, 300) * (1.0 / 600.0));
        assert!((offset - 0.5).abs() < 1e-15);
        assert!(sys.spectral_abscissa().unwrap() < 0.0);
        let (_, off2) = build_advection_diffusion::<f64>(&AdvectionDiffusionConfig { n: 17, ..Default::default() }).unwrap();
        assert!((off2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cost_at_target_state() {
        let (sys, offset) = build_advection_diffusion::<f64>(&AdvectionDiffusionConfig::default()).unwrap();
        let ones = Mat::from_element(300, 1, 1.0);
        let y = (sys.c() * &ones)[(0, 0)] + (ones.transpose() * &sys.m_quad()[0] * &ones)[(0, 0)];
        assert!((y + 0.5).abs() < 1e-13);
        assert!((y + offset).abs() < 1e-13);
    }

    #[test]
    fn invalid_config() {
        let bad = AdvectionDiffusionConfig { alpha: 0.0, ..Default::default() };
        assert!(matches!(build_advection_diffusion::<f64>(&bad), Err(Error::Config(_))));
        let small = AdvectionDiffusionConfig { n: 2, ..Default::default() };
        assert!(build_advection_diffusion::<f64>(&small).is_err());
    }

    #[test]
    fn random_is_deterministic_and_gapped() {
        let a = random_stable_lqo::<f64>(8, 2, 2, 7, 0.5).unwrap();
        assert_eq!(a, random_stable_lqo::<f64>(8, 2, 2, 7, 0.5).unwrap());
        assert_ne!(a, random_stable_lqo::<f64>(8, 2, 2, 8, 0.5).unwrap());
        for seed in 0..10 {
            let s = random_stable_lqo::<f64>(12, 1, 1, seed, 0.5).unwrap();
            assert!(s.spectral_abscissa().unwrap() <= -0.5 + 1e-10);
        }
        assert!(random_stable_lqo::<f64>(3, 1, 1, 0, 0.0).is_err());
    }
}
