//! Balanced truncation of the reachability / quadratic-output observability
//! Gramian pair (square-root method).

use crate::error::{Error, Result};
use crate::h2::{gramians_prepared, Prepared};
use crate::linalg::Mat;
use crate::scalar::Real;
use crate::system::{project, LqoSystem, ProjectionPair};

#[derive(Debug, Clone)]
pub struct BalancedReduction<T: Real> {
    pub rom: LqoSystem<T>,
    /// Singular values of `UᵀL` (square roots of `λ(PQ)`), descending, for
    /// all `n` states.
    pub hankel_like_values: Vec<T>,
    pub projectors: ProjectionPair<T>,
    pub rom_stable: bool,
}

/// Gramian square-root factors and the SVD of `UᵀL`, computed once and
/// truncated to any order.
#[derive(Debug, Clone)]
pub struct BalancedFactorization<T: Real> {
    fom: LqoSystem<T>,
    l: Mat<T>,
    u: Mat<T>,
    left_sv: Mat<T>,
    right_sv_t: Mat<T>,
    values: Vec<T>,
    rank: usize,
}

/// `X = F Fᵀ` from the symmetric eigendecomposition, negative eigenvalues
/// (roundoff on a semidefinite Gramian) clipped to zero.
fn psd_factor<T: Real>(x: &Mat<T>) -> Mat<T> {
    let eig = x.clone().symmetric_eigen();
    let mut f = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

impl<T: Real> BalancedFactorization<T> {
    pub fn new(fom: &LqoSystem<T>) -> Result<Self> {
        let prep = Prepared::new(fom)?;
        let g = gramians_prepared(&prep, false)?;
        let l = psd_factor(&g.p_gram);
        let u = psd_factor(&g.q_gram);
        let svd = u.tr_mul(&l).svd(true, true);
        let left = svd.u.ok_or(Error::SchurFailed)?;
        let right_t = svd.v_t.ok_or(Error::SchurFailed)?;
        // sort descending (nalgebra does not guarantee an order)
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal)
        });
        let values: Vec<T> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let left_sv = Mat::from_fn(left.nrows(), order.len(), |i, j| left[(i, order[j])]);
        let right_sv_t = Mat::from_fn(order.len(), right_t.ncols(), |i, j| right_t[(order[i], j)]);
        let n = fom.order();
        let cut = values.first().copied().unwrap_or(T::zero()) * T::from_usize(n).unwrap_or(T::one()) * T::eps();
        let rank = values.iter().take_while(|&&s| s > cut).count();
        Ok(Self { fom: fom.clone(), l, u, left_sv, right_sv_t, values, rank })
    }

    pub fn hankel_like_values(&self) -> &[T] {
        &self.values
    }

    /// Number of values above `n · eps · σ_1`.
    pub fn numerical_rank(&self) -> usize {
        self.rank
    }

    pub fn truncate(&self, r: usize) -> Result<BalancedReduction<T>> {
        if r == 0 || r > self.rank {
            return Err(Error::RankDeficient { rank: self.rank, wanted: r });
        }
        let scale = |m: Mat<T>| {
            let mut m = m;
            for j in 0..r {
                let s = T::one() / self.values[j].sqrt();
                m.column_mut(j).scale_mut(s);
            }
            m
        };
        let v = scale(&self.l * self.right_sv_t.rows(0, r).transpose());
        let w = scale(&self.u * self.left_sv.columns(0, r));
        let projectors = ProjectionPair { v, w };
        let rom = project(&self.fom, &projectors)?;
        let rom_stable = rom.is_stable()?;
        Ok(BalancedReduction { rom, hankel_like_values: self.values.clone(), projectors, rom_stable })
    }
}

pub fn lqo_bt<T: Real>(fom: &LqoSystem<T>, r: usize) -> Result<BalancedReduction<T>> {
    BalancedFactorization::new(fom)?.truncate(r)
}
