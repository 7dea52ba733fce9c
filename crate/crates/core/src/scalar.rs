//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra as na;
use num_traits as nt;

/// Real floating-point scalar usable by the solvers (`f32` or `f64`).
///
/// The associated constants carry precision-dependent thresholds so the
/// same generic code certifies `f64` solves at the tight levels used in the
/// tests while still accepting `f32` results.
pub trait Real:
    na::RealField
    + Copy
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Largest relative residual a matrix-equation solve may report and
    /// still be considered successful.
    const RESIDUAL_TOL: f64;
    /// Relative pivot size below which a small Sylvester block is declared
    /// singular (spectral overlap).
    const PIVOT_TOL: f64;
    /// Condition-number cap for Gram matrices that are inverted.
    const COND_CAP: f64;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("representable literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Machine epsilon.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f64 {
    const RESIDUAL_TOL: f64 = 1e-8;
    const PIVOT_TOL: f64 = 1e-14;
    const COND_CAP: f64 = 1e12;
}

impl Real for f32 {
    const RESIDUAL_TOL: f64 = 1e-3;
    const PIVOT_TOL: f64 = 1e-6;
    const COND_CAP: f64 = 1e6;
}
