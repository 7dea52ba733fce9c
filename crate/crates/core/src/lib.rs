//! H2-optimal model order reduction for linear systems with quadratic
//! outputs (LQO systems).
//!
//! An LQO system
//!
//! ```text
//! ẋ(t) = A x(t) + B u(t),    y_k(t) = (C x(t))_k + x(t)ᵀ M_k x(t)
//! ```
//!
//! is reduced either by a two-sided fixed-point iteration ([`tsia`]) whose
//! fixed points satisfy the first-order H2-optimality conditions, or by
//! balanced truncation of its reachability / quadratic-output observability
//! Gramians ([`bt`]). Everything is dense and generic over [`Real`]
//! (`f32`/`f64`); the `*64` aliases below fix `f64`.

// `!(x < y)` is used deliberately so that NaN fails the check; the dense
// kernels index explicitly
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bt;
pub mod conditions;
pub mod error;
pub mod h2;
pub mod io;
pub mod linalg;
pub mod mateq;
pub mod models;
pub mod scalar;
pub mod sim;
pub mod system;
pub mod tsia;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use scalar::Real;
pub use system::{
    assemble_error_system, kronecker_output, project, symmetrize_quadratic, validate, validate_parts,
    ErrorSystem, KroneckerOutputMatrix, LqoSystem, ProjectionPair, ValidationReport,
};

pub type Mat64 = Mat<f64>;
pub type LqoSystem64 = LqoSystem<f64>;
pub type ProjectionPair64 = ProjectionPair<f64>;
pub type GramianSet64 = h2::GramianSet<f64>;
pub type CouplingSolutions64 = conditions::CouplingSolutions<f64>;
pub type GradientSet64 = conditions::GradientSet<f64>;
pub type TsiaRun64 = tsia::TsiaRun<f64>;
pub type BalancedReduction64 = bt::BalancedReduction<f64>;
