//! Time-domain simulation (Crank–Nicolson) and output-error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::h2::gauss_legendre_composite;
use crate::linalg::Mat;
use crate::scalar::Real;
use crate::system::LqoSystem;

/// A scalar input signal `u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    Step { amplitude: f64 },
    /// `amplitude · cos(omega t) + offset`
    Sinusoid { amplitude: f64, omega: f64, offset: f64 },
    /// `t² e^{−t/5}`
    DampedPoly,
    /// Samples on `t_k = k · dt`, linearly interpolated, held after the end.
    Samples { dt: f64, values: Vec<f64> },
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Step { amplitude } => *amplitude,
            Self::Sinusoid { amplitude, omega, offset } => amplitude * (omega * t).cos() + offset,
            Self::DampedPoly => t * t * (-t / 5.0).exp(),
            Self::Samples { dt, values } => {
                if values.is_empty() {
                    return 0.0;
                }
                let pos = (t / dt).max(0.0);
                let k = pos.floor() as usize;
                if k + 1 >= values.len() {
                    return *values.last().unwrap_or(&0.0);
                }
                let frac = pos - k as f64;
                values[k] * (1.0 - frac) + values[k + 1] * frac
            }
        }
    }

    /// `0.5 cos(πt) + 1`
    pub fn benchmark_sinusoid() -> Self {
        Self::Sinusoid { amplitude: 0.5, omega: std::f64::consts::PI, offset: 1.0 }
    }
}

/// Outputs on the grid `t_k = k · dt`, `k = 0..=steps`.
#[derive(Debug, Clone)]
pub struct SimResult<T: Real> {
    pub times: Vec<f64>,
    /// `p × (steps + 1)`
    pub y: Mat<T>,
    pub y1: Mat<T>,
    pub y2: Mat<T>,
    pub x_norm_history: Option<Vec<T>>,
}

/// Integrates `ẋ = Ax + Bu`, `x(0) = 0`, with the trapezoidal rule
/// (one LU of `I − (dt/2) A`, reused every step); `inputs[i]` drives
/// input channel `i`.
pub fn simulate<T: Real>(sys: &LqoSystem<T>, inputs: &[InputSignal], t_final: f64, dt: f64) -> Result<SimResult<T>> {
    if !(dt > 0.0) || !(t_final >= 0.0) || !dt.is_finite() || !t_final.is_finite() {
        return Err(Error::Config(format!("invalid time grid: t_final = {t_final}, dt = {dt}")));
    }
    if inputs.len() != sys.inputs() {
        return Err(Error::Dimension(format!("{} input signals for {} inputs", inputs.len(), sys.inputs())));
    }
    let steps = (t_final / dt).round() as usize;
    let n = sys.order();
    let half = T::lit(0.5 * dt);
    let eye = Mat::<T>::identity(n, n);
    let lhs = (&eye - sys.a() * half).lu();
    let rhs_op = &eye + sys.a() * half;
    let u_at = |t: f64| Mat::<T>::from_fn(inputs.len(), 1, |i, _| T::lit(inputs[i].eval(t)));

    let p = sys.outputs();
    let mut y1 = Mat::<T>::zeros(p, steps + 1);
    let mut y2 = Mat::<T>::zeros(p, steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    let mut x = Mat::<T>::zeros(n, 1);
    let mut u_prev = u_at(0.0);
    let mut times = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        if k > 0 {
            let u_next = u_at(t);
            let rhs = &rhs_op * &x + sys.b() * (&u_prev + &u_next) * half;
            x = lhs.solve(&rhs).ok_or(Error::Singular { what: "I - dt/2 A", cond: f64::INFINITY })?;
            if !crate::linalg::all_finite(&x) {
                return Err(Error::NonFinite("time step"));
            }
            u_prev = u_next;
        }
        times.push(t);
        let lin = sys.c() * &x;
        for i in 0..p {
            y1[(i, k)] = lin[(i, 0)];
            y2[(i, k)] = (x.transpose() * &sys.m_quad()[i] * &x)[(0, 0)];
        }
        norms.push(x.norm());
    }
    let y = &y1 + &y2;
    Ok(SimResult { times, y, y1, y2, x_norm_history: Some(norms) })
}

#[derive(Debug, Clone)]
pub struct OutputErrorMetrics<T: Real> {
    /// `sup_t ‖y(t) − y_r(t)‖_∞`
    pub sup_inf_error: T,
    /// `‖y(t_k) − y_r(t_k)‖_∞`
    pub abs_series: Vec<T>,
    /// `‖y(t_k) − y_r(t_k)‖_∞ / ‖y(t_k)‖_∞` (absolute where `y(t_k) = 0`)
    pub relative_series: Vec<T>,
}

pub fn output_error_metrics<T: Real>(full: &SimResult<T>, reduced: &SimResult<T>) -> Result<OutputErrorMetrics<T>> {
    if full.times != reduced.times || full.y.nrows() != reduced.y.nrows() {
        return Err(Error::Dimension("simulation grids or output counts differ".into()));
    }
    let steps = full.times.len();
    let mut abs_series = Vec::with_capacity(steps);
    let mut relative_series = Vec::with_capacity(steps);
    let mut sup = T::zero();
    for k in 0..steps {
        let diff = (full.y.column(k) - reduced.y.column(k)).amax();
        let scale = full.y.column(k).amax();
        sup = sup.max(diff);
        abs_series.push(diff);
        relative_series.push(if scale > T::zero() { diff / scale } else { diff });
    }
    Ok(OutputErrorMetrics { sup_inf_error: sup, abs_series, relative_series })
}

/// `(‖u‖_L2(0,T), ‖u⊗u‖_L2((0,T)²))` for a vector input; the second equals
/// the square of the first.
pub fn input_l2_norms(inputs: &[InputSignal], t_final: f64) -> (f64, f64) {
    let panels = (t_final.ceil() as usize).max(1) * 16;
    let rule = gauss_legendre_composite(0.0, t_final, panels);
    let sq: f64 = rule
        .iter()
        .map(|&(t, w)| w * inputs.iter().map(|u| u.eval(t).powi(2)).sum::<f64>())
        .sum();
    let l2 = sq.sqrt();
    (l2, sq)
}
