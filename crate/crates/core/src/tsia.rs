//! Two-sided fixed-point iteration for H2-optimal LQO reduction.
//!
//! Each step solves
//!
//! ```text
//! A X + X A_rᵀ + B B_rᵀ = 0
//! Aᵀ Ẑ + Ẑ A_r − 2 Σ_k M_k X M_kr − Cᵀ C_r = 0
//! ```
//!
//! orthonormalizes `X` and `Ẑ` and projects the FOM onto the resulting pair.
//! A fixed point of the map satisfies the first-order H2-optimality
//! conditions.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::h2::{cross_x, cross_z, cross_z_weighted, h2_norm_sq_prepared, Prepared};
use crate::linalg::{fro, orth_completed, trace_of_product, Mat};
use crate::mateq::{qo_gramian_factored, reach_gramian_factored};
use crate::scalar::Real;
use crate::system::{project, LqoSystem, ProjectionPair};

/// Which relative change decides convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    /// `|η_j − η_{j−1}| / η_1`
    Eta,
    /// `|τ_j − τ_{j−1}| / |τ_1|`
    Tau,
    /// Both changes below the tolerance.
    Both,
}

impl std::str::FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(Self::Eta),
            "tau" => Ok(Self::Tau),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown monitor '{other}' (eta|tau|both)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitSpec<T: Real> {
    /// [`default_init`]
    Default,
    Explicit(LqoSystem<T>),
}

#[derive(Debug, Clone)]
pub struct TsiaConfig<T: Real> {
    pub r: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub monitor: Monitor,
    pub init: InitSpec<T>,
    /// Skip computing `‖S‖²_H2`; only `τ` can then be monitored.
    pub skip_fom_norm: bool,
    /// Evaluate the combined optimality residual at every iterate.
    pub record_fonc: bool,
}

impl<T: Real> TsiaConfig<T> {
    pub fn new(r: usize) -> Self {
        Self {
            r,
            tol: 1e-10,
            max_iters: 500,
            monitor: Monitor::Eta,
            init: InitSpec::Default,
            skip_fom_norm: false,
            record_fonc: false,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.r == 0 || self.r > n {
            return Err(Error::Config(format!("reduced order r = {} must satisfy 1 <= r <= n = {n}", self.r)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.skip_fom_norm && self.monitor != Monitor::Tau {
            return Err(Error::Config("eta monitoring needs the FOM norm".into()));
        }
        Ok(())
    }
}

/// Monitors of one iterate. `eta`/`tau` are `None` for unstable iterates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub eta: Option<f64>,
    pub tau: Option<f64>,
    pub delta_eta: Option<f64>,
    pub delta_tau: Option<f64>,
    pub rom_stable: bool,
    pub fonc_measure: Option<f64>,
    /// Smaller numerical rank of `X`, `Ẑ` in the step that produced this
    /// iterate (below `r` means the basis was completed).
    pub basis_rank: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct TsiaRun<T: Real> {
    pub rom: LqoSystem<T>,
    pub projectors: ProjectionPair<T>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub reason: StopReason,
    /// Description of the error behind [`StopReason::SolverFailure`].
    pub failure: Option<String>,
    pub fom_h2_sq: Option<f64>,
}

fn logspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![10f64.powf(a)];
    }
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

/// `A_r = diag(−logspace(0, 4, r))`, `B_r`/`C_r` leading columns/rows of
/// the identity pattern, `M_kr = I_r`.
pub fn default_init<T: Real>(_n: usize, m: usize, p: usize, r: usize) -> Result<LqoSystem<T>> {
    let diag: Vec<T> = logspace(0.0, 4.0, r).into_iter().map(|v| T::lit(-v)).collect();
    let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(diag));
    let b = Mat::from_fn(r, m, |i, j| if i == j { T::one() } else { T::zero() });
    let c = Mat::from_fn(p, r, |i, j| if i == j { T::one() } else { T::zero() });
    LqoSystem::new(a, b, c, vec![Mat::identity(r, r); p])
}

/// Solutions needed from one ROM: `X`, `Ẑ` and, for monitoring, `Z`.
struct StepSolves<T: Real> {
    x: Mat<T>,
    z_hat: Mat<T>,
}

fn step_solves<T: Real>(fom: &Prepared<T>, rom: &Prepared<T>) -> Result<StepSolves<T>> {
    let x = cross_x(fom, rom)?;
    let z_hat = cross_z_weighted(fom, rom, &x, T::lit(2.0))?;
    Ok(StepSolves { x, z_hat })
}

/// Orthonormalizes `X` and `Ẑ` and projects; also returns the smaller of
/// the two detected ranks.
///
/// Rank-deficient solutions are completed to `r` columns instead of
/// rejected: with a diagonal `A_r` and `r > m`, as in [`default_init`], the
/// trailing columns of `X` vanish identically. The missing directions of
/// `V` are taken from the range of `Ẑ` (and those of `W` from `X`), so the
/// completion carries information from the other side rather than
/// coordinate directions.
fn project_step<T: Real>(
    fom: &LqoSystem<T>,
    s: &StepSolves<T>,
) -> Result<(LqoSystem<T>, ProjectionPair<T>, usize)> {
    let (v, rank_v) = orth_completed(&s.x)?;
    let (w, rank_w) = orth_completed(&s.z_hat)?;
    let v = complete_basis(v, rank_v, &s.z_hat)?;
    let w = complete_basis(w, rank_w, &s.x)?;
    let proj = ProjectionPair { v, w };
    Ok((project(fom, &proj)?, proj, rank_v.min(rank_w)))
}

/// Keeps the leading `rank` columns of `q` and fills the rest with the part
/// of `donor` orthogonal to them.
fn complete_basis<T: Real>(q: Mat<T>, rank: usize, donor: &Mat<T>) -> Result<Mat<T>> {
    let r = q.ncols();
    if rank >= r {
        return Ok(q);
    }
    let lead = q.columns(0, rank).into_owned();
    let rest = donor - &lead * lead.tr_mul(donor);
    let Ok((fill, _)) = orth_completed(&rest) else {
        return Ok(q);
    };
    let mut out = q;
    out.columns_mut(rank, r - rank).copy_from(&fill.columns(0, r - rank));
    Ok(orth_completed(&out)?.0)
}

/// One iteration: `rom_j ↦ rom_{j+1}`.
pub fn tsia_step<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<(LqoSystem<T>, ProjectionPair<T>)> {
    let fom_p = Prepared::new(fom)?;
    let rom_p = Prepared::new(rom)?;
    let (next, proj, _) = project_step(fom, &step_solves(&fom_p, &rom_p)?)?;
    Ok((next, proj))
}

/// `τ = ‖S_r‖² + 2 tr(Bᵀ Z B_r)` from prepared systems and a known `X`.
fn tau_prepared<T: Real>(fom: &Prepared<T>, rom: &Prepared<T>, x: &Mat<T>) -> Result<T> {
    if !rom.is_stable() {
        return Err(Error::UnstableReduced { abscissa: rom.schur().spectral_abscissa().as_f64() });
    }
    let z = cross_z(fom, rom, x)?;
    let s_r = rom.sys();
    let (p_r, _) = reach_gramian_factored(rom.schur(), s_r.b())?;
    let (q_r, _) = qo_gramian_factored(rom.schur(), s_r, &p_r)?;
    let rom_norm = trace_of_product(&s_r.b().transpose(), &(q_r * s_r.b()));
    let cross = trace_of_product(&fom.sys().b().transpose(), &(z * s_r.b()));
    Ok(rom_norm + T::lit(2.0) * cross)
}

/// Tail monitor `τ = ‖S_r‖² + 2 tr(Bᵀ Z B_r) = J − ‖S‖²`; needs no FOM
/// Gramian. Fails with [`Error::UnstableReduced`] for unstable ROMs.
pub fn tau<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>) -> Result<T> {
    let (fp, rp) = (Prepared::new(fom)?, Prepared::new(rom)?);
    let x = cross_x(&fp, &rp)?;
    tau_prepared(&fp, &rp, &x)
}

/// Squared relative error `η = (‖S‖² + τ) / ‖S‖²`.
pub fn eta<T: Real>(fom: &LqoSystem<T>, rom: &LqoSystem<T>, fom_h2_sq: T) -> Result<T> {
    Ok((fom_h2_sq + tau(fom, rom)?) / fom_h2_sq)
}

const MAX_UNSTABLE_STREAK: usize = 10;

/// Normalizers at or below this are roundoff (the first iterate already
/// reproduces the FOM), so the change is taken in absolute terms.
const NORMALIZER_FLOOR: f64 = 1e-12;

fn relative_change(current: f64, previous: f64, first: f64) -> f64 {
    let diff = (current - previous).abs();
    if first.abs() > NORMALIZER_FLOOR {
        diff / first.abs()
    } else {
        diff
    }
}

/// Runs the iteration until the monitored relative change drops below
/// `config.tol` or `config.max_iters` steps have been taken.
///
/// Iterate `j` is the ROM after `j` steps; its monitors are recorded as
/// history entry `j` and the first recorded values normalize the changes.
/// Unstable iterates are flagged and iterated through; ten in a row, or a
/// solver error that survives one spectral perturbation of `A_r`, end the
/// run with [`StopReason::SolverFailure`] and the last good iterate.
pub fn run<T: Real>(fom: &LqoSystem<T>, config: &TsiaConfig<T>) -> Result<TsiaRun<T>> {
    let (n, m, p) = fom.dims();
    config.validate(n)?;
    let fom_p = Prepared::new(fom)?;
    if !fom_p.is_stable() {
        return Err(Error::Unstable { abscissa: fom_p.schur().spectral_abscissa().as_f64() });
    }
    let fom_norm = if config.skip_fom_norm { None } else { Some(h2_norm_sq_prepared(&fom_p)?) };
    let mut rom = match &config.init {
        InitSpec::Default => default_init(n, m, p, config.r)?,
        InitSpec::Explicit(sys) => {
            if sys.dims() != (config.r, m, p) {
                return Err(Error::Config(format!(
                    "initial ROM has dims {:?}, expected ({}, {m}, {p})",
                    sys.dims(),
                    config.r
                )));
            }
            sys.clone()
        }
    };
    let mut projectors = ProjectionPair { v: Mat::zeros(n, config.r), w: Mat::zeros(n, config.r) };
    let mut history: Vec<IterationRecord> = Vec::new();
    let (mut eta_first, mut tau_first) = (None::<f64>, None::<f64>);
    let (mut eta_prev, mut tau_prev) = (None::<f64>, None::<f64>);
    let mut unstable_streak = 0usize;
    let mut basis_rank = config.r;
    let started = Instant::now();

    let fail = |rom: LqoSystem<T>, projectors, history, err: Error| TsiaRun {
        rom,
        projectors,
        history,
        converged: false,
        reason: StopReason::SolverFailure,
        failure: Some(err.to_string()),
        fom_h2_sq: fom_norm.map(|v| v.as_f64()),
    };

    for j in 0..=config.max_iters {
        let mut rom_p = match Prepared::new(&rom) {
            Ok(p) => p,
            Err(e) => return Ok(fail(rom, projectors, history, e)),
        };
        let solves = match step_solves(&fom_p, &rom_p) {
            Ok(s) => s,
            Err(Error::SpectralOverlap { .. }) => {
                // move A_r off the collision once
                let shift = T::lit(1e-8) * fro(rom.a());
                let mut a = rom.a().clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += shift;
                }
                let perturbed = rom.with_a(a)?;
                let retry = Prepared::new(&perturbed).and_then(|pp| step_solves(&fom_p, &pp).map(|s| (pp, s)));
                match retry {
                    Ok((pp, s)) => {
                        rom = perturbed;
                        rom_p = pp;
                        s
                    }
                    Err(e) => return Ok(fail(rom, projectors, history, e)),
                }
            }
            Err(e) => return Ok(fail(rom, projectors, history, e)),
        };

        if j > 0 {
            let rom_stable = rom_p.is_stable();
            let mut record = IterationRecord {
                iter: j,
                eta: None,
                tau: None,
                delta_eta: None,
                delta_tau: None,
                rom_stable,
                fonc_measure: None,
                basis_rank,
                seconds: 0.0,
            };
            if rom_stable {
                unstable_streak = 0;
                let tau_j = match tau_prepared(&fom_p, &rom_p, &solves.x) {
                    Ok(t) => t.as_f64(),
                    Err(e) => return Ok(fail(rom, projectors, history, e)),
                };
                record.tau = Some(tau_j);
                record.eta = fom_norm.map(|s| (s.as_f64() + tau_j) / s.as_f64());
                if config.record_fonc {
                    record.fonc_measure = crate::conditions::coupling_solutions_prepared(&fom_p, &rom_p)
                        .ok()
                        .map(|cs| crate::conditions::fonc_from_coupling(fom, &rom, &cs).combined.as_f64());
                }
            } else {
                unstable_streak += 1;
                if unstable_streak >= MAX_UNSTABLE_STREAK {
                    let abscissa = rom_p.schur().spectral_abscissa().as_f64();
                    return Ok(fail(rom, projectors, history, Error::UnstableReduced { abscissa }));
                }
            }
            if let Some(e) = record.eta {
                let first = *eta_first.get_or_insert(e);
                record.delta_eta = eta_prev.map(|prev| relative_change(e, prev, first));
                eta_prev = Some(e);
            }
            if let Some(t) = record.tau {
                let first = *tau_first.get_or_insert(t);
                record.delta_tau = tau_prev.map(|prev| relative_change(t, prev, first));
                tau_prev = Some(t);
            }
            record.seconds = started.elapsed().as_secs_f64();
            let below = |d: Option<f64>| d.is_some_and(|d| d <= config.tol);
            let done = match config.monitor {
                Monitor::Eta => below(record.delta_eta),
                Monitor::Tau => below(record.delta_tau),
                Monitor::Both => below(record.delta_eta) && below(record.delta_tau),
            };
            history.push(record);
            if done {
                return Ok(TsiaRun {
                    rom,
                    projectors,
                    history,
                    converged: true,
                    reason: StopReason::Converged,
                    failure: None,
                    fom_h2_sq: fom_norm.map(|v| v.as_f64()),
                });
            }
        }
        if j == config.max_iters {
            break;
        }
        match project_step(fom, &solves) {
            Ok((next, proj, rank)) => {
                rom = next;
                projectors = proj;
                basis_rank = rank;
            }
            Err(e) => return Ok(fail(rom, projectors, history, e)),
        }
    }
    Ok(TsiaRun {
        rom,
        projectors,
        history,
        converged: false,
        reason: StopReason::MaxIters,
        failure: None,
        fom_h2_sq: fom_norm.map(|v| v.as_f64()),
    })
}
