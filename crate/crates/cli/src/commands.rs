use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use lqo_mor::bt::BalancedFactorization;
use lqo_mor::conditions::fonc_residuals;
use lqo_mor::h2::{h2_error_parts, h2_norm_sq_prepared, linf_bound_from_error, Prepared};
use lqo_mor::io::{fmt_num, load_bundle, save_bundle, write_csv, write_history_csv, LoadedBundle};
use lqo_mor::models::{build_advection_diffusion, random_stable_lqo, AdvectionDiffusionConfig};
use lqo_mor::sim::{input_l2_norms, output_error_metrics, simulate, InputSignal};
use lqo_mor::tsia::{self, StopReason, TsiaConfig, TsiaRun};
use lqo_mor::{Error, LqoSystem};

use crate::{EvaluateArgs, InputKind, IterationArgs, Method, Model, ReduceArgs, SweepArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_MAX_ITERS: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::NotSquare { .. }
            | Error::MatrixMarket(_)
            | Error::Bundle(_)
            | Error::Io(_)
            | Error::Json(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<u8, Failure>;

fn load(dir: &Path) -> Result<LoadedBundle, Failure> {
    let b = load_bundle(dir)?;
    for w in &b.warnings {
        eprintln!("warning: {}: {w}", dir.display());
    }
    Ok(b)
}

fn stability_line(sys: &LqoSystem<f64>) -> Result<String, Failure> {
    let abscissa = sys.spectral_abscissa()?;
    let verdict = if abscissa < 0.0 { "stable" } else { "UNSTABLE" };
    Ok(format!("{verdict} (spectral abscissa {abscissa:.6e})"))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn generate(model: Model) -> Outcome {
    let (sys, out, meta) = match model {
        Model::Advdiff { n, alpha, beta, out } => {
            let cfg = AdvectionDiffusionConfig { n, alpha, beta };
            let (sys, offset) = build_advection_diffusion::<f64>(&cfg)?;
            let meta = json!({"model": "advdiff", "alpha": alpha, "beta": beta, "output_offset": offset});
            (sys, out, meta)
        }
        Model::Random { n, m, p, seed, gap, out } => {
            let sys = random_stable_lqo::<f64>(n, m, p, seed, gap)?;
            (sys, out, json!({"model": "random", "seed": seed, "gap": gap}))
        }
    };
    let meta: BTreeMap<String, Value> = meta.as_object().cloned().unwrap_or_default().into_iter().collect();
    save_bundle(&sys, &out, meta)?;
    let (n, m, p) = sys.dims();
    println!("n={n} m={m} p={p} {}", stability_line(&sys)?);
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn tsia_config(it: &IterationArgs, r: usize, record_fonc: bool) -> TsiaConfig<f64> {
    let mut cfg = TsiaConfig::new(r);
    cfg.tol = it.tol;
    cfg.max_iters = it.max_iters;
    cfg.monitor = it.monitor.into();
    cfg.record_fonc = record_fonc;
    cfg
}

fn check_order(r: usize, n: usize) -> Result<(), Failure> {
    if r == 0 || r >= n {
        return Err(Failure::usage(format!("reduced order must satisfy 1 <= r < n = {n}, got {r}")));
    }
    Ok(())
}

fn exit_for(run: &TsiaRun<f64>) -> u8 {
    match run.reason {
        StopReason::Converged => EXIT_OK,
        StopReason::MaxIters => EXIT_MAX_ITERS,
        StopReason::SolverFailure => EXIT_NUMERIC,
    }
}

fn reason_str(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Converged => "converged",
        StopReason::MaxIters => "max_iters",
        StopReason::SolverFailure => "solver_failure",
    }
}

fn rom_meta(method: &str, r: usize, source: &Path) -> BTreeMap<String, Value> {
    let mut meta = BTreeMap::new();
    meta.insert("method".to_string(), json!(method));
    meta.insert("r".to_string(), json!(r));
    meta.insert("source".to_string(), json!(source.display().to_string()));
    meta
}

fn write_hankel_csv(path: &Path, values: &[f64]) -> Result<(), Failure> {
    let rows: Vec<Vec<String>> =
        values.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), fmt_num(*v)]).collect();
    write_csv(path, &["index", "value"], &rows)?;
    Ok(())
}

pub fn reduce(args: ReduceArgs) -> Outcome {
    let fom = load(&args.bundle)?.sys;
    check_order(args.r, fom.order())?;
    fs::create_dir_all(&args.out)?;
    let rom_dir = args.out.join("rom");
    match args.method {
        Method::Tsia => {
            let run = tsia::run(&fom, &tsia_config(&args.iteration, args.r, args.record_fonc))?;
            save_bundle(&run.rom, &rom_dir, rom_meta("tsia", args.r, &args.bundle))?;
            write_history_csv(&args.out.join("history.csv"), &run.history)?;
            let last = run.history.last();
            write_json(
                &args.out.join("summary.json"),
                &json!({
                    "method": "tsia",
                    "r": args.r,
                    "tol": args.iteration.tol,
                    "reason": reason_str(run.reason),
                    "iterations": last.map(|h| h.iter),
                    "eta": last.and_then(|h| h.eta),
                    "tau": last.and_then(|h| h.tau),
                    "fom_h2_sq": run.fom_h2_sq,
                    "failure": run.failure,
                }),
            )?;
            println!(
                "tsia r={} {} after {} iterations, eta={}",
                args.r,
                reason_str(run.reason),
                last.map_or(0, |h| h.iter),
                last.and_then(|h| h.eta).map_or("n/a".into(), fmt_num)
            );
            if let Some(msg) = &run.failure {
                eprintln!("error: {msg}");
            }
            Ok(exit_for(&run))
        }
        Method::Bt => {
            let fac = BalancedFactorization::new(&fom)?;
            let red = fac.truncate(args.r)?;
            save_bundle(&red.rom, &rom_dir, rom_meta("bt", args.r, &args.bundle))?;
            write_hankel_csv(&args.out.join("hankel_values.csv"), &red.hankel_like_values)?;
            write_json(
                &args.out.join("summary.json"),
                &json!({
                    "method": "bt",
                    "r": args.r,
                    "numerical_rank": fac.numerical_rank(),
                    "rom_stable": red.rom_stable,
                }),
            )?;
            println!("bt r={} rom {}", args.r, if red.rom_stable { "stable" } else { "UNSTABLE" });
            Ok(if red.rom_stable { EXIT_OK } else { EXIT_NUMERIC })
        }
    }
}

fn relative_h2(prep: &Prepared<f64>, norm: f64, rom: &LqoSystem<f64>) -> Result<(f64, f64), Failure> {
    let err_sq = h2_error_parts(prep, norm, rom)?.error_sq();
    Ok((err_sq, (err_sq.max(0.0) / norm).sqrt()))
}

fn parse_rom_arg(arg: &str, index: usize) -> (String, String) {
    match arg.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), dir.to_string()),
        _ => (if index == 0 { "rom".to_string() } else { format!("rom{}", index + 1) }, arg.to_string()),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Outcome {
    let fom = load(&args.fom)?.sys;
    let m = fom.inputs();
    let channel = args.channel.unwrap_or(m - 1);
    if channel >= m {
        return Err(Failure::usage(format!("input channel {channel} out of range for m = {m}")));
    }
    let signal = match args.input {
        InputKind::Sinusoid => InputSignal::benchmark_sinusoid(),
        InputKind::Damped => InputSignal::DampedPoly,
        InputKind::Step => InputSignal::Step { amplitude: 1.0 },
        InputKind::Zero => InputSignal::Zero,
    };
    let mut inputs = vec![InputSignal::Zero; m];
    inputs[channel] = signal.clone();

    let mut roms = Vec::new();
    for (i, arg) in args.roms.iter().enumerate() {
        let (name, dir) = parse_rom_arg(arg, i);
        let sys = load(Path::new(&dir))?.sys;
        if sys.inputs() != m || sys.outputs() != fom.outputs() {
            return Err(Failure::usage(format!("{name}: input/output counts differ from the full model")));
        }
        roms.push((name, sys));
    }

    let prep = Prepared::new(&fom)?;
    prep.require_stable(false)?;
    let norm = h2_norm_sq_prepared(&prep)?;
    let full = simulate(&fom, &inputs, args.horizon, args.dt)?;
    let (u_l2, uu_l2) = input_l2_norms(&inputs, args.horizon);

    fs::create_dir_all(&args.out)?;
    let mut reports = Vec::new();
    let mut sims = Vec::new();
    let mut all_hold = true;
    for (name, rom) in &roms {
        let (err_sq, rel) = relative_h2(&prep, norm, rom)?;
        let fonc = fonc_residuals(&fom, rom)?.combined;
        let sim = simulate(rom, &inputs, args.horizon, args.dt)?;
        let metrics = output_error_metrics(&full, &sim)?;
        let measured = metrics.sup_inf_error * metrics.sup_inf_error;
        let bound = linf_bound_from_error(err_sq, u_l2, uu_l2);
        let holds = measured <= bound;
        all_hold &= holds;
        println!(
            "{name}: r={} relative H2 error {} fonc {} sup|y-y_r|^2 {} bound {} {}",
            rom.order(),
            fmt_num(rel),
            fmt_num(fonc),
            fmt_num(measured),
            fmt_num(bound),
            if holds { "holds" } else { "VIOLATED" }
        );
        reports.push(json!({
            "name": name,
            "r": rom.order(),
            "h2_error_sq": err_sq,
            "relative_h2_error": rel,
            "fonc_combined": fonc,
            "sup_output_error_sq": measured,
            "linf_bound": bound,
            "bound_holds": holds,
        }));
        sims.push((name.clone(), sim, metrics));
    }

    let p = fom.outputs();
    let suffix = |k: usize| if p == 1 { String::new() } else { format!("_{}", k + 1) };
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..p).map(|k| format!("y{}", suffix(k))));
    for (name, _, _) in &sims {
        header.extend((0..p).map(|k| format!("y_{name}{}", suffix(k))));
    }
    for (name, _, _) in &sims {
        header.push(format!("relerr_{name}"));
    }
    let rows: Vec<Vec<String>> = full
        .times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![fmt_num(*t)];
            row.extend((0..p).map(|i| fmt_num(full.y[(i, k)])));
            for (_, sim, _) in &sims {
                row.extend((0..p).map(|i| fmt_num(sim.y[(i, k)])));
            }
            for (_, _, metrics) in &sims {
                row.push(fmt_num(metrics.relative_series[k]));
            }
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&args.out.join("simulation.csv"), &header_refs, &rows)?;
    write_json(
        &args.out.join("report.json"),
        &json!({
            "fom": args.fom.display().to_string(),
            "fom_h2_sq": norm,
            "input": signal,
            "input_channel": channel,
            "horizon": args.horizon,
            "dt": args.dt,
            "input_l2": u_l2,
            "input_kron_l2": uu_l2,
            "roms": reports,
            "bound_holds": all_hold,
        }),
    )?;
    Ok(EXIT_OK)
}

/// `start:step:end`, `a,b,c` or a single order.
pub fn parse_orders(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::usage(format!("invalid order list '{spec}'"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    let orders = match parts.as_slice() {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step == 0 || start > end {
                return Err(bad());
            }
            (start..=end).step_by(step).collect()
        }
        [single] => single.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad()),
    };
    if orders.is_empty() {
        return Err(bad());
    }
    Ok(orders)
}

struct SweepRow {
    r: usize,
    tsia: Result<(TsiaRun<f64>, f64), Error>,
    bt: Result<(bool, f64), Error>,
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let fom = load(&args.bundle)?.sys;
    let orders = parse_orders(&args.r)?;
    for &r in &orders {
        check_order(r, fom.order())?;
    }
    let prep = Prepared::new(&fom)?;
    prep.require_stable(false)?;
    let norm = h2_norm_sq_prepared(&prep)?;
    let fac = BalancedFactorization::new(&fom)?;
    fs::create_dir_all(&args.out)?;
    write_hankel_csv(&args.out.join("hankel_values.csv"), fac.hankel_like_values())?;

    let rel = |rom: &LqoSystem<f64>| -> Result<f64, Error> {
        let e = h2_error_parts(&prep, norm, rom)?.error_sq();
        Ok((e.max(0.0) / norm).sqrt())
    };
    let rows: Vec<SweepRow> = orders
        .par_iter()
        .map(|&r| {
            let dir = args.out.join(format!("r{r:03}"));
            let tsia = tsia::run(&fom, &tsia_config(&args.iteration, r, false)).and_then(|run| {
                save_bundle(&run.rom, &dir.join("tsia"), rom_meta("tsia", r, &args.bundle))?;
                write_history_csv(&dir.join("tsia").join("history.csv"), &run.history)?;
                let e = if run.rom.is_stable()? { rel(&run.rom)? } else { f64::NAN };
                Ok((run, e))
            });
            let bt = fac.truncate(r).and_then(|red| {
                save_bundle(&red.rom, &dir.join("bt"), rom_meta("bt", r, &args.bundle))?;
                let e = if red.rom_stable { rel(&red.rom)? } else { f64::NAN };
                Ok((red.rom_stable, e))
            });
            SweepRow { r, tsia, bt }
        })
        .collect();

    let (mut failed, mut capped) = (false, false);
    let mut csv = Vec::new();
    println!("{:>4} {:>14} {:>14} {:>6} {:>15}", "r", "tsia", "bt", "iters", "status");
    for row in &rows {
        let (t_err, iters, status) = match &row.tsia {
            Ok((run, e)) => {
                failed |= run.reason == StopReason::SolverFailure;
                capped |= run.reason == StopReason::MaxIters;
                (*e, run.history.last().map_or(0, |h| h.iter), reason_str(run.reason).to_string())
            }
            Err(e) => {
                eprintln!("error: tsia r={}: {e}", row.r);
                failed = true;
                (f64::NAN, 0, "error".to_string())
            }
        };
        let (b_stable, b_err) = match &row.bt {
            Ok(v) => *v,
            Err(e) => {
                eprintln!("error: bt r={}: {e}", row.r);
                failed = true;
                (false, f64::NAN)
            }
        };
        println!("{:>4} {:>14.6e} {:>14.6e} {:>6} {:>15}", row.r, t_err, b_err, iters, status);
        csv.push(vec![
            row.r.to_string(),
            fmt_num(t_err),
            fmt_num(b_err),
            iters.to_string(),
            status,
            b_stable.to_string(),
        ]);
    }
    write_csv(
        &args.out.join("sweep.csv"),
        &["r", "tsia_rel_h2_error", "bt_rel_h2_error", "tsia_iters", "tsia_status", "bt_rom_stable"],
        &csv,
    )?;
    Ok(if failed {
        EXIT_NUMERIC
    } else if capped {
        EXIT_MAX_ITERS
    } else {
        EXIT_OK
    })
}

/// Sizes the global thread pool from `LQO_THREADS` when set.
pub fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("LQO_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Failure::usage(format!("LQO_THREADS must be a count, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}
