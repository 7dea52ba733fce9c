//! Matrix Market I/O, system bundles (JSON manifest + one `.mtx` file per
//! matrix) and CSV emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::system::LqoSystem;
use crate::tsia::IterationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmSymmetry {
    General,
    Symmetric,
}

/// A dense matrix read from Matrix Market, with the declared symmetry.
#[derive(Debug, Clone)]
pub struct MmMatrix {
    pub matrix: Mat<f64>,
    pub symmetry: MmSymmetry,
}

fn mm_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::MatrixMarket(format!("{}: {msg}", path.display()))
}

/// Parses `array` or `coordinate` storage with `real`/`integer`/`double`
/// values and `general`/`symmetric` symmetry.
pub fn parse_matrix_market(text: &str, origin: &Path) -> Result<MmMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| mm_err(origin, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(mm_err(origin, format!("malformed header '{header}'")));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(mm_err(origin, format!("unsupported format '{other}'"))),
    };
    if !matches!(tokens[3].as_str(), "real" | "double" | "integer") {
        return Err(mm_err(origin, format!("unsupported field '{}'", tokens[3])));
    }
    let symmetry = match tokens[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        other => return Err(mm_err(origin, format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size_line = body.next().ok_or_else(|| mm_err(origin, "missing size line"))?;
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| mm_err(origin, format!("bad size line '{size_line}'"))))
        .collect::<Result<_>>()?;
    let num = |t: &str| -> Result<f64> { t.parse::<f64>().map_err(|_| mm_err(origin, format!("bad value '{t}'"))) };
    let (rows, cols) = match sizes.as_slice() {
        [r, c] if !coordinate => (*r, *c),
        [r, c, _] if coordinate => (*r, *c),
        _ => return Err(mm_err(origin, format!("bad size line '{size_line}'"))),
    };
    if symmetry == MmSymmetry::Symmetric && rows != cols {
        return Err(mm_err(origin, "symmetric matrix must be square"));
    }
    let mut m = Mat::<f64>::zeros(rows, cols);
    if coordinate {
        let nnz = sizes[2];
        let mut seen = 0usize;
        for line in body {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(mm_err(origin, format!("bad entry '{line}'")));
            }
            let parse_idx = |s: &str, bound: usize| -> Result<usize> {
                let i: usize = s.parse().map_err(|_| mm_err(origin, format!("bad index '{s}'")))?;
                if i == 0 || i > bound {
                    return Err(mm_err(origin, format!("index {i} out of range 1..={bound}")));
                }
                Ok(i - 1)
            };
            let (i, j, v) = (parse_idx(t[0], rows)?, parse_idx(t[1], cols)?, num(t[2])?);
            m[(i, j)] = v;
            if symmetry == MmSymmetry::Symmetric {
                m[(j, i)] = v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(mm_err(origin, format!("expected {nnz} entries, found {seen}")));
        }
    } else {
        let values: Vec<f64> = body.flat_map(|l| l.split_whitespace()).map(num).collect::<Result<_>>()?;
        let expected = match symmetry {
            MmSymmetry::General => rows * cols,
            MmSymmetry::Symmetric => rows * (rows + 1) / 2,
        };
        if values.len() != expected {
            return Err(mm_err(origin, format!("expected {expected} values, found {}", values.len())));
        }
        let mut it = values.into_iter();
        for j in 0..cols {
            let start = if symmetry == MmSymmetry::Symmetric { j } else { 0 };
            for i in start..rows {
                let v = it.next().unwrap_or(0.0);
                m[(i, j)] = v;
                if symmetry == MmSymmetry::Symmetric {
                    m[(j, i)] = v;
                }
            }
        }
    }
    Ok(MmMatrix { matrix: m, symmetry })
}

pub fn read_matrix_market(path: &Path) -> Result<MmMatrix> {
    let text = fs::read_to_string(path)?;
    parse_matrix_market(&text, path)
}

/// Dense `array` storage, 17 significant digits (exact `f64` round trip).
/// `Symmetric` writes the lower triangle of `m`.
pub fn format_matrix_market(m: &Mat<f64>, symmetry: MmSymmetry) -> String {
    let kind = match symmetry {
        MmSymmetry::General => "general",
        MmSymmetry::Symmetric => "symmetric",
    };
    let mut out = format!("%%MatrixMarket matrix array real {kind}\n{} {}\n", m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        let start = if symmetry == MmSymmetry::Symmetric { j } else { 0 };
        for i in start..m.nrows() {
            let _ = writeln!(out, "{:.16e}", m[(i, j)]);
        }
    }
    out
}

pub fn write_matrix_market(path: &Path, m: &Mat<f64>, symmetry: MmSymmetry) -> Result<()> {
    fs::write(path, format_matrix_market(m, symmetry))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub a: String,
    pub b: String,
    pub c: String,
    pub m: Vec<String>,
}

/// `manifest.json` of a system bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub files: ManifestFiles,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub const MANIFEST_FORMAT: &str = "lqo-system";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub sys: LqoSystem<f64>,
    pub manifest: Manifest,
    /// Non-fatal findings, e.g. a quadratic output matrix that was not
    /// symmetric and got symmetrized.
    pub warnings: Vec<String>,
}

/// Writes `manifest.json`, `A.mtx`, `B.mtx`, `C.mtx`, `M1.mtx`, … into `dir`
/// (created if missing).
pub fn save_bundle(
    sys: &LqoSystem<f64>,
    dir: &Path,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let (n, m, p) = sys.dims();
    let files = ManifestFiles {
        a: "A.mtx".into(),
        b: "B.mtx".into(),
        c: "C.mtx".into(),
        m: (1..=p).map(|k| format!("M{k}.mtx")).collect(),
    };
    write_matrix_market(&dir.join(&files.a), sys.a(), MmSymmetry::General)?;
    write_matrix_market(&dir.join(&files.b), sys.b(), MmSymmetry::General)?;
    write_matrix_market(&dir.join(&files.c), sys.c(), MmSymmetry::General)?;
    for (name, mk) in files.m.iter().zip(sys.m_quad()) {
        write_matrix_market(&dir.join(name), mk, MmSymmetry::Symmetric)?;
    }
    let manifest = Manifest { format: MANIFEST_FORMAT.into(), version: 1, n, m, p, files, metadata };
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Bundle(format!("unknown bundle format '{}'", manifest.format)));
    }
    if manifest.files.m.len() != manifest.p {
        return Err(Error::Bundle(format!(
            "manifest lists {} quadratic output files for p = {}",
            manifest.files.m.len(),
            manifest.p
        )));
    }
    let (n, m, p) = (manifest.n, manifest.m, manifest.p);
    let load = |name: &str, rows: usize, cols: usize| -> Result<MmMatrix> {
        let path: PathBuf = dir.join(name);
        let mm = read_matrix_market(&path)?;
        if mm.matrix.nrows() != rows || mm.matrix.ncols() != cols {
            return Err(Error::Bundle(format!(
                "{} is {}x{}, manifest implies {rows}x{cols}",
                path.display(),
                mm.matrix.nrows(),
                mm.matrix.ncols()
            )));
        }
        Ok(mm)
    };
    let a = load(&manifest.files.a, n, n)?.matrix;
    let b = load(&manifest.files.b, n, m)?.matrix;
    let c = load(&manifest.files.c, p, n)?.matrix;
    let mut warnings = Vec::new();
    let mut ms = Vec::with_capacity(p);
    for name in &manifest.files.m {
        let mm = load(name, n, n)?;
        if mm.symmetry == MmSymmetry::General && mm.matrix != mm.matrix.transpose() {
            warnings.push(format!("{name} is not symmetric; using its symmetric part"));
        }
        ms.push(mm.matrix);
    }
    let sys = LqoSystem::new(a, b, c, ms)?;
    Ok(LoadedBundle { sys, manifest, warnings })
}

/// Shortest round-trip decimal for finite values, `nan`/`inf` otherwise.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Writes a header row and data rows, comma separated.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub const HISTORY_HEADER: [&str; 8] =
    ["iter", "eta", "tau", "delta_eta", "delta_tau", "rom_stable", "fonc_measure", "seconds"];

pub fn history_rows(history: &[IterationRecord]) -> Vec<Vec<String>> {
    history
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                fmt_opt(r.eta),
                fmt_opt(r.tau),
                fmt_opt(r.delta_eta),
                fmt_opt(r.delta_tau),
                r.rom_stable.to_string(),
                fmt_opt(r.fonc_measure),
                fmt_num(r.seconds),
            ]
        })
        .collect()
}

pub fn write_history_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    write_csv(path, &HISTORY_HEADER, &history_rows(history))
}
