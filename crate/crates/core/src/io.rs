//! Configuration files, field snapshots, run manifests and reports.
//!
//! Configs are TOML documents shaped like [`CaseConfig`]; any subset of
//! keys may be given and the rest come from the case's recipe.
//! Snapshots are CSV tables (`x,y,z,t,rho,vx,vy,vz,phi`, absent axes
//! omitted) with a `.meta.toml` sidecar. Floats are written in their
//! shortest round-trip form, so reading a snapshot back is bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fd::FieldState;
use crate::grinn::Prediction;
use crate::harness::{MismatchReport, ScalingRecord};
use crate::units::{paper_case, CaseConfig, CaseId, DomainError, PointSet, SolverKind, UnitSystem};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub case: Option<CaseId>,
    pub dim: Option<usize>,
    pub solver: Option<SolverKind>,
    pub amplitude: Option<f64>,
    pub t_end: Option<f64>,
    pub grid_points: Option<usize>,
    pub courant: Option<f64>,
    pub seed: Option<u64>,
    pub hidden_layers: Option<Vec<usize>>,
    pub n_interior: Option<usize>,
    pub n_boundary: Option<usize>,
    pub n_initial: Option<usize>,
    pub adam_epochs: Option<usize>,
    pub lbfgs_iterations: Option<usize>,
    pub first_layer_omega: Option<f64>,
}

/// Copies every key of `src` into `dst`, descending into tables; a key
/// missing from `dst` is unknown.
fn merge(dst: &mut toml::Table, src: &toml::Table, prefix: &str) -> Result<(), IoError> {
    for (key, value) in src {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (dst.get_mut(key), value) {
            (None, _) => return Err(IoError::UnknownKey(path)),
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s, &path)?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(IoError::Parse(format!("`{path}` must be a table")));
            }
            (Some(slot), v) => *slot = v.clone(),
        }
    }
    Ok(())
}

fn ser_err(e: impl std::fmt::Display) -> IoError {
    IoError::Parse(e.to_string())
}

/// Resolves a configuration: flags override the file, the file
/// overrides the case recipe. The case comes from the flags, else the
/// file's `case` key, else case 1. Unknown keys and out-of-range values
/// are errors naming the key.
pub fn parse_config(file: Option<&str>, flags: &ConfigOverrides) -> Result<CaseConfig, IoError> {
    let table: toml::Table = match file {
        Some(text) => text.parse().map_err(ser_err)?,
        None => toml::Table::new(),
    };
    let file_case = match table.get("case") {
        Some(toml::Value::String(s)) => Some(s.parse::<CaseId>()?),
        Some(_) => return Err(IoError::Parse("`case` must be a string".into())),
        None => None,
    };
    let case = flags.case.or(file_case).unwrap_or(CaseId::Case1);
    let mut base = paper_case(case);
    // a file or flag that changes the dimension without giving a direction
    // gets the recipe's direction extended to the new dimension
    let file_dim = table.get("dim").and_then(|v| v.as_integer());
    if let Some(dim) = flags.dim.or(file_dim.and_then(|d| usize::try_from(d).ok())) {
        if (1..=3).contains(&dim) {
            base = base.with_dim(dim);
        }
    }
    let mut resolved = toml::Table::try_from(&base).map_err(ser_err)?;
    let mut file_table = table;
    file_table.insert("case".into(), case.as_str().into());
    merge(&mut resolved, &file_table, "")?;
    let mut config: CaseConfig = resolved.try_into().map_err(ser_err)?;
    apply_overrides(&mut config, flags);
    config.validate()?;
    Ok(config)
}

fn apply_overrides(c: &mut CaseConfig, f: &ConfigOverrides) {
    if let Some(d) = f.dim {
        if d != c.dim {
            *c = c.clone().with_dim(d);
        }
    }
    macro_rules! set {
        ($($src:ident => $($dst:ident).+;)*) => {$(
            if let Some(v) = f.$src.clone() {
                c.$($dst).+ = v;
            }
        )*};
    }
    set! {
        solver => solver;
        amplitude => amplitude;
        t_end => t_end;
        grid_points => fd.grid_points;
        courant => fd.courant;
        seed => pinn.seed;
        hidden_layers => pinn.hidden_layers;
        n_interior => pinn.n_interior;
        n_boundary => pinn.n_boundary;
        n_initial => pinn.n_initial;
        adam_epochs => pinn.adam_epochs;
        lbfgs_iterations => pinn.lbfgs_iterations;
        first_layer_omega => pinn.first_layer_omega;
    }
}

/// Full config as TOML; `parse_config(Some(&text), &Default::default())`
/// returns it unchanged.
pub fn serialize_config(config: &CaseConfig) -> Result<String, IoError> {
    toml::to_string(config).map_err(ser_err)
}

pub fn load_config(path: &Path, flags: &ConfigOverrides) -> Result<CaseConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    parse_config(Some(&text), flags)
}

/// Point-wise fields ready to be written as a table.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// `(x_1, .., x_d, t)` per row.
    pub points: PointSet,
    pub density: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
}

impl Snapshot {
    pub fn dim(&self) -> usize {
        self.points.width - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 0
    }

    /// Cell-centre values of a finite-difference state.
    pub fn from_state(state: &FieldState) -> Self {
        let d = state.grid.dim();
        let mut points = PointSet::with_capacity(d + 1, state.grid.len());
        for i in 0..state.grid.len() {
            let mut x = state.grid.cell_center(i);
            x.push(state.time);
            points.push(&x);
        }
        Self {
            points,
            density: state.density.clone(),
            velocity: state.velocity.clone(),
            potential: state.potential.clone(),
        }
    }

    pub fn from_prediction(points: &PointSet, p: &Prediction) -> Self {
        Self {
            points: points.clone(),
            density: p.density.clone(),
            velocity: p.velocity.clone(),
            potential: p.potential.clone(),
        }
    }

    pub fn header(dim: usize) -> Vec<&'static str> {
        let mut cols: Vec<&str> = ["x", "y", "z"][..dim].to_vec();
        cols.extend(["t", "rho"]);
        cols.extend(&["vx", "vy", "vz"][..dim]);
        cols.push("phi");
        cols
    }
}

/// Sidecar describing a snapshot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub case: CaseId,
    pub solver: SolverKind,
    pub time: f64,
    /// Grid cells per axis; empty for scattered points.
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub extents: Vec<f64>,
    pub units: UnitSystem,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    path.with_file_name(name)
}

pub fn write_snapshot(path: &Path, snap: &Snapshot, meta: &SnapshotMeta) -> Result<(), IoError> {
    let d = snap.dim();
    if snap.density.len() != snap.len()
        || snap.potential.len() != snap.len()
        || snap.velocity.len() != d
        || snap.velocity.iter().any(|v| v.len() != snap.len())
    {
        return Err(IoError::Snapshot("field lengths do not match the point count".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::Snapshot(e.to_string()))?;
    let csv_err = |e: csv::Error| IoError::Snapshot(e.to_string());
    w.write_record(Snapshot::header(d)).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(2 * d + 3);
    for (p, x) in snap.points.iter().enumerate() {
        row.clear();
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(snap.density[p].to_string());
        row.extend(snap.velocity.iter().map(|v| v[p].to_string()));
        row.push(snap.potential[p].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(file_err(path))?;
    let text = toml::to_string(meta).map_err(ser_err)?;
    let mp = meta_path(path);
    std::fs::write(&mp, text).map_err(file_err(&mp))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(Snapshot, SnapshotMeta), IoError> {
    let bad = |m: String| IoError::Snapshot(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let d = (header.len().saturating_sub(3)) / 2;
    if !(1..=3).contains(&d) || header != Snapshot::header(d) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut snap = Snapshot {
        points: PointSet::new(d + 1),
        density: Vec::new(),
        velocity: vec![Vec::new(); d],
        potential: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        snap.points.push(&vals[..d + 1]);
        snap.density.push(vals[d + 1]);
        for i in 0..d {
            snap.velocity[i].push(vals[d + 2 + i]);
        }
        snap.potential.push(vals[2 * d + 2]);
    }
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(file_err(&mp))?;
    let meta = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    Ok((snap, meta))
}

/// Everything needed to redo a run: written before any solver starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand name (`run`, `compare`, ...).
    pub command: String,
    /// Original argument vector, for the record.
    pub argv: Vec<String>,
    pub output_dir: PathBuf,
    /// Unix time the run started, in seconds.
    pub started_unix: u64,
    /// Base seed; sampling and initialisation use fixed streams of it.
    pub seed: u64,
    pub config: CaseConfig,
    pub units: UnitSystem,
    /// Resolved subcommand options.
    #[serde(default)]
    pub options: toml::Table,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, IoError> {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(ser_err)?;
        std::fs::write(&path, text).map_err(file_err(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(file_err(&path))?;
        let m: Self = toml::from_str(&text).map_err(ser_err)?;
        m.config.validate_solvable()?;
        Ok(m)
    }
}

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "GRINN_OUTPUT_ROOT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Whitespace-separated table: `#` comment lines, then a column line,
/// then one record per line.
fn table(title: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = format!("# {title}\n# columns: {}\n{}\n", columns.len(), columns.join(" "));
    for r in rows {
        let _ = writeln!(out, "{}", r.join(" "));
    }
    out
}

/// One line per (time, field) with summary statistics.
pub fn format_mismatch_reports(reports: &[MismatchReport]) -> String {
    table(
        "mismatch report (percent); density rule 200|a-b|/(a+b), signed rule 100|a-b|/max|b|",
        &["time", "field", "kind", "solver_a", "solver_b", "points", "mean", "std", "max", "grid"],
        reports.iter().map(|r| {
            vec![
                r.time.to_string(),
                r.field.clone(),
                r.kind.as_str().to_string(),
                r.solver_a.clone(),
                r.solver_b.clone(),
                r.eps.len().to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.max.to_string(),
                r.grid.clone(),
            ]
        }),
    )
}

/// Point-wise mismatch values, one line per (time, field, point).
pub fn format_mismatch_points(reports: &[MismatchReport]) -> String {
    table(
        "point-wise mismatch (percent)",
        &["time", "field", "index", "eps"],
        reports.iter().flat_map(|r| {
            r.eps
                .iter()
                .enumerate()
                .map(move |(i, e)| vec![r.time.to_string(), r.field.clone(), i.to_string(), e.to_string()])
        }),
    )
}

pub fn format_scaling_records(records: &[ScalingRecord]) -> String {
    table(
        "wall-clock scaling (seconds)",
        &["solver", "mode", "dim", "t_end", "reps", "mean", "std", "normalized", "samples"],
        records.iter().map(|r| {
            let samples: Vec<String> = r.samples.iter().map(|s| s.to_string()).collect();
            vec![
                r.solver.as_str().to_string(),
                format!("{:?}", r.mode).to_lowercase(),
                r.dim.to_string(),
                r.t_end.to_string(),
                r.samples.len().to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.normalized.to_string(),
                samples.join(","),
            ]
        }),
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    std::fs::write(path, text).map_err(file_err(path))
}
