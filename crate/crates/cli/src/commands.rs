use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use grinn_core::fd::FdError;
use grinn_core::grinn::{predict, train, GrinnError, TrainedModel};
use grinn_core::harness::{
    compare_case, scaling_experiment, volume_avg_mismatch, EvalGrid, FdSolution, GrinnSolution, HarnessError,
    LtSolution, MismatchReport, ScalingConfig, ScalingMode, Solution,
};
use grinn_core::io::{
    format_mismatch_points, format_mismatch_reports, format_scaling_records, write_snapshot, write_text, IoError,
    RunManifest, Snapshot, SnapshotMeta,
};
use grinn_core::linear_theory::WaveMode;
use grinn_core::units::{default_units, sample_collocation, CaseConfig, PointSet, SolverKind, UnitSystem};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Grinn(#[from] GrinnError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error("{0}")]
    Invalid(String),
}

impl From<grinn_core::units::DomainError> for CommandError {
    fn from(e: grinn_core::units::DomainError) -> Self {
        Self::Io(IoError::Invalid(e))
    }
}

impl From<grinn_core::linear_theory::ModeError> for CommandError {
    fn from(e: grinn_core::linear_theory::ModeError) -> Self {
        Self::Harness(e.into())
    }
}

impl CommandError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io(IoError::Parse(_) | IoError::UnknownKey(_) | IoError::Invalid(_)) => "config",
            Self::Io(_) => "io",
            Self::Harness(_) => "harness",
            Self::Grinn(_) => "grinn",
            Self::Fd(_) => "fd",
            Self::Invalid(_) => "usage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub times: Vec<f64>,
    pub snapshot_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub solvers: (SolverKind, SolverKind),
    pub times: Vec<f64>,
    pub cut_points: usize,
    pub transverse: f64,
    pub volume: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOptions {
    pub mode: ScalingMode,
    pub reps: usize,
    pub fd_grid: usize,
    pub grinn_iterations: usize,
    pub grinn_interior: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolateOptions {
    pub train_to: f64,
    pub predict_to: f64,
    pub times: Vec<f64>,
    pub volume: Option<usize>,
}

fn units() -> UnitSystem {
    default_units()
}

/// Writes the manifest; nothing has been computed yet.
pub fn start<O: Serialize>(
    command: &str,
    argv: &[String],
    config: &CaseConfig,
    options: &O,
    dir: &Path,
) -> Result<(), CommandError> {
    let options = toml::Table::try_from(options).map_err(|e| CommandError::Invalid(e.to_string()))?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        argv: argv.to_vec(),
        output_dir: dir.to_path_buf(),
        started_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed: config.pinn.seed,
        config: config.clone(),
        units: units(),
        options,
    };
    manifest.write(dir)?;
    Ok(())
}

fn default_snapshot_points(config: &CaseConfig) -> usize {
    match config.dim {
        1 => config.fd.grid_points,
        2 => config.fd.grid_points.min(128),
        _ => config.fd.grid_points.min(48),
    }
}

fn snapshot_name(solver: SolverKind, t: f64) -> String {
    format!("snapshot_{solver}_t{t}.csv")
}

/// Cell-centre points of a uniform grid over the spatial domain at time `t`.
fn grid_points(extents: &[f64], per_axis: usize, t: f64) -> PointSet {
    EvalGrid::Volume { per_axis }.points_at(extents, t)
}

fn meta(config: &CaseConfig, solver: SolverKind, t: f64, shape: Vec<usize>, extents: &[f64]) -> SnapshotMeta {
    let spacing = shape.iter().zip(extents).map(|(n, l)| l / *n as f64).collect();
    SnapshotMeta {
        case: config.case,
        solver,
        time: t,
        shape,
        spacing,
        extents: extents.to_vec(),
        units: units(),
    }
}

fn train_and_save(config: &CaseConfig, dir: &Path) -> Result<TrainedModel, CommandError> {
    let u = units();
    let p = &config.pinn;
    let domain = config.domain(&u)?;
    let set = sample_collocation(&domain, p.n_interior, p.n_boundary, p.n_initial, p.seed)?;
    let model = train(config, &u, &set)?;
    model.save(&dir.join("model.ckpt"))?;
    let mut history = String::from("# loss history\nphase epoch total pde boundary initial\n");
    for r in &model.history {
        history.push_str(&format!(
            "{:?} {} {} {} {} {}\n",
            r.phase, r.epoch, r.total, r.mse_pde, r.mse_boundary, r.mse_initial
        ));
    }
    write_text(&dir.join("loss.txt"), &history)?;
    Ok(model)
}

pub fn run(config: &CaseConfig, opts: &RunOptions, dir: &Path) -> Result<(), CommandError> {
    let u = units();
    let extents = config.domain(&u)?.extents;
    let per_axis = opts.snapshot_points.unwrap_or_else(|| default_snapshot_points(config));
    let shape = vec![per_axis; config.dim];
    match config.solver {
        SolverKind::Fd => {
            let traj = grinn_core::fd::evolve(config, &u, &opts.times)?;
            for &t in &opts.times {
                let state = traj.at(t).ok_or(HarnessError::MissingTime(t))?;
                let m = meta(config, SolverKind::Fd, t, state.grid.shape.clone(), &extents);
                write_snapshot(&dir.join(snapshot_name(SolverKind::Fd, t)), &Snapshot::from_state(state), &m)?;
            }
        }
        SolverKind::Lt => {
            let mode = WaveMode::from_case(config, &u)?;
            for &t in &opts.times {
                let pts = grid_points(&extents, per_axis, t);
                let lt = LtSolution { mode: mode.clone() }.sample(&pts)?;
                let snap = Snapshot {
                    points: pts,
                    density: lt.density,
                    velocity: lt.velocity,
                    potential: lt.potential,
                };
                let m = meta(config, SolverKind::Lt, t, shape.clone(), &extents);
                write_snapshot(&dir.join(snapshot_name(SolverKind::Lt, t)), &snap, &m)?;
            }
        }
        SolverKind::Grinn => {
            let model = train_and_save(config, dir)?;
            for &t in &opts.times {
                let pts = grid_points(&extents, per_axis, t);
                let pred = predict(&model, &pts)?;
                let m = meta(config, SolverKind::Grinn, t, shape.clone(), &extents);
                write_snapshot(
                    &dir.join(snapshot_name(SolverKind::Grinn, t)),
                    &Snapshot::from_prediction(&pts, &pred),
                    &m,
                )?;
            }
        }
    }
    Ok(())
}

fn build_solution(
    kind: SolverKind,
    config: &CaseConfig,
    times: &[f64],
    dir: &Path,
) -> Result<Box<dyn Solution>, CommandError> {
    let u = units();
    Ok(match kind {
        SolverKind::Lt => Box::new(LtSolution::new(config, &u)?),
        SolverKind::Fd => Box::new(FdSolution::run(config, &u, times)?),
        SolverKind::Grinn => Box::new(GrinnSolution {
            model: train_and_save(config, dir)?,
        }),
    })
}

fn write_reports(reports: &[MismatchReport], dir: &Path) -> Result<(), CommandError> {
    write_text(&dir.join("mismatch.txt"), &format_mismatch_reports(reports))?;
    write_text(&dir.join("mismatch_points.txt"), &format_mismatch_points(reports))?;
    Ok(())
}

pub fn compare(config: &CaseConfig, opts: &CompareOptions, dir: &Path) -> Result<(), CommandError> {
    let (a, b) = opts.solvers;
    if a == b {
        return Err(CommandError::Invalid(format!("compare needs two different solvers, got {a} twice")));
    }
    let sa = build_solution(a, config, &opts.times, dir)?;
    let sb = build_solution(b, config, &opts.times, dir)?;
    let grid = match opts.volume {
        Some(per_axis) => EvalGrid::Volume { per_axis },
        None => EvalGrid::Cut {
            axis: 0,
            transverse: vec![opts.transverse; config.dim],
            points: opts.cut_points,
        },
    };
    let reports = compare_case(config, &units(), sa.as_ref(), sb.as_ref(), &opts.times, &grid)?;
    write_reports(&reports, dir)
}

pub fn scale(opts: &ScaleOptions, dir: &Path) -> Result<(), CommandError> {
    let cfg = ScalingConfig {
        repetitions: opts.reps,
        fd_grid_points: opts.fd_grid,
        grinn_iterations: opts.grinn_iterations,
        grinn_interior: opts.grinn_interior,
        ..ScalingConfig::default()
    };
    let records = scaling_experiment(opts.mode, &cfg)?;
    write_text(&dir.join("scaling.txt"), &format_scaling_records(&records))?;
    Ok(())
}

pub fn extrapolate(config: &CaseConfig, opts: &ExtrapolateOptions, dir: &Path) -> Result<(), CommandError> {
    if !(opts.train_to > 0.0 && opts.predict_to >= opts.train_to) {
        return Err(CommandError::Invalid(format!(
            "need 0 < train_to <= predict_to, got {} and {}",
            opts.train_to, opts.predict_to
        )));
    }
    let mut train_cfg = config.clone();
    train_cfg.t_end = opts.train_to;
    let mut fd_cfg = config.clone();
    fd_cfg.t_end = opts.predict_to;
    let grinn = GrinnSolution {
        model: train_and_save(&train_cfg, dir)?,
    };
    let fd = FdSolution::run(&fd_cfg, &units(), &opts.times)?;
    let per_axis = opts.volume.unwrap_or_else(|| default_snapshot_points(config));
    let grid = EvalGrid::Volume { per_axis };
    let reports = compare_case(config, &units(), &grinn, &fd, &opts.times, &grid)?;
    write_reports(&reports, dir)?;
    let mut summary = String::from(
        "# volume-averaged density mismatch of the extrapolated network against FD (percent)\n\
         time train_to mean std max\n",
    );
    for r in reports.iter().filter(|r| r.field == "rho") {
        let (mean, std) = volume_avg_mismatch(&r.eps)?;
        summary.push_str(&format!("{} {} {} {} {}\n", r.time, opts.train_to, mean, std, r.max));
    }
    write_text(&dir.join("extrapolation.txt"), &summary)?;
    Ok(())
}

fn options<O: DeserializeOwned>(m: &RunManifest) -> Result<O, CommandError> {
    m.options
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CommandError::Invalid(format!("manifest options: {e}")))
}

/// Re-executes a recorded run into `out` with the recorded configuration.
pub fn replay(manifest: &Path, argv: &[String], out: &Path) -> Result<(), CommandError> {
    let m = RunManifest::read(manifest)?;
    let config = &m.config;
    let out: PathBuf = out.to_path_buf();
    match m.command.as_str() {
        "run" => {
            let o: RunOptions = options(&m)?;
            start("run", argv, config, &o, &out)?;
            run(config, &o, &out)
        }
        "compare" => {
            let o: CompareOptions = options(&m)?;
            start("compare", argv, config, &o, &out)?;
            compare(config, &o, &out)
        }
        "scale" => {
            let o: ScaleOptions = options(&m)?;
            start("scale", argv, config, &o, &out)?;
            scale(&o, &out)
        }
        "extrapolate" => {
            let o: ExtrapolateOptions = options(&m)?;
            start("extrapolate", argv, config, &o, &out)?;
            extrapolate(config, &o, &out)
        }
        other => Err(CommandError::Invalid(format!("manifest names unknown command `{other}`"))),
    }
}
