//! Comparison and measurement tools: the percent mismatch between two
//! solutions, volume averages, growth-rate and phase-speed fits, and
//! wall-clock scaling studies.

use std::time::Instant;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::fd::{evolve, FdError, Trajectory};
use crate::grinn::{predict, GrinnError, GrinnLoss, TrainedModel};
use crate::linear_theory::{ModeError, WaveMode};
use crate::neural::{init_params, NeuralError};
use crate::units::{paper_case, sample_collocation, CaseConfig, CaseId, DomainError, PointSet, SolverKind, UnitSystem};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("solution not available at t = {0}")]
    MissingTime(f64),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Grinn(#[from] GrinnError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// How the percent mismatch is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    /// `200 |a − b| / (a + b)` for positive fields.
    Density,
    /// `100 |a − b| / max(‖b‖∞, 1e-12)` for fields that cross zero.
    Signed,
}

impl MismatchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Density => "density",
            Self::Signed => "signed",
        }
    }
}

pub const SIGNED_FLOOR: f64 = 1e-12;

/// Pointwise percent mismatch of `a` against reference `b`.
pub fn mismatch(a: &[f64], b: &[f64], kind: MismatchKind) -> Result<Vec<f64>, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(match kind {
        MismatchKind::Density => a.iter().zip(b).map(|(x, y)| 200.0 * (x - y).abs() / (x + y)).collect(),
        MismatchKind::Signed => {
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(SIGNED_FLOOR);
            a.iter().zip(b).map(|(x, y)| 100.0 * (x - y).abs() / scale).collect()
        }
    })
}

/// Mean and population standard deviation.
pub fn volume_avg_mismatch(eps: &[f64]) -> Result<(f64, f64), HarnessError> {
    if eps.is_empty() {
        return Err(HarnessError::Shape("empty mismatch array".into()));
    }
    let n = eps.len() as f64;
    let mean = crate::neural::pairwise_sum(eps) / n;
    let dev: Vec<f64> = eps.iter().map(|e| (e - mean) * (e - mean)).collect();
    Ok((mean, (crate::neural::pairwise_sum(&dev) / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub field: String,
    pub kind: MismatchKind,
    pub time: f64,
    pub solver_a: String,
    pub solver_b: String,
    pub grid: String,
    pub eps: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl MismatchReport {
    pub fn new(
        field: &str,
        kind: MismatchKind,
        time: f64,
        pair: (&str, &str),
        grid: &str,
        a: &[f64],
        b: &[f64],
    ) -> Result<Self, HarnessError> {
        let eps = mismatch(a, b, kind)?;
        let (mean, std) = volume_avg_mismatch(&eps)?;
        let max = eps.iter().fold(0.0f64, |m, e| m.max(*e));
        Ok(Self {
            field: field.to_string(),
            kind,
            time,
            solver_a: pair.0.to_string(),
            solver_b: pair.1.to_string(),
            grid: grid.to_string(),
            eps,
            mean,
            std,
            max,
        })
    }
}

/// Fields of a solution sampled at arbitrary `(x, t)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    pub density: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
}

/// Anything that can be evaluated at space-time points.
pub trait Solution {
    fn name(&self) -> &str;
    fn sample(&self, points: &PointSet) -> Result<FieldSamples, HarnessError>;
}

/// Linear theory, evaluated exactly.
pub struct LtSolution {
    pub mode: WaveMode,
}

impl LtSolution {
    pub fn new(case: &CaseConfig, units: &UnitSystem) -> Result<Self, HarnessError> {
        Ok(Self {
            mode: WaveMode::from_case(case, units)?,
        })
    }
}

impl Solution for LtSolution {
    fn name(&self) -> &str {
        "lt"
    }

    fn sample(&self, points: &PointSet) -> Result<FieldSamples, HarnessError> {
        let d = points.width - 1;
        let mut out = FieldSamples {
            density: Vec::with_capacity(points.len()),
            velocity: vec![Vec::with_capacity(points.len()); d],
            potential: Vec::with_capacity(points.len()),
        };
        for x in points.iter() {
            let s = self.mode.evaluate(&x[..d], x[d])?;
            out.density.push(s.density);
            for (i, v) in s.velocity.iter().enumerate() {
                out.velocity[i].push(*v);
            }
            out.potential.push(s.potential);
        }
        Ok(out)
    }
}

/// Finite-difference trajectory, interpolated linearly between cell
/// centres; only recorded snapshot times can be sampled.
pub struct FdSolution {
    pub trajectory: Trajectory,
}

impl FdSolution {
    pub fn run(case: &CaseConfig, units: &UnitSystem, times: &[f64]) -> Result<Self, HarnessError> {
        Ok(Self {
            trajectory: evolve(case, units, times)?,
        })
    }
}

impl Solution for FdSolution {
    fn name(&self) -> &str {
        "fd"
    }

    fn sample(&self, points: &PointSet) -> Result<FieldSamples, HarnessError> {
        let d = points.width - 1;
        let mut out = FieldSamples {
            density: Vec::with_capacity(points.len()),
            velocity: vec![Vec::with_capacity(points.len()); d],
            potential: Vec::with_capacity(points.len()),
        };
        for x in points.iter() {
            let snap = self.trajectory.at(x[d]).ok_or(HarnessError::MissingTime(x[d]))?;
            let s = snap.sample_linear(&x[..d]);
            out.density.push(s.density);
            for (i, v) in s.velocity.iter().enumerate() {
                out.velocity[i].push(*v);
            }
            out.potential.push(s.potential);
        }
        Ok(out)
    }
}

pub struct GrinnSolution {
    pub model: TrainedModel,
}

impl Solution for GrinnSolution {
    fn name(&self) -> &str {
        "grinn"
    }

    fn sample(&self, points: &PointSet) -> Result<FieldSamples, HarnessError> {
        let p = predict(&self.model, points)?;
        Ok(FieldSamples {
            density: p.density,
            velocity: p.velocity,
            potential: p.potential,
        })
    }
}

/// Where two solutions are compared.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalGrid {
    /// `points` equispaced samples along `axis` over one domain length,
    /// other coordinates fixed at `transverse` (indexed by axis; the entry
    /// for `axis` itself is ignored).
    Cut {
        axis: usize,
        transverse: Vec<f64>,
        points: usize,
    },
    /// Cell centres of a uniform `n^d` grid.
    Volume { per_axis: usize },
}

impl EvalGrid {
    pub fn cut(points: usize) -> Self {
        Self::Cut {
            axis: 0,
            transverse: Vec::new(),
            points,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Cut { axis, transverse, points } => {
                let fixed: Vec<String> = transverse.iter().map(|v| format!("{v}")).collect();
                format!("cut(axis={axis};points={points};fixed=[{}])", fixed.join(" "))
            }
            Self::Volume { per_axis } => format!("volume(per_axis={per_axis})"),
        }
    }

    /// Spatial sample points (without time).
    pub fn spatial_points(&self, extents: &[f64]) -> Vec<Vec<f64>> {
        let d = extents.len();
        match self {
            Self::Cut { axis, transverse, points } => (0..*points)
                .map(|i| {
                    let mut x: Vec<f64> = (0..d).map(|a| transverse.get(a).copied().unwrap_or(0.0)).collect();
                    x[*axis] = extents[*axis] * i as f64 / (*points).max(2).saturating_sub(1) as f64;
                    x
                })
                .collect(),
            Self::Volume { per_axis } => {
                let n = *per_axis;
                let total = n.pow(d as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut x = vec![0.0; d];
                        for a in (0..d).rev() {
                            x[a] = extents[a] * ((idx % n) as f64 + 0.5) / n as f64;
                            idx /= n;
                        }
                        x
                    })
                    .collect()
            }
        }
    }

    pub fn points_at(&self, extents: &[f64], t: f64) -> PointSet {
        let mut out = PointSet::new(extents.len() + 1);
        for mut x in self.spatial_points(extents) {
            x.push(t);
            out.push(&x);
        }
        out
    }
}

/// Per-time, per-field mismatch of solution `a` against reference `b`.
/// Densities use the density rule, velocities and (with gravity) the
/// potential the signed rule.
pub fn compare_case(
    case: &CaseConfig,
    units: &UnitSystem,
    a: &dyn Solution,
    b: &dyn Solution,
    times: &[f64],
    grid: &EvalGrid,
) -> Result<Vec<MismatchReport>, HarnessError> {
    let extents = case.domain(units)?.extents;
    let desc = grid.describe();
    let pair = (a.name(), b.name());
    let mut out = Vec::new();
    for &t in times {
        let pts = grid.points_at(&extents, t);
        let sa = a.sample(&pts)?;
        let sb = b.sample(&pts)?;
        out.push(MismatchReport::new("rho", MismatchKind::Density, t, pair, &desc, &sa.density, &sb.density)?);
        for (i, (va, vb)) in sa.velocity.iter().zip(&sb.velocity).enumerate() {
            let name = ["vx", "vy", "vz"][i];
            out.push(MismatchReport::new(name, MismatchKind::Signed, t, pair, &desc, va, vb)?);
        }
        if case.gravity {
            out.push(MismatchReport::new(
                "phi",
                MismatchKind::Signed,
                t,
                pair,
                &desc,
                &sa.potential,
                &sb.potential,
            )?);
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln(peak − ρ0)` against time over the window
/// where the perturbation is positive and below `0.3 ρ0`. Fails unless
/// the perturbation grows at every sample in that window.
pub fn fit_growth_rate(times: &[f64], peaks: &[f64], rho0: f64) -> Result<f64, HarnessError> {
    if times.len() != peaks.len() {
        return Err(HarnessError::Shape("times and peaks differ in length".into()));
    }
    let window: Vec<(f64, f64)> = times
        .iter()
        .zip(peaks)
        .map(|(t, p)| (*t, p - rho0))
        .take_while(|(_, dp)| *dp < 0.3 * rho0)
        .collect();
    if window.len() < 5 {
        return Err(HarnessError::Fit(format!(
            "need at least 5 samples below 0.3 rho0, have {}",
            window.len()
        )));
    }
    if window.iter().any(|(_, dp)| *dp <= 0.0) || window.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(HarnessError::Fit("perturbation does not grow monotonically".into()));
    }
    let n = window.len() as f64;
    let (st, sy) = window.iter().fold((0.0, 0.0), |(a, b), (t, dp)| (a + t, b + dp.ln()));
    let (mt, my) = (st / n, sy / n);
    let (num, den) = window.iter().fold((0.0, 0.0), |(a, b), (t, dp)| {
        (a + (t - mt) * (dp.ln() - my), b + (t - mt) * (t - mt))
    });
    Ok(num / den)
}

/// Growth rate of the density peak of an FD trajectory.
pub fn measure_growth_rate(traj: &Trajectory) -> Result<f64, HarnessError> {
    let times = traj.times();
    let peaks: Vec<f64> = traj.snapshots.iter().map(|s| s.max_density()).collect();
    fit_growth_rate(&times, &peaks, traj.units.background_density)
}

/// Circular cross-correlation `c[s] = Σ_i a[i] b[i + s]`.
fn circular_xcorr(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|v| Complex::new(*v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    prod.iter().map(|c| c.re / n as f64).collect()
}

/// Displacement (in samples) that best maps periodic profile `a` onto
/// `b`, refined by a parabola through the peak. Only shifts within half
/// of the dominant wavelength are considered; a second peak of nearly
/// the same height inside that window makes the answer ambiguous.
pub fn profile_shift(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    let n = a.len();
    if n != b.len() || n < 4 {
        return Err(HarnessError::Shape("profiles must share a length >= 4".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let da: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let db: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let spec = circular_xcorr(&da, &da);
    // dominant wavenumber index from the power spectrum of `a`
    let mut fa: Vec<Complex<f64>> = da.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut fa);
    let m = (1..n / 2 + 1)
        .max_by(|&i, &j| fa[i].norm().total_cmp(&fa[j].norm()))
        .ok_or_else(|| HarnessError::Fit("flat profile".into()))?;
    if spec[0] <= 0.0 {
        return Err(HarnessError::Fit("flat profile".into()));
    }
    let wavelength = n as f64 / m as f64;
    let c = circular_xcorr(&da, &db);
    let half = (0.5 * wavelength).floor() as isize;
    let at = |s: isize| c[s.rem_euclid(n as isize) as usize];
    let mut best = (0isize, f64::NEG_INFINITY);
    for s in -half..=half {
        if at(s) > best.1 {
            best = (s, at(s));
        }
    }
    if best.1 <= 0.0 {
        return Err(HarnessError::Fit("no positive correlation peak".into()));
    }
    // ambiguity: a competing local maximum of comparable height
    for s in -half..=half {
        let is_peak = at(s) >= at(s - 1) && at(s) >= at(s + 1);
        if is_peak && (s - best.0).abs() > 2 && at(s) > 0.98 * best.1 {
            return Err(HarnessError::Fit(format!(
                "ambiguous correlation peaks at shifts {} and {s}",
                best.0
            )));
        }
    }
    let (l, c0, r) = (at(best.0 - 1), best.1, at(best.0 + 1));
    let denom = l - 2.0 * c0 + r;
    let frac = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    Ok(best.0 as f64 + frac)
}

/// Phase speed of a travelling density wave along axis 0, averaged over
/// consecutive snapshot pairs.
pub fn measure_phase_speed(traj: &Trajectory) -> Result<f64, HarnessError> {
    if traj.snapshots.len() < 2 {
        return Err(HarnessError::Fit("need at least two snapshots".into()));
    }
    let line = |s: &crate::fd::FieldState| -> Vec<f64> {
        let n0 = s.grid.shape[0];
        let stride: usize = s.grid.shape[1..].iter().product();
        (0..n0).map(|i| s.density[i * stride]).collect()
    };
    let mut speeds = Vec::new();
    for w in traj.snapshots.windows(2) {
        let dt = w[1].time - w[0].time;
        if dt <= 0.0 {
            continue;
        }
        let shift = profile_shift(&line(&w[0]), &line(&w[1]))?;
        speeds.push(shift * w[0].grid.spacing[0] / dt);
    }
    if speeds.is_empty() {
        return Err(HarnessError::Fit("no snapshot pair with positive separation".into()));
    }
    Ok(speeds.iter().sum::<f64>() / speeds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Dimension,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub solver: SolverKind,
    pub mode: ScalingMode,
    pub dim: usize,
    pub t_end: f64,
    /// Raw wall-clock seconds of each repetition.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// `mean / mean of the reference record` (first record of the study).
    pub normalized: f64,
}

/// Settings of a scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub repetitions: usize,
    pub dims: Vec<usize>,
    pub t_values: Vec<f64>,
    /// FD cells per axis.
    pub fd_grid_points: usize,
    pub fd_courant: f64,
    /// FD integration time in dimension mode.
    pub fd_t_end: f64,
    /// FD dimension in time mode.
    pub fd_time_dim: usize,
    pub grinn_interior: usize,
    pub grinn_boundary: usize,
    pub grinn_initial: usize,
    pub grinn_hidden: Vec<usize>,
    /// Loss-and-gradient evaluations timed per repetition.
    pub grinn_iterations: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            repetitions: 3,
            dims: vec![1, 2, 3],
            t_values: vec![1.0, 2.0, 3.0, 4.0],
            fd_grid_points: 64,
            fd_courant: 0.5,
            fd_t_end: 1.0,
            fd_time_dim: 2,
            grinn_interior: 2000,
            grinn_boundary: 200,
            grinn_initial: 200,
            grinn_hidden: vec![32, 32, 32],
            grinn_iterations: 5,
        }
    }
}

fn stats(samples: &[f64]) -> (f64, f64) {
    volume_avg_mismatch(samples).unwrap_or((0.0, 0.0))
}

fn scaling_case(dim: usize) -> CaseConfig {
    paper_case(CaseId::Case1).with_dim(dim)
}

/// Seconds for one FD evolution of case 1 in `dim` dimensions to `t_end`.
pub fn time_fd(dim: usize, grid_points: usize, courant: f64, t_end: f64) -> Result<f64, HarnessError> {
    let mut case = scaling_case(dim);
    case.fd.grid_points = grid_points;
    case.fd.courant = courant;
    case.t_end = t_end;
    let units = crate::units::default_units();
    let start = Instant::now();
    evolve(&case, &units, &[t_end])?;
    Ok(start.elapsed().as_secs_f64())
}

/// Seconds per GRINN training iteration (one full-batch loss and
/// gradient) for case 1 in `dim` dimensions at fixed collocation counts.
pub fn time_grinn_iteration(dim: usize, cfg: &ScalingConfig) -> Result<f64, HarnessError> {
    let mut case = scaling_case(dim);
    case.pinn.hidden_layers = cfg.grinn_hidden.clone();
    let units = crate::units::default_units();
    let domain = case.domain(&units)?;
    let set = sample_collocation(&domain, cfg.grinn_interior, cfg.grinn_boundary, cfg.grinn_initial, 1)?;
    let loss = GrinnLoss::for_case(&case, &units, &set)?;
    let params = init_params(&crate::grinn::network_for_case(&case, &units)?, 1);
    let iterations = cfg.grinn_iterations.max(1);
    let start = Instant::now();
    for _ in 0..iterations {
        loss.evaluate_with_gradient(&params)?;
    }
    Ok(start.elapsed().as_secs_f64() / iterations as f64)
}

/// Repeats a timing and packages mean/std; `normalized` is filled in by
/// the caller.
fn record<F>(
    solver: SolverKind,
    mode: ScalingMode,
    dim: usize,
    t_end: f64,
    reps: usize,
    mut f: F,
) -> Result<ScalingRecord, HarnessError>
where
    F: FnMut() -> Result<f64, HarnessError>,
{
    let samples = (0..reps.max(1)).map(|_| f()).collect::<Result<Vec<_>, _>>()?;
    Ok(from_samples(solver, mode, dim, t_end, samples))
}

fn from_samples(solver: SolverKind, mode: ScalingMode, dim: usize, t_end: f64, samples: Vec<f64>) -> ScalingRecord {
    let (mean, std) = stats(&samples);
    ScalingRecord {
        solver,
        mode,
        dim,
        t_end,
        samples,
        mean,
        std,
        normalized: 1.0,
    }
}

fn normalize(records: &mut [ScalingRecord]) {
    if let Some(reference) = records.first().map(|r| r.mean) {
        for r in records.iter_mut() {
            r.normalized = r.mean / reference;
        }
    }
}

/// Dimension study (FD and GRINN, normalised to `d = dims[0]` per
/// solver) or integration-time study (FD, normalised to `t_values[0]`).
pub fn scaling_experiment(mode: ScalingMode, cfg: &ScalingConfig) -> Result<Vec<ScalingRecord>, HarnessError> {
    let reps = cfg.repetitions.max(1);
    match mode {
        ScalingMode::Dimension => {
            let mut fd = Vec::new();
            let mut nn = Vec::new();
            for &d in &cfg.dims {
                fd.push(record(SolverKind::Fd, mode, d, cfg.fd_t_end, reps, || {
                    time_fd(d, cfg.fd_grid_points, cfg.fd_courant, cfg.fd_t_end)
                })?);
                nn.push(record(SolverKind::Grinn, mode, d, 0.0, reps, || time_grinn_iteration(d, cfg))?);
            }
            normalize(&mut fd);
            normalize(&mut nn);
            fd.extend(nn);
            Ok(fd)
        }
        ScalingMode::Time => {
            // Round-robin over t so slow spells on a shared machine hit
            // every end time alike instead of skewing one of them.
            let mut samples = vec![Vec::with_capacity(reps); cfg.t_values.len()];
            for _ in 0..reps {
                for (i, &t) in cfg.t_values.iter().enumerate() {
                    samples[i].push(time_fd(cfg.fd_time_dim, cfg.fd_grid_points, cfg.fd_courant, t)?);
                }
            }
            let mut fd: Vec<_> = cfg
                .t_values
                .iter()
                .zip(samples)
                .map(|(&t, s)| from_samples(SolverKind::Fd, mode, cfg.fd_time_dim, t, s))
                .collect();
            normalize(&mut fd);
            Ok(fd)
        }
    }
}
