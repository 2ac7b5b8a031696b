//! Lax finite-difference solver on a periodic grid with spectral gravity.
//!
//! Density and momentum density are advanced in flux-conservative form.
//! Each step replaces a cell by the mean of its `2d` face neighbours and
//! subtracts the central-difference flux divergence, then adds the
//! pressure gradient `−c_s²∇ρ` and the gravity source `ρg`. The potential
//! is refreshed after every step from the discrete Poisson equation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::linear_theory::{ModeError, WaveMode};
use crate::units::{CaseConfig, DomainError, UnitSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("density became non-positive at step {step} (t = {time}, cell {cell})")]
    Positivity { step: usize, time: f64, cell: usize },
    #[error("non-finite velocity in Courant estimate")]
    NonFinite,
    #[error("invalid Courant number {0}; must satisfy 0 < nu <= 1")]
    Courant(f64),
    #[error("output time {time} outside [{t_start}, {t_end}]")]
    OutputTime { time: f64, t_start: f64, t_end: f64 },
    #[error("grid mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Periodic Cartesian grid of `d ≤ 3` axes, row-major with the last axis
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, spacing: Vec<f64>) -> Result<Self, FdError> {
        if shape.is_empty() || shape.len() > 3 || shape.len() != spacing.len() {
            return Err(FdError::Shape(format!(
                "shape {shape:?} and spacing {spacing:?} must have 1..=3 matching axes"
            )));
        }
        if shape.iter().any(|&n| n < 2) || spacing.iter().any(|h| !(*h > 0.0)) {
            return Err(FdError::Shape("every axis needs >= 2 cells and positive spacing".into()));
        }
        Ok(Self { shape, spacing })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn extents(&self) -> Vec<f64> {
        self.shape
            .iter()
            .zip(&self.spacing)
            .map(|(&n, h)| n as f64 * h)
            .collect()
    }

    /// Shape padded with unit axes to three dimensions.
    fn padded(&self) -> [usize; 3] {
        let mut s = [1; 3];
        s[..self.dim()].copy_from_slice(&self.shape);
        s
    }

    fn strides(&self) -> [usize; 3] {
        let [_, n1, n2] = self.padded();
        [n1 * n2, n2, 1]
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, idx: usize) -> Vec<usize> {
        let strides = self.strides();
        (0..self.dim())
            .map(|a| (idx / strides[a]) % self.shape[a])
            .collect()
    }

    /// Cell-centre coordinates `(i + 1/2) Δx` of a flat index.
    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, h)| (i as f64 + 0.5) * h)
            .collect()
    }

    /// Visits every cell with its index and its periodic `±1` neighbours
    /// along each active axis.
    fn for_each_stencil(&self, mut f: impl FnMut(usize, &[(usize, usize)])) {
        let d = self.dim();
        let [n0, n1, n2] = self.padded();
        let mut nb = [(0usize, 0usize); 3];
        for i in 0..n0 {
            let (ip, im) = ((i + 1) % n0, (i + n0 - 1) % n0);
            for j in 0..n1 {
                let (jp, jm) = ((j + 1) % n1, (j + n1 - 1) % n1);
                for k in 0..n2 {
                    let (kp, km) = ((k + 1) % n2, (k + n2 - 1) % n2);
                    let at = |a: usize, b: usize, c: usize| (a * n1 + b) * n2 + c;
                    nb[0] = (at(ip, j, k), at(im, j, k));
                    nb[1] = (at(i, jp, k), at(i, jm, k));
                    nb[2] = (at(i, j, kp), at(i, j, km));
                    f(at(i, j, k), &nb[..d]);
                }
            }
        }
    }
}

/// Gridded fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub grid: Grid,
    pub time: f64,
    pub density: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
    pub field: Vec<Vec<f64>>,
}

/// Fields interpolated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub density: f64,
    pub velocity: Vec<f64>,
    pub potential: f64,
    pub field: Vec<f64>,
}

impl FieldState {
    /// Uniform density `ρ0` at rest with zero potential.
    pub fn uniform(grid: Grid, units: &UnitSystem) -> Self {
        let n = grid.len();
        let d = grid.dim();
        Self {
            grid,
            time: 0.0,
            density: vec![units.background_density; n],
            velocity: vec![vec![0.0; n]; d],
            potential: vec![0.0; n],
            field: vec![vec![0.0; n]; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn total_momentum(&self) -> Vec<f64> {
        let dv = self.grid.cell_volume();
        self.velocity
            .iter()
            .map(|v| v.iter().zip(&self.density).map(|(v, r)| v * r).sum::<f64>() * dv)
            .collect()
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Recomputes `φ` and `g` from the current density.
    pub fn refresh_gravity(&mut self, units: &UnitSystem, gravity: bool) {
        if gravity {
            let solver = PoissonSolver::new(&self.grid, units);
            self.refresh_gravity_with(Some(&solver));
        } else {
            self.refresh_gravity_with(None);
        }
    }

    /// Recomputes `φ` and `g` with a prepared solver; `None` disables gravity.
    pub fn refresh_gravity_with(&mut self, solver: Option<&PoissonSolver>) {
        match solver {
            Some(solver) => {
                self.potential = solver.solve(&self.density);
                self.field = gravitational_field(&self.potential, &self.grid);
            }
            None => {
                self.potential.iter_mut().for_each(|p| *p = 0.0);
                self.field.iter_mut().flatten().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Periodic multilinear interpolation between cell centres.
    pub fn sample_linear(&self, x: &[f64]) -> PointSample {
        let d = self.dim();
        assert_eq!(x.len(), d, "point dimension");
        let strides = self.grid.strides();
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..d {
            let n = self.grid.shape[a];
            let s = x[a] / self.grid.spacing[a] - 0.5;
            let fl = s.floor();
            frac[a] = s - fl;
            let i = (fl as i64).rem_euclid(n as i64) as usize;
            base[a] = i;
            next[a] = (i + 1) % n;
        }
        let mut out = PointSample {
            density: 0.0,
            velocity: vec![0.0; d],
            potential: 0.0,
            field: vec![0.0; d],
        };
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..d {
                let hi = corner >> a & 1 == 1;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
                idx += strides[a] * if hi { next[a] } else { base[a] };
            }
            if w == 0.0 {
                continue;
            }
            out.density += w * self.density[idx];
            out.potential += w * self.potential[idx];
            for a in 0..d {
                out.velocity[a] += w * self.velocity[a][idx];
                out.field[a] += w * self.field[a][idx];
            }
        }
        out
    }
}

/// Samples the case's initial mode at cell centres and solves for gravity.
pub fn init_grid(case: &CaseConfig, units: &UnitSystem) -> Result<FieldState, FdError> {
    let domain = case.domain(units)?;
    let n = case.fd.grid_points;
    let grid = Grid::new(
        vec![n; case.dim],
        domain.extents.iter().map(|e| e / n as f64).collect(),
    )?;
    let mode = WaveMode::new(*units, case.amplitude, case.wavevector(units), case.gravity)?;
    init_from_mode(grid, &mode, units)
}

/// Cell-centred initial condition for an arbitrary mode.
pub fn init_from_mode(grid: Grid, mode: &WaveMode, units: &UnitSystem) -> Result<FieldState, FdError> {
    let mut state = FieldState::uniform(grid, units);
    state.time = 0.0;
    for idx in 0..state.grid.len() {
        let x = state.grid.cell_center(idx);
        let (rho, v) = mode.initial_condition(&x)?;
        state.density[idx] = rho;
        for (a, va) in v.iter().enumerate() {
            state.velocity[a][idx] = *va;
        }
    }
    state.refresh_gravity(units, mode.gravity);
    Ok(state)
}

/// Courant-limited step `ν min Δx / (c_s + max|v|)`.
pub fn courant_dt(state: &FieldState, courant: f64, units: &UnitSystem) -> Result<f64, FdError> {
    if !(courant > 0.0 && courant <= 1.0) {
        return Err(FdError::Courant(courant));
    }
    let mut vmax: f64 = 0.0;
    for v in state.velocity.iter().flatten() {
        if !v.is_finite() {
            return Err(FdError::NonFinite);
        }
        vmax = vmax.max(v.abs());
    }
    let dx = state
        .grid
        .spacing
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(courant * dx / (units.sound_speed + vmax))
}

/// Advances density and momentum by one Lax step and refreshes gravity.
///
/// `step` is only used to label a positivity failure.
pub fn lax_step(
    state: &FieldState,
    dt: f64,
    units: &UnitSystem,
    gravity: bool,
    step: usize,
) -> Result<FieldState, FdError> {
    let solver = gravity.then(|| PoissonSolver::new(&state.grid, units));
    lax_step_with(state, dt, units, solver.as_ref(), step)
}

/// [`lax_step`] with a prepared Poisson solver (`None` disables gravity).
pub fn lax_step_with(
    state: &FieldState,
    dt: f64,
    units: &UnitSystem,
    gravity: Option<&PoissonSolver>,
    step: usize,
) -> Result<FieldState, FdError> {
    let grid = &state.grid;
    let d = grid.dim();
    let n = grid.len();
    let rho = &state.density;
    let vel = &state.velocity;
    let c2 = units.sound_speed * units.sound_speed;
    let inv_avg = 1.0 / (2 * d) as f64;
    let coef: Vec<f64> = grid.spacing.iter().map(|h| dt / (2.0 * h)).collect();

    let mut new_rho = vec![0.0; n];
    let mut new_mom = vec![vec![0.0; n]; d];
    grid.for_each_stencil(|i, nb| {
        let mut avg = 0.0;
        let mut div = 0.0;
        for (a, &(p, m)) in nb.iter().enumerate() {
            avg += rho[p] + rho[m];
            div += coef[a] * (rho[p] * vel[a][p] - rho[m] * vel[a][m]);
        }
        new_rho[i] = avg * inv_avg - div;

        for b in 0..d {
            let mut avg = 0.0;
            let mut div = 0.0;
            for (a, &(p, m)) in nb.iter().enumerate() {
                let mp = rho[p] * vel[b][p];
                let mm = rho[m] * vel[b][m];
                avg += mp + mm;
                div += coef[a] * (mp * vel[a][p] - mm * vel[a][m]);
            }
            let (p, m) = nb[b];
            let pressure = coef[b] * c2 * (rho[p] - rho[m]);
            new_mom[b][i] = avg * inv_avg - div - pressure + dt * rho[i] * state.field[b][i];
        }
    });

    if let Some(cell) = new_rho.iter().position(|r| !(*r > 0.0)) {
        return Err(FdError::Positivity {
            step,
            time: state.time + dt,
            cell,
        });
    }
    for m in new_mom.iter_mut() {
        for (mi, ri) in m.iter_mut().zip(&new_rho) {
            *mi /= ri;
        }
    }
    let mut next = FieldState {
        grid: grid.clone(),
        time: state.time + dt,
        density: new_rho,
        velocity: new_mom,
        potential: vec![0.0; n],
        field: vec![vec![0.0; n]; d],
    };
    next.refresh_gravity_with(gravity);
    Ok(next)
}

/// Cached transforms and kernel for repeated Poisson solves on one grid.
pub struct PoissonSolver {
    grid: Grid,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// `(cos(2πm/n) − 1)/Δx²` per axis and mode index.
    symbols: Vec<Vec<f64>>,
    two_pi_g: f64,
}

impl PoissonSolver {
    pub fn new(grid: &Grid, units: &UnitSystem) -> Self {
        let mut planner = FftPlanner::new();
        let symbols = grid
            .shape
            .iter()
            .zip(&grid.spacing)
            .map(|(&n, h)| {
                (0..n)
                    .map(|m| ((2.0 * PI * m as f64 / n as f64).cos() - 1.0) / (h * h))
                    .collect()
            })
            .collect();
        Self {
            grid: grid.clone(),
            forward: grid.shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: grid.shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
            symbols,
            two_pi_g: 0.5 * units.four_pi_g,
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let grid = &self.grid;
        let strides = grid.strides();
        let total = grid.len();
        for a in 0..grid.dim() {
            let n = grid.shape[a];
            let stride = strides[a];
            let plan = if inverse { &self.inverse[a] } else { &self.forward[a] };
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            if stride == 1 {
                for chunk in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            // lines along `a` start at every index with a zero coordinate on `a`
            let block = stride * n;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let start = outer + inner;
                    for (i, c) in line.iter_mut().enumerate() {
                        *c = data[start + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, c) in line.iter().enumerate() {
                        data[start + i * stride] = *c;
                    }
                }
            }
        }
    }

    /// Zero-mean potential of `density`; see [`solve_poisson`].
    pub fn solve(&self, density: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        assert_eq!(density.len(), grid.len(), "density does not match grid");
        let mut data: Vec<Complex64> = density.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.transform(&mut data, false);

        let [n0, n1, n2] = grid.padded();
        let zero = [0.0];
        let sym = |a: usize| -> &[f64] {
            if a < grid.dim() {
                &self.symbols[a]
            } else {
                &zero
            }
        };
        let (s0, s1, s2) = (sym(0), sym(1), sym(2));
        let scale = self.two_pi_g / grid.len() as f64;
        let mut idx = 0;
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    let denom = s0[i] + s1[j] + s2[k];
                    data[idx] = if i == 0 && j == 0 && k == 0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        data[idx] * (scale / denom)
                    };
                    idx += 1;
                }
            }
        }
        self.transform(&mut data, true);
        data.iter().map(|c| c.re).collect()
    }
}

/// Solves the second-order discrete Poisson equation
/// `Σ_i (φ_{+i} − 2φ + φ_{−i})/Δx_i² = 4πG (ρ − ρ̄)` with zero-mean `φ`.
///
/// Each Fourier mode is multiplied by `2πG / Σ_i (cos(k_iΔx_i) − 1)/Δx_i²`
/// and the `k = 0` mode is dropped.
pub fn solve_poisson(density: &[f64], grid: &Grid, units: &UnitSystem) -> Vec<f64> {
    PoissonSolver::new(grid, units).solve(density)
}

/// `g_i = −(φ_{+i} − φ_{−i}) / (2Δx_i)` with periodic wrap.
pub fn gravitational_field(potential: &[f64], grid: &Grid) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let mut g = vec![vec![0.0; grid.len()]; d];
    let inv: Vec<f64> = grid.spacing.iter().map(|h| 0.5 / h).collect();
    grid.for_each_stencil(|i, nb| {
        for (a, &(p, m)) in nb.iter().enumerate() {
            g[a][i] = -(potential[p] - potential[m]) * inv[a];
        }
    });
    g
}

/// Second-order discrete Laplacian with periodic wrap.
pub fn discrete_laplacian(values: &[f64], grid: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let inv: Vec<f64> = grid.spacing.iter().map(|h| 1.0 / (h * h)).collect();
    grid.for_each_stencil(|i, nb| {
        out[i] = nb
            .iter()
            .enumerate()
            .map(|(a, &(p, m))| (values[p] - 2.0 * values[i] + values[m]) * inv[a])
            .sum();
    });
    out
}

/// Snapshots of one finite-difference run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<FieldState>,
    pub case: CaseConfig,
    pub units: UnitSystem,
    pub courant: f64,
    pub total_steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Snapshot recorded at time `t` (to rounding).
    pub fn at(&self, t: f64) -> Option<&FieldState> {
        self.snapshots
            .iter()
            .find(|s| (s.time - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// Runs the case from its initial mode, recording snapshots at `t = 0`
/// and every requested time.
pub fn evolve(
    case: &CaseConfig,
    units: &UnitSystem,
    output_times: &[f64],
) -> Result<Trajectory, FdError> {
    let initial = init_grid(case, units)?;
    evolve_from(initial, case, units, output_times)
}

/// Runs from an explicit initial state with the case's solver settings.
pub fn evolve_from(
    initial: FieldState,
    case: &CaseConfig,
    units: &UnitSystem,
    output_times: &[f64],
) -> Result<Trajectory, FdError> {
    let courant = case.fd.courant;
    if !(courant > 0.0 && courant <= 1.0) {
        return Err(FdError::Courant(courant));
    }
    let t_start = initial.time;
    let t_end = t_start + case.t_end;
    let mut targets: Vec<f64> = output_times.to_vec();
    for &t in &targets {
        if !(t >= t_start && t <= t_end) {
            return Err(FdError::OutputTime { time: t, t_start, t_end });
        }
    }
    targets.sort_by(|a, b| a.total_cmp(b));
    targets.dedup();
    targets.retain(|&t| t > t_start);

    let solver = case.gravity.then(|| PoissonSolver::new(&initial.grid, units));
    let mut state = initial;
    let mut snapshots = vec![state.clone()];
    let mut steps = 0;
    for target in targets {
        while state.time < target {
            let mut dt = courant_dt(&state, courant, units)?;
            let remaining = target - state.time;
            // avoid leaving a sliver step before the output time
            if dt >= remaining || remaining - dt < 1e-9 * dt {
                dt = remaining;
            }
            steps += 1;
            let mut next = lax_step_with(&state, dt, units, solver.as_ref(), steps)?;
            if dt == remaining {
                next.time = target;
            }
            state = next;
        }
        snapshots.push(state.clone());
    }
    Ok(Trajectory {
        snapshots,
        case: case.clone(),
        units: *units,
        courant,
        total_steps: steps,
    })
}
