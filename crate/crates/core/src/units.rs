//! Nondimensional units, space-time domains, experiment recipes and
//! collocation sampling.
//!
//! Code units set the isothermal sound speed, the gravity coupling `4πG`
//! and the background density to one. The Jeans wavenumber is then one,
//! the Jeans length is `2π` and the free-fall time is one.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("invalid unit system: {0}")]
    InvalidUnits(String),
    #[error("invalid case configuration: `{key}` {reason}")]
    InvalidConfig { key: &'static str, reason: String },
}

/// Physical constants of the isothermal self-gravitating gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub sound_speed: f64,
    pub four_pi_g: f64,
    pub background_density: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        default_units()
    }
}

/// Code units: `c_s = 4πG = ρ0 = 1`.
pub fn default_units() -> UnitSystem {
    UnitSystem {
        sound_speed: 1.0,
        four_pi_g: 1.0,
        background_density: 1.0,
    }
}

impl UnitSystem {
    pub fn new(
        sound_speed: f64,
        four_pi_g: f64,
        background_density: f64,
    ) -> Result<Self, DomainError> {
        let units = Self {
            sound_speed,
            four_pi_g,
            background_density,
        };
        for (name, value) in [
            ("sound_speed", sound_speed),
            ("four_pi_g", four_pi_g),
            ("background_density", background_density),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(DomainError::InvalidUnits(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        Ok(units)
    }

    /// `1 / sqrt(4πG ρ0)`.
    pub fn free_fall_time(&self) -> f64 {
        1.0 / (self.four_pi_g * self.background_density).sqrt()
    }
}

/// Periodic box `[0, x_m[i]]` per active axis and a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub extents: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl DomainSpec {
    pub fn new(extents: Vec<f64>, t_start: f64, t_end: f64) -> Result<Self, DomainError> {
        let domain = Self {
            extents,
            t_start,
            t_end,
        };
        domain.validate()?;
        Ok(domain)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let d = self.extents.len();
        if !(1..=3).contains(&d) {
            return Err(DomainError::InvalidDomain(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        if let Some(bad) = self.extents.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(DomainError::InvalidDomain(format!(
                "extent must be positive, got {bad}"
            )));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return Err(DomainError::InvalidDomain(format!(
                "time window [{}, {}] is empty",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    /// Number of network inputs: the spatial axes plus time.
    pub fn input_width(&self) -> usize {
        self.dim() + 1
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains_space(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.extents)
                .all(|(xi, ext)| *xi >= 0.0 && *xi <= *ext)
    }
}

/// Box with `wavelengths_per_axis · λ` along every active axis.
pub fn build_domain(
    dim: usize,
    wavelengths_per_axis: f64,
    wavelength: f64,
    t_end: f64,
) -> Result<DomainSpec, DomainError> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(DomainError::InvalidDomain(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(DomainError::InvalidDomain(format!(
            "end time must be positive, got {t_end}"
        )));
    }
    if !(wavelengths_per_axis.is_finite() && wavelengths_per_axis > 0.0) {
        return Err(DomainError::InvalidDomain(format!(
            "wavelengths per axis must be positive, got {wavelengths_per_axis}"
        )));
    }
    DomainSpec::new(vec![wavelengths_per_axis * wavelength; dim], 0.0, t_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseId {
    Case1,
    Case1Oblique,
    Case2,
    Case3,
    SoundwaveLinear,
    SoundwaveShock,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Case1,
        CaseId::Case1Oblique,
        CaseId::Case2,
        CaseId::Case3,
        CaseId::SoundwaveLinear,
        CaseId::SoundwaveShock,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseId::Case1 => "case1",
            CaseId::Case1Oblique => "case1_oblique",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
            CaseId::SoundwaveLinear => "soundwave_linear",
            CaseId::SoundwaveShock => "soundwave_shock",
        }
    }

    pub fn has_gravity(&self) -> bool {
        !matches!(self, CaseId::SoundwaveLinear | CaseId::SoundwaveShock)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = DomainError;

    /// Accepts the canonical ids and the bare numbers `1`, `2`, `3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let id = match s.as_str() {
            "1" | "case1" => CaseId::Case1,
            "1o" | "case1_oblique" => CaseId::Case1Oblique,
            "2" | "case2" => CaseId::Case2,
            "3" | "case3" => CaseId::Case3,
            "soundwave_linear" => CaseId::SoundwaveLinear,
            "soundwave_shock" => CaseId::SoundwaveShock,
            _ => return Err(DomainError::UnknownCase(s)),
        };
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Grinn,
    Fd,
    Lt,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Grinn => "grinn",
            SolverKind::Fd => "fd",
            SolverKind::Lt => "lt",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grinn" | "pinn" => Ok(SolverKind::Grinn),
            "fd" => Ok(SolverKind::Fd),
            "lt" => Ok(SolverKind::Lt),
            other => Err(DomainError::InvalidConfig {
                key: "solver",
                reason: format!("unknown solver `{other}` (expected grinn, fd or lt)"),
            }),
        }
    }
}

/// Which form of the source term the Poisson residual uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoissonSource {
    /// `4πG (ρ − ρ0)`, consistent with a periodic potential.
    #[default]
    MeanSubtracted,
    /// `4πG ρ` as literally written for the continuum equation.
    Literal,
}

/// Finite-difference solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    pub grid_points: usize,
    pub courant: f64,
}

/// Network and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnParams {
    pub hidden_layers: Vec<usize>,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub adam_epochs: usize,
    pub learning_rate: f64,
    pub lbfgs_iterations: usize,
    pub lbfgs_memory: usize,
    pub seed: u64,
    /// Frequency factor on the first hidden layer's pre-activation.
    pub first_layer_omega: f64,
    pub weight_pde: f64,
    pub weight_boundary: f64,
    pub weight_initial: f64,
    pub poisson_source: PoissonSource,
    /// Train on outputs normalised by the background and perturbation
    /// amplitudes instead of raw field values.
    #[serde(default = "yes")]
    pub scale_outputs: bool,
}

fn yes() -> bool {
    true
}

impl Default for PinnParams {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32, 32, 32],
            n_interior: 47_000,
            n_boundary: 6_300,
            n_initial: 6_300,
            adam_epochs: 2_000,
            learning_rate: 1e-3,
            lbfgs_iterations: 5_000,
            lbfgs_memory: 10,
            seed: 1234,
            first_layer_omega: 3.0,
            weight_pde: 1.0,
            weight_boundary: 1.0,
            weight_initial: 1.0,
            poisson_source: PoissonSource::MeanSubtracted,
            scale_outputs: true,
        }
    }
}

/// One experiment's full recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: CaseId,
    pub dim: usize,
    /// Density perturbation amplitude `ρ1a`.
    pub amplitude: f64,
    /// Perturbation wavelength in units of the Jeans length.
    pub wavelength_ratio: f64,
    /// Unit wavevector direction, one component per active axis.
    pub direction: Vec<f64>,
    pub gravity: bool,
    pub solver: SolverKind,
    pub wavelengths_per_axis: f64,
    pub t_end: f64,
    pub fd: FdParams,
    pub pinn: PinnParams,
}

/// The recipe used for each experiment.
pub fn paper_case(case: CaseId) -> CaseConfig {
    let desk_pinn = PinnParams {
        n_interior: 5_000,
        n_boundary: 500,
        n_initial: 500,
        ..PinnParams::default()
    };
    let base = CaseConfig {
        case,
        dim: 1,
        amplitude: 0.03,
        wavelength_ratio: 1.11,
        direction: vec![1.0],
        gravity: true,
        solver: SolverKind::Grinn,
        wavelengths_per_axis: 3.0,
        t_end: 3.0,
        fd: FdParams {
            grid_points: 1000,
            courant: 0.5,
        },
        pinn: desk_pinn,
    };
    match case {
        CaseId::Case1 => base,
        CaseId::Case1Oblique => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            CaseConfig {
                dim: 3,
                direction: vec![h, h, 0.0],
                fd: FdParams {
                    grid_points: 300,
                    courant: 0.5,
                },
                pinn: PinnParams::default(),
                ..base
            }
        }
        CaseId::Case2 => CaseConfig {
            amplitude: 0.3,
            fd: FdParams {
                grid_points: 2000,
                courant: 0.6,
            },
            ..base
        },
        CaseId::Case3 => CaseConfig {
            wavelength_ratio: 0.8,
            t_end: 8.0,
            fd: FdParams {
                grid_points: 8000,
                courant: 0.2,
            },
            ..base
        },
        CaseId::SoundwaveLinear => CaseConfig {
            gravity: false,
            wavelength_ratio: 1.0,
            wavelengths_per_axis: 1.0,
            t_end: 1.0,
            ..base
        },
        CaseId::SoundwaveShock => CaseConfig {
            gravity: false,
            amplitude: 0.2,
            wavelength_ratio: 1.0,
            wavelengths_per_axis: 1.0,
            t_end: 3.0,
            pinn: PinnParams {
                hidden_layers: vec![32; 7],
                ..base.pinn.clone()
            },
            ..base
        },
    }
}

impl CaseConfig {
    /// Checks every field invariant, naming the offending key.
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.amplitude > 0.0) {
            return Err(DomainError::InvalidConfig {
                key: "amplitude",
                reason: format!("must be > 0, got {}", self.amplitude),
            });
        }
        self.validate_solvable()
    }

    /// [`validate`](Self::validate) that also admits the unperturbed
    /// state `amplitude = 0`, which every solver handles as a fixed point.
    pub fn validate_solvable(&self) -> Result<(), DomainError> {
        fn bad(key: &'static str, reason: impl Into<String>) -> DomainError {
            DomainError::InvalidConfig {
                key,
                reason: reason.into(),
            }
        }
        if !(1..=3).contains(&self.dim) {
            return Err(bad("dim", format!("must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(bad("amplitude", format!("must be > 0, got {}", self.amplitude)));
        }
        if !(self.wavelength_ratio.is_finite() && self.wavelength_ratio > 0.0) {
            return Err(bad(
                "wavelength_ratio",
                format!("must be > 0, got {}", self.wavelength_ratio),
            ));
        }
        if self.direction.len() != self.dim {
            return Err(bad(
                "direction",
                format!(
                    "needs {} components for dim = {}, got {}",
                    self.dim,
                    self.dim,
                    self.direction.len()
                ),
            ));
        }
        let norm = self.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() < 1e-9) {
            return Err(bad("direction", format!("must be a unit vector, norm is {norm}")));
        }
        if self.gravity != self.case.has_gravity() {
            return Err(bad(
                "gravity",
                format!("must be {} for {}", self.case.has_gravity(), self.case),
            ));
        }
        if !(self.wavelengths_per_axis.is_finite() && self.wavelengths_per_axis > 0.0) {
            return Err(bad("wavelengths_per_axis", "must be > 0"));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(bad("t_end", format!("must be > 0, got {}", self.t_end)));
        }
        if self.fd.grid_points < 8 {
            return Err(bad(
                "grid_points",
                format!("must be >= 8, got {}", self.fd.grid_points),
            ));
        }
        if !(self.fd.courant > 0.0 && self.fd.courant <= 1.0) {
            return Err(bad(
                "courant",
                format!(
                    "Courant number must satisfy 0 < nu <= 1, got {}",
                    self.fd.courant
                ),
            ));
        }
        let p = &self.pinn;
        if p.hidden_layers.is_empty() || p.hidden_layers.contains(&0) {
            return Err(bad("hidden_layers", "needs at least one layer, all widths >= 1"));
        }
        for (key, n) in [
            ("n_interior", p.n_interior),
            ("n_boundary", p.n_boundary),
            ("n_initial", p.n_initial),
        ] {
            if n < 1 {
                return Err(bad(key, "must be >= 1"));
            }
        }
        if !(p.learning_rate.is_finite() && p.learning_rate > 0.0) {
            return Err(bad("learning_rate", "must be > 0"));
        }
        if p.lbfgs_memory < 1 {
            return Err(bad("lbfgs_memory", "must be >= 1"));
        }
        if !(p.first_layer_omega.is_finite() && p.first_layer_omega > 0.0) {
            return Err(bad("first_layer_omega", "must be > 0"));
        }
        for (key, w) in [
            ("weight_pde", p.weight_pde),
            ("weight_boundary", p.weight_boundary),
            ("weight_initial", p.weight_initial),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad(key, "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self, units: &UnitSystem) -> f64 {
        self.wavelength_ratio * crate::linear_theory::jeans_length(units)
    }

    pub fn wavenumber(&self, units: &UnitSystem) -> f64 {
        2.0 * PI / self.wavelength(units)
    }

    pub fn wavevector(&self, units: &UnitSystem) -> Vec<f64> {
        let k = self.wavenumber(units);
        self.direction.iter().map(|c| c * k).collect()
    }

    /// Space-time domain of the run.
    ///
    /// Each axis spans `wavelengths_per_axis` periods of the wave's
    /// projection on that axis, so oblique wavevectors stay periodic.
    /// Axes the wave does not vary along get `wavelengths_per_axis · λ`.
    pub fn domain(&self, units: &UnitSystem) -> Result<DomainSpec, DomainError> {
        let wavelength = self.wavelength(units);
        let mut domain = build_domain(self.dim, self.wavelengths_per_axis, wavelength, self.t_end)?;
        for (extent, c) in domain.extents.iter_mut().zip(&self.direction) {
            if c.abs() > 1e-12 {
                *extent = self.wavelengths_per_axis * wavelength / c.abs();
            }
        }
        Ok(domain)
    }

    /// Changes the dimension, padding or trimming the wave direction.
    pub fn with_dim(mut self, dim: usize) -> Self {
        if dim != self.dim {
            let mut direction = self.direction.clone();
            direction.resize(dim, 0.0);
            let norm = direction.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                direction.iter_mut().for_each(|c| *c /= norm);
            } else {
                direction = vec![0.0; dim];
                direction[0] = 1.0;
            }
            self.direction = direction;
            self.dim = dim;
        }
        self
    }
}

/// Flat list of space-time points, each `(x_1, .., x_d, t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub width: usize,
    pub coords: Vec<f64>,
}

impl PointSet {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            coords: Vec::new(),
        }
    }

    pub fn with_capacity(width: usize, n: usize) -> Self {
        Self {
            width,
            coords: Vec::with_capacity(width * n),
        }
    }

    pub fn from_coords(width: usize, coords: Vec<f64>) -> Self {
        assert!(width > 0 && coords.len() % width == 0);
        Self { width, coords }
    }

    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.coords.len() / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn push(&mut self, point: &[f64]) {
        debug_assert_eq!(point.len(), self.width);
        self.coords.extend_from_slice(point);
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.width..(i + 1) * self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.width)
    }
}

/// Matched points on opposite faces: `high[n] = low[n] + x_m[axis[n]] ê_axis[n]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryPairs {
    pub axis: Vec<usize>,
    pub low: PointSet,
    pub high: PointSet,
}

impl BoundaryPairs {
    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub interior: PointSet,
    pub boundary: BoundaryPairs,
    pub initial: PointSet,
    pub seed: u64,
}

/// Stream ids used to fan one seed out to independent generators.
pub mod streams {
    pub const SAMPLING: u64 = 1;
    pub const INIT: u64 = 2;
}

/// Deterministic generator for a seed and a labelled stream.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn open_unit(rng: &mut ChaCha20Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Uniform random interior, boundary-pair and initial-slice points.
///
/// Boundary pairs are spread over the axes round-robin, so each axis gets
/// `n_boundary / d` pairs and the first `n_boundary % d` axes one more.
pub fn sample_collocation(
    domain: &DomainSpec,
    n_interior: usize,
    n_boundary: usize,
    n_initial: usize,
    seed: u64,
) -> Result<CollocationSet, DomainError> {
    domain.validate()?;
    let d = domain.dim();
    let width = d + 1;
    let mut rng = seeded_rng(seed, streams::SAMPLING);

    let mut interior = PointSet::with_capacity(width, n_interior);
    let mut p = vec![0.0; width];
    for _ in 0..n_interior {
        for (xi, ext) in p.iter_mut().zip(&domain.extents) {
            *xi = open_unit(&mut rng) * ext;
        }
        p[d] = domain.t_start + open_unit(&mut rng) * domain.duration();
        interior.push(&p);
    }

    let mut boundary = BoundaryPairs {
        axis: Vec::with_capacity(n_boundary),
        low: PointSet::with_capacity(width, n_boundary),
        high: PointSet::with_capacity(width, n_boundary),
    };
    for n in 0..n_boundary {
        let axis = n % d;
        for (i, (xi, ext)) in p.iter_mut().zip(&domain.extents).enumerate() {
            *xi = if i == axis { 0.0 } else { open_unit(&mut rng) * ext };
        }
        p[d] = domain.t_start + open_unit(&mut rng) * domain.duration();
        boundary.axis.push(axis);
        boundary.low.push(&p);
        p[axis] = domain.extents[axis];
        boundary.high.push(&p);
    }

    let mut initial = PointSet::with_capacity(width, n_initial);
    for _ in 0..n_initial {
        for (xi, ext) in p.iter_mut().zip(&domain.extents) {
            *xi = open_unit(&mut rng) * ext;
        }
        p[d] = domain.t_start;
        initial.push(&p);
    }

    Ok(CollocationSet {
        interior,
        boundary,
        initial,
        seed,
    })
}
