//! Physics-informed network for the isothermal self-gravitating fluid:
//! residual assembly, the three-part loss, the Adam → L-BFGS training
//! schedule and predictions (including past the trained time window).
//!
//! Network outputs are ordered `(ρ, v_1 … v_d, φ)`, inputs `(x_1 … x_d, t)`.

use std::cell::RefCell;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linear_theory::{ModeError, WaveMode};
use crate::neural::{
    batch_losses, checkpoint, init_params, input_jet, lbfgs, loss_gradient, pairwise_sum, Adam, Jet, JetBatch,
    JetLoss, JetRequest, LbfgsConfig, LbfgsStop, NetworkParams, NetworkSpec, NeuralError, OutputScaling,
};
use crate::units::{BoundaryPairs, CaseConfig, CollocationSet, DomainError, PointSet, PoissonSource, UnitSystem};

#[derive(Debug, thiserror::Error)]
pub enum GrinnError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("non-finite loss during {phase:?} at epoch {epoch}")]
    NonFinite {
        phase: Phase,
        epoch: usize,
        /// Model holding the last parameters with a finite loss.
        last_good: Box<TrainedModel>,
    },
    #[error("query point {index} lies outside the spatial domain")]
    OutOfDomain { index: usize },
    #[error("model file: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

/// Loss components after applying their weights (1 by default), so
/// `total` is always their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse_pde: f64,
    pub mse_boundary: f64,
    pub mse_initial: f64,
    pub total: f64,
    pub epoch: usize,
    pub phase: Phase,
}

impl LossReport {
    fn from_parts(parts: &[f64], epoch: usize, phase: Phase) -> Self {
        let (p, b, i) = (parts[0], parts[1], parts[2]);
        Self {
            mse_pde: p,
            mse_boundary: b,
            mse_initial: i,
            total: p + b + i,
            epoch,
            phase,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// The physical constants and switches the residuals depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub units: UnitSystem,
    pub gravity: bool,
    pub source: PoissonSource,
}

impl Physics {
    pub fn from_case(case: &CaseConfig, units: &UnitSystem) -> Self {
        Self {
            units: *units,
            gravity: case.gravity,
            source: case.pinn.poisson_source,
        }
    }

    fn poisson_offset(&self) -> f64 {
        match self.source {
            PoissonSource::MeanSubtracted => self.units.background_density,
            PoissonSource::Literal => 0.0,
        }
    }

    fn interior_request(&self, dim: usize) -> JetRequest {
        if self.gravity {
            JetRequest::second((0..dim).collect())
        } else {
            JetRequest::first()
        }
    }
}

/// Pointwise PDE residuals; `poisson` is `None` without gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle {
    pub continuity: Vec<f64>,
    pub momentum: Vec<Vec<f64>>,
    pub poisson: Option<Vec<f64>>,
}

impl ResidualBundle {
    pub fn len(&self) -> usize {
        self.continuity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.continuity.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.continuity.iter().all(|v| v.is_finite())
            && self.momentum.iter().flatten().all(|v| v.is_finite())
            && self.poisson.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest absolute residual of any equation.
    pub fn max_abs(&self) -> f64 {
        self.continuity
            .iter()
            .chain(self.momentum.iter().flatten())
            .chain(self.poisson.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Residuals at one point, given the jet channels.
struct PointResidual<const D: usize> {
    r_rho: f64,
    r_v: [f64; D],
    r_phi: f64,
}

#[inline]
fn point_residual<const D: usize>(jet: &Jet, p: usize, phys: &Physics) -> PointResidual<D> {
    let t = D;
    let rho = jet.value(0, p);
    let cs2 = phys.units.sound_speed * phys.units.sound_speed;
    let mut r_rho = jet.d1(0, t, p);
    for i in 0..D {
        r_rho += jet.d1(0, i, p) * jet.value(1 + i, p) + rho * jet.d1(1 + i, i, p);
    }
    let mut r_v = [0.0; D];
    for (i, r) in r_v.iter_mut().enumerate() {
        let mut s = jet.d1(1 + i, t, p);
        for j in 0..D {
            s += jet.value(1 + j, p) * jet.d1(1 + i, j, p);
        }
        if phys.gravity {
            s += jet.d1(D + 1, i, p);
        }
        *r = rho * s + cs2 * jet.d1(0, i, p);
    }
    let r_phi = if phys.gravity {
        let lap: f64 = (0..D).map(|i| jet.d2(D + 1, i, p)).sum();
        lap - phys.units.four_pi_g * (rho - phys.poisson_offset())
    } else {
        0.0
    };
    PointResidual { r_rho, r_v, r_phi }
}

fn residuals_dim<const D: usize>(jet: &Jet, phys: &Physics) -> ResidualBundle {
    let n = jet.n;
    let mut out = ResidualBundle {
        continuity: Vec::with_capacity(n),
        momentum: vec![Vec::with_capacity(n); D],
        poisson: phys.gravity.then(|| Vec::with_capacity(n)),
    };
    for p in 0..n {
        let r = point_residual::<D>(jet, p, phys);
        out.continuity.push(r.r_rho);
        for i in 0..D {
            out.momentum[i].push(r.r_v[i]);
        }
        if let Some(ph) = out.poisson.as_mut() {
            ph.push(r.r_phi);
        }
    }
    out
}

/// Residuals from a jet carrying first derivatives (and, with gravity,
/// pure spatial second derivatives of φ).
pub fn residuals_from_jet(jet: &Jet, phys: &Physics) -> ResidualBundle {
    match jet.inputs - 1 {
        1 => residuals_dim::<1>(jet, phys),
        2 => residuals_dim::<2>(jet, phys),
        3 => residuals_dim::<3>(jet, phys),
        d => panic!("unsupported dimension {d}"),
    }
}

pub fn pde_residuals(params: &NetworkParams, points: &PointSet, phys: &Physics) -> Result<ResidualBundle, GrinnError> {
    let d = points.width - 1;
    let jet = input_jet(params, points, &phys.interior_request(d))?;
    if !jet.all_finite() {
        return Err(NeuralError::NonFinite { iteration: 0 }.into());
    }
    Ok(residuals_from_jet(&jet, phys))
}

/// Accumulates `c·(R_ρ² + Σ R_vi² + R_φ²)` and, optionally, its adjoint.
fn interior_chunk<const D: usize>(jet: &Jet, phys: &Physics, c: f64, adjoint: Option<&mut Jet>) -> f64 {
    let t = D;
    let n = jet.n;
    let cs2 = phys.units.sound_speed * phys.units.sound_speed;
    let mut per_point = Vec::with_capacity(n);
    let mut adj = adjoint;
    for p in 0..n {
        let r = point_residual::<D>(jet, p, phys);
        let mut sq = r.r_rho * r.r_rho + r.r_v.iter().map(|v| v * v).sum::<f64>();
        if phys.gravity {
            sq += r.r_phi * r.r_phi;
        }
        per_point.push(sq);
        let Some(a) = adj.as_deref_mut() else { continue };

        let rho = jet.value(0, p);
        let mut rho_bar = 0.0;
        let mut rho_x_bar = [0.0; D];
        let mut rho_t_bar = 0.0;
        let mut v_bar = [0.0; D];
        let mut v_x_bar = [[0.0; D]; D]; // [i][j] = ∂v_i/∂x_j
        let mut v_t_bar = [0.0; D];
        let mut phi_x_bar = [0.0; D];
        let mut phi_xx_bar = [0.0; D];

        // continuity
        let g = 2.0 * c * r.r_rho;
        rho_t_bar += g;
        for i in 0..D {
            rho_x_bar[i] += g * jet.value(1 + i, p);
            v_bar[i] += g * jet.d1(0, i, p);
            rho_bar += g * jet.d1(1 + i, i, p);
            v_x_bar[i][i] += g * rho;
        }
        // momentum
        for i in 0..D {
            let g = 2.0 * c * r.r_v[i];
            let mut s = jet.d1(1 + i, t, p);
            for j in 0..D {
                s += jet.value(1 + j, p) * jet.d1(1 + i, j, p);
            }
            if phys.gravity {
                s += jet.d1(D + 1, i, p);
                phi_x_bar[i] += g * rho;
            }
            rho_bar += g * s;
            v_t_bar[i] += g * rho;
            for j in 0..D {
                v_bar[j] += g * rho * jet.d1(1 + i, j, p);
                v_x_bar[i][j] += g * rho * jet.value(1 + j, p);
            }
            rho_x_bar[i] += g * cs2;
        }
        // Poisson
        if phys.gravity {
            let g = 2.0 * c * r.r_phi;
            for b in phi_xx_bar.iter_mut() {
                *b += g;
            }
            rho_bar -= g * phys.units.four_pi_g;
        }

        a.value_slice_mut(0)[p] = rho_bar;
        a.d1_slice_mut(0, t)[p] = rho_t_bar;
        for i in 0..D {
            a.d1_slice_mut(0, i)[p] = rho_x_bar[i];
            a.value_slice_mut(1 + i)[p] = v_bar[i];
            a.d1_slice_mut(1 + i, t)[p] = v_t_bar[i];
            for j in 0..D {
                a.d1_slice_mut(1 + i, j)[p] = v_x_bar[i][j];
            }
            if phys.gravity {
                a.d1_slice_mut(D + 1, i)[p] = phi_x_bar[i];
                a.d2_slice_mut(D + 1, i)[p] = phi_xx_bar[i];
            }
        }
    }
    c * pairwise_sum(&per_point)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Interior,
    Boundary,
    Initial,
}

/// The GRINN objective. Batches are any subset of interior points,
/// interleaved boundary pairs `(low, high)` and initial-slice points.
#[derive(Debug, Clone)]
pub struct GrinnLoss {
    dim: usize,
    phys: Physics,
    batches: Vec<JetBatch>,
    terms: Vec<Term>,
    weights: Vec<f64>,
    /// Axis of each boundary pair.
    pair_axes: Vec<usize>,
    /// Per initial point: ρ, v_1..v_d, φ.
    targets: Vec<f64>,
}

impl GrinnLoss {
    pub fn empty(dim: usize, phys: Physics) -> Self {
        Self {
            dim,
            phys,
            batches: Vec::new(),
            terms: Vec::new(),
            weights: Vec::new(),
            pair_axes: Vec::new(),
            targets: Vec::new(),
        }
    }

    /// The full objective for a case on a collocation set.
    pub fn for_case(case: &CaseConfig, units: &UnitSystem, set: &CollocationSet) -> Result<Self, GrinnError> {
        let domain = case.domain(units)?;
        let mode = WaveMode::from_case(case, units)?;
        let targets = initial_targets(&mode, &set.initial, domain.t_start)?;
        let w = &case.pinn;
        Ok(Self::empty(case.dim, Physics::from_case(case, units))
            .with_interior(set.interior.clone(), w.weight_pde)
            .with_boundary(&set.boundary, w.weight_boundary)
            .with_initial(set.initial.clone(), targets, w.weight_initial))
    }

    pub fn with_interior(mut self, points: PointSet, weight: f64) -> Self {
        self.batches.push(JetBatch {
            points,
            request: self.phys.interior_request(self.dim),
            align: 1,
        });
        self.terms.push(Term::Interior);
        self.weights.push(weight);
        self
    }

    pub fn with_boundary(mut self, pairs: &BoundaryPairs, weight: f64) -> Self {
        let width = pairs.low.width;
        let mut points = PointSet::with_capacity(width, 2 * pairs.len());
        for q in 0..pairs.len() {
            points.push(pairs.low.point(q));
            points.push(pairs.high.point(q));
        }
        self.pair_axes = pairs.axis.clone();
        self.batches.push(JetBatch {
            points,
            request: if self.phys.gravity {
                JetRequest::first()
            } else {
                JetRequest::values()
            },
            align: 2,
        });
        self.terms.push(Term::Boundary);
        self.weights.push(weight);
        self
    }

    /// `targets` holds `d + 2` values per point (ρ, v, φ).
    pub fn with_initial(mut self, points: PointSet, targets: Vec<f64>, weight: f64) -> Self {
        assert_eq!(targets.len(), points.len() * (self.dim + 2));
        self.targets = targets;
        self.batches.push(JetBatch {
            points,
            request: JetRequest::values(),
            align: 1,
        });
        self.terms.push(Term::Initial);
        self.weights.push(weight);
        self
    }

    /// Weighted contributions ordered `(pde, boundary, initial)`; absent
    /// terms are 0.
    fn by_term(&self, per_batch: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (t, v) in self.terms.iter().zip(per_batch) {
            out[*t as usize] += v;
        }
        out
    }

    pub fn evaluate(&self, params: &NetworkParams) -> Result<[f64; 3], GrinnError> {
        Ok(self.by_term(&batch_losses(params, self)?))
    }

    /// Weighted components and the gradient of their sum.
    pub fn evaluate_with_gradient(&self, params: &NetworkParams) -> Result<([f64; 3], Vec<f64>), GrinnError> {
        let (parts, grad) = loss_gradient(params, self)?;
        Ok((self.by_term(&parts), grad))
    }

    fn boundary_chunk(&self, start: usize, jet: &Jet, c: f64, mut adjoint: Option<&mut Jet>) -> f64 {
        let d = self.dim;
        let n_fields = if self.phys.gravity { d + 2 } else { d + 1 };
        let mut per_pair = Vec::with_capacity(jet.n / 2);
        for q in 0..jet.n / 2 {
            let (lo, hi) = (2 * q, 2 * q + 1);
            let axis = self.pair_axes[(start + lo) / 2];
            let mut sq = 0.0;
            for o in 0..n_fields {
                let diff = jet.value(o, lo) - jet.value(o, hi);
                sq += diff * diff;
                if let Some(a) = adjoint.as_deref_mut() {
                    let s = a.value_slice_mut(o);
                    s[lo] = 2.0 * c * diff;
                    s[hi] = -2.0 * c * diff;
                }
            }
            if self.phys.gravity {
                let diff = jet.d1(d + 1, axis, lo) - jet.d1(d + 1, axis, hi);
                sq += diff * diff;
                if let Some(a) = adjoint.as_deref_mut() {
                    let s = a.d1_slice_mut(d + 1, axis);
                    s[lo] = 2.0 * c * diff;
                    s[hi] = -2.0 * c * diff;
                }
            }
            per_pair.push(sq);
        }
        c * pairwise_sum(&per_pair)
    }

    fn initial_chunk(&self, start: usize, jet: &Jet, c: f64, mut adjoint: Option<&mut Jet>) -> f64 {
        let w = self.dim + 2;
        let n_fields = if self.phys.gravity { w } else { w - 1 };
        let mut per_point = Vec::with_capacity(jet.n);
        for p in 0..jet.n {
            let target = &self.targets[(start + p) * w..(start + p + 1) * w];
            let mut sq = 0.0;
            for (o, tv) in target.iter().enumerate().take(n_fields) {
                let diff = jet.value(o, p) - tv;
                sq += diff * diff;
                if let Some(a) = adjoint.as_deref_mut() {
                    a.value_slice_mut(o)[p] = 2.0 * c * diff;
                }
            }
            per_point.push(sq);
        }
        c * pairwise_sum(&per_point)
    }
}

impl JetLoss for GrinnLoss {
    fn batches(&self) -> &[JetBatch] {
        &self.batches
    }

    fn chunk(&self, batch: usize, start: usize, jet: &Jet, adjoint: Option<&mut Jet>) -> f64 {
        let count = match self.terms[batch] {
            Term::Boundary => self.batches[batch].points.len() / 2,
            _ => self.batches[batch].points.len(),
        };
        let c = self.weights[batch] / count.max(1) as f64;
        match self.terms[batch] {
            Term::Interior => match self.dim {
                1 => interior_chunk::<1>(jet, &self.phys, c, adjoint),
                2 => interior_chunk::<2>(jet, &self.phys, c, adjoint),
                3 => interior_chunk::<3>(jet, &self.phys, c, adjoint),
                d => panic!("unsupported dimension {d}"),
            },
            Term::Boundary => self.boundary_chunk(start, jet, c, adjoint),
            Term::Initial => self.initial_chunk(start, jet, c, adjoint),
        }
    }
}

/// Linear-theory ρ, v and φ at the initial slice, `d + 2` values per point.
pub fn initial_targets(mode: &WaveMode, points: &PointSet, t_start: f64) -> Result<Vec<f64>, GrinnError> {
    let d = points.width - 1;
    let mut out = Vec::with_capacity(points.len() * (d + 2));
    for x in points.iter() {
        let s = mode.evaluate(&x[..d], t_start)?;
        out.push(s.density);
        out.extend(&s.velocity);
        out.push(s.potential);
    }
    Ok(out)
}

/// Mean squared PDE residual over `points`.
pub fn mse_pde(params: &NetworkParams, points: &PointSet, phys: &Physics) -> Result<f64, GrinnError> {
    let loss = GrinnLoss::empty(points.width - 1, *phys).with_interior(points.clone(), 1.0);
    Ok(loss.evaluate(params)?[0])
}

/// Mean squared periodicity mismatch over boundary pairs.
pub fn mse_boundary(params: &NetworkParams, pairs: &BoundaryPairs, phys: &Physics) -> Result<f64, GrinnError> {
    let loss = GrinnLoss::empty(pairs.low.width - 1, *phys).with_boundary(pairs, 1.0);
    Ok(loss.evaluate(params)?[1])
}

/// Mean squared deviation from the linear-theory initial slice.
pub fn mse_initial(
    params: &NetworkParams,
    points: &PointSet,
    case: &CaseConfig,
    units: &UnitSystem,
) -> Result<f64, GrinnError> {
    let mode = WaveMode::from_case(case, units)?;
    let t0 = case.domain(units)?.t_start;
    let targets = initial_targets(&mode, points, t0)?;
    let loss = GrinnLoss::empty(case.dim, Physics::from_case(case, units)).with_initial(points.clone(), targets, 1.0);
    Ok(loss.evaluate(params)?[2])
}

pub fn total_loss(
    params: &NetworkParams,
    set: &CollocationSet,
    case: &CaseConfig,
    units: &UnitSystem,
) -> Result<LossReport, GrinnError> {
    let loss = GrinnLoss::for_case(case, units, set)?;
    Ok(LossReport::from_parts(&loss.evaluate(params)?, 0, Phase::Adam))
}

/// Network architecture used for a case.
/// First-layer frequency for models meant to be evaluated past their
/// training window: lower frequencies extrapolate in time far more smoothly.
pub const EXTRAPOLATION_OMEGA: f64 = 0.5;

pub fn network_for_case(case: &CaseConfig, units: &UnitSystem) -> Result<NetworkSpec, GrinnError> {
    let domain = case.domain(units)?;
    let mut spec = NetworkSpec::for_domain(&domain, case.pinn.hidden_layers.clone())?;
    spec.first_layer_omega = case.pinn.first_layer_omega;
    if case.pinn.scale_outputs {
        spec.output = Some(output_scaling(case, units)?);
    }
    spec.validate()?;
    Ok(spec)
}

/// Background state plus the linear-theory perturbation amplitude of each
/// field, so the network only has to learn order-one shapes.
pub fn output_scaling(case: &CaseConfig, units: &UnitSystem) -> Result<OutputScaling, GrinnError> {
    let d = case.dim;
    let mode = WaveMode::from_case(case, units)?;
    let rho1 = if case.amplitude > 0.0 { case.amplitude } else { units.background_density };
    let v1 = if mode.velocity_amplitude.abs() > 0.0 {
        mode.velocity_amplitude.abs()
    } else {
        units.sound_speed * rho1 / units.background_density
    };
    let phi1 = if case.gravity {
        units.four_pi_g * rho1 / (mode.wavenumber() * mode.wavenumber())
    } else {
        rho1
    };
    let mut offset = vec![0.0; d + 2];
    offset[0] = units.background_density;
    let mut scale = vec![v1; d + 2];
    scale[0] = rho1;
    scale[d + 1] = phi1;
    Ok(OutputScaling { offset, scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub config: CaseConfig,
    pub units: UnitSystem,
    /// Trained time window `[t_start, t_end]`.
    pub window: (f64, f64),
    pub spatial_extents: Vec<f64>,
    pub history: Vec<LossReport>,
    pub lbfgs_stop: Option<LbfgsStop>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> Option<&LossReport> {
        self.history.last()
    }

    pub fn save(&self, path: &Path) -> Result<(), GrinnError> {
        let mut extra = toml::Table::new();
        let to_value = |v: &dyn erased::Ser| v.to_toml().map_err(GrinnError::Model);
        extra.insert("config".into(), to_value(&self.config)?);
        extra.insert("units".into(), to_value(&self.units)?);
        extra.insert("window".into(), toml::Value::Array(vec![self.window.0.into(), self.window.1.into()]));
        if let Some(last) = self.final_loss() {
            extra.insert("final_loss".into(), to_value(last)?);
        }
        checkpoint::save(path, &self.params, extra)?;
        Ok(())
    }

    /// Restores parameters, configuration and trained window; the loss
    /// history keeps only the final report.
    pub fn load(path: &Path) -> Result<Self, GrinnError> {
        let (params, extra) = checkpoint::load(path)?;
        let field = |k: &str| extra.get(k).cloned().ok_or_else(|| GrinnError::Model(format!("missing `{k}`")));
        let config: CaseConfig = field("config")?.try_into().map_err(|e: toml::de::Error| GrinnError::Model(e.to_string()))?;
        let units: UnitSystem = field("units")?.try_into().map_err(|e: toml::de::Error| GrinnError::Model(e.to_string()))?;
        let window: Vec<f64> = field("window")?.try_into().map_err(|e: toml::de::Error| GrinnError::Model(e.to_string()))?;
        let history = match extra.get("final_loss") {
            Some(v) => vec![v.clone().try_into().map_err(|e: toml::de::Error| GrinnError::Model(e.to_string()))?],
            None => Vec::new(),
        };
        let domain = config.domain(&units)?;
        if window.len() != 2 {
            return Err(GrinnError::Model("window must have two entries".into()));
        }
        Ok(Self {
            params,
            config,
            units,
            window: (window[0], window[1]),
            spatial_extents: domain.extents,
            history,
            lbfgs_stop: None,
        })
    }
}

mod erased {
    pub trait Ser {
        fn to_toml(&self) -> Result<toml::Value, String>;
    }

    impl<T: serde::Serialize> Ser for T {
        fn to_toml(&self) -> Result<toml::Value, String> {
            toml::Value::try_from(self).map_err(|e| e.to_string())
        }
    }
}

/// Trains on a collocation set: Adam epochs, then L-BFGS on the same
/// objective. `observer` sees every recorded loss report.
pub fn train_with(
    case: &CaseConfig,
    units: &UnitSystem,
    set: &CollocationSet,
    observer: &mut dyn FnMut(&LossReport),
) -> Result<TrainedModel, GrinnError> {
    case.validate_solvable()?;
    let domain = case.domain(units)?;
    let loss = GrinnLoss::for_case(case, units, set)?;
    let spec = network_for_case(case, units)?;
    let mut params = init_params(&spec, case.pinn.seed);
    let mut model = TrainedModel {
        params: params.clone(),
        config: case.clone(),
        units: *units,
        window: (domain.t_start, domain.t_end),
        spatial_extents: domain.extents.clone(),
        history: Vec::new(),
        lbfgs_stop: None,
    };
    let non_finite = |model: &TrainedModel, params: &NetworkParams, phase, epoch| {
        let mut last_good = model.clone();
        last_good.params = params.clone();
        GrinnError::NonFinite {
            phase,
            epoch,
            last_good: Box::new(last_good),
        }
    };

    let mut adam = Adam::new(spec.param_count(), case.pinn.learning_rate);
    let mut x = params.as_flat().to_vec();
    for epoch in 1..=case.pinn.adam_epochs {
        let (parts, grad) = loss.evaluate_with_gradient(&params)?;
        let report = LossReport::from_parts(&parts, epoch, Phase::Adam);
        if !report.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(&model, &params, Phase::Adam, epoch));
        }
        observer(&report);
        model.history.push(report);
        adam.step(&mut x, &grad);
        let next = params.with_values(x.clone())?;
        model.params = std::mem::replace(&mut params, next);
    }

    if case.pinn.lbfgs_iterations > 0 {
        let cfg = LbfgsConfig {
            memory: case.pinn.lbfgs_memory,
            max_iterations: case.pinn.lbfgs_iterations,
            gradient_tolerance: 1e-12,
            change_tolerance: 1e-15,
            ..LbfgsConfig::default()
        };
        // components of every evaluation in the current iteration, keyed by
        // the exact total, so accepted steps can be reported in full
        let seen: RefCell<Vec<(u64, [f64; 3])>> = RefCell::new(Vec::new());
        let base = params.clone();
        let mut objective = |v: &[f64]| -> Result<(f64, Vec<f64>), NeuralError> {
            let p = base.with_values(v.to_vec())?;
            let (parts, grad) = loss.evaluate_with_gradient(&p).map_err(|e| match e {
                GrinnError::Neural(n) => n,
                other => NeuralError::Spec(other.to_string()),
            })?;
            let total: f64 = parts.iter().sum();
            seen.borrow_mut().push((total.to_bits(), parts));
            Ok((total, grad))
        };
        let offset = case.pinn.adam_epochs;
        let mut history = Vec::new();
        let result = lbfgs(&mut objective, params.as_flat().to_vec(), &cfg, |iter, f| {
            let parts = seen
                .borrow()
                .iter()
                .rev()
                .find(|(bits, _)| *bits == f.to_bits())
                .map(|(_, p)| *p)
                .unwrap_or([f, 0.0, 0.0]);
            seen.borrow_mut().clear();
            let report = LossReport::from_parts(&parts, offset + iter, Phase::Lbfgs);
            observer(&report);
            history.push(report);
            true
        });
        model.history.extend(history);
        match result {
            Ok((best, report)) => {
                params = params.with_values(best)?;
                model.lbfgs_stop = Some(report.stop);
            }
            Err(NeuralError::NonFinite { .. }) => {
                return Err(non_finite(&model, &params, Phase::Lbfgs, offset));
            }
            Err(e) => return Err(e.into()),
        }
    }
    // a final report at the returned parameters
    let parts = loss.evaluate(&params)?;
    let epoch = model.history.last().map_or(0, |r| r.epoch);
    let phase = if case.pinn.lbfgs_iterations > 0 { Phase::Lbfgs } else { Phase::Adam };
    let last = LossReport::from_parts(&parts, epoch, phase);
    if !last.is_finite() {
        return Err(non_finite(&model, &model.params.clone(), phase, epoch));
    }
    if model.history.last().map_or(true, |r| r.total != last.total) {
        model.history.push(last);
    }
    model.params = params;
    Ok(model)
}

pub fn train(case: &CaseConfig, units: &UnitSystem, set: &CollocationSet) -> Result<TrainedModel, GrinnError> {
    train_with(case, units, set, &mut |_| {})
}

/// Fields predicted at query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub density: Vec<f64>,
    /// `velocity[i][p]`: component `i` at point `p`.
    pub velocity: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
    /// `g = −∇φ`, laid out like `velocity`.
    pub field: Vec<Vec<f64>>,
    /// Whether each point's time lies outside the trained window.
    pub extrapolated: Vec<bool>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }
}

pub fn predict(model: &TrainedModel, points: &PointSet) -> Result<Prediction, GrinnError> {
    let d = model.spatial_extents.len();
    if points.width != d + 1 {
        return Err(NeuralError::InputWidth {
            expected: d + 1,
            got: points.width,
        }
        .into());
    }
    for (index, x) in points.iter().enumerate() {
        let inside = x[..d]
            .iter()
            .zip(&model.spatial_extents)
            .all(|(xi, ext)| *xi >= -1e-12 * ext && *xi <= ext * (1.0 + 1e-12));
        if !inside {
            return Err(GrinnError::OutOfDomain { index });
        }
    }
    let jet = input_jet(&model.params, points, &JetRequest::first())?;
    let (t0, t1) = model.window;
    Ok(Prediction {
        density: jet.value_slice(0).to_vec(),
        velocity: (0..d).map(|i| jet.value_slice(1 + i).to_vec()).collect(),
        potential: jet.value_slice(d + 1).to_vec(),
        field: (0..d).map(|i| jet.d1_slice(d + 1, i).iter().map(|v| -v).collect()).collect(),
        extrapolated: points.iter().map(|x| x[d] < t0 || x[d] > t1).collect(),
    })
}
