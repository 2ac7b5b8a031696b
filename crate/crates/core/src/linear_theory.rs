//! Closed-form linear theory of a single Fourier mode about a uniform,
//! static background (with the background potential discarded).
//!
//! For `ω² = c_s²k² − 4πGρ0 > 0` the mode is a travelling wave
//! `ρ1 = ρ1a cos(ωt − k·x)`. For `ω² < 0` the growing branch
//! `ρ1 = ρ1a e^{αt} cos(k·x)` is used, with `α² = −ω²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::UnitSystem;

/// `|ω²|` below this is treated as marginal stability.
pub const MARGINAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("growth rate requested for a stable wavenumber k = {k} (k_J = {k_jeans})")]
    NotUnstable { k: f64, k_jeans: f64 },
    #[error("mode with zero wavenumber has no defined velocity amplitude")]
    SingularMode,
    #[error("marginally stable modes are not supported")]
    MarginalMode,
    #[error("point has {got} coordinates, mode has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid mode: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stable,
    Unstable,
    Marginal,
}

/// `ω² = c_s²k² − 4πGρ0`.
pub fn dispersion(units: &UnitSystem, k: f64) -> f64 {
    units.sound_speed.powi(2) * k * k - units.four_pi_g * units.background_density
}

/// Dispersion relation with gravity switched off: `ω² = c_s²k²`.
fn dispersion_with(units: &UnitSystem, k: f64, gravity: bool) -> f64 {
    if gravity {
        dispersion(units, k)
    } else {
        units.sound_speed.powi(2) * k * k
    }
}

/// `λ_J = sqrt(π c_s² / (G ρ0))`.
pub fn jeans_length(units: &UnitSystem) -> f64 {
    let g = units.four_pi_g / (4.0 * PI);
    (PI * units.sound_speed.powi(2) / (g * units.background_density)).sqrt()
}

/// `k_J = sqrt(4πGρ0) / c_s`.
pub fn jeans_wavenumber(units: &UnitSystem) -> f64 {
    (units.four_pi_g * units.background_density).sqrt() / units.sound_speed
}

pub fn regime(units: &UnitSystem, k: f64, gravity: bool) -> Regime {
    let w2 = dispersion_with(units, k, gravity);
    if w2.abs() <= MARGINAL_TOLERANCE {
        Regime::Marginal
    } else if w2 > 0.0 {
        Regime::Stable
    } else {
        Regime::Unstable
    }
}

/// `α = sqrt(4πGρ0 − c_s²k²)`, defined for `k ≤ k_J`.
pub fn growth_rate(units: &UnitSystem, k: f64) -> Result<f64, ModeError> {
    let w2 = dispersion(units, k);
    if w2 > MARGINAL_TOLERANCE {
        return Err(ModeError::NotUnstable {
            k,
            k_jeans: jeans_wavenumber(units),
        });
    }
    Ok((-w2).max(0.0).sqrt())
}

/// `v_p = c_s sqrt(1 − 4πGρ0 / (c_s²k²))` for stable wavenumbers.
pub fn phase_speed(units: &UnitSystem, k: f64, gravity: bool) -> Result<f64, ModeError> {
    if k == 0.0 {
        return Err(ModeError::SingularMode);
    }
    let w2 = dispersion_with(units, k, gravity);
    if w2 < -MARGINAL_TOLERANCE {
        return Err(ModeError::Invalid(format!(
            "k = {k} is unstable and has no phase speed"
        )));
    }
    Ok(w2.max(0.0).sqrt() / k.abs())
}

/// Velocity amplitude of the mode: `v_p ρ1a/ρ0` for a right-moving stable
/// wave, `−(α/k) ρ1a/ρ0` for the growing unstable branch.
pub fn velocity_amplitude(
    units: &UnitSystem,
    amplitude: f64,
    k: f64,
    gravity: bool,
) -> Result<f64, ModeError> {
    if k == 0.0 {
        return Err(ModeError::SingularMode);
    }
    let relative = amplitude / units.background_density;
    let w2 = dispersion_with(units, k, gravity);
    if w2 >= 0.0 {
        Ok(w2.sqrt() / k.abs() * relative)
    } else {
        Ok(-(-w2).sqrt() / k.abs() * relative)
    }
}

/// A single plane-wave perturbation and its derived linear-theory rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveMode {
    pub amplitude: f64,
    pub wavevector: Vec<f64>,
    pub regime: Regime,
    pub gravity: bool,
    /// Angular frequency, stable modes only.
    pub omega: Option<f64>,
    /// Growth rate, unstable modes only.
    pub growth_rate: Option<f64>,
    /// Phase speed, stable modes only.
    pub phase_speed: Option<f64>,
    pub velocity_amplitude: f64,
    pub units: UnitSystem,
}

/// Fields of a mode at one space-time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSample {
    pub density: f64,
    pub velocity: Vec<f64>,
    pub potential: f64,
    pub field: Vec<f64>,
}

impl WaveMode {
    pub fn new(
        units: UnitSystem,
        amplitude: f64,
        wavevector: Vec<f64>,
        gravity: bool,
    ) -> Result<Self, ModeError> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(ModeError::Invalid(format!(
                "amplitude must be >= 0, got {amplitude}"
            )));
        }
        if wavevector.is_empty() || wavevector.iter().any(|c| !c.is_finite()) {
            return Err(ModeError::Invalid("wavevector must be finite and non-empty".into()));
        }
        let k = norm(&wavevector);
        if k == 0.0 {
            return Err(ModeError::SingularMode);
        }
        let regime = regime(&units, k, gravity);
        let velocity_amplitude = velocity_amplitude(&units, amplitude, k, gravity)?;
        let w2 = dispersion_with(&units, k, gravity);
        let (omega, growth, vp) = match regime {
            Regime::Stable => (Some(w2.sqrt()), None, Some(w2.sqrt() / k)),
            Regime::Unstable => (None, Some((-w2).sqrt()), None),
            Regime::Marginal => (None, None, None),
        };
        Ok(Self {
            amplitude,
            wavevector,
            regime,
            gravity,
            omega,
            growth_rate: growth,
            phase_speed: vp,
            velocity_amplitude,
            units,
        })
    }

    /// Builds the mode a case configuration starts from.
    pub fn from_case(
        case: &crate::units::CaseConfig,
        units: &UnitSystem,
    ) -> Result<Self, ModeError> {
        Self::new(*units, case.amplitude, case.wavevector(units), case.gravity)
    }

    pub fn dim(&self) -> usize {
        self.wavevector.len()
    }

    pub fn wavenumber(&self) -> f64 {
        norm(&self.wavevector)
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.wavenumber()
    }

    /// Oscillation period of a stable mode.
    pub fn period(&self) -> Option<f64> {
        self.omega.map(|w| 2.0 * PI / w)
    }

    /// Density, velocity, potential and field `g = −∇φ` at `(x, t)`.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<ModeSample, ModeError> {
        if x.len() != self.dim() {
            return Err(ModeError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let k = self.wavenumber();
        let khat: Vec<f64> = self.wavevector.iter().map(|c| c / k).collect();
        let kx: f64 = self.wavevector.iter().zip(x).map(|(a, b)| a * b).sum();
        let rho0 = self.units.background_density;
        let coupling = if self.gravity {
            self.units.four_pi_g / (k * k)
        } else {
            0.0
        };
        // (ρ1, v1 along k̂, ∂(cos-phase term)/∂(k·x) factor for g)
        let (rho1, v1, grad_factor) = match self.regime {
            Regime::Stable => {
                let phase = self.omega.unwrap_or(0.0) * t - kx;
                let (s, c) = phase.sin_cos();
                // ∇ cos(ωt − k·x) = k sin(ωt − k·x)
                (self.amplitude * c, self.velocity_amplitude * c, s)
            }
            Regime::Unstable => {
                let grow = (self.growth_rate.unwrap_or(0.0) * t).exp();
                let (s, c) = kx.sin_cos();
                // ∇ cos(k·x) = −k sin(k·x)
                (
                    self.amplitude * grow * c,
                    self.velocity_amplitude * grow * s,
                    -grow * s,
                )
            }
            Regime::Marginal => return Err(ModeError::MarginalMode),
        };
        let potential = -coupling * rho1;
        // g = −∇φ = coupling · ρ1a · ∇(phase term)
        let field = self
            .wavevector
            .iter()
            .map(|ki| coupling * self.amplitude * grad_factor * ki)
            .collect();
        Ok(ModeSample {
            density: rho0 + rho1,
            velocity: khat.iter().map(|h| v1 * h).collect(),
            potential,
            field,
        })
    }

    /// Density and velocity at the start of the run (`t = 0`).
    pub fn initial_condition(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ModeError> {
        let s = self.evaluate(x, 0.0)?;
        Ok((s.density, s.velocity))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}
