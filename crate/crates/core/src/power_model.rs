//! Coupling physics of the general and equal power-radiation models.
//!
//! Antenna `m` leaks `delta_m^2` of whatever power reaches it, so the
//! fraction of the total guided power it radiates is
//! `beta_m = delta_m^2 * prod_{i<m} (1 - delta_i^2)`. The coupling itself is
//! `delta = sin(kappa_m L)` with `kappa_m = Omega_0 exp(-sqrt(gamma_0^2 -
//! 4 pi^2 n_clad^2 / lambda^2) S_m)`, which ties it to the antenna spacing
//! `S_m` from the waveguide.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Below this residual the guide is considered drained.
const RESIDUAL_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingVector {
    delta: Vec<f64>,
}

impl CouplingVector {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if let Some(bad) = delta.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::InvalidParameter(format!("coupling {bad} outside [0, 1]")));
        }
        Ok(Self { delta })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    /// Power still in the guide after the last antenna, `prod (1 - delta^2)`.
    pub fn residual(&self) -> f64 {
        self.delta.iter().map(|d| 1.0 - d * d).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFractions {
    beta: Vec<f64>,
}

impl PowerFractions {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if let Some(bad) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::InvalidParameter(format!("power fraction {bad} outside [0, 1]")));
        }
        let total: f64 = beta.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("power fractions sum to {total} > 1")));
        }
        Ok(Self { beta })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    pub fn total(&self) -> f64 {
        self.beta.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPhysicsParams {
    /// Coupling-strength constant (1/m).
    pub omega0: f64,
    /// Decay constant (1/m).
    pub gamma0: f64,
    pub n_clad: f64,
    /// Coupling length (m).
    pub coupling_length: f64,
    pub wavelength: f64,
}

impl Default for CouplingPhysicsParams {
    fn default() -> Self {
        Self {
            omega0: 1000.0,
            gamma0: 1500.0,
            n_clad: 1.0,
            coupling_length: 0.01,
            wavelength: crate::geometry::SPEED_OF_LIGHT / 28e9,
        }
    }
}

impl CouplingPhysicsParams {
    /// Exponent rate `sqrt(gamma_0^2 - 4 pi^2 n_clad^2 / lambda^2)`.
    pub fn decay_rate(&self) -> Result<f64> {
        for (name, v) in [
            ("omega0", self.omega0),
            ("gamma0", self.gamma0),
            ("n_clad", self.n_clad),
            ("coupling_length", self.coupling_length),
            ("wavelength", self.wavelength),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let k = 2.0 * PI * self.n_clad / self.wavelength;
        let radicand = self.gamma0 * self.gamma0 - k * k;
        if radicand <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma0^2 must exceed 4 pi^2 n_clad^2 / lambda^2 (= {})",
                k * k
            )));
        }
        Ok(radicand.sqrt())
    }

    pub fn coupling_coefficient(&self, spacing: f64) -> Result<f64> {
        Ok(self.omega0 * (-self.decay_rate()? * spacing).exp())
    }
}

pub fn couplings_to_fractions(delta: &CouplingVector) -> PowerFractions {
    let mut remaining = 1.0;
    let beta = delta
        .as_slice()
        .iter()
        .map(|d| {
            let d2 = d * d;
            let b = d2 * remaining;
            remaining *= 1.0 - d2;
            b
        })
        .collect();
    PowerFractions { beta }
}

/// Inverts [`couplings_to_fractions`]: `delta_m = sqrt(beta_m / prod_{i<m}(1 - delta_i^2))`.
pub fn fractions_to_couplings(beta: &PowerFractions) -> Result<CouplingVector> {
    let mut remaining = 1.0;
    let mut delta = Vec::with_capacity(beta.as_slice().len());
    for (index, &b) in beta.as_slice().iter().enumerate() {
        if b == 0.0 {
            delta.push(0.0);
            continue;
        }
        if remaining < RESIDUAL_FLOOR || b > remaining * (1.0 + 1e-12) {
            return Err(Error::InfeasibleFractions { index, requested: b, remaining });
        }
        let d2 = (b / remaining).min(1.0);
        delta.push(d2.sqrt());
        remaining *= 1.0 - d2;
    }
    Ok(CouplingVector { delta })
}

/// Couplings under which every antenna radiates the same fraction `p_eq`.
pub fn epr_couplings(n_antennas: usize, p_eq: f64) -> Result<CouplingVector> {
    if n_antennas == 0 {
        return Err(Error::InvalidParameter("need at least one antenna".into()));
    }
    if !(p_eq > 0.0 && p_eq <= 1.0) {
        return Err(Error::InvalidParameter(format!("equal fraction must lie in (0, 1], got {p_eq}")));
    }
    (0..n_antennas)
        .map(|m| {
            let remaining = 1.0 - m as f64 * p_eq;
            if remaining <= 0.0 || p_eq > remaining * (1.0 + 1e-12) {
                return Err(Error::InfeasibleFractions { index: m, requested: p_eq, remaining: remaining.max(0.0) });
            }
            Ok((p_eq / remaining).min(1.0).sqrt())
        })
        .collect::<Result<Vec<_>>>()
        .map(|delta| CouplingVector { delta })
}

/// Waveguide-to-antenna spacing producing coupling `delta`.
pub fn coupling_to_spacing(delta: f64, params: &CouplingPhysicsParams) -> Result<f64> {
    let rate = params.decay_rate()?;
    let max = params.omega0 * params.coupling_length;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::OutOfRange { delta, max });
    }
    let angle = delta.asin();
    if angle > max {
        return Err(Error::OutOfRange { delta, max });
    }
    Ok(-(angle / max).ln() / rate)
}

/// Forward model: spacing to coupling, `sin(kappa(S) L)`.
pub fn spacing_to_coupling(spacing: f64, params: &CouplingPhysicsParams) -> Result<f64> {
    Ok((params.coupling_coefficient(spacing)? * params.coupling_length).sin())
}
