//! System geometry and the line-of-sight pinching-antenna channel.
//!
//! The base station feeds a single dielectric waveguide running along the
//! x-axis at height `h`. Pinching antennas sit on a cell-centred grid along
//! the guide; users are scattered uniformly over the floor rectangle.
//! Each user channel entry is the in-guide response to antenna `n`
//! (attenuation plus guided phase) times the free-space amplitude
//! `lambda / (4 pi d)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Users closer than this to an antenna are rejected as degenerate.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Physical inputs from which a [`SystemLayout`] is built.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    /// Region extent along the waveguide (m).
    pub d1: f64,
    /// Transverse region extent (m).
    pub d2: f64,
    /// Waveguide / base-station height (m).
    pub height: f64,
    pub n_antennas: usize,
    pub carrier_frequency: f64,
    pub n_eff: f64,
    /// In-guide attenuation, dB per metre.
    pub kappa_db_per_m: f64,
    /// Multiply each user-antenna entry by `exp(-2 pi j d / lambda)`.
    pub free_space_phase: bool,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            d1: 10.0,
            d2: 6.0,
            height: 3.0,
            n_antennas: 20,
            carrier_frequency: 28e9,
            n_eff: 1.4,
            kappa_db_per_m: 0.08,
            free_space_phase: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemLayout {
    pub d1: f64,
    pub d2: f64,
    pub height: f64,
    pub carrier_frequency: f64,
    pub wavelength: f64,
    pub n_eff: f64,
    pub guided_wavelength: f64,
    pub kappa_db_per_m: f64,
    pub free_space_phase: bool,
    pub bs_position: Position3D,
    pub pa_positions: Vec<Position3D>,
}

impl SystemLayout {
    pub fn new(params: &LayoutParams) -> Result<Self> {
        let positive = [
            ("d1", params.d1),
            ("d2", params.d2),
            ("height", params.height),
            ("carrier_frequency", params.carrier_frequency),
            ("n_eff", params.n_eff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(params.kappa_db_per_m.is_finite() && params.kappa_db_per_m >= 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be non-negative, got {}", params.kappa_db_per_m)));
        }
        let wavelength = SPEED_OF_LIGHT / params.carrier_frequency;
        Ok(Self {
            d1: params.d1,
            d2: params.d2,
            height: params.height,
            carrier_frequency: params.carrier_frequency,
            wavelength,
            n_eff: params.n_eff,
            guided_wavelength: wavelength / params.n_eff,
            kappa_db_per_m: params.kappa_db_per_m,
            free_space_phase: params.free_space_phase,
            bs_position: Position3D::new(params.d1 / 2.0, 0.0, params.height),
            pa_positions: place_antennas(params.d1, params.height, params.n_antennas)?,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.pa_positions.len()
    }

    /// Channel matrix for a set of users.
    pub fn channels(&self, users: &[Position3D], noise_variance: f64) -> Result<ChannelMatrix> {
        let rows = users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                user_channel(u, self).map_err(|e| match e {
                    Error::DegenerateGeometry { antenna, distance, .. } => {
                        Error::DegenerateGeometry { user: k, antenna, distance }
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ChannelMatrix::new(rows, noise_variance)
    }
}

/// Cell-centred antenna grid: `x_n = (n - 1/2) d1 / n_t`, `y = 0`, `z = h`.
pub fn place_antennas(d1: f64, height: f64, n_antennas: usize) -> Result<Vec<Position3D>> {
    if n_antennas == 0 {
        return Err(Error::InvalidParameter("need at least one pinching antenna".into()));
    }
    if !(d1.is_finite() && d1 > 0.0) {
        return Err(Error::InvalidParameter(format!("d1 must be positive, got {d1}")));
    }
    let spacing = d1 / n_antennas as f64;
    Ok((0..n_antennas).map(|n| Position3D::new((n as f64 + 0.5) * spacing, 0.0, height)).collect())
}

pub fn sample_users(k: usize, d1: f64, d2: f64, seed: u64) -> Result<Vec<Position3D>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_users_with(&mut rng, k, d1, d2)
}

/// I.i.d. uniform users on `[0, d1] x [0, d2]` at ground level.
pub fn sample_users_with<R: Rng + ?Sized>(rng: &mut R, k: usize, d1: f64, d2: f64) -> Result<Vec<Position3D>> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one user".into()));
    }
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::InvalidParameter(format!("region must be positive, got {d1} x {d2}")));
    }
    Ok((0..k)
        .map(|_| {
            let x = rng.gen::<f64>() * d1;
            let y = rng.gen::<f64>() * d2;
            Position3D::new(x, y, 0.0)
        })
        .collect())
}

/// In-guide response from the feed point to one antenna.
pub fn waveguide_channel(bs: &Position3D, pa: &Position3D, kappa_db_per_m: f64, guided_wavelength: f64) -> Complex64 {
    let d = (bs.x - pa.x).abs();
    let magnitude = 10f64.powf(-kappa_db_per_m * d / 10.0);
    Complex64::from_polar(magnitude, -2.0 * PI * d / guided_wavelength)
}

pub fn user_channel(user: &Position3D, layout: &SystemLayout) -> Result<Vec<Complex64>> {
    layout
        .pa_positions
        .iter()
        .enumerate()
        .map(|(n, pa)| {
            let d = user.distance(pa);
            if !(d >= MIN_DISTANCE) {
                return Err(Error::DegenerateGeometry { user: 0, antenna: n, distance: d });
            }
            let guided = waveguide_channel(&layout.bs_position, pa, layout.kappa_db_per_m, layout.guided_wavelength);
            let mut entry = guided * (layout.wavelength / (4.0 * PI * d));
            if layout.free_space_phase {
                entry *= Complex64::from_polar(1.0, -2.0 * PI * d / layout.wavelength);
            }
            Ok(entry)
        })
        .collect()
}

/// `|sum_n h[n] p[n]|^2`.
pub fn effective_gain(h: &[Complex64], p: &[f64]) -> Result<f64> {
    if h.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: p.len() });
    }
    Ok(project(h, p).norm_sqr())
}

#[inline]
pub(crate) fn project(h: &[Complex64], p: &[f64]) -> Complex64 {
    h.iter().zip(p).map(|(hn, &pn)| hn * pn).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: Vec<Vec<Complex64>>,
    noise_variance: f64,
}

impl ChannelMatrix {
    pub fn new(rows: Vec<Vec<Complex64>>, noise_variance: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("channel matrix needs at least one user".into()));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::InvalidParameter(format!("noise variance must be positive, got {noise_variance}")));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::InvalidParameter("channel rows must be non-empty".into()));
        }
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            if row.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
                return Err(Error::InvalidParameter("non-finite channel entry".into()));
            }
        }
        Ok(Self { rows, noise_variance })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.rows[0].len()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<Complex64>] {
        &self.rows
    }

    /// Effective gains `|h_k p^T|^2` for every user.
    pub fn gains(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.rows.iter().map(|h| effective_gain(h, p)).collect()
    }

    /// Hex digest of the exact bit patterns; equal digests mean identical channels.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.noise_variance.to_bits().to_le_bytes());
        for row in &self.rows {
            for c in row {
                hasher.update(c.re.to_bits().to_le_bytes());
                hasher.update(c.im.to_bits().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
