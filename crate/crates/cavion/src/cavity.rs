//! Deterministic optics of the fiber Fabry-Perot cavity.
//!
//! Covers the loss budget and finesse, Gaussian mode geometry, on-resonance
//! transmission, Purcell enhancement, and the scattering-loss microscopy
//! forward model used to locate nanoparticles on the flat mirror.

use alloc::vec::Vec;

use crate::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT_M_PER_S};

use core::f64::consts::PI;

/// Geometry and loss budget of the plano-concave fiber cavity.
///
/// The concave mirror sits on the fiber tip; nanoparticles are deposited on
/// the flat mirror, whose coating places a field antinode a configurable
/// height above its surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Radius of curvature of the fiber mirror (um).
    pub roc_um: f64,
    /// Mirror separation (um).
    pub length_um: f64,
    /// Operating wavelength (nm).
    pub wavelength_nm: f64,
    /// Fiber-mirror transmittivity (ppm).
    pub t_fiber_ppm: f64,
    /// Flat-mirror transmittivity (ppm).
    pub t_flat_ppm: f64,
    /// Round-trip excess loss excluding the mirrors (ppm).
    pub loss_ppm: f64,
    /// Height of the field antinode above the flat mirror (nm).
    pub antinode_offset_nm: f64,
}

impl CavityParams {
    /// Reference setup: 60 um radius of curvature, 6 um length, 1535 nm,
    /// 100/30 ppm mirrors with 13 ppm excess loss and a 50 nm antinode.
    pub fn reference() -> Self {
        CavityParams {
            roc_um: 60.0,
            length_um: 6.0,
            wavelength_nm: 1535.0,
            t_fiber_ppm: 100.0,
            t_flat_ppm: 30.0,
            loss_ppm: 13.0,
            antinode_offset_nm: 50.0,
        }
    }

    /// Checks the stability and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.length_um > 0.0) || !(self.length_um < self.roc_um) {
            return Err(Error::UnstableResonator {
                length_um: self.length_um,
                roc_um: self.roc_um,
            });
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::InvalidParameter("wavelength_nm must be positive".into()));
        }
        if self.t_fiber_ppm < 0.0 || self.t_flat_ppm < 0.0 || self.loss_ppm < 0.0 {
            return Err(Error::InvalidParameter(
                "transmittivities and losses must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Same cavity with extra round-trip loss added (e.g. a coupled
    /// scatterer).
    pub fn with_extra_loss(&self, extra_ppm: f64) -> Self {
        CavityParams {
            loss_ppm: self.loss_ppm + extra_ppm,
            ..*self
        }
    }

    /// Transition frequency of the operating wavelength (Hz).
    pub fn frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT_M_PER_S / (self.wavelength_nm * 1e-9)
    }
}

/// Derived mode quantities of a valid cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeGeometry {
    /// Fundamental mode waist (um).
    pub waist_um: f64,
    /// Mode volume (um^3).
    pub mode_volume_um3: f64,
    /// Free spectral range (Hz).
    pub fsr_hz: f64,
    /// Finesse (dimensionless).
    pub finesse: f64,
    /// Cavity linewidth, FWHM (Hz).
    pub fwhm_hz: f64,
    /// Quality factor (dimensionless).
    pub q_factor: f64,
}

/// A point scatterer on the flat mirror, seen by the cavity as added
/// round-trip loss when the mode sits on top of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x_um: f64,
    pub y_um: f64,
    /// Added round-trip loss when the mode is centered on the particle (ppm).
    pub loss_ppm: f64,
}

/// Finesse from the round-trip loss budget: 2*pi over the total fractional
/// loss per round trip.
pub fn finesse_from_losses(t1_ppm: f64, t2_ppm: f64, loss_ppm: f64) -> Result<f64> {
    let total = t1_ppm + t2_ppm + loss_ppm;
    if !(total > 0.0) {
        return Err(Error::InvalidParameter(
            "total round-trip loss must be positive".into(),
        ));
    }
    Ok(2.0 * PI / (total * 1e-6))
}

/// On-resonance transmission of a two-mirror cavity,
/// T = 4*t1*t2 / (t1 + t2 + loss)^2.
///
/// Equals one only for a lossless symmetric cavity.
pub fn resonant_transmission(t1_ppm: f64, t2_ppm: f64, loss_ppm: f64) -> Result<f64> {
    let total = t1_ppm + t2_ppm + loss_ppm;
    if !(total > 0.0) {
        return Err(Error::InvalidParameter(
            "total round-trip loss must be positive".into(),
        ));
    }
    Ok(4.0 * t1_ppm * t2_ppm / (total * total))
}

/// Gaussian-mode geometry and spectral quantities of the cavity.
///
/// Waist from the plano-concave resonator relation
/// w0^2 = (lambda/pi) * sqrt(L(R-L)), mode volume V = pi w0^2 L / 4,
/// FSR = c/2L, and the linewidth/Q chain FWHM = FSR/F, Q = nu/FWHM.
pub fn mode_geometry(cavity: &CavityParams) -> Result<ModeGeometry> {
    cavity.validate()?;
    let lambda_um = cavity.wavelength_nm * 1e-3;
    let l = cavity.length_um;
    let waist_sq = (lambda_um / PI) * (l * (cavity.roc_um - l)).sqrt();
    let waist_um = waist_sq.sqrt();
    let mode_volume_um3 = PI * waist_sq * l / 4.0;
    let fsr_hz = SPEED_OF_LIGHT_M_PER_S / (2.0 * l * 1e-6);
    let finesse = finesse_from_losses(cavity.t_fiber_ppm, cavity.t_flat_ppm, cavity.loss_ppm)?;
    let fwhm_hz = fsr_hz / finesse;
    let q_factor = cavity.frequency_hz() / fwhm_hz;
    Ok(ModeGeometry {
        waist_um,
        mode_volume_um3,
        fsr_hz,
        finesse,
        fwhm_hz,
        q_factor,
    })
}

/// Purcell factor C = zeta * (3 lambda^3 / 4 pi^2) * (Q/V).
///
/// `zeta` is the branching ratio of the addressed transition; wavelength in
/// nm, mode volume in um^3.
pub fn purcell_factor(
    branching_ratio: f64,
    wavelength_nm: f64,
    q_factor: f64,
    mode_volume_um3: f64,
) -> Result<f64> {
    if !(branching_ratio > 0.0 && branching_ratio <= 1.0) {
        return Err(Error::InvalidParameter(
            "branching ratio must lie in (0, 1]".into(),
        ));
    }
    if !(wavelength_nm > 0.0 && q_factor > 0.0 && mode_volume_um3 > 0.0) {
        return Err(Error::InvalidParameter(
            "wavelength, Q and mode volume must be positive".into(),
        ));
    }
    let lambda_um = wavelength_nm * 1e-3;
    let lambda_cubed = lambda_um * lambda_um * lambda_um;
    Ok(branching_ratio * (3.0 * lambda_cubed / (4.0 * PI * PI)) * (q_factor / mode_volume_um3))
}

/// Cavity-enhanced lifetime T = T_nat / (1 + C).
///
/// The convention is that C multiplies the decay *rate*, so C can be read
/// back from a measured lifetime as T_nat/T - 1.
pub fn purcell_lifetime(natural_lifetime_s: f64, c: f64) -> Result<f64> {
    if !(natural_lifetime_s > 0.0) {
        return Err(Error::InvalidParameter(
            "natural lifetime must be positive".into(),
        ));
    }
    if c < 0.0 {
        return Err(Error::InvalidParameter(
            "Purcell factor must be nonnegative".into(),
        ));
    }
    Ok(natural_lifetime_s / (1.0 + c))
}

/// Relative emitter-mode coupling at a point in the cavity.
///
/// Combines dipole projection, the transverse Gaussian profile, and the
/// standing-wave pattern referenced to the antinode above the flat mirror:
///
/// xi = cos^2(theta) * exp(-2 r^2 / w0^2) * cos^2(2 pi (z - z_anti)/lambda)
///
/// `position_um` is (x, y, z) with x, y relative to the mode axis and z the
/// height above the flat mirror. Returns a value in [0, 1], reaching 1 for
/// an aligned dipole on axis at the antinode.
pub fn local_coupling(position_um: [f64; 3], dipole_polar_angle: f64, cavity: &CavityParams) -> Result<f64> {
    let geom = mode_geometry(cavity)?;
    let [x, y, z] = position_um;
    let lambda_um = cavity.wavelength_nm * 1e-3;
    let z_antinode_um = cavity.antinode_offset_nm * 1e-3;
    let transverse = (-2.0 * (x * x + y * y) / (geom.waist_um * geom.waist_um)).exp();
    let standing = (2.0 * PI * (z - z_antinode_um) / lambda_um).cos().powi(2);
    let dipole = dipole_polar_angle.cos().powi(2);
    Ok(dipole * transverse * standing)
}

/// Rectangular grid for the microscopy forward model (um).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub y_min_um: f64,
    pub y_max_um: f64,
    pub step_um: f64,
}

impl ScanGrid {
    fn axis(min: f64, max: f64, step: f64) -> Vec<f64> {
        let n = ((max - min) / step).floor() as usize + 1;
        (0..n).map(|i| min + step * i as f64).collect()
    }
}

/// 2-D map of on-resonance transmission over mirror positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionMap {
    /// Grid x coordinates (um).
    pub xs_um: Vec<f64>,
    /// Grid y coordinates (um).
    pub ys_um: Vec<f64>,
    /// Transmission fractions, row-major: `values[iy * xs.len() + ix]`.
    pub values: Vec<f64>,
}

impl TransmissionMap {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs_um.len() + ix]
    }
}

/// Scattering-loss microscopy forward model.
///
/// For each grid pixel the mode overlaps every scatterer with a Gaussian
/// weight set by the mode waist; the summed extra loss is added to the
/// empty-cavity budget and converted to an on-resonance transmission.
/// Transmission dips are therefore centered on the particles.
pub fn microscopy_map(
    scatterers: &[Scatterer],
    cavity: &CavityParams,
    grid: &ScanGrid,
) -> Result<TransmissionMap> {
    if !(grid.step_um > 0.0) || grid.x_max_um < grid.x_min_um || grid.y_max_um < grid.y_min_um {
        return Err(Error::InvalidParameter("scan grid is empty or inverted".into()));
    }
    let geom = mode_geometry(cavity)?;
    let waist_sq = geom.waist_um * geom.waist_um;
    let xs = ScanGrid::axis(grid.x_min_um, grid.x_max_um, grid.step_um);
    let ys = ScanGrid::axis(grid.y_min_um, grid.y_max_um, grid.step_um);
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let mut extra = 0.0;
            for s in scatterers {
                let dx = x - s.x_um;
                let dy = y - s.y_um;
                extra += s.loss_ppm * (-2.0 * (dx * dx + dy * dy) / waist_sq).exp();
            }
            values.push(resonant_transmission(
                cavity.t_fiber_ppm,
                cavity.t_flat_ppm,
                cavity.loss_ppm + extra,
            )?);
        }
    }
    Ok(TransmissionMap {
        xs_um: xs,
        ys_um: ys,
        values,
    })
}
