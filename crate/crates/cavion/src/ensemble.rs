//! Stochastic generation of doped nanoparticles and their ion populations.
//!
//! A particle is drawn from a size distribution, filled with a Poisson
//! number of addressable ions at the configured density, and each ion gets
//! a position inside the sphere, a transition frequency from the
//! inhomogeneous line, a dipole orientation, a homogeneous width (with a
//! broadened near-surface shell), and slow-dynamics parameters (spectral
//! diffusion, Zeeman slope).

use alloc::vec::Vec;

use crate::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::task_rng;
use crate::{Error, Result, SPEED_OF_LIGHT_M_PER_S};

use core::f64::consts::PI;

/// FWHM of a Gaussian in units of its standard deviation.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Scatter loss of the reference particle used for Rayleigh scaling (ppm).
const REFERENCE_SCATTER_LOSS_PPM: f64 = 171.0;
/// Diameter of the reference particle (nm).
const REFERENCE_SCATTER_DIAMETER_NM: f64 = 170.0;

/// Zero-field to in-field linewidth ratio applied when a magnetic field
/// splits a line (narrowing of 30 MHz down to about 12 MHz).
pub const DEFAULT_ZEEMAN_NARROWING: f64 = 12.0 / 30.0;

/// Statistical description of a doped nanoparticle batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    /// Mean particle diameter (nm).
    pub diameter_mean_nm: f64,
    /// Standard deviation of the diameter (nm).
    pub diameter_sd_nm: f64,
    /// Density of addressable ions (um^-3).
    pub ion_density_per_um3: f64,
    /// Fraction of all dopants sitting in the addressed site.
    pub c2_fraction: f64,
    /// Center of the inhomogeneous line (Hz).
    pub inhom_center_hz: f64,
    /// FWHM of the inhomogeneous line (Hz).
    pub inhom_fwhm_hz: f64,
    /// Homogeneous FWHM of ions deep inside the particle (Hz).
    pub homwidth_base_hz: f64,
    /// Upper homogeneous FWHM for ions in the surface shell (Hz).
    pub homwidth_surface_hz: f64,
    /// Thickness of the broadened surface shell (nm).
    pub surface_layer_nm: f64,
    /// Stationary width of the spectral-diffusion process (Hz).
    pub sd_sigma_hz: f64,
    /// Correlation time of the spectral-diffusion process (s).
    pub sd_tau_s: f64,
    /// Effective Zeeman splitting rate (Hz/mT).
    pub zeeman_slope_hz_per_mt: f64,
}

impl ParticleSpec {
    /// Reference batch: 110(30) nm particles, 4e5 addressable ions per
    /// um^3, 6 GHz inhomogeneous line at 1535 nm, 4 MHz bulk widths
    /// broadened up to 400 MHz in a 10 nm shell.
    pub fn reference() -> Self {
        ParticleSpec {
            diameter_mean_nm: 110.0,
            diameter_sd_nm: 30.0,
            ion_density_per_um3: 4.0e5,
            c2_fraction: 0.75,
            inhom_center_hz: SPEED_OF_LIGHT_M_PER_S / 1535.0e-9,
            inhom_fwhm_hz: 6.0e9,
            homwidth_base_hz: 4.0e6,
            homwidth_surface_hz: 400.0e6,
            surface_layer_nm: 10.0,
            sd_sigma_hz: 5.0e6,
            sd_tau_s: 60.0,
            zeeman_slope_hz_per_mt: 10.0e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_mean_nm > 0.0) {
            return Err(Error::InvalidParameter("diameter_mean_nm must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.c2_fraction) {
            return Err(Error::InvalidParameter("c2_fraction must lie in [0, 1]".into()));
        }
        if !(self.inhom_fwhm_hz > 0.0)
            || !(self.homwidth_base_hz > 0.0)
            || !(self.homwidth_surface_hz > 0.0)
        {
            return Err(Error::InvalidParameter("linewidths must be positive".into()));
        }
        if self.ion_density_per_um3 < 0.0 || self.diameter_sd_nm < 0.0 || self.surface_layer_nm < 0.0
        {
            return Err(Error::InvalidParameter(
                "density, diameter spread and shell thickness must be nonnegative".into(),
            ));
        }
        if !(self.sd_tau_s > 0.0) {
            return Err(Error::InvalidParameter("sd_tau_s must be positive".into()));
        }
        Ok(())
    }
}

/// One addressable ion inside a particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ion {
    /// Position relative to the particle center (nm).
    pub position_nm: [f64; 3],
    /// Zero-field transition frequency and mean of the diffusion process (Hz).
    pub center_freq_hz: f64,
    /// Homogeneous FWHM (Hz).
    pub hom_fwhm_hz: f64,
    /// Polar angle of the dipole against the cavity field (rad).
    pub dipole_polar_angle_rad: f64,
    /// Stationary spectral-diffusion width (Hz).
    pub sd_sigma_hz: f64,
    /// Spectral-diffusion correlation time (s).
    pub sd_tau_s: f64,
    /// Effective Zeeman splitting rate (Hz/mT).
    pub zeeman_slope_hz_per_mt: f64,
    /// Current spectral-diffusion displacement from the center (Hz).
    pub diffusion_offset_hz: f64,
}

impl Ion {
    /// Instantaneous transition frequency including spectral diffusion.
    pub fn current_freq_hz(&self) -> f64 {
        self.center_freq_hz + self.diffusion_offset_hz
    }
}

/// A sampled nanoparticle sitting on the flat mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nanoparticle {
    pub diameter_nm: f64,
    /// Center position on the mirror (um).
    pub center_x_um: f64,
    pub center_y_um: f64,
    /// Height of the sphere center above the mirror surface (nm).
    pub center_height_nm: f64,
    /// Round-trip loss added to the cavity when the mode sits on the
    /// particle (ppm).
    pub scatter_loss_ppm: f64,
    pub ions: Vec<Ion>,
}

/// One component of a Zeeman-split line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanLine {
    pub freq_hz: f64,
    /// Weight of this component; the pair sums to one.
    pub relative_strength: f64,
    pub fwhm_hz: f64,
}

/// Draws a particle: diameter, ion population, and scattering loss.
///
/// The diameter is normal, truncated to positive values; the ion count is
/// Poisson with mean `density * volume`; the scattering loss follows the
/// d^6 Rayleigh scaling anchored at 171 ppm for a 170 nm sphere. The
/// particle rests on the mirror with its center at half a diameter height.
/// Two calls with the same seed produce bit-identical particles.
pub fn sample_nanoparticle(spec: &ParticleSpec, rng_seed: u64) -> Result<Nanoparticle> {
    spec.validate()?;
    let mut rng = task_rng(rng_seed);

    let diameter_nm = if spec.diameter_sd_nm > 0.0 {
        let normal = Normal::new(spec.diameter_mean_nm, spec.diameter_sd_nm)
            .map_err(|_| Error::InvalidParameter("bad diameter distribution".into()))?;
        loop {
            let d = normal.sample(&mut rng);
            if d > 0.0 {
                break d;
            }
        }
    } else {
        spec.diameter_mean_nm
    };

    let volume_um3 = sphere_volume_um3(diameter_nm);
    let expected_ions = spec.ion_density_per_um3 * volume_um3;
    let count = if expected_ions > 0.0 {
        let poisson = Poisson::new(expected_ions)
            .map_err(|_| Error::InvalidParameter("bad ion count distribution".into()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };

    let ions = sample_ions(diameter_nm, spec, count, &mut rng);
    let ratio = diameter_nm / REFERENCE_SCATTER_DIAMETER_NM;
    Ok(Nanoparticle {
        diameter_nm,
        center_x_um: 0.0,
        center_y_um: 0.0,
        center_height_nm: diameter_nm / 2.0,
        scatter_loss_ppm: REFERENCE_SCATTER_LOSS_PPM * ratio.powi(6),
        ions,
    })
}

/// Draws `count` ions for a sphere of the given diameter.
///
/// Positions are uniform in the sphere, frequencies normal with the
/// inhomogeneous width, dipole directions uniform on the unit sphere.
/// Ions deeper than the surface shell get the base homogeneous width;
/// ions inside the shell draw log-uniformly between base and surface
/// widths.
pub fn sample_ions(
    diameter_nm: f64,
    spec: &ParticleSpec,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Ion> {
    let radius = diameter_nm / 2.0;
    let sigma = spec.inhom_fwhm_hz / GAUSSIAN_FWHM_PER_SIGMA;
    let log_base = spec.homwidth_base_hz.ln();
    let log_surface = spec.homwidth_surface_hz.ln();

    (0..count)
        .map(|_| {
            // uniform point in the sphere: radius from the r^3 cdf, direction isotropic
            let r = radius * rng.gen::<f64>().cbrt();
            let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
            let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            let phi = rng.gen_range(0.0..2.0 * PI);
            let position_nm = [
                r * sin_theta * phi.cos(),
                r * sin_theta * phi.sin(),
                r * cos_theta,
            ];

            let center_freq_hz = spec.inhom_center_hz + sigma * draw_standard_normal(rng);
            let dipole_polar_angle_rad = (1.0 - 2.0 * rng.gen::<f64>()).acos();

            let depth = radius - r;
            let hom_fwhm_hz = if depth > spec.surface_layer_nm {
                spec.homwidth_base_hz
            } else {
                (log_base + rng.gen::<f64>() * (log_surface - log_base)).exp()
            };

            Ion {
                position_nm,
                center_freq_hz,
                hom_fwhm_hz,
                dipole_polar_angle_rad,
                sd_sigma_hz: spec.sd_sigma_hz,
                sd_tau_s: spec.sd_tau_s,
                zeeman_slope_hz_per_mt: spec.zeeman_slope_hz_per_mt,
                diffusion_offset_hz: 0.0,
            }
        })
        .collect()
}

fn draw_standard_normal(rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.sample(rng)
}

fn sphere_volume_um3(diameter_nm: f64) -> f64 {
    let d_um = diameter_nm * 1e-3;
    PI / 6.0 * d_um * d_um * d_um
}

/// Expected density of addressable ions per GHz at a given frequency.
///
/// This is the expectation `N * pdf(freq)` of the Gaussian inhomogeneous
/// line with `N = density * volume`, not a histogram of the sampled ions;
/// it integrates to the addressable population.
pub fn spectral_density(particle: &Nanoparticle, spec: &ParticleSpec, freq_hz: f64) -> f64 {
    let n = spec.ion_density_per_um3 * sphere_volume_um3(particle.diameter_nm);
    let sigma = spec.inhom_fwhm_hz / GAUSSIAN_FWHM_PER_SIGMA;
    let z = (freq_hz - spec.inhom_center_hz) / sigma;
    let pdf_per_hz = (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt());
    n * pdf_per_hz * 1e9
}

/// Two readings of the addressable population of a particle.
///
/// The dopant density and the site fraction over-determine the count, and
/// the two bookkeeping conventions disagree; both are reported so the
/// discrepancy stays visible instead of being silently reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SitePopulation {
    /// Density taken as the addressable-ion density: N = rho * V.
    pub addressable_expected: f64,
    /// Density taken as the total-dopant density: N = rho * V * c2_fraction.
    pub alternate_c2_expected: f64,
    /// Total dopants implied by the first reading: N / c2_fraction.
    pub total_expected: f64,
}

pub fn site_population(diameter_nm: f64, spec: &ParticleSpec) -> SitePopulation {
    let n = spec.ion_density_per_um3 * sphere_volume_um3(diameter_nm);
    SitePopulation {
        addressable_expected: n,
        alternate_c2_expected: n * spec.c2_fraction,
        total_expected: if spec.c2_fraction > 0.0 {
            n / spec.c2_fraction
        } else {
            f64::INFINITY
        },
    }
}

/// Splits a line into its Zeeman pair with the default narrowing ratio.
pub fn apply_zeeman(ion: &Ion, b_field_mt: f64) -> Result<[ZeemanLine; 2]> {
    apply_zeeman_with_narrowing(ion, b_field_mt, DEFAULT_ZEEMAN_NARROWING)
}

/// Zeeman pair of an ion line: components at center +- slope*B/2 with
/// equal strength. For B > 0 each component carries the narrowed width;
/// at B = 0 the degenerate pair keeps the zero-field width.
pub fn apply_zeeman_with_narrowing(
    ion: &Ion,
    b_field_mt: f64,
    narrowing: f64,
) -> Result<[ZeemanLine; 2]> {
    if b_field_mt < 0.0 {
        return Err(Error::InvalidParameter("b_field_mt must be nonnegative".into()));
    }
    let split = ion.zeeman_slope_hz_per_mt * b_field_mt;
    let center = ion.current_freq_hz();
    let fwhm = if b_field_mt > 0.0 {
        ion.hom_fwhm_hz * narrowing
    } else {
        ion.hom_fwhm_hz
    };
    Ok([
        ZeemanLine {
            freq_hz: center - split / 2.0,
            relative_strength: 0.5,
            fwhm_hz: fwhm,
        },
        ZeemanLine {
            freq_hz: center + split / 2.0,
            relative_strength: 0.5,
            fwhm_hz: fwhm,
        },
    ])
}

/// Advances the spectral-diffusion state by `dt` and returns the new
/// instantaneous frequency.
///
/// Exact Ornstein-Uhlenbeck update of the displacement x from the line
/// center: x <- x e^(-dt/tau) + xi sigma sqrt(1 - e^(-2 dt/tau)). The
/// stationary law is Normal(center, sigma), reached from any start.
pub fn diffuse_step(ion: &mut Ion, dt_s: f64, rng: &mut impl Rng) -> Result<f64> {
    if dt_s < 0.0 {
        return Err(Error::InvalidParameter("dt_s must be nonnegative".into()));
    }
    let decay = (-dt_s / ion.sd_tau_s).exp();
    let noise_scale = ion.sd_sigma_hz * (1.0 - decay * decay).max(0.0).sqrt();
    ion.diffusion_offset_hz = ion.diffusion_offset_hz * decay + noise_scale * draw_standard_normal(rng);
    Ok(ion.current_freq_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixed_diameter_spec(d_nm: f64) -> ParticleSpec {
        ParticleSpec {
            diameter_mean_nm: d_nm,
            diameter_sd_nm: 0.0,
            ..ParticleSpec::reference()
        }
    }

    #[test]
    fn same_seed_same_particle() {
        let spec = ParticleSpec::reference();
        let a = sample_nanoparticle(&spec, 99).unwrap();
        let b = sample_nanoparticle(&spec, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_density_zero_ions() {
        let spec = ParticleSpec {
            ion_density_per_um3: 0.0,
            ..ParticleSpec::reference()
        };
        for seed in 0..5 {
            assert!(sample_nanoparticle(&spec, seed).unwrap().ions.is_empty());
        }
    }

    #[test]
    fn expected_population_of_reference_particle() {
        // (pi/6) (0.17 um)^3 * 4e5 um^-3
        let pop = site_population(170.0, &ParticleSpec::reference());
        assert_relative_eq!(pop.addressable_expected, 1029.0, max_relative = 1e-3);
        assert_relative_eq!(pop.alternate_c2_expected, 771.7, max_relative = 1e-3);
    }

    #[test]
    fn ions_stay_inside_the_sphere() {
        let spec = fixed_diameter_spec(170.0);
        let p = sample_nanoparticle(&spec, 3).unwrap();
        assert!(!p.ions.is_empty());
        let r = p.diameter_nm / 2.0;
        for ion in &p.ions {
            let [x, y, z] = ion.position_nm;
            assert!((x * x + y * y + z * z).sqrt() <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn surface_layer_zero_gives_base_width() {
        let spec = ParticleSpec {
            surface_layer_nm: 0.0,
            ..fixed_diameter_spec(170.0)
        };
        let p = sample_nanoparticle(&spec, 5).unwrap();
        assert!(p
            .ions
            .iter()
            .all(|ion| ion.hom_fwhm_hz == spec.homwidth_base_hz));
    }

    #[test]
    fn scatter_loss_rayleigh_scaling() {
        let p170 = sample_nanoparticle(&fixed_diameter_spec(170.0), 1).unwrap();
        assert_relative_eq!(p170.scatter_loss_ppm, 171.0, max_relative = 1e-12);
        let p85 = sample_nanoparticle(&fixed_diameter_spec(85.0), 1).unwrap();
        assert_relative_eq!(p85.scatter_loss_ppm, 171.0 / 64.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_density_peak_and_tail() {
        let spec = fixed_diameter_spec(170.0);
        let p = sample_nanoparticle(&spec, 7).unwrap();
        // peak of the Gaussian: N * 2 sqrt(ln 2 / pi) / FWHM, N = 1029
        let peak = spectral_density(&p, &spec, spec.inhom_center_hz);
        assert_relative_eq!(peak, 161.1, max_relative = 2e-3);
        let far = spectral_density(&p, &spec, spec.inhom_center_hz + 5.0 * spec.inhom_fwhm_hz);
        assert!(far < 1e-4);
    }

    #[test]
    fn zeeman_pair_is_symmetric() {
        let spec = fixed_diameter_spec(170.0);
        let p = sample_nanoparticle(&spec, 11).unwrap();
        let ion = &p.ions[0];
        let lines = apply_zeeman(ion, 5.0).unwrap();
        let split = lines[1].freq_hz - lines[0].freq_hz;
        assert_relative_eq!(split, ion.zeeman_slope_hz_per_mt * 5.0, max_relative = 1e-12);
        assert_relative_eq!(
            (lines[0].freq_hz + lines[1].freq_hz) / 2.0,
            ion.center_freq_hz,
            max_relative = 1e-15
        );
        assert_eq!(lines[0].relative_strength + lines[1].relative_strength, 1.0);

        let degenerate = apply_zeeman(ion, 0.0).unwrap();
        assert_eq!(degenerate[0].freq_hz, degenerate[1].freq_hz);
        assert_eq!(degenerate[0].fwhm_hz, ion.hom_fwhm_hz);
    }

    #[test]
    fn diffusion_fixed_points() {
        let spec = fixed_diameter_spec(170.0);
        let p = sample_nanoparticle(&spec, 13).unwrap();
        let mut rng = task_rng(42);

        let mut ion = p.ions[0];
        let f0 = ion.current_freq_hz();
        diffuse_step(&mut ion, 0.0, &mut rng).unwrap();
        assert_eq!(ion.current_freq_hz(), f0);

        let mut pinned = p.ions[0];
        pinned.sd_sigma_hz = 0.0;
        for _ in 0..100 {
            diffuse_step(&mut pinned, 1.0, &mut rng).unwrap();
        }
        assert_eq!(pinned.current_freq_hz(), pinned.center_freq_hz);
    }
}
