//! Simulation and analysis of single rare-earth ions coupled to a fiber
//! Fabry-Perot microcavity.
//!
//! The crate is organized around the stages of a pulsed single-emitter
//! detection experiment:
//!
//! - [`cavity`]: deterministic resonator optics (finesse, mode geometry,
//!   Purcell enhancement, scattering-loss microscopy).
//! - [`ensemble`]: stochastic generation of doped nanoparticles and their
//!   ion populations (positions, frequencies, linewidths, Zeeman pairs,
//!   spectral diffusion).
//! - [`photodynamics`]: the trial engine — pulsed rate-equation excitation,
//!   photon emission and detection, time-tagged streams, scans and
//!   saturation series.
//! - [`estimators`]: damped least-squares fitting of decay, Lorentzian and
//!   saturation models, plus pulsed g(2) estimation.
//! - [`rng`]: counter-based seed derivation and per-trial substreams so
//!   results are independent of worker scheduling.
//!
//! The crate is `no_std` (with `alloc`); all file formats and the CLI live
//! in the companion `cavion-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cavity;
pub mod ensemble;
pub mod estimators;
pub mod grid;
pub mod photodynamics;
pub mod rng;

mod error;

/// Internal prelude. In `no_std` builds the float math methods come from
/// `num_traits::Float` backed by libm; std builds resolve the inherent
/// methods instead and ignore the glob.
pub(crate) mod prelude {
    pub(crate) use num_traits::Float as _;
}

pub use error::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
