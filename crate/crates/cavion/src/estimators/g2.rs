//! Pulsed second-order autocorrelation from per-trial photon counts.
//!
//! With one detector and trials much longer than the dead time, the
//! zero-delay autocorrelation comes from the factorial moment of the
//! per-trial count, g2(0) = <n(n-1)>/<n>^2, and lag k compares counts of
//! trials k apart, g2(k) = <n_i n_(i+k)>/<n>^2.

use alloc::vec::Vec;

use crate::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::photodynamics::{ProtocolTiming, TimeTagStream};
use crate::rng::task_rng;
use crate::{Error, Result};

/// How g2 uncertainties are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorMethod {
    /// Poisson statistics on the coincidence counts, trials independent.
    Propagation,
    /// Seeded bootstrap over trials.
    Bootstrap { resamples: usize, seed: u64 },
}

/// Autocorrelation estimates on a grid of trial lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Series {
    /// Trial lags, 0..=max_lag.
    pub lags: Vec<u32>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Wall-clock spacing of one lag step (s), from the repetition rate.
    pub lag_spacing_s: f64,
}

impl G2Series {
    pub fn value_at(&self, lag: u32) -> Option<(f64, f64)> {
        self.lags
            .iter()
            .position(|&l| l == lag)
            .map(|i| (self.values[i], self.errors[i]))
    }
}

/// g2 with propagation errors; see [`g2_pulsed_with_options`].
pub fn g2_pulsed(stream: &TimeTagStream, timing: &ProtocolTiming, max_lag: u32) -> Result<G2Series> {
    g2_pulsed_with_options(stream, timing, max_lag, ErrorMethod::Propagation)
}

/// Pulsed g2 over trial lags 0..=max_lag.
///
/// Correlators are normalized by the squared mean count over all trial
/// indices; for sequences of independent trials this equals the large-lag
/// plateau. A stream with no channel-0 counts has no defined g2.
pub fn g2_pulsed_with_options(
    stream: &TimeTagStream,
    timing: &ProtocolTiming,
    max_lag: u32,
    errors: ErrorMethod,
) -> Result<G2Series> {
    timing.validate()?;
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be at least one".into()));
    }
    if stream.n_trials == 0 || u64::from(max_lag) >= u64::from(stream.n_trials) {
        return Err(Error::InvalidData("stream has too few trials for the requested lags".into()));
    }
    let counts = stream.counts_per_trial();
    let estimate = g2_of_counts(&counts, max_lag)?;

    let errors = match errors {
        ErrorMethod::Propagation => propagation_errors(&estimate),
        ErrorMethod::Bootstrap { resamples, seed } => {
            bootstrap_errors(&counts, max_lag, resamples, seed)?
        }
    };

    Ok(G2Series {
        lags: (0..=max_lag).collect(),
        values: estimate.values,
        errors,
        lag_spacing_s: 1.0 / timing.rep_rate_hz,
    })
}

struct G2Estimate {
    values: Vec<f64>,
    /// Raw coincidence sums per lag (pair counts before normalization).
    coincidences: Vec<u64>,
    /// Number of trial pairs entering each lag.
    pairs: Vec<u64>,
    mean: f64,
}

fn g2_of_counts(counts: &[u32], max_lag: u32) -> Result<G2Estimate> {
    let n = counts.len();
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return Err(Error::InvalidData("no counts: g2 is undefined".into()));
    }
    let mean = total as f64 / n as f64;

    let occupied: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();

    let mut coincidences = alloc::vec![0u64; max_lag as usize + 1];
    for &i in &occupied {
        let c = u64::from(counts[i]);
        coincidences[0] += c * (c - 1);
        let top = (i + max_lag as usize).min(n - 1);
        for j in i + 1..=top {
            if counts[j] > 0 {
                coincidences[j - i] += c * u64::from(counts[j]);
            }
        }
    }

    let mut values = Vec::with_capacity(max_lag as usize + 1);
    let mut pairs = Vec::with_capacity(max_lag as usize + 1);
    for lag in 0..=max_lag as usize {
        let n_pairs = (n - lag) as u64;
        let g = coincidences[lag] as f64 / n_pairs as f64 / (mean * mean);
        values.push(g);
        pairs.push(n_pairs);
    }
    Ok(G2Estimate {
        values,
        coincidences,
        pairs,
        mean,
    })
}

/// Poisson error on each coincidence sum, floored at one pair so empty
/// lags still carry a finite uncertainty.
fn propagation_errors(estimate: &G2Estimate) -> Vec<f64> {
    estimate
        .coincidences
        .iter()
        .zip(&estimate.pairs)
        .map(|(&c, &pairs)| {
            (c.max(1) as f64).sqrt() / pairs as f64 / (estimate.mean * estimate.mean)
        })
        .collect()
}

fn bootstrap_errors(
    counts: &[u32],
    max_lag: u32,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if resamples < 2 {
        return Err(Error::InvalidParameter("need at least two bootstrap resamples".into()));
    }
    let n = counts.len();
    let mut rng = task_rng(seed);
    let mut sums = alloc::vec![0.0; max_lag as usize + 1];
    let mut sq_sums = alloc::vec![0.0; max_lag as usize + 1];
    let mut resampled = alloc::vec![0u32; n];
    let mut used = 0usize;
    for _ in 0..resamples {
        for slot in resampled.iter_mut() {
            *slot = counts[rng.gen_range(0..n)];
        }
        // an all-zero resample carries no information; skip it
        let Ok(est) = g2_of_counts(&resampled, max_lag) else {
            continue;
        };
        used += 1;
        for (lag, v) in est.values.iter().enumerate() {
            sums[lag] += v;
            sq_sums[lag] += v * v;
        }
    }
    if used < 2 {
        return Err(Error::InvalidData("all bootstrap resamples were empty".into()));
    }
    Ok(sums
        .iter()
        .zip(&sq_sums)
        .map(|(&s, &sq)| {
            let m = s / used as f64;
            ((sq / used as f64 - m * m).max(0.0) * used as f64 / (used - 1) as f64).sqrt()
        })
        .collect())
}

/// Expected zero-delay g2 of a perfect single emitter over a Poisson
/// background.
///
/// With per-trial single-photon probability p and mean dark counts mu, the
/// factorial moments give g2(0) = 1 - (p/(p+mu))^2 exactly.
pub fn g2_background_prediction(p_signal: f64, mu_dark: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_signal) {
        return Err(Error::InvalidParameter("p_signal must lie in [0, 1]".into()));
    }
    if mu_dark < 0.0 {
        return Err(Error::InvalidParameter("mu_dark must be nonnegative".into()));
    }
    if p_signal == 0.0 && mu_dark == 0.0 {
        return Err(Error::InvalidParameter(
            "g2 is undefined without signal or background".into(),
        ));
    }
    let rho = p_signal / (p_signal + mu_dark);
    Ok(1.0 - rho * rho)
}
