//! Statistical recovery: a damped least-squares engine, the standard fit
//! models of the experiment (exponential decay, Lorentzian lines,
//! saturation laws), and pulsed g(2) estimation.

mod fit;
mod g2;
mod models;

pub use fit::{
    fit_least_squares, numeric_jacobian_row, DataPoint, FitModel, FitOptions, FitResult,
};
pub use g2::{g2_background_prediction, g2_pulsed, g2_pulsed_with_options, ErrorMethod, G2Series};
pub use models::{
    ExponentialDecay, GaussianPeak, Lorentzian, SaturationLinewidth, SaturationRate,
};

use alloc::vec::Vec;

use crate::prelude::*;

use crate::photodynamics::{Histogram, SpectrumScan};
use crate::{Error, Result};

/// Lifetime extracted from a decay histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub lifetime_us: f64,
    pub lifetime_err_us: f64,
    pub result: FitResult,
}

/// Fits `a exp(-t/T) + b` to a decay histogram and returns the lifetime.
///
/// Bins are weighted by Poisson errors with a floor of one count. Needs at
/// least three nonzero bins; flat data comes back non-converged or with an
/// error larger than the estimate.
pub fn fit_exponential_decay(histogram: &Histogram) -> Result<DecayFit> {
    let nonzero = histogram.counts.iter().filter(|&&c| c > 0).count();
    if histogram.total() == 0 {
        return Err(Error::InvalidData("decay histogram is all zero".into()));
    }
    if nonzero < 3 {
        return Err(Error::InvalidData("need at least three nonzero bins".into()));
    }

    let centers = histogram.centers_us();
    let data: Vec<DataPoint> = centers
        .iter()
        .zip(&histogram.counts)
        .map(|(&t, &c)| DataPoint {
            x: t,
            y: c as f64,
            sigma: (c as f64).max(1.0).sqrt(),
        })
        .collect();

    // offset from the tail, amplitude from the peak, first rough lifetime
    // from the 1/e crossing of the background-subtracted counts
    let n = data.len();
    let tail_start = n - (n / 5).max(1);
    let offset0 = data[tail_start..].iter().map(|d| d.y).sum::<f64>() / (n - tail_start) as f64;
    let peak = data.iter().map(|d| d.y).fold(0.0, f64::max);
    let amp0 = (peak - offset0).max(1.0);
    let lifetime0 = data
        .iter()
        .find(|d| d.y - offset0 <= amp0 / core::f64::consts::E)
        .map(|d| d.x)
        .filter(|&t| t > 0.0)
        .unwrap_or(histogram.window_us / 3.0);

    let result = fit_least_squares(
        &ExponentialDecay,
        &data,
        &[amp0, lifetime0, offset0],
        &FitOptions::default(),
    )?;
    let errors = result.errors();
    Ok(DecayFit {
        lifetime_us: result.params[1],
        lifetime_err_us: errors[1],
        result,
    })
}

/// Fits one or two Lorentzian peaks plus a constant offset to a scan.
///
/// Initialization is deterministic: the center starts at the argmax, the
/// width at the half-maximum crossing span; the second peak starts at the
/// strongest point outside the first peak's span.
pub fn fit_lorentzian(scan: &SpectrumScan, n_peaks: usize) -> Result<FitResult> {
    if !(1..=2).contains(&n_peaks) {
        return Err(Error::InvalidParameter("n_peaks must be 1 or 2".into()));
    }
    let needed = 4 + 3 * (n_peaks - 1);
    if scan.points.len() < needed {
        return Err(Error::InvalidData("not enough scan points for the fit".into()));
    }

    let data: Vec<DataPoint> = scan
        .points
        .iter()
        .map(|p| DataPoint {
            x: p.freq_hz,
            y: p.p_det,
            sigma: p.p_det_err.max(1e-300),
        })
        .collect();

    let ymin = data.iter().map(|d| d.y).fold(f64::INFINITY, f64::min);
    let span = data.last().unwrap().x - data[0].x;
    let (c1, w1, a1) = peak_guess(&data, ymin, None, span);

    let init: Vec<f64> = if n_peaks == 1 {
        alloc::vec![c1, w1, a1, ymin]
    } else {
        let (c2, w2, a2) = peak_guess(&data, ymin, Some((c1, w1)), span);
        alloc::vec![c1, w1, a1, c2, w2, a2, ymin]
    };

    fit_least_squares(&Lorentzian { peaks: n_peaks }, &data, &init, &FitOptions::default())
}

/// Argmax-based peak guess, optionally excluding the span of a previous
/// peak. The width comes from the contiguous above-half-maximum run around
/// the argmax, so a second peak does not inflate it.
fn peak_guess(
    data: &[DataPoint],
    ymin: f64,
    exclude: Option<(f64, f64)>,
    span: f64,
) -> (f64, f64, f64) {
    let masked = |x: f64| match exclude {
        Some((c, w)) => (x - c).abs() <= 1.5 * w,
        None => false,
    };
    let mut best: Option<usize> = None;
    for (i, d) in data.iter().enumerate() {
        if masked(d.x) {
            continue;
        }
        if best.map_or(true, |b| d.y > data[b].y) {
            best = Some(i);
        }
    }
    let best = match best {
        Some(b) => b,
        // everything masked: restart on top of the first peak, displaced
        None => {
            let (c, w) = exclude.unwrap();
            return (c + w, w, (data.iter().map(|d| d.y).fold(0.0, f64::max) - ymin) / 2.0);
        }
    };
    let amp = (data[best].y - ymin).max(1e-300);
    let half = ymin + amp / 2.0;
    let mut lo = best;
    while lo > 0 && data[lo - 1].y >= half {
        lo -= 1;
    }
    let mut hi = best;
    while hi + 1 < data.len() && data[hi + 1].y >= half {
        hi += 1;
    }
    let mut width = (data[hi].x - data[lo].x).abs();
    if !(width > 0.0) {
        width = span / 8.0;
    }
    (data[best].x, width, amp)
}

/// Splitting |c2 - c1| of a two-peak fit, with the propagated error.
pub fn splitting_from_double_fit(fit: &FitResult) -> Result<(f64, f64)> {
    let i1 = position(fit, "center1")?;
    let i2 = position(fit, "center2")?;
    let n = fit.params.len();
    let split = (fit.params[i2] - fit.params[i1]).abs();
    let var = fit.covariance[i1 * n + i1] + fit.covariance[i2 * n + i2]
        - 2.0 * fit.covariance[i1 * n + i2];
    Ok((split, var.max(0.0).sqrt()))
}

fn position(fit: &FitResult, name: &str) -> Result<usize> {
    fit.param_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::InvalidData("fit has no such parameter".into()))
}

/// Saturation of the count rate, p_max (P/P_sat) / (1 + P/P_sat).
///
/// `points` are (power, detection probability, error) triples. A fitted
/// saturation power outside three times the measured span is flagged by
/// clearing the convergence bit.
pub fn fit_saturation_rate(points: &[(f64, f64, f64)]) -> Result<FitResult> {
    let data = saturation_data(points)?;
    let p_max0 = 1.3 * data.iter().map(|d| d.y).fold(0.0, f64::max);
    let p_sat0 = saturation_power_guess(&data, p_max0);
    let mut fit = fit_least_squares(&SaturationRate, &data, &[p_max0, p_sat0], &FitOptions::default())?;
    flag_unspanned_saturation(&mut fit, &data, 1);
    Ok(fit)
}

/// Power broadening of the linewidth, nu0 sqrt(1 + P/P_sat).
///
/// `points` are (power, FWHM, error) triples.
pub fn fit_saturation_linewidth(points: &[(f64, f64, f64)]) -> Result<FitResult> {
    let data = saturation_data(points)?;
    let p_sat0 = (data[0].x * data.last().unwrap().x).sqrt();
    let nu0 = data[0].y / (1.0 + data[0].x / p_sat0).sqrt();
    let mut fit =
        fit_least_squares(&SaturationLinewidth, &data, &[nu0, p_sat0], &FitOptions::default())?;
    flag_unspanned_saturation(&mut fit, &data, 1);
    Ok(fit)
}

fn saturation_data(points: &[(f64, f64, f64)]) -> Result<Vec<DataPoint>> {
    if points.len() < 3 {
        return Err(Error::InvalidData("need at least three powers".into()));
    }
    if points.iter().any(|&(p, _, _)| !(p > 0.0)) {
        return Err(Error::InvalidData("powers must be positive".into()));
    }
    let mut data: Vec<DataPoint> = points
        .iter()
        .map(|&(x, y, sigma)| DataPoint {
            x,
            y,
            sigma: sigma.max(1e-300),
        })
        .collect();
    data.sort_by(|a, b| a.x.partial_cmp(&b.x).expect("finite powers"));
    Ok(data)
}

fn saturation_power_guess(data: &[DataPoint], p_max0: f64) -> f64 {
    let half = p_max0 / 2.6; // half of the un-inflated maximum
    data.iter()
        .min_by(|a, b| {
            (a.y - half)
                .abs()
                .partial_cmp(&(b.y - half).abs())
                .expect("finite")
        })
        .map(|d| d.x)
        .unwrap_or((data[0].x * data.last().unwrap().x).sqrt())
}

/// Powers all far below or above the fitted saturation power cannot pin it
/// down; mark such fits as not converged.
fn flag_unspanned_saturation(fit: &mut FitResult, data: &[DataPoint], p_sat_index: usize) {
    let p_sat = fit.params[p_sat_index].abs();
    let lo = data[0].x;
    let hi = data.last().unwrap().x;
    if p_sat < lo / 3.0 || p_sat > hi * 3.0 || !p_sat.is_finite() {
        fit.converged = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photodynamics::ScanPoint;
    use approx::assert_relative_eq;

    fn scan_from(xs: &[f64], f: impl Fn(f64) -> f64, sigma: f64) -> SpectrumScan {
        SpectrumScan {
            points: xs
                .iter()
                .map(|&x| ScanPoint {
                    freq_hz: x,
                    p_det: f(x),
                    p_det_err: sigma,
                })
                .collect(),
            trials_per_point: 0,
        }
    }

    #[test]
    fn exponential_recovers_noiseless_lifetime() {
        let bin = 5.0;
        let n = 100;
        let counts: Vec<u64> = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * bin;
                (1e4 * (-t / 88.0f64).exp()).round() as u64
            })
            .collect();
        let hist = Histogram {
            bin_width_us: bin,
            window_us: 500.0,
            counts,
        };
        let fit = fit_exponential_decay(&hist).unwrap();
        assert!(fit.result.converged);
        // rounding to integer counts limits the accuracy floor
        assert_relative_eq!(fit.lifetime_us, 88.0, max_relative = 1e-3);
    }

    #[test]
    fn exponential_rejects_empty_and_flags_flat() {
        let empty = Histogram {
            bin_width_us: 5.0,
            window_us: 500.0,
            counts: alloc::vec![0; 100],
        };
        assert!(fit_exponential_decay(&empty).is_err());

        let flat = Histogram {
            bin_width_us: 5.0,
            window_us: 500.0,
            counts: alloc::vec![40; 100],
        };
        let fit = fit_exponential_decay(&flat).unwrap();
        assert!(!fit.result.converged || fit.lifetime_err_us > fit.lifetime_us.abs());
    }

    #[test]
    fn lorentzian_single_peak_noiseless() {
        let xs = crate::grid::linspace(-20e6, 20e6, 41);
        let scan = scan_from(
            &xs,
            |x| 0.002 + 0.01 * crate::photodynamics::lorentzian_response(x - 1e6, 3.8e6),
            1e-4,
        );
        let fit = fit_lorentzian(&scan, 1).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0], 1e6, max_relative = 1e-6);
        assert_relative_eq!(fit.params[1], 3.8e6, max_relative = 1e-6);
        assert_relative_eq!(fit.params[2], 0.01, max_relative = 1e-6);
        assert_relative_eq!(fit.params[3], 0.002, max_relative = 1e-4);
    }

    #[test]
    fn lorentzian_double_peak_recovers_splitting() {
        let xs = crate::grid::linspace(-80e6, 80e6, 81);
        let scan = scan_from(
            &xs,
            |x| {
                0.001
                    + 0.005 * crate::photodynamics::lorentzian_response(x + 25e6, 12e6)
                    + 0.005 * crate::photodynamics::lorentzian_response(x - 25e6, 12e6)
            },
            1e-4,
        );
        let fit = fit_lorentzian(&scan, 2).unwrap();
        assert!(fit.converged);
        let (split, _err) = splitting_from_double_fit(&fit).unwrap();
        assert_relative_eq!(split, 50e6, max_relative = 1e-4);
    }

    #[test]
    fn lorentzian_zero_amplitude_data() {
        let xs = crate::grid::linspace(-10e6, 10e6, 21);
        let scan = scan_from(&xs, |_| 0.004, 1e-4);
        let fit = fit_lorentzian(&scan, 1).unwrap();
        // amplitude consistent with zero, offset at the mean
        assert!(fit.params[2].abs() < 3.0 * fit.errors()[2].max(1e-12));
        assert_relative_eq!(fit.params[3] + fit.params[2], 0.004, max_relative = 1e-2);
    }

    #[test]
    fn saturation_rate_exact_points() {
        let powers = crate::grid::logspace(1e-12, 100e-12, 9);
        let pts: Vec<(f64, f64, f64)> = powers
            .iter()
            .map(|&p| {
                let s = p / 10.7e-12;
                (p, 0.01 * s / (1.0 + s), 1e-5)
            })
            .collect();
        let fit = fit_saturation_rate(&pts).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0], 0.01, max_relative = 1e-8);
        assert_relative_eq!(fit.params[1], 10.7e-12, max_relative = 1e-8);
    }

    #[test]
    fn saturation_rate_scales_with_power_axis() {
        let powers = crate::grid::logspace(1e-12, 100e-12, 9);
        let make = |k: f64| -> Vec<(f64, f64, f64)> {
            powers
                .iter()
                .map(|&p| {
                    let s = p / 10.7e-12;
                    (p * k, 0.01 * s / (1.0 + s), 1e-5)
                })
                .collect()
        };
        let base = fit_saturation_rate(&make(1.0)).unwrap();
        let scaled = fit_saturation_rate(&make(3.0)).unwrap();
        assert_relative_eq!(scaled.params[1], 3.0 * base.params[1], max_relative = 1e-6);
        assert_relative_eq!(scaled.params[0], base.params[0], max_relative = 1e-6);
    }

    #[test]
    fn saturation_rate_flags_unspanned_powers() {
        // all powers far below saturation: the plateau is invisible
        let powers = crate::grid::logspace(1e-15, 1e-14, 6);
        let pts: Vec<(f64, f64, f64)> = powers
            .iter()
            .map(|&p| {
                let s = p / 10.7e-12;
                (p, 0.01 * s / (1.0 + s), 1e-9)
            })
            .collect();
        let fit = fit_saturation_rate(&pts).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn saturation_linewidth_zero_power_limit() {
        let powers = crate::grid::logspace(1e-12, 100e-12, 9);
        let pts: Vec<(f64, f64, f64)> = powers
            .iter()
            .map(|&p| (p, 2.2e6 * (1.0 + p / 10.7e-12).sqrt(), 1e3))
            .collect();
        let fit = fit_saturation_linewidth(&pts).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0], 2.2e6, max_relative = 1e-7);
        assert_relative_eq!(fit.params[1], 10.7e-12, max_relative = 1e-7);
        // the model at P = 0 is exactly nu0
        let model = SaturationLinewidth;
        assert_relative_eq!(model.eval(0.0, &fit.params), fit.params[0]);
    }
}
