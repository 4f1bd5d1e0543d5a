//! The parametric models of the experiment, with analytic Jacobians.

use crate::prelude::*;

use super::fit::FitModel;

/// a exp(-t/T) + b, parameters [amplitude, lifetime, offset].
///
/// Times and lifetimes share whatever unit the data uses (histograms are
/// in microseconds).
pub struct ExponentialDecay;

impl FitModel for ExponentialDecay {
    fn param_names(&self) -> &'static [&'static str] {
        &["amplitude", "lifetime", "offset"]
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn jacobian_row(&self, t: f64, p: &[f64], out: &mut [f64]) -> bool {
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * t / (p[1] * p[1]);
        out[2] = 1.0;
        true
    }
}

/// One or two unit-peak Lorentzians over a constant offset.
///
/// Parameters per peak are [center, fwhm, amplitude] (suffixed 1, 2 for the
/// two-peak variant), with a trailing [offset].
pub struct Lorentzian {
    pub peaks: usize,
}

const LORENTZIAN_1: [&str; 4] = ["center", "fwhm", "amplitude", "offset"];
const LORENTZIAN_2: [&str; 7] = [
    "center1", "fwhm1", "amplitude1", "center2", "fwhm2", "amplitude2", "offset",
];

impl FitModel for Lorentzian {
    fn param_names(&self) -> &'static [&'static str] {
        match self.peaks {
            1 => &LORENTZIAN_1,
            2 => &LORENTZIAN_2,
            _ => panic!("Lorentzian supports one or two peaks"),
        }
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let mut y = p[3 * self.peaks];
        for k in 0..self.peaks {
            let (c, w, a) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let u = x - c;
            let h = w / 2.0;
            y += a * h * h / (u * u + h * h);
        }
        y
    }

    fn jacobian_row(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        for k in 0..self.peaks {
            let (c, w, a) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let u = x - c;
            let h = w / 2.0;
            let denom = u * u + h * h;
            let l = h * h / denom;
            out[3 * k] = a * 2.0 * u * l * l / (h * h);
            out[3 * k + 1] = a * u * u * l * l / (h * h * h);
            out[3 * k + 2] = l;
        }
        out[3 * self.peaks] = 1.0;
        true
    }
}

/// Count-rate saturation p_max (P/P_sat)/(1 + P/P_sat),
/// parameters [p_max, p_sat].
pub struct SaturationRate;

impl FitModel for SaturationRate {
    fn param_names(&self) -> &'static [&'static str] {
        &["p_max", "p_sat"]
    }

    fn eval(&self, power: f64, p: &[f64]) -> f64 {
        p[0] * power / (power + p[1])
    }

    fn jacobian_row(&self, power: f64, p: &[f64], out: &mut [f64]) -> bool {
        let denom = power + p[1];
        out[0] = power / denom;
        out[1] = -p[0] * power / (denom * denom);
        true
    }
}

/// Power broadening nu0 sqrt(1 + P/P_sat), parameters [nu0, p_sat].
pub struct SaturationLinewidth;

impl FitModel for SaturationLinewidth {
    fn param_names(&self) -> &'static [&'static str] {
        &["nu0", "p_sat"]
    }

    fn eval(&self, power: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 + power / p[1]).sqrt()
    }

    fn jacobian_row(&self, power: f64, p: &[f64], out: &mut [f64]) -> bool {
        let root = (1.0 + power / p[1]).sqrt();
        out[0] = root;
        out[1] = -p[0] * power / (2.0 * p[1] * p[1] * root);
        true
    }
}

/// Gaussian peak over a constant offset,
/// parameters [amplitude, center, fwhm, offset]. Used for wide-scan
/// envelopes.
pub struct GaussianPeak;

const FOUR_LN2: f64 = 2.772_588_722_239_781;

impl FitModel for GaussianPeak {
    fn param_names(&self) -> &'static [&'static str] {
        &["amplitude", "center", "fwhm", "offset"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let u = x - p[1];
        p[0] * (-FOUR_LN2 * u * u / (p[2] * p[2])).exp() + p[3]
    }

    fn jacobian_row(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        let u = x - p[1];
        let w2 = p[2] * p[2];
        let e = (-FOUR_LN2 * u * u / w2).exp();
        out[0] = e;
        out[1] = p[0] * e * 2.0 * FOUR_LN2 * u / w2;
        out[2] = p[0] * e * 2.0 * FOUR_LN2 * u * u / (w2 * p[2]);
        out[3] = 1.0;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lorentzian_peak_value() {
        let model = Lorentzian { peaks: 1 };
        let p = [0.0, 4.0, 1.0, 0.5];
        assert_relative_eq!(model.eval(0.0, &p), 1.5);
        assert_relative_eq!(model.eval(2.0, &p), 1.0); // half width off center
    }

    #[test]
    fn gaussian_fwhm_definition() {
        let model = GaussianPeak;
        let p = [1.0, 0.0, 6.0, 0.0];
        assert_relative_eq!(model.eval(3.0, &p), 0.5, max_relative = 1e-12);
    }
}
