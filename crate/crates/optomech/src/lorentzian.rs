//! Lorentzian peak fitting on spectra: baseline + peak, with standard
//! errors and the analytic area pi/2 * height * fwhm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, FitOptions};
use crate::spectrum::Spectrum;

/// Converged Lorentzian fit. `height` is the peak value above the
/// baseline and may be negative for squashing dips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Peak center, rad/s.
    pub center: f64,
    /// Full width at half maximum, rad/s (> 0).
    pub fwhm: f64,
    /// Peak height above baseline, quanta.
    pub height: f64,
    /// Flat background, quanta.
    pub baseline: f64,
    /// Analytic integral pi/2 * height * fwhm, quanta * rad/s.
    pub area: f64,
    pub center_err: f64,
    pub fwhm_err: f64,
    pub height_err: f64,
    pub baseline_err: f64,
    pub area_err: f64,
    pub chi2: f64,
}

/// Optional starting point for the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct LorentzianGuess {
    pub center: f64,
    pub fwhm: f64,
    pub height: f64,
    pub baseline: f64,
}

/// Residual weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Plain residuals: correct for additive, homoscedastic noise.
    #[default]
    Uniform,
    /// Residuals divided by the model: correct for multiplicative noise
    /// such as averaged-periodogram bins, where plain least squares
    /// inflates the fitted width.
    Relative,
}

/// Least-squares fit of baseline + Lorentzian inside `window` (rad/s, in
/// the spectrum's own frame). Without a guess, initialization comes from
/// the extremum above the edge-median baseline and its half-max crossings.
pub fn fit_lorentzian(
    spectrum: &Spectrum,
    window: (f64, f64),
    init: Option<LorentzianGuess>,
) -> Result<LorentzianFit> {
    fit_lorentzian_weighted(spectrum, window, init, Weighting::Uniform)
}

/// [`fit_lorentzian`] with an explicit residual weighting.
pub fn fit_lorentzian_weighted(
    spectrum: &Spectrum,
    window: (f64, f64),
    init: Option<LorentzianGuess>,
    weighting: Weighting,
) -> Result<LorentzianFit> {
    let range = spectrum.window_indices(window.0, window.1)?;
    let f = &spectrum.frequencies[range.clone()];
    let y = &spectrum.psd[range];
    if f.len() < 8 {
        return Err(Error::DegenerateWindow {
            reason: format!("only {} points in window", f.len()),
        });
    }

    // prefer whichever start point (caller guess or data-derived) sits
    // closer to the data; a stale guess must not strand the optimizer
    let guess = match (init, initial_guess(f, y)) {
        (Some(g), Ok(auto)) => {
            if guess_chi2(f, y, &g) <= guess_chi2(f, y, &auto) {
                g
            } else {
                auto
            }
        }
        (Some(g), Err(_)) => g,
        (None, auto) => auto?,
    };

    // scaled coordinates: center offset and width in units of the initial
    // fwhm, height and baseline in units of the initial |height|
    let w0 = guess.fwhm.abs().max(f64::MIN_POSITIVE);
    let h0 = guess.height.abs().max(f64::MIN_POSITIVE);
    let p0 = [0.0, 1.0, guess.height / h0, (0.0) as f64];
    let base0 = guess.baseline;
    let c0 = guess.center;

    let model = |p: &[f64], out: &mut [f64]| -> Result<()> {
        let center = c0 + p[0] * w0;
        let hw = 0.5 * (p[1] * w0).abs();
        let hw2 = hw * hw;
        let height = p[2] * h0;
        let base = base0 + p[3] * h0;
        for ((o, &fi), &yi) in out.iter_mut().zip(f.iter()).zip(y.iter()) {
            let d = fi - center;
            let m = base + height * hw2 / (d * d + hw2);
            *o = match weighting {
                Weighting::Uniform => (m - yi) / h0,
                // floor the divisor so near-zero baselines stay benign
                Weighting::Relative => (m - yi) / (m.abs() + 1e-3 * h0),
            };
        }
        Ok(())
    };

    let opts = FitOptions { max_iter: 200, xtol: 1e-10, ..Default::default() };
    let fit = lm::fit(f.len(), model, &p0, &opts)?;

    let center = c0 + fit.params[0] * w0;
    let fwhm = (fit.params[1] * w0).abs();
    let height = fit.params[2] * h0;
    let baseline = base0 + fit.params[3] * h0;
    if fwhm <= 0.0 || !fwhm.is_finite() {
        return Err(Error::DegenerateWindow { reason: "collapsed width".into() });
    }

    // map scaled standard errors back to physical units
    let center_err = fit.std_errors[0] * w0;
    let fwhm_err = fit.std_errors[1] * w0;
    let height_err = fit.std_errors[2] * h0;
    let baseline_err = fit.std_errors[3] * h0;
    let area = std::f64::consts::FRAC_PI_2 * height * fwhm;
    // var(area)/area^2 from (height, fwhm) covariance block
    let cov_hw = fit.covariance_at(1, 2) * w0 * h0;
    let var_area = (std::f64::consts::FRAC_PI_2).powi(2)
        * ((fwhm * height_err).powi(2)
            + (height * fwhm_err).powi(2)
            + 2.0 * fwhm * height * cov_hw);
    let area_err = var_area.max(0.0).sqrt();

    // uniform residuals were scaled by h0; relative ones are unit-free
    let chi2 = match weighting {
        Weighting::Uniform => fit.chi2 * h0 * h0,
        Weighting::Relative => fit.chi2,
    };
    Ok(LorentzianFit {
        center,
        fwhm,
        height,
        baseline,
        area,
        center_err,
        fwhm_err,
        height_err,
        baseline_err,
        area_err,
        chi2,
    })
}

fn guess_chi2(f: &[f64], y: &[f64], g: &LorentzianGuess) -> f64 {
    let hw = 0.5 * g.fwhm.abs().max(f64::MIN_POSITIVE);
    let hw2 = hw * hw;
    f.iter()
        .zip(y.iter())
        .map(|(&fi, &yi)| {
            let d = fi - g.center;
            let m = g.baseline + g.height * hw2 / (d * d + hw2);
            (m - yi) * (m - yi)
        })
        .sum()
}

fn initial_guess(f: &[f64], y: &[f64]) -> Result<LorentzianGuess> {
    let n = f.len();
    // baseline from the outer 10% of window points on each side
    let edge = (n / 10).max(2);
    let mut edges: Vec<f64> = y[..edge].iter().chain(y[n - edge..].iter()).copied().collect();
    edges.sort_by(|a, b| a.partial_cmp(b).expect("finite psd"));
    let baseline = edges[edges.len() / 2];

    let (k_peak, dev) = y
        .iter()
        .map(|&v| v - baseline)
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite psd"))
        .expect("non-empty window");
    if dev == 0.0 {
        return Err(Error::DegenerateWindow { reason: "flat input".into() });
    }
    if k_peak == 0 || k_peak == n - 1 {
        return Err(Error::DegenerateWindow {
            reason: "no interior extremum in window".into(),
        });
    }
    let span: f64 = {
        let mut sorted: Vec<f64> = y.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite psd"));
        sorted[n - 1] - sorted[0]
    };
    if dev.abs() < 1e-10 * span.abs().max(baseline.abs()) {
        return Err(Error::DegenerateWindow { reason: "no peak above baseline".into() });
    }

    // half-max crossings walking outwards from the extremum
    let half = 0.5 * dev;
    let above = |v: f64| if dev > 0.0 { v - baseline >= half } else { v - baseline <= half };
    let mut left = k_peak;
    while left > 0 && above(y[left - 1]) {
        left -= 1;
    }
    let mut right = k_peak;
    while right + 1 < n && above(y[right + 1]) {
        right += 1;
    }
    let mut fwhm = f[right] - f[left];
    if fwhm <= 0.0 {
        fwhm = (f[n - 1] - f[0]) / 10.0;
    }
    Ok(LorentzianGuess { center: f[k_peak], fwhm, height: dev, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::Frame;
    use approx::assert_relative_eq;

    fn lorentzian(f: f64, c: f64, fwhm: f64, h: f64, b: f64) -> f64 {
        let hw = fwhm / 2.0;
        b + h * hw * hw / ((f - c) * (f - c) + hw * hw)
    }

    fn synthetic(c: f64, fwhm: f64, h: f64, b: f64, n: usize, span: f64) -> Spectrum {
        let freqs: Vec<f64> =
            (0..n).map(|k| c - span / 2.0 + span * k as f64 / (n - 1) as f64).collect();
        let psd: Vec<f64> = freqs.iter().map(|&f| lorentzian(f, c, fwhm, h, b)).collect();
        Spectrum::new(freqs, psd, Frame::LabFrame).unwrap()
    }

    #[test]
    fn noiseless_parameters_recovered() {
        let (c, fwhm, h, b) = (4.2e6, 35.0, 7.5, 3.0);
        let s = synthetic(c, fwhm, h, b, 801, 40.0 * fwhm);
        let fit = fit_lorentzian(&s, (c - 20.0 * fwhm, c + 20.0 * fwhm), None).unwrap();
        assert_relative_eq!(fit.center, c, max_relative = 1e-8);
        assert_relative_eq!(fit.fwhm, fwhm, max_relative = 1e-8);
        assert_relative_eq!(fit.height, h, max_relative = 1e-8);
        assert_relative_eq!(fit.baseline, b, max_relative = 1e-8);
        assert_relative_eq!(
            fit.area,
            std::f64::consts::FRAC_PI_2 * fit.height * fit.fwhm,
            max_relative = 1e-12
        );
    }

    #[test]
    fn dips_fit_with_negative_height() {
        let (c, fwhm, h, b) = (1.0e5, 12.0, -0.8, 3.0);
        let s = synthetic(c, fwhm, h, b, 601, 30.0 * fwhm);
        let fit = fit_lorentzian(&s, (c - 15.0 * fwhm, c + 15.0 * fwhm), None).unwrap();
        assert!(fit.height < 0.0);
        assert_relative_eq!(fit.height, h, max_relative = 1e-7);
        assert_relative_eq!(fit.fwhm, fwhm, max_relative = 1e-7);
    }

    #[test]
    fn flat_window_is_degenerate() {
        let freqs: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let psd = vec![3.0; 100];
        let s = Spectrum::new(freqs, psd, Frame::LabFrame).unwrap();
        match fit_lorentzian(&s, (0.0, 99.0), None) {
            Err(Error::DegenerateWindow { .. }) => {}
            other => panic!("expected degenerate window, got {:?}", other),
        }
    }

    #[test]
    fn guess_override_is_honored() {
        let (c, fwhm, h, b) = (2.0e4, 5.0, 2.0, 1.0);
        let s = synthetic(c, fwhm, h, b, 501, 100.0);
        let guess = LorentzianGuess { center: c + 1.0, fwhm: 8.0, height: 1.0, baseline: 0.5 };
        let fit = fit_lorentzian(&s, (c - 50.0, c + 50.0), Some(guess)).unwrap();
        assert_relative_eq!(fit.center, c, max_relative = 1e-7);
        assert_relative_eq!(fit.area, std::f64::consts::FRAC_PI_2 * h * fwhm, max_relative = 1e-6);
    }
}
