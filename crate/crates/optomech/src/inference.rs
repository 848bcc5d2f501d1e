//! Inversion of spectra to physical quantities: occupancy from corrected
//! sideband areas, collective added-noise calibration, thermometry-tone
//! calibration, and the one-dimensional Kerr-constant fit.

use serde::{Deserialize, Serialize};

use crate::closed_form;
use crate::error::{Error, Result};
use crate::floquet::{self, FloquetProblem};
use crate::lm::{self, FitOptions};
use crate::lorentzian::{self, LorentzianFit};
use crate::params::{FeedbackConfig, KerrModulation, SystemParams, Tone, ToneSet};
use crate::spectrum::Spectrum;

/// Occupancy with first-order propagated uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEstimate {
    pub n_m: f64,
    pub std_err: f64,
}

/// Transduction factors consistent with the Lorentzian-area estimator:
/// the modeled and ideal (no cavity noise, no Kerr) spectra are fitted
/// with the same peak fitter applied to measured data, and the factors map
/// the modeled fit areas onto the thermal pair (n, n+1) at the common
/// per-quantum scale. Use these with [`extract_occupancy`]; the window-
/// integral factors of the solver module serve the forward-model weights.
pub fn fitted_transduction(problem: &FloquetProblem) -> Result<(f64, f64)> {
    let mut ideal = *problem;
    ideal.params.n_c_thermal = 0.0;
    ideal.kerr = KerrModulation::off();

    let grid = problem.default_grid();
    let modeled = problem.output_spectrum(&grid)?;
    let ideal_spectrum = ideal.output_spectrum(&grid)?;

    let areas = |s: &Spectrum| -> Result<(f64, f64)> {
        Ok((
            fit_sideband(s, problem, true)?.area,
            fit_sideband(s, problem, false)?.area,
        ))
    };
    let (mod_plus, mod_minus) = areas(&modeled)?;
    let (ide_plus, ide_minus) = areas(&ideal_spectrum)?;

    let n = problem.mech_occupancy_eff;
    let per_quantum = (ide_plus + ide_minus) / (2.0 * n + 1.0);
    let factor = |reference: f64, fitted: f64| {
        if reference == 0.0 && fitted.abs() < 1e-9 * per_quantum {
            1.0
        } else {
            reference / fitted
        }
    };
    Ok((factor(per_quantum * n, mod_plus), factor(per_quantum * (n + 1.0), mod_minus)))
}

/// Lorentzian fit of one mechanical sideband in the problem's stored
/// frame.
pub fn fit_sideband(
    spectrum: &Spectrum,
    problem: &FloquetProblem,
    upper: bool,
) -> Result<LorentzianFit> {
    let sign = if upper { 1.0 } else { -1.0 };
    let center = sign * problem.params.omega_m + problem.tones.delta;
    let width = problem.nominal_linewidth();
    lorentzian::fit_lorentzian(spectrum, (center - 15.0 * width, center + 15.0 * width), None)
}

/// Apply transduction factors to the fitted areas, then invert the
/// sideband asymmetry. Errs when the corrected Stokes weight does not
/// exceed the corrected anti-Stokes weight.
pub fn extract_occupancy(
    fit_plus: &LorentzianFit,
    fit_minus: &LorentzianFit,
    corrections: (f64, f64),
) -> Result<OccupancyEstimate> {
    let u = corrections.0 * fit_plus.area;
    let v = corrections.1 * fit_minus.area;
    let n_m = closed_form::occupancy_from_asymmetry(u, v)?;
    let d = v - u;
    let sigma_u = corrections.0 * fit_plus.area_err;
    let sigma_v = corrections.1 * fit_minus.area_err;
    let var = (v * sigma_u).powi(2) + (u * sigma_v).powi(2);
    Ok(OccupancyEstimate { n_m, std_err: var.sqrt() / (d * d) })
}

// -------------------------------------------------------------------------
// collective added-noise calibration

/// One sideband-cooling trace at a known generator power (arbitrary but
/// consistent units).
#[derive(Debug, Clone)]
pub struct PowerTrace {
    pub power: f64,
    pub spectrum: Spectrum,
}

/// Configuration of the collective added-noise fit.
#[derive(Debug, Clone, Copy)]
pub struct NoiseCalibrationSetup {
    /// Detuning of the cooling tone, rad/s.
    pub tone_detuning: f64,
    /// Power at which the shared coupling scale is quoted.
    pub reference_power: f64,
    /// Technical heating of the mechanical bath floats linearly above this
    /// power.
    pub heating_threshold: f64,
    /// Bath occupancy from the refrigerator temperature.
    pub base_n_m_thermal: f64,
    /// Treat each trace's overall detection gain as a nuisance parameter
    /// (raw spectrum-analyzer units). With calibrated detection (traces
    /// already in quanta) the floor pins the added noise directly.
    pub per_trace_gain: bool,
    /// Starting coupling at the reference power, rad/s.
    pub g_init: f64,
    pub n_add_init: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub n_add: f64,
    pub n_add_err: f64,
    /// Shared effective coupling at the reference power, rad/s.
    pub g_shared: f64,
    pub g_shared_err: f64,
    /// Bath quanta per power unit above the heating threshold.
    pub heating_slope: f64,
    /// Root-mean-square residual per trace, in data units.
    pub per_trace_rms: Vec<f64>,
    pub iterations: usize,
}

/// Simultaneous fit of a family of sideband-cooling traces with the added
/// noise and the coupling scale shared across traces. The coupling of
/// trace j is g_shared * sqrt(P_j / P_ref); technical heating raises the
/// bath linearly above the configured threshold.
pub fn calibrate_n_add(
    traces: &[PowerTrace],
    params: &SystemParams,
    setup: &NoiseCalibrationSetup,
) -> Result<CalibrationResult> {
    params.checked()?;
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces".into()));
    }
    let n_points: usize = traces.iter().map(|t| t.spectrum.len()).sum();
    let n_gain = if setup.per_trace_gain { traces.len() } else { 0 };

    let build_problem = |n_add: f64, g: f64, n_bath: f64| -> Result<FloquetProblem> {
        let mut p = *params;
        p.n_add = n_add.abs();
        p.n_m_thermal = n_bath.max(0.0);
        FloquetProblem::bare(
            p,
            ToneSet::new(Tone::off(), Tone::new(setup.tone_detuning, g.abs())),
            KerrModulation::off(),
        )
    };

    let residuals = |p: &[f64], out: &mut [f64]| -> Result<()> {
        let (n_add, g_scale, slope) = (p[0], p[1], p[2]);
        let mut at = 0;
        for (j, trace) in traces.iter().enumerate() {
            let gain = if setup.per_trace_gain { p[3 + j] } else { 1.0 };
            let g_j = g_scale * (trace.power / setup.reference_power).sqrt();
            let heating = slope.abs() * (trace.power - setup.heating_threshold).max(0.0);
            let problem = build_problem(n_add, g_j, setup.base_n_m_thermal + heating)?;
            let delta = problem.tones.delta;
            for (k, (&f, &y)) in trace
                .spectrum
                .frequencies
                .iter()
                .zip(trace.spectrum.psd.iter())
                .enumerate()
            {
                out[at + k] = gain * problem.psd_at(f - delta)? - y;
            }
            at += trace.spectrum.len();
        }
        Ok(())
    };

    let mut init = vec![setup.n_add_init.max(0.1), setup.g_init, 0.0];
    let mut typical = vec![1.0, setup.g_init.abs().max(1.0), 1.0 / setup.reference_power.abs()];
    for _ in 0..n_gain {
        init.push(1.0);
        typical.push(1.0);
    }
    let opts = FitOptions { typical, diff_step: 1e-6, ..Default::default() };
    let fit = lm::fit(n_points, residuals, &init, &opts)?;

    let n_add = fit.params[0].abs();
    let n_add_err = fit.std_errors[0];
    if !n_add_err.is_finite() || n_add_err > 0.5 * n_add.max(1e-12) {
        return Err(Error::NotIdentifiable {
            name: "n_add".into(),
            rel_sigma: n_add_err / n_add.max(1e-12),
        });
    }

    // per-trace goodness of fit
    let mut r = vec![0.0; n_points];
    residuals(&fit.params, &mut r)?;
    let mut per_trace_rms = Vec::with_capacity(traces.len());
    let mut at = 0;
    for trace in traces {
        let n = trace.spectrum.len();
        let ss: f64 = r[at..at + n].iter().map(|v| v * v).sum();
        per_trace_rms.push((ss / n as f64).sqrt());
        at += n;
    }

    Ok(CalibrationResult {
        n_add,
        n_add_err,
        g_shared: fit.params[1].abs(),
        g_shared_err: fit.std_errors[1],
        heating_slope: fit.params[2].abs(),
        per_trace_rms,
        iterations: fit.iterations,
    })
}

// -------------------------------------------------------------------------
// thermometry-tone calibration

/// One spectrum of a thermometry-coupling sweep.
#[derive(Debug, Clone)]
pub struct ThermometrySweepPoint {
    /// Effective coupling of the thermometry tone, rad/s.
    pub g_t: f64,
    pub spectrum: Spectrum,
}

/// Link between phonon number and measured peak area at the reference
/// coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometryCalibration {
    /// Quanta per unit measured area.
    pub c_ref: f64,
    pub c_ref_err: f64,
    /// Reference coupling, rad/s.
    pub g_ref: f64,
    /// Measured-area units per model quanta * rad/s.
    pub area_scale: f64,
    pub worst_residual_sigma: f64,
}

/// Calibrate the thermometry against a single-tone sideband-cooling sweep:
/// fit each trace's anti-Stokes peak, fit the area-versus-coupling family
/// to the forward model with one overall detection scale, and quote the
/// phonon-number-per-area constant at `g_ref`.
pub fn calibrate_thermometry(
    sweep: &[ThermometrySweepPoint],
    params: &SystemParams,
    detuning: f64,
    g_ref: f64,
    base_n_m_thermal: f64,
) -> Result<ThermometryCalibration> {
    params.checked()?;
    if sweep.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 sweep points".into()));
    }
    let mut p = *params;
    p.n_m_thermal = base_n_m_thermal;

    let problem_at = |g: f64| -> Result<FloquetProblem> {
        let problem = FloquetProblem::bare(
            p,
            ToneSet::new(Tone::off(), Tone::new(detuning, g)),
            KerrModulation::off(),
        )?;
        // anti-damped configurations have no steady state to calibrate on
        if problem.nominal_linewidth() <= 1e-2 * p.gamma
            || closed_form::sideband_cooling_rate(&p, &problem.tones.thermometry) + p.gamma <= 0.0
        {
            return Err(Error::ModelMismatch { worst_sigma: f64::INFINITY });
        }
        Ok(problem)
    };

    // measured and modeled anti-Stokes areas
    let mut data = Vec::with_capacity(sweep.len());
    for point in sweep {
        let problem = problem_at(point.g_t)?;
        let fit = fit_anti_stokes(&point.spectrum, &problem)?;
        let model_grid = problem.default_grid();
        let model_spectrum = problem.output_spectrum(&model_grid)?;
        let model_fit = fit_anti_stokes(&model_spectrum, &problem)?;
        let sigma = fit.area_err.max(1e-9 * fit.area.abs()).max(1e-300);
        data.push((fit.area, model_fit.area, sigma));
    }

    // one detection scale, weighted linear least squares
    let sw: f64 = data.iter().map(|(a, m, s)| a * m / (s * s)).sum();
    let smm: f64 = data.iter().map(|(_, m, s)| m * m / (s * s)).sum();
    if smm <= 0.0 {
        return Err(Error::InvalidInput("degenerate model areas".into()));
    }
    let scale = sw / smm;
    let scale_err = smm.powf(-0.5);
    let worst = data
        .iter()
        .map(|(a, m, s)| ((a - scale * m) / s).abs())
        .fold(0.0, f64::max);
    if worst > 5.0 {
        return Err(Error::ModelMismatch { worst_sigma: worst });
    }

    // phonon number the model assigns at the reference coupling, from the
    // transduction-corrected weight inversion
    let reference = problem_at(g_ref)?;
    let grid = reference.default_grid();
    let spectrum = reference.output_spectrum(&grid)?;
    let w = floquet::sideband_weights(&spectrum, &reference)?;
    let n_ref = closed_form::occupancy_from_asymmetry(
        w.a_plus * w.transduction_plus,
        w.a_minus * w.transduction_minus,
    )?;
    let model_area_ref = fit_anti_stokes(&spectrum, &reference)?.area;
    let a_ref = scale * model_area_ref;
    let c_ref = n_ref / a_ref;
    let c_ref_err = c_ref * (scale_err / scale).abs();

    Ok(ThermometryCalibration {
        c_ref,
        c_ref_err,
        g_ref,
        area_scale: scale,
        worst_residual_sigma: worst,
    })
}

/// Lorentzian fit of the anti-Stokes peak in the problem's stored frame.
fn fit_anti_stokes(spectrum: &Spectrum, problem: &FloquetProblem) -> Result<LorentzianFit> {
    let center = problem.params.omega_m + problem.tones.delta;
    let width = problem.nominal_linewidth();
    lorentzian::fit_lorentzian(spectrum, (center - 25.0 * width, center + 25.0 * width), None)
}

// -------------------------------------------------------------------------
// Kerr-constant fit

/// One measured asymmetry at a dimensionless feedback gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryPoint {
    pub gain: f64,
    pub eta: f64,
}

/// Forward-model configuration for the Kerr fit: everything except the
/// effective Kerr constant and the global gain scale is already
/// calibrated.
#[derive(Debug, Clone, Copy)]
pub struct KerrFitTemplate {
    pub params: SystemParams,
    pub tones: ToneSet,
    pub kerr_phase: f64,
    /// Feedback phase; the loop optimum when absent.
    pub fb_phase: Option<f64>,
    /// Starting A0 per gain unit, rad/s.
    pub gain_scale_init: f64,
    pub k_eff_init: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrFit {
    /// Effective Kerr constant, rad/s. Reported signed; a negative value
    /// is the same magnitude at the opposite modulation phase.
    pub k_eff: f64,
    pub k_eff_err: f64,
    /// Fitted A0 per gain unit, rad/s.
    pub gain_scale: f64,
    pub chi2: f64,
}

/// One-dimensional least squares for the effective Kerr constant over a
/// measured eta(gain) curve, with the gain-axis scale as the only other
/// free parameter. Low-gain points carry more weight.
pub fn fit_kerr(curve: &[AsymmetryPoint], template: &KerrFitTemplate) -> Result<KerrFit> {
    template.params.checked()?;
    if curve.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 asymmetry points".into()));
    }
    let phi = template.fb_phase.unwrap_or_else(|| closed_form::optimum_phase(&template.params));
    let mut gains: Vec<f64> = curve.iter().map(|p| p.gain).collect();
    gains.sort_by(|a, b| a.partial_cmp(b).expect("finite gains"));
    let g_med = gains[gains.len() / 2].max(1e-12);
    let weight = |gain: f64| 1.0 / (1.0 + gain / g_med);

    // one fixed grid and window across the whole sweep keeps the
    // objective smooth in (k_eff, gain_scale): the union of the finest
    // (lowest-gain) and coarsest (highest-gain) problem grids, with the
    // window sized for the widest linewidth
    let problem_at = |gain: f64, scale: f64| -> Result<FloquetProblem> {
        let fb = FeedbackConfig::new(scale.abs() * gain, phi, 0.0);
        FloquetProblem::with_feedback(
            template.params,
            template.tones,
            KerrModulation::off(),
            &fb,
        )
    };
    let lo = problem_at(gains[0], template.gain_scale_init)?;
    let hi = problem_at(*gains.last().expect("non-empty"), template.gain_scale_init)?;
    let mut grid = lo.default_grid();
    grid.extend(hi.default_grid());
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-6 * lo.nominal_linewidth());
    let half_width = 10.0 * hi.nominal_linewidth();

    let eta_model = |k_eff: f64, gain_scale: f64, gain: f64| -> Result<f64> {
        let fb = FeedbackConfig::new(gain_scale.abs() * gain, phi, 0.0);
        let kerr = KerrModulation::new(
            k_eff.abs(),
            template.kerr_phase + if k_eff < 0.0 { std::f64::consts::PI } else { 0.0 },
        );
        let problem = FloquetProblem::with_feedback(template.params, template.tones, kerr, &fb)?;
        let spectrum = problem.output_spectrum(&grid)?;
        let (a_plus, a_minus) = floquet::weights_in_windows(&spectrum, &problem, half_width)?;
        Ok(closed_form::asymmetry_eta(a_plus, a_minus))
    };

    let residuals = |p: &[f64], out: &mut [f64]| -> Result<()> {
        for (o, point) in out.iter_mut().zip(curve.iter()) {
            *o = (eta_model(p[0], p[1], point.gain)? - point.eta) * weight(point.gain);
        }
        Ok(())
    };

    let init = [template.k_eff_init, template.gain_scale_init];
    let opts = FitOptions {
        typical: vec![
            template.k_eff_init.abs().max(crate::params::hz(100.0)),
            template.gain_scale_init.abs().max(1.0),
        ],
        diff_step: 1e-5,
        xtol: 1e-8,
        ..Default::default()
    };
    let fit = lm::fit(curve.len(), residuals, &init, &opts)?;
    let k_eff = fit.params[0];
    let gain_scale = fit.params[1].abs();

    // flat chi-square over the scan range means the data do not constrain
    // the Kerr constant at all
    let scan_max = (2.0 * k_eff.abs()).max(2.0 * template.k_eff_init.abs()).max(1.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for step in 0..=6 {
        let k = scan_max * step as f64 / 6.0;
        let chi2: f64 = curve
            .iter()
            .map(|p| {
                let m = eta_model(k, gain_scale, p.gain).unwrap_or(f64::NAN);
                ((m - p.eta) * weight(p.gain)).powi(2)
            })
            .sum();
        lo = lo.min(chi2);
        hi = hi.max(chi2);
    }
    if !(lo.is_finite() && hi.is_finite()) || (hi - lo) <= 1e-9 * hi.max(1e-300) {
        return Err(Error::NotIdentifiable { name: "k_eff".into(), rel_sigma: f64::INFINITY });
    }

    Ok(KerrFit { k_eff, k_eff_err: fit.std_errors[0], gain_scale, chi2: fit.chi2 })
}
