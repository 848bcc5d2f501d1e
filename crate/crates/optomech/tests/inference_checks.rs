//! Round trips and estimator-consistency checks for the inference module.

use approx::assert_relative_eq;
use optomech::closed_form;
use optomech::error::Error;
use optomech::floquet::{self, FloquetProblem};
use optomech::inference::{self, AsymmetryPoint, KerrFitTemplate, NoiseCalibrationSetup,
    PowerTrace, ThermometrySweepPoint};
use optomech::lorentzian::{self, LorentzianGuess};
use optomech::params::{hz, KerrModulation, SystemParams, Tone, ToneSet};
use optomech::spectrum::{Frame, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn device() -> SystemParams {
    SystemParams {
        omega_c: hz(4.554e9),
        omega_m: hz(707.2e3),
        gamma: hz(9e-3),
        kappa_i: hz(340e3),
        kappa_e: hz(1.16e6),
        n_m_thermal: 588.77104458778431,
        n_c_thermal: 0.42,
        n_add: 2.5,
    }
}

fn device_tones(g_t_hz: f64) -> ToneSet {
    ToneSet::new(Tone::new(0.0, hz(6.32e3)), Tone::new(hz(-48e3), hz(g_t_hz)))
}

/// Fit both sidebands of a model spectrum and recover the bath occupancy
/// through the corrected asymmetry inversion.
#[test]
fn occupancy_round_trip_with_all_corrections() {
    let params = device();
    for n_eff in [0.5, 5.0, 50.0, 2000.0] {
        let problem = FloquetProblem::new(
            params,
            device_tones(400.0),
            KerrModulation::new(hz(1.2e3), 0.0),
            hz(1.0),
            n_eff,
        )
        .unwrap();
        let grid = problem.default_grid();
        let spectrum = problem.output_spectrum(&grid).unwrap();
        let corrections = inference::fitted_transduction(&problem).unwrap();
        let fit_plus = inference::fit_sideband(&spectrum, &problem, true).unwrap();
        let fit_minus = inference::fit_sideband(&spectrum, &problem, false).unwrap();
        let est = inference::extract_occupancy(&fit_plus, &fit_minus, corrections).unwrap();
        assert_relative_eq!(est.n_m, n_eff, max_relative = 0.02);
    }
}

/// The window-integral factors of the solver module and the fit-area
/// factors of the inference module agree where the peaks stay clean.
#[test]
fn window_and_fit_transduction_factors_agree() {
    let params = device();
    let problem = FloquetProblem::new(
        params,
        device_tones(400.0),
        KerrModulation::off(),
        hz(1.0),
        50.0,
    )
    .unwrap();
    let (wf_plus, wf_minus) = floquet::transduction_correction(&problem).unwrap();
    let (ff_plus, ff_minus) = inference::fitted_transduction(&problem).unwrap();
    assert_relative_eq!(wf_plus, ff_plus, max_relative = 0.05);
    assert_relative_eq!(wf_minus, ff_minus, max_relative = 0.05);
}

#[test]
fn equal_corrected_weights_are_non_physical() {
    let params = device();
    let problem = FloquetProblem::new(
        params,
        device_tones(400.0),
        KerrModulation::off(),
        hz(1.0),
        3.0,
    )
    .unwrap();
    let grid = problem.default_grid();
    let spectrum = problem.output_spectrum(&grid).unwrap();
    let delta = problem.tones.delta;
    let width = problem.nominal_linewidth();
    let fit_plus = lorentzian::fit_lorentzian(
        &spectrum,
        (params.omega_m + delta - 12.0 * width, params.omega_m + delta + 12.0 * width),
        None,
    )
    .unwrap();
    match inference::extract_occupancy(&fit_plus, &fit_plus.clone(), (1.0, 1.0)) {
        Err(Error::NonPhysicalWeights { .. }) => {}
        other => panic!("expected non-physical weights, got {:?}", other),
    }
}

/// Monte-Carlo consistency of the Lorentzian fitter: estimates scatter as
/// the reported standard errors claim, with negligible bias.
#[test]
fn lorentzian_fit_errors_are_calibrated() {
    let (c, fwhm, h, b) = (1.0e6, 40.0, 5.0, 2.0);
    let n = 601;
    let span = 60.0 * fwhm;
    let freqs: Vec<f64> =
        (0..n).map(|k| c - span / 2.0 + span * k as f64 / (n - 1) as f64).collect();
    let clean: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            let hw = fwhm / 2.0;
            b + h * hw * hw / ((f - c) * (f - c) + hw * hw)
        })
        .collect();
    let sigma = h / 31.6; // 30 dB peak SNR

    let mut centers = Vec::new();
    let mut widths = Vec::new();
    let mut reported_center_err = Vec::new();
    let mut reported_width_err = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let psd: Vec<f64> = clean
            .iter()
            .map(|&y| (y + sigma * rng.sample::<f64, _>(StandardNormal)).max(0.0))
            .collect();
        let s = Spectrum::new(freqs.clone(), psd, Frame::LabFrame).unwrap();
        let fit = lorentzian::fit_lorentzian(&s, (freqs[0], freqs[n - 1]), None).unwrap();
        centers.push(fit.center);
        widths.push(fit.fwhm);
        reported_center_err.push(fit.center_err);
        reported_width_err.push(fit.fwhm_err);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };

    // bias below 0.3 sigma of a single estimate
    let center_sigma = std(&centers);
    let width_sigma = std(&widths);
    assert!((mean(&centers) - c).abs() < 0.3 * center_sigma);
    assert!((mean(&widths) - fwhm).abs() < 0.3 * width_sigma);
    // reported errors match the observed scatter
    let center_ratio = center_sigma / mean(&reported_center_err);
    let width_ratio = width_sigma / mean(&reported_width_err);
    assert!((0.7..1.3).contains(&center_ratio), "center ratio {center_ratio}");
    assert!((0.7..1.3).contains(&width_ratio), "width ratio {width_ratio}");
}

// -------------------------------------------------------------------------
// added-noise calibration

fn synth_noise_family(
    params: &SystemParams,
    setup: &NoiseCalibrationSetup,
    powers: &[f64],
    g_true: f64,
    slope_true: f64,
    gains: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Vec<PowerTrace> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    powers
        .iter()
        .zip(gains.iter())
        .map(|(&power, &gain)| {
            let g = g_true * (power / setup.reference_power).sqrt();
            let mut p = *params;
            p.n_m_thermal = setup.base_n_m_thermal
                + slope_true * (power - setup.heating_threshold).max(0.0);
            let problem = FloquetProblem::bare(
                p,
                ToneSet::new(Tone::off(), Tone::new(setup.tone_detuning, g)),
                KerrModulation::off(),
            )
            .unwrap();
            // grid focused on the anti-Stokes peak plus background
            let width = problem.nominal_linewidth();
            let center = p.omega_m;
            let m = 500;
            let offsets: Vec<f64> = (0..m)
                .map(|k| center - 60.0 * width + 120.0 * width * k as f64 / (m - 1) as f64)
                .collect();
            let spectrum = problem.output_spectrum(&offsets).unwrap();
            let psd: Vec<f64> = spectrum
                .psd
                .iter()
                .map(|&v| (gain * v + noise_sigma * rng.sample::<f64, _>(StandardNormal)).max(0.0))
                .collect();
            PowerTrace {
                power,
                spectrum: Spectrum::new(spectrum.frequencies.clone(), psd, spectrum.frame)
                    .unwrap(),
            }
        })
        .collect()
}

fn noise_setup() -> NoiseCalibrationSetup {
    NoiseCalibrationSetup {
        tone_detuning: hz(-48e3),
        reference_power: 8.0,
        heating_threshold: 12.0,
        base_n_m_thermal: 1472.6773144923161, // 50 mK
        per_trace_gain: true,
        g_init: hz(1.0e3),
        n_add_init: 1.0,
    }
}

#[test]
fn n_add_family_round_trip() {
    let mut params = device();
    params.n_add = 2.5;
    let setup = noise_setup();
    let powers = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let gains = [1.1, 0.95, 1.0, 1.05, 0.9, 1.02];
    let traces = synth_noise_family(&params, &setup, &powers, hz(1.2e3), 25.0, &gains, 0.02, 11);
    let result = inference::calibrate_n_add(&traces, &params, &setup).unwrap();
    assert_relative_eq!(result.n_add, 2.5, max_relative = 0.05);
    assert_relative_eq!(result.g_shared, hz(1.2e3), max_relative = 0.05);
}

#[test]
fn n_add_invariant_under_power_relabeling() {
    let mut params = device();
    params.n_add = 2.5;
    let setup = noise_setup();
    let powers = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let gains = [1.0; 6];
    let traces = synth_noise_family(&params, &setup, &powers, hz(1.2e3), 0.0, &gains, 0.02, 3);
    let base = inference::calibrate_n_add(&traces, &params, &setup).unwrap();

    // relabel the power axis by 3x: same spectra, scaled labels
    let relabeled: Vec<PowerTrace> = traces
        .iter()
        .map(|t| PowerTrace { power: 3.0 * t.power, spectrum: t.spectrum.clone() })
        .collect();
    let mut setup2 = setup;
    setup2.reference_power = 3.0 * setup.reference_power;
    setup2.heating_threshold = 3.0 * setup.heating_threshold;
    let scaled = inference::calibrate_n_add(&relabeled, &params, &setup2).unwrap();
    let err = base.n_add_err.max(scaled.n_add_err).max(1e-3);
    assert!((base.n_add - scaled.n_add).abs() < 3.0 * err);
}

#[test]
fn single_weak_trace_is_not_identifiable() {
    let mut params = device();
    params.n_add = 2.5;
    let setup = noise_setup();
    // a single noisy trace at very low power: the peak is buried, so the
    // added noise cannot be separated from the detection gain
    let traces = synth_noise_family(&params, &setup, &[2e-5], hz(1.2e3), 0.0, &[1.0], 0.25, 5);
    match inference::calibrate_n_add(&traces, &params, &setup) {
        Err(Error::NotIdentifiable { .. }) => {}
        Err(Error::NoConvergence { .. }) => {}
        other => panic!("expected identifiability failure, got {:?}", other.map(|r| r.n_add)),
    }
}

#[test]
fn floor_only_traces_pin_n_add_with_calibrated_detection() {
    let mut params = device();
    params.n_add = 2.5;
    let mut setup = noise_setup();
    setup.per_trace_gain = false;
    let powers = [1e-12, 1e-12, 2.0, 8.0, 16.0, 32.0];
    let gains = [1.0; 6];
    let traces = synth_noise_family(&params, &setup, &powers, hz(1.2e3), 0.0, &gains, 0.02, 9);
    let result = inference::calibrate_n_add(&traces, &params, &setup).unwrap();
    assert_relative_eq!(result.n_add, 2.5, max_relative = 0.03);
}

// -------------------------------------------------------------------------
// thermometry calibration

fn synth_thermometry_sweep(
    params: &SystemParams,
    detuning: f64,
    couplings_hz: &[f64],
    n_m_thermal: f64,
    area_scale: f64,
    seed: u64,
) -> Vec<ThermometrySweepPoint> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    couplings_hz
        .iter()
        .map(|&g_hz| {
            let mut p = *params;
            p.n_m_thermal = n_m_thermal;
            let problem = FloquetProblem::bare(
                p,
                ToneSet::new(Tone::off(), Tone::new(detuning, hz(g_hz))),
                KerrModulation::off(),
            )
            .unwrap();
            let grid = problem.default_grid();
            let s = problem.output_spectrum(&grid).unwrap();
            let psd: Vec<f64> = s
                .psd
                .iter()
                .map(|&v| {
                    (area_scale * v * (1.0 + 2e-4 * rng.sample::<f64, _>(StandardNormal))).max(0.0)
                })
                .collect();
            ThermometrySweepPoint {
                g_t: hz(g_hz),
                spectrum: Spectrum::new(s.frequencies.clone(), psd, s.frame).unwrap(),
            }
        })
        .collect()
}

#[test]
fn thermometry_calibration_round_trip() {
    let params = device();
    let n50 = 1472.6773144923161;
    let couplings = [300.0, 500.0, 800.0, 1100.0, 1400.0, 1650.0];
    let scale_true = 3.7e-2; // arbitrary detection units per quanta
    let sweep = synth_thermometry_sweep(&params, hz(-48e3), &couplings, n50, scale_true, 21);
    let cal =
        inference::calibrate_thermometry(&sweep, &params, hz(-48e3), hz(1.65e3), n50).unwrap();

    // expected: model occupancy at g_ref over the scaled model area
    let mut p = params;
    p.n_m_thermal = n50;
    let reference = FloquetProblem::bare(
        p,
        ToneSet::new(Tone::off(), Tone::new(hz(-48e3), hz(1.65e3))),
        KerrModulation::off(),
    )
    .unwrap();
    let grid = reference.default_grid();
    let spectrum = reference.output_spectrum(&grid).unwrap();
    let w = floquet::sideband_weights(&spectrum, &reference).unwrap();
    let n_ref = closed_form::occupancy_from_asymmetry(
        w.a_plus * w.transduction_plus,
        w.a_minus * w.transduction_minus,
    )
    .unwrap();
    // damping enhancement reaches the intended dynamic range
    let g_opt = closed_form::sideband_cooling_rate(&p, &Tone::new(hz(-48e3), hz(1.65e3)));
    assert!(g_opt / p.gamma > 50.0);

    let delta = reference.tones.delta;
    let width = reference.nominal_linewidth();
    let model_fit = lorentzian::fit_lorentzian(
        &spectrum,
        (p.omega_m + delta - 25.0 * width, p.omega_m + delta + 25.0 * width),
        None,
    )
    .unwrap();
    let c_ref_true = n_ref / (scale_true * model_fit.area);
    assert_relative_eq!(cal.c_ref, c_ref_true, max_relative = 0.03);
}

#[test]
fn wrong_sign_detuning_is_a_model_mismatch() {
    let params = device();
    let n50 = 1472.6773144923161;
    let couplings = [300.0, 800.0, 1650.0];
    let sweep = synth_thermometry_sweep(&params, hz(-48e3), &couplings, n50, 1.0, 2);
    match inference::calibrate_thermometry(&sweep, &params, hz(48e3), hz(1.65e3), n50) {
        Err(Error::ModelMismatch { .. }) => {}
        other => panic!("expected model mismatch, got {:?}", other.map(|c| c.c_ref)),
    }
}

#[test]
fn weak_coupling_areas_scale_with_g_squared() {
    let params = device();
    let mut p = params;
    p.n_m_thermal = 1472.6773144923161;
    let area_at = |g_hz: f64| {
        let problem = FloquetProblem::bare(
            p,
            ToneSet::new(Tone::off(), Tone::new(hz(-48e3), hz(g_hz))),
            KerrModulation::off(),
        )
        .unwrap();
        let (a_plus, _) = floquet::model_weights(&problem).unwrap();
        a_plus
    };
    let a1 = area_at(4.0);
    let a2 = area_at(8.0);
    assert_relative_eq!(a2 / a1, 4.0, max_relative = 1e-3);
}

// -------------------------------------------------------------------------
// Kerr fit

fn kerr_template(g_p_hz: f64, g_t_hz: f64, k_init_hz: f64, scale_init: f64) -> KerrFitTemplate {
    KerrFitTemplate {
        params: device(),
        tones: ToneSet::new(Tone::new(0.0, hz(g_p_hz)), Tone::new(hz(-48e3), hz(g_t_hz))),
        kerr_phase: 0.0,
        fb_phase: None,
        gain_scale_init: hz(scale_init),
        k_eff_init: hz(k_init_hz),
    }
}

fn synth_eta_curve(
    template: &KerrFitTemplate,
    k_true: f64,
    gain_scale_true: f64,
    gains: &[f64],
    noise: f64,
    seed: u64,
) -> Vec<AsymmetryPoint> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let phi = closed_form::optimum_phase(&template.params);
    gains
        .iter()
        .map(|&gain| {
            let fb = optomech::params::FeedbackConfig::new(gain_scale_true * gain, phi, 0.0);
            let problem = FloquetProblem::with_feedback(
                template.params,
                template.tones,
                KerrModulation::new(k_true, template.kerr_phase),
                &fb,
            )
            .unwrap();
            let (a_plus, a_minus) = floquet::model_weights(&problem).unwrap();
            let eta = closed_form::asymmetry_eta(a_plus, a_minus)
                + noise * rng.sample::<f64, _>(StandardNormal);
            AsymmetryPoint { gain, eta }
        })
        .collect()
}

#[test]
fn kerr_fit_recovers_low_power_constant() {
    let template = kerr_template(6.32e3, 150.0, 0.6e3, 450.0);
    let gains = [0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 8.0, 13.0, 20.0];
    let curve = synth_eta_curve(&template, hz(1.2e3), hz(380.0), &gains, 0.002, 17);
    let fit = inference::fit_kerr(&curve, &template).unwrap();
    assert_relative_eq!(fit.k_eff, hz(1.2e3), max_relative = 0.10);
}

#[test]
fn kerr_fit_recovers_zero() {
    let template = kerr_template(6.32e3, 150.0, 0.4e3, 400.0);
    let gains = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let curve = synth_eta_curve(&template, 0.0, hz(400.0), &gains, 0.001, 23);
    let fit = inference::fit_kerr(&curve, &template).unwrap();
    assert!(
        fit.k_eff.abs() <= 3.0 * fit.k_eff_err.max(hz(20.0)),
        "k = {} +- {}",
        fit.k_eff,
        fit.k_eff_err
    );
}

#[test]
fn kerr_fit_recovers_high_power_constant() {
    let template = kerr_template(11e3, 150.0, 40e3, 450.0);
    let gains = [0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 8.0];
    let curve = synth_eta_curve(&template, hz(70e3), hz(380.0), &gains, 0.002, 29);
    let fit = inference::fit_kerr(&curve, &template).unwrap();
    assert_relative_eq!(fit.k_eff, hz(70e3), max_relative = 0.10);
}

#[test]
fn lorentzian_guess_seeds_thermometry_windows() {
    // guard: the anti-Stokes fit helper must converge on a narrow cooled
    // peak with an explicit guess too
    let params = device();
    let mut p = params;
    p.n_m_thermal = 1472.6773144923161;
    let problem = FloquetProblem::bare(
        p,
        ToneSet::new(Tone::off(), Tone::new(hz(-48e3), hz(1.65e3))),
        KerrModulation::off(),
    )
    .unwrap();
    let grid = problem.default_grid();
    let s = problem.output_spectrum(&grid).unwrap();
    let delta = problem.tones.delta;
    let width = problem.nominal_linewidth();
    let guess = LorentzianGuess {
        center: p.omega_m + delta,
        fwhm: width,
        height: 1.0,
        baseline: p.n_add + 0.5,
    };
    let fit = lorentzian::fit_lorentzian(
        &s,
        (p.omega_m + delta - 20.0 * width, p.omega_m + delta + 20.0 * width),
        Some(guess),
    )
    .unwrap();
    assert_relative_eq!(fit.fwhm, width, max_relative = 0.05);
}
