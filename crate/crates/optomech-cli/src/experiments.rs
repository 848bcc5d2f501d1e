//! Experiment drivers: each run produces deterministic CSV/JSON artifacts
//! plus a manifest with the fully resolved parameters and content hashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use optomech::closed_form;
use optomech::floquet::{self, FloquetProblem};
use optomech::inference::{self, AsymmetryPoint, KerrFitTemplate, NoiseCalibrationSetup,
    PowerTrace, ThermometrySweepPoint};
use optomech::lorentzian;
use optomech::params::{hz, thermal_occupancy, to_hz, KerrModulation, Tone, ToneSet};
use optomech::sim::{self, SimConfig};
use optomech::spectrum::{Frame, Spectrum};

use crate::config::{ExperimentKind, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Solver(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

fn solver<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Solver(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Config(e.to_string())
}

/// Collected artifacts, hashed into the manifest at the end of a run.
struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, String)>,
    quiet: bool,
}

impl Artifacts {
    fn new(dir: &Path, quiet: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(config)?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new(), quiet })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(config)?;
        let hash = format!("{:x}", Sha256::digest(contents.as_bytes()));
        if !self.quiet {
            println!("wrote {} ({} bytes)", path.display(), contents.len());
        }
        self.written.push((name.to_string(), hash));
        Ok(())
    }

    fn finish(&mut self, cfg: &RunConfig, resolved_extra: serde_json::Value) -> Result<()> {
        let manifest = serde_json::json!({
            "schema_version": 1,
            "experiment": cfg.kind.as_str(),
            "seed": cfg.seed,
            "resolved": {
                "system": cfg.params,
                "tones": cfg.tones,
                "kerr": cfg.kerr,
                "feedback": cfg.feedback,
                "extra": resolved_extra,
            },
            "artifacts": self.written.iter().map(|(name, sha)| {
                serde_json::json!({"name": name, "sha256": sha})
            }).collect::<Vec<_>>(),
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(config)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, &text).map_err(config)?;
        if !self.quiet {
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn params_hash(cfg: &RunConfig) -> String {
    let doc = serde_json::json!({
        "system": cfg.params,
        "tones": cfg.tones,
        "kerr": cfg.kerr,
        "feedback": cfg.feedback,
        "seed": cfg.seed,
    });
    format!("{:x}", Sha256::digest(doc.to_string().as_bytes()))
}

pub fn run(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<()> {
    let mut artifacts = Artifacts::new(out, quiet)?;
    let extra = match cfg.kind {
        ExperimentKind::Spectrum => run_spectrum(cfg, &mut artifacts)?,
        ExperimentKind::CoolSweep => run_cool_sweep(cfg, &mut artifacts)?,
        ExperimentKind::AsymmetrySweep => run_asymmetry_sweep(cfg, &mut artifacts)?,
        ExperimentKind::CalibrateNadd => run_calibrate_nadd(cfg, &mut artifacts)?,
        ExperimentKind::CalibrateThermometry => run_calibrate_thermometry(cfg, &mut artifacts)?,
        ExperimentKind::SimulateTime => run_simulate_time(cfg, &mut artifacts)?,
        ExperimentKind::FitKerr => run_fit_kerr(cfg, &mut artifacts)?,
        ExperimentKind::Fit => run_fit(cfg, &mut artifacts)?,
    };
    cfg.raw.finish().map_err(config)?;
    artifacts.finish(cfg, extra)
}

fn build_problem(cfg: &RunConfig) -> Result<FloquetProblem> {
    let mut problem = if cfg.feedback.gain_a0 > 0.0 {
        FloquetProblem::with_feedback(cfg.params, cfg.tones, cfg.kerr, &cfg.feedback)
            .map_err(solver)?
    } else {
        FloquetProblem::bare(cfg.params, cfg.tones, cfg.kerr).map_err(solver)?
    };
    if let Some(g) = cfg.raw.get_f64("experiment", "mech_gamma_eff_hz").map_err(config)? {
        problem.mech_gamma_eff = hz(g);
    }
    if let Some(n) = cfg.raw.get_f64("experiment", "mech_occupancy").map_err(config)? {
        problem.mech_occupancy_eff = n;
    }
    if let Some(flag) = cfg.raw.get_bool("experiment", "heterodyne_image_noise").map_err(config)? {
        problem.heterodyne_image_noise = flag;
    }
    Ok(problem)
}

fn grid_density(cfg: &RunConfig) -> Result<f64> {
    let base = cfg
        .raw
        .get_u64("experiment", "grid_points")
        .map_err(config)?
        .map(|n| n as usize);
    Ok(cfg.grid_points.or(base).map(|n| n as f64 / 4000.0).unwrap_or(1.0))
}

fn run_spectrum(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let problem = build_problem(cfg)?;
    let density = grid_density(cfg)?;
    let grid = problem.default_grid_with_density(density);
    let spectrum = problem.output_spectrum(&grid).map_err(solver)?;
    artifacts.write("spectrum.csv", &spectrum.to_csv_string())?;
    artifacts.write(
        "spectrum.json",
        &spectrum.to_json(problem.floor(), &params_hash(cfg)),
    )?;
    Ok(serde_json::json!({
        "grid_points": grid.len(),
        "mech_gamma_eff": problem.mech_gamma_eff,
        "mech_occupancy_eff": problem.mech_occupancy_eff,
        "floor_quanta": problem.floor(),
    }))
}

fn run_cool_sweep(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let lo = cfg.raw.need_f64("experiment", "gain_min_hz").map_err(config)?;
    let hi = cfg.raw.need_f64("experiment", "gain_max_hz").map_err(config)?;
    let steps = cfg.raw.get_u64("experiment", "gain_steps").map_err(config)?.unwrap_or(200) as usize;
    if !(lo > 0.0 && hi > lo && steps >= 2) {
        return Err(RunError::Config("need 0 < gain_min_hz < gain_max_hz, gain_steps >= 2".into()));
    }
    let ratio = (hi / lo).powf(1.0 / (steps - 1) as f64);
    let mut csv = String::from("gain_a0_hz,gamma_eff_hz,c_eff,n_t,n_ba,n_fb,n_m\n");
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..steps {
        let a0_hz = lo * ratio.powi(k as i32);
        let fb = optomech::params::FeedbackConfig::new(
            hz(a0_hz),
            cfg.feedback.phase_phi,
            cfg.feedback.filter_bandwidth,
        );
        let b = closed_form::occupancy_budget(&cfg.params, &cfg.tones.probe, &fb)
            .map_err(solver)?;
        if b.n_m < best.0 {
            best = (b.n_m, a0_hz);
        }
        writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            a0_hz,
            to_hz(b.gamma_eff),
            b.c_eff,
            b.n_t,
            b.n_ba,
            b.n_fb,
            b.n_m
        )
        .expect("string write");
    }
    artifacts.write("cool_sweep.csv", &csv)?;
    Ok(serde_json::json!({"min_n_m": best.0, "argmin_gain_a0_hz": best.1, "steps": steps}))
}

fn run_asymmetry_sweep(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let gains = cfg
        .raw
        .get_list("experiment", "gains")
        .map_err(config)?
        .ok_or_else(|| RunError::Config("missing [experiment] gains".into()))?;
    let scale = hz(cfg.raw.need_f64("experiment", "gain_scale_hz").map_err(config)?);
    let (params, tones, kerr, feedback) = (cfg.params, cfg.tones, cfg.kerr, cfg.feedback);

    let rows: Vec<Result<String>> = gains
        .par_iter()
        .map(|&gain| {
            let fb = optomech::params::FeedbackConfig::new(
                scale * gain,
                feedback.phase_phi,
                feedback.filter_bandwidth,
            );
            let with_kerr =
                FloquetProblem::with_feedback(params, tones, kerr, &fb).map_err(solver)?;
            let without =
                FloquetProblem::with_feedback(params, tones, KerrModulation::off(), &fb)
                    .map_err(solver)?;
            let (ap_k, am_k) = floquet::model_weights(&with_kerr).map_err(solver)?;
            let (ap_0, am_0) = floquet::model_weights(&without).map_err(solver)?;
            Ok(format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                gain,
                to_hz(scale * gain),
                to_hz(with_kerr.mech_gamma_eff),
                with_kerr.mech_occupancy_eff,
                ap_k,
                am_k,
                closed_form::asymmetry_eta(ap_k, am_k),
                ap_0,
                am_0,
                closed_form::asymmetry_eta(ap_0, am_0),
            ))
        })
        .collect();

    let mut csv = String::from(
        "gain,gain_a0_hz,gamma_eff_hz,n_eff,a_plus,a_minus,eta,\
         a_plus_no_kerr,a_minus_no_kerr,eta_no_kerr\n",
    );
    for row in rows {
        csv.push_str(&row?);
    }
    artifacts.write("asymmetry_sweep.csv", &csv)?;
    Ok(serde_json::json!({"gains": gains.len(), "gain_scale_hz": to_hz(scale)}))
}

fn run_calibrate_nadd(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let raw = &cfg.raw;
    let powers = raw
        .get_list("experiment", "powers")
        .map_err(config)?
        .ok_or_else(|| RunError::Config("missing [experiment] powers".into()))?;
    let setup = NoiseCalibrationSetup {
        tone_detuning: cfg.tones.thermometry.detuning,
        reference_power: raw.need_f64("experiment", "reference_power").map_err(config)?,
        heating_threshold: raw
            .get_f64("experiment", "heating_threshold")
            .map_err(config)?
            .unwrap_or(f64::INFINITY),
        base_n_m_thermal: cfg.params.n_m_thermal,
        per_trace_gain: raw
            .get_bool("experiment", "per_trace_gain")
            .map_err(config)?
            .unwrap_or(true),
        g_init: hz(raw.need_f64("experiment", "g_init_hz").map_err(config)?),
        n_add_init: raw.get_f64("experiment", "n_add_init").map_err(config)?.unwrap_or(1.0),
    };

    // synthesize the family at the configured truth values
    let g_true = hz(raw.need_f64("experiment", "g_true_hz").map_err(config)?);
    let true_n_add = raw.get_f64("experiment", "true_n_add").map_err(config)?;
    let slope_true = raw.get_f64("experiment", "heating_slope_true").map_err(config)?.unwrap_or(0.0);
    let noise_sigma = raw.get_f64("experiment", "noise_sigma").map_err(config)?.unwrap_or(0.02);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut traces = Vec::with_capacity(powers.len());
    for (j, &power) in powers.iter().enumerate() {
        let mut p = cfg.params;
        if let Some(n_add) = true_n_add {
            p.n_add = n_add;
        }
        p.n_m_thermal =
            setup.base_n_m_thermal + slope_true * (power - setup.heating_threshold).max(0.0);
        let g = g_true * (power / setup.reference_power).sqrt();
        let problem = FloquetProblem::bare(
            p,
            ToneSet::new(Tone::off(), Tone::new(setup.tone_detuning, g)),
            KerrModulation::off(),
        )
        .map_err(solver)?;
        let width = problem.nominal_linewidth();
        let m = 500;
        let offsets: Vec<f64> = (0..m)
            .map(|k| p.omega_m - 60.0 * width + 120.0 * width * k as f64 / (m - 1) as f64)
            .collect();
        let clean = problem.output_spectrum(&offsets).map_err(solver)?;
        let psd: Vec<f64> = clean
            .psd
            .iter()
            .map(|&v| (v + noise_sigma * rng.sample::<f64, _>(StandardNormal)).max(0.0))
            .collect();
        let spectrum =
            Spectrum::new(clean.frequencies.clone(), psd, clean.frame).map_err(solver)?;
        artifacts.write(&format!("trace_{j:02}.csv"), &spectrum.to_csv_string())?;
        traces.push(PowerTrace { power, spectrum });
    }

    let result = inference::calibrate_n_add(&traces, &cfg.params, &setup).map_err(solver)?;
    let doc = serde_json::to_string_pretty(&result).map_err(solver)?;
    artifacts.write("nadd_calibration.json", &doc)?;
    Ok(serde_json::json!({
        "n_add_fit": result.n_add,
        "n_add_err": result.n_add_err,
        "g_shared_hz": to_hz(result.g_shared),
        "true_n_add": true_n_add,
    }))
}

fn run_calibrate_thermometry(
    cfg: &RunConfig,
    artifacts: &mut Artifacts,
) -> Result<serde_json::Value> {
    let raw = &cfg.raw;
    let couplings = raw
        .get_list("experiment", "couplings_hz")
        .map_err(config)?
        .ok_or_else(|| RunError::Config("missing [experiment] couplings_hz".into()))?;
    let g_ref = hz(raw.get_f64("experiment", "g_ref_hz").map_err(config)?.unwrap_or(1.65e3));
    let t_mk = raw.get_f64("experiment", "temperature_mk").map_err(config)?.unwrap_or(50.0);
    let n_base = thermal_occupancy(t_mk * 1e-3, cfg.params.omega_m);
    let area_scale = raw.get_f64("experiment", "area_scale").map_err(config)?.unwrap_or(1.0);
    let noise_rel = raw.get_f64("experiment", "noise_rel").map_err(config)?.unwrap_or(2e-4);
    let detuning = cfg.tones.thermometry.detuning;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut sweep = Vec::with_capacity(couplings.len());
    for (j, &g_hz) in couplings.iter().enumerate() {
        let mut p = cfg.params;
        p.n_m_thermal = n_base;
        let problem = FloquetProblem::bare(
            p,
            ToneSet::new(Tone::off(), Tone::new(detuning, hz(g_hz))),
            KerrModulation::off(),
        )
        .map_err(solver)?;
        let grid = problem.default_grid();
        let clean = problem.output_spectrum(&grid).map_err(solver)?;
        let psd: Vec<f64> = clean
            .psd
            .iter()
            .map(|&v| {
                (area_scale * v * (1.0 + noise_rel * rng.sample::<f64, _>(StandardNormal)))
                    .max(0.0)
            })
            .collect();
        let spectrum =
            Spectrum::new(clean.frequencies.clone(), psd, clean.frame).map_err(solver)?;
        artifacts.write(&format!("sweep_{j:02}.csv"), &spectrum.to_csv_string())?;
        sweep.push(ThermometrySweepPoint { g_t: hz(g_hz), spectrum });
    }

    let cal = inference::calibrate_thermometry(&sweep, &cfg.params, detuning, g_ref, n_base)
        .map_err(solver)?;
    let doc = serde_json::to_string_pretty(&cal).map_err(solver)?;
    artifacts.write("thermometry_calibration.json", &doc)?;
    Ok(serde_json::json!({
        "c_ref": cal.c_ref,
        "c_ref_err": cal.c_ref_err,
        "g_ref_hz": to_hz(cal.g_ref),
        "n_m_thermal": n_base,
    }))
}

fn run_simulate_time(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let raw = &cfg.raw;
    let mut sim = SimConfig::new(
        raw.need_f64("experiment", "dt_s").map_err(config)?,
        raw.need_f64("experiment", "duration_s").map_err(config)?,
        cfg.seed,
    );
    sim.scale_q = raw.get_f64("experiment", "scale_q").map_err(config)?;
    if let Some(flag) = raw.get_bool("experiment", "adiabatic_cavity").map_err(config)? {
        sim.adiabatic_cavity = flag;
    }
    if let Some(flag) = raw.get_bool("experiment", "noise").map_err(config)? {
        sim.noise = flag;
    }
    if let Some(x0) = raw.get_f64("experiment", "initial_displacement").map_err(config)? {
        sim.initial_displacement = x0;
    }
    if let Some(d) = raw.get_u64("experiment", "record_decimation").map_err(config)? {
        sim.record_decimation = Some(d as usize);
    }

    let out = sim::simulate(&cfg.params, &cfg.tones, &cfg.feedback, &sim).map_err(solver)?;
    artifacts.write("trajectory.csv", &out.trajectory_csv())?;
    if let Some(psd) = &out.psd {
        artifacts.write("psd.csv", &psd.to_csv_string())?;
    }
    let doc = serde_json::to_string_pretty(&out.summary).map_err(solver)?;
    artifacts.write("summary.json", &doc)?;
    Ok(serde_json::json!({
        "unstable": out.summary.unstable,
        "occupancy": out.summary.occupancy,
        "fitted_gamma_eff": out.summary.fitted_gamma_eff,
    }))
}

fn run_fit_kerr(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let raw = &cfg.raw;
    let template = KerrFitTemplate {
        params: cfg.params,
        tones: cfg.tones,
        kerr_phase: cfg.kerr.phase,
        fb_phase: Some(cfg.feedback.phase_phi),
        gain_scale_init: hz(raw.need_f64("experiment", "gain_scale_init_hz").map_err(config)?),
        k_eff_init: hz(raw.need_f64("experiment", "k_eff_init_hz").map_err(config)?),
    };

    let curve: Vec<AsymmetryPoint> = if let Some(path) = raw.get_str("experiment", "data_csv") {
        load_eta_csv(Path::new(&path))?
    } else {
        let gains = raw
            .get_list("experiment", "gains")
            .map_err(config)?
            .ok_or_else(|| RunError::Config("missing [experiment] gains or data_csv".into()))?;
        let k_true = hz(raw.need_f64("experiment", "k_true_hz").map_err(config)?);
        let scale_true = hz(raw.need_f64("experiment", "gain_scale_true_hz").map_err(config)?);
        let noise_sigma = raw.get_f64("experiment", "noise_sigma").map_err(config)?.unwrap_or(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::with_capacity(gains.len());
        for &gain in &gains {
            let fb = optomech::params::FeedbackConfig::new(
                scale_true * gain,
                cfg.feedback.phase_phi,
                0.0,
            );
            let problem = FloquetProblem::with_feedback(
                cfg.params,
                cfg.tones,
                KerrModulation::new(k_true, cfg.kerr.phase),
                &fb,
            )
            .map_err(solver)?;
            let (ap, am) = floquet::model_weights(&problem).map_err(solver)?;
            out.push(AsymmetryPoint {
                gain,
                eta: closed_form::asymmetry_eta(ap, am)
                    + noise_sigma * rng.sample::<f64, _>(StandardNormal),
            });
        }
        out
    };

    let mut csv = String::from("gain,eta\n");
    for p in &curve {
        writeln!(csv, "{:.16e},{:.16e}", p.gain, p.eta).expect("string write");
    }
    artifacts.write("eta_data.csv", &csv)?;

    let fit = inference::fit_kerr(&curve, &template).map_err(solver)?;
    let doc = serde_json::to_string_pretty(&fit).map_err(solver)?;
    artifacts.write("kerr_fit.json", &doc)?;
    Ok(serde_json::json!({
        "k_eff_hz": to_hz(fit.k_eff),
        "k_eff_err_hz": to_hz(fit.k_eff_err),
        "gain_scale_hz": to_hz(fit.gain_scale),
    }))
}

fn load_eta_csv(path: &Path) -> Result<Vec<AsymmetryPoint>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    if header != "gain,eta" {
        return Err(RunError::Config(format!(
            "{}: expected header `gain,eta`, got `{header}`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let gain: f64 = cols
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RunError::Config(format!("{}: line {}: bad gain", path.display(), k + 2)))?;
        let eta: f64 = cols
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RunError::Config(format!("{}: line {}: bad eta", path.display(), k + 2)))?;
        out.push(AsymmetryPoint { gain, eta });
    }
    Ok(out)
}

fn run_fit(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<serde_json::Value> {
    let raw = &cfg.raw;
    let input = raw.need_str("experiment", "input_csv").map_err(config)?;
    let frame = match raw.get_str("experiment", "frame").as_deref() {
        Some("lab") => Frame::LabFrame,
        Some("probe") | None => Frame::ProbeRotatingFrame,
        Some(other) => {
            return Err(RunError::Config(format!(
                "[experiment] frame: expected `lab` or `probe`, got `{other}`"
            )))
        }
    };
    let spectrum = Spectrum::load_csv(Path::new(&input), frame).map_err(config)?;
    let lo = hz(raw.need_f64("experiment", "window_lo_hz").map_err(config)?);
    let hi = hz(raw.need_f64("experiment", "window_hi_hz").map_err(config)?);
    let fit = lorentzian::fit_lorentzian(&spectrum, (lo, hi), None).map_err(solver)?;
    let doc = serde_json::to_string_pretty(&fit).map_err(solver)?;
    artifacts.write("fit.json", &doc)?;
    Ok(serde_json::json!({
        "center_hz": to_hz(fit.center),
        "fwhm_hz": to_hz(fit.fwhm),
        "area": fit.area,
    }))
}
