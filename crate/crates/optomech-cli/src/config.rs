//! Flat key-value configuration files with [section] headers.
//!
//! Frequencies are ordinary (Hz), temperatures in mK, occupancies and
//! noise quanta dimensionless. Unknown keys are hard errors so typos
//! cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use optomech::params::{hz, thermal_occupancy, FeedbackConfig, KerrModulation, SystemParams,
    Tone, ToneSet};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed file: section -> key -> (value, line number).
pub struct RawConfig {
    entries: BTreeMap<String, BTreeMap<String, (String, usize)>>,
    consumed: std::cell::RefCell<Vec<(String, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut section = String::new();
        for (k, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(ConfigError(format!("line {}: malformed section header", k + 1)));
                }
                section = line[1..line.len() - 1].trim().to_string();
                entries.entry(section.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "line {}: expected key = value, got `{line}`",
                    k + 1
                )));
            };
            let key = key.trim().to_string();
            let prev = entries
                .entry(section.clone())
                .or_default()
                .insert(key.clone(), (value.trim().to_string(), k + 1));
            if prev.is_some() {
                return Err(ConfigError(format!(
                    "line {}: duplicate key `{key}` in section [{section}]",
                    k + 1
                )));
            }
        }
        Ok(RawConfig { entries, consumed: std::cell::RefCell::new(Vec::new()) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        let v = self.entries.get(section)?.get(key);
        if v.is_some() {
            self.consumed.borrow_mut().push((section.to_string(), key.to_string()));
        }
        v
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| ConfigError(format!("line {line}: [{section}] {key}: {e}"))),
        }
    }

    pub fn need_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.get_f64(section, key)?
            .ok_or_else(|| ConfigError(format!("missing required key [{section}] {key}")))
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| ConfigError(format!("line {line}: [{section}] {key}: {e}"))),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                other => Err(ConfigError(format!(
                    "line {line}: [{section}] {key}: expected true/false, got `{other}`"
                ))),
            },
        }
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<String> {
        self.raw(section, key).map(|(v, _)| v.clone())
    }

    pub fn need_str(&self, section: &str, key: &str) -> Result<String> {
        self.get_str(section, key)
            .ok_or_else(|| ConfigError(format!("missing required key [{section}] {key}")))
    }

    /// Comma-separated list of numbers.
    pub fn get_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|item| {
                    item.trim().parse::<f64>().map_err(|e| {
                        ConfigError(format!("line {line}: [{section}] {key}: `{item}`: {e}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Every key must have been consumed by now; anything left is a typo.
    pub fn finish(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let mut unknown = Vec::new();
        for (section, keys) in &self.entries {
            for (key, (_, line)) in keys {
                if !consumed.iter().any(|(s, k)| s == section && k == key) {
                    unknown.push(format!("line {line}: [{section}] {key}"));
                }
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(format!("unknown keys:\n  {}", unknown.join("\n  "))))
        }
    }
}

/// Fully resolved run configuration.
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub params: SystemParams,
    pub tones: ToneSet,
    pub kerr: KerrModulation,
    pub feedback: FeedbackConfig,
    pub seed: u64,
    pub grid_points: Option<usize>,
    pub raw: RawConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Spectrum,
    CoolSweep,
    AsymmetrySweep,
    CalibrateNadd,
    CalibrateThermometry,
    SimulateTime,
    FitKerr,
    Fit,
}

impl ExperimentKind {
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spectrum" => Self::Spectrum,
            "cool-sweep" => Self::CoolSweep,
            "asymmetry-sweep" => Self::AsymmetrySweep,
            "calibrate-nadd" => Self::CalibrateNadd,
            "calibrate-thermometry" => Self::CalibrateThermometry,
            "simulate-time" => Self::SimulateTime,
            "fit-kerr" => Self::FitKerr,
            "fit" => Self::Fit,
            other => {
                return Err(ConfigError(format!(
                    "unknown experiment kind `{other}` (expected spectrum, cool-sweep, \
                     asymmetry-sweep, calibrate-nadd, calibrate-thermometry, simulate-time, \
                     fit-kerr, or fit)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::CoolSweep => "cool-sweep",
            Self::AsymmetrySweep => "asymmetry-sweep",
            Self::CalibrateNadd => "calibrate-nadd",
            Self::CalibrateThermometry => "calibrate-thermometry",
            Self::SimulateTime => "simulate-time",
            Self::FitKerr => "fit-kerr",
            Self::Fit => "fit",
        }
    }
}

pub fn resolve(raw: RawConfig, seed_override: Option<u64>) -> Result<RunConfig> {
    let kind = ExperimentKind::from_str(&raw.need_str("experiment", "kind")?)?;

    // the standalone `fit` kind works on external spectra and does not
    // need device parameters
    let params = if kind == ExperimentKind::Fit {
        default_params(&raw)?
    } else {
        let omega_m = hz(raw.need_f64("system", "omega_m_hz")?);
        let n_m_thermal = match raw.get_f64("system", "n_m_thermal")? {
            Some(n) => n,
            None => {
                let t_mk = raw.need_f64("system", "temperature_mk")?;
                thermal_occupancy(t_mk * 1e-3, omega_m)
            }
        };
        SystemParams {
            omega_c: hz(raw.need_f64("system", "omega_c_hz")?),
            omega_m,
            gamma: hz(raw.need_f64("system", "gamma_hz")?),
            kappa_i: hz(raw.need_f64("system", "kappa_i_hz")?),
            kappa_e: hz(raw.need_f64("system", "kappa_e_hz")?),
            n_m_thermal,
            n_c_thermal: raw.get_f64("system", "n_c_thermal")?.unwrap_or(0.0),
            n_add: raw.get_f64("system", "n_add")?.unwrap_or(0.0),
        }
    };
    let report = params.validate();
    if kind != ExperimentKind::Fit && !report.is_valid() {
        return Err(ConfigError(format!(
            "invalid system parameters: {}",
            report.violations.join("; ")
        )));
    }

    let tones = ToneSet::new(
        Tone::new(
            hz(raw.get_f64("tones", "probe_detuning_hz")?.unwrap_or(0.0)),
            hz(raw.get_f64("tones", "probe_g_hz")?.unwrap_or(0.0)),
        ),
        Tone::new(
            hz(raw.get_f64("tones", "thermometry_detuning_hz")?.unwrap_or(0.0)),
            hz(raw.get_f64("tones", "thermometry_g_hz")?.unwrap_or(0.0)),
        ),
    );
    let kerr = KerrModulation::new(
        hz(raw.get_f64("kerr", "k_eff_hz")?.unwrap_or(0.0)),
        raw.get_f64("kerr", "phase_rad")?.unwrap_or(0.0),
    );
    let feedback = FeedbackConfig::new(
        hz(raw.get_f64("feedback", "gain_a0_hz")?.unwrap_or(0.0)),
        match raw.get_str("feedback", "phase") {
            Some(ref s) if s == "optimum" => optomech::closed_form::optimum_phase(&params),
            Some(s) => s
                .parse()
                .map_err(|e| ConfigError(format!("[feedback] phase: {e}")))?,
            None => optomech::closed_form::optimum_phase(&params),
        },
        hz(raw.get_f64("feedback", "filter_bandwidth_hz")?.unwrap_or(0.0)),
    );
    let seed = seed_override.or(raw.get_u64("experiment", "seed")?).unwrap_or(0);

    Ok(RunConfig { kind, params, tones, kerr, feedback, seed, grid_points: None, raw })
}

fn default_params(raw: &RawConfig) -> Result<SystemParams> {
    // placeholder device for spectrum-only fits; consumed keys still count
    let _ = raw;
    Ok(SystemParams {
        omega_c: hz(4.554e9),
        omega_m: hz(707.2e3),
        gamma: hz(9e-3),
        kappa_i: hz(340e3),
        kappa_e: hz(1.16e6),
        n_m_thermal: 0.0,
        n_c_thermal: 0.0,
        n_add: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_hard_errors() {
        let raw = RawConfig::parse(
            "[system]\nomega_c_hz = 4e9\nomega_m_hz = 7e5\ngamma_hz = 0.01\n\
             kappa_i_hz = 3e5\nkappa_e_hz = 1e6\nn_m_thermal = 100\n\
             [experiment]\nkind = spectrum\ntypo_key = 7\n",
        )
        .unwrap();
        let cfg = resolve(raw, None).unwrap();
        let err = cfg.raw.finish().unwrap_err();
        assert!(err.0.contains("typo_key"), "{}", err.0);
    }

    #[test]
    fn missing_required_keys_are_listed() {
        let raw = RawConfig::parse("[experiment]\nkind = spectrum\n").unwrap();
        let err = resolve(raw, None).unwrap_err();
        assert!(err.0.contains("omega_m_hz"), "{}", err.0);
    }

    #[test]
    fn temperature_converts_to_occupancy() {
        let raw = RawConfig::parse(
            "[system]\nomega_c_hz = 4.554e9\nomega_m_hz = 707.2e3\ngamma_hz = 9e-3\n\
             kappa_i_hz = 340e3\nkappa_e_hz = 1.16e6\ntemperature_mk = 20\n\
             [experiment]\nkind = spectrum\n",
        )
        .unwrap();
        let cfg = resolve(raw, None).unwrap();
        assert!((cfg.params.n_m_thermal - 588.771).abs() < 0.01);
    }
}
