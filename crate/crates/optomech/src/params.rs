//! Physical parameter types and unit conventions.
//!
//! Every rate and frequency held by these types is angular (rad/s).
//! Configuration layers convert from ordinary frequencies (Hz) at the
//! boundary via [`hz`] / [`to_hz`]; occupancies and noise quanta are
//! dimensionless. All types are immutable value objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J s (2019 SI).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (2019 SI, exact).
pub const K_B: f64 = 1.380_649e-23;

/// Convert an ordinary frequency in Hz to angular rad/s.
#[inline]
pub fn hz(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

/// Convert an angular frequency in rad/s back to Hz.
#[inline]
pub fn to_hz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI)
}

/// Static device constants: cavity, mechanics, baths, amplifier noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity resonance, rad/s.
    pub omega_c: f64,
    /// Mechanical resonance, rad/s.
    pub omega_m: f64,
    /// Intrinsic mechanical energy decay rate, rad/s.
    pub gamma: f64,
    /// Internal cavity loss rate, rad/s.
    pub kappa_i: f64,
    /// External cavity coupling rate, rad/s.
    pub kappa_e: f64,
    /// Mechanical bath occupancy.
    pub n_m_thermal: f64,
    /// Cavity thermal occupancy (intracavity, as read off the output
    /// noise Lorentzian).
    pub n_c_thermal: f64,
    /// System added noise quanta referred to the sample plane.
    pub n_add: f64,
}

impl SystemParams {
    /// Total cavity linewidth kappa = kappa_i + kappa_e, rad/s.
    #[inline]
    pub fn kappa(&self) -> f64 {
        self.kappa_i + self.kappa_e
    }

    /// kappa^2 + 4 omega_m^2, the recurring sideband-resolution scale.
    #[inline]
    pub fn kappa2_4wm2(&self) -> f64 {
        let k = self.kappa();
        k * k + 4.0 * self.omega_m * self.omega_m
    }

    /// Validate all invariants; empty report means the set is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                report.violations.push(msg.to_string());
            }
        };
        check(self.omega_c > 0.0, "omega_c must be positive");
        check(self.omega_m > 0.0, "omega_m must be positive");
        check(self.gamma > 0.0, "gamma must be positive");
        check(self.kappa_i > 0.0, "kappa_i must be positive");
        check(self.kappa_e > 0.0, "kappa_e must be positive");
        check(self.n_m_thermal >= 0.0, "n_m_thermal must be >= 0");
        check(self.n_c_thermal >= 0.0, "n_c_thermal must be >= 0");
        check(self.n_add >= 0.0, "n_add must be >= 0");
        check(
            self.omega_m < self.omega_c || self.omega_c <= 0.0,
            "omega_m must be below omega_c",
        );
        report
    }

    /// Validate and convert to a hard error for solver entry points.
    pub fn checked(&self) -> Result<&Self> {
        let report = self.validate();
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidParams(report.violations.join("; ")))
        }
    }
}

/// Result of [`SystemParams::validate`]: the list of violated invariants.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// One coherent drive: detuning from the cavity and effective coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Detuning from omega_c, rad/s.
    pub detuning: f64,
    /// Effective coupling G = sqrt(n_c) g0, rad/s.
    pub g_eff: f64,
}

impl Tone {
    pub fn new(detuning: f64, g_eff: f64) -> Self {
        Tone { detuning, g_eff }
    }

    /// A switched-off tone.
    pub fn off() -> Self {
        Tone { detuning: 0.0, g_eff: 0.0 }
    }
}

/// The probe/thermometry tone pair. The spacing delta = omega_t - omega_p
/// is derived from the detunings and kept stored for cross-checking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSet {
    pub probe: Tone,
    pub thermometry: Tone,
    /// delta = thermometry.detuning - probe.detuning, rad/s.
    pub delta: f64,
}

impl ToneSet {
    pub fn new(probe: Tone, thermometry: Tone) -> Self {
        ToneSet {
            probe,
            thermometry,
            delta: thermometry.detuning - probe.detuning,
        }
    }

    /// Check the stored spacing against the detunings (exact equality;
    /// both sides are computed the same way).
    pub fn is_consistent(&self) -> bool {
        self.delta == self.thermometry.detuning - self.probe.detuning
    }
}

/// Feedback loop settings: gain, phase realized at omega_m, and the
/// band-pass width of the processing chain (time-domain module only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Real amplitude gain A0 >= 0, rad/s (measured quadrature to force).
    pub gain_a0: f64,
    /// Phase shift applied at omega_m, radians.
    pub phase_phi: f64,
    /// Band-pass width around omega_m, rad/s.
    pub filter_bandwidth: f64,
}

impl FeedbackConfig {
    pub fn new(gain_a0: f64, phase_phi: f64, filter_bandwidth: f64) -> Self {
        FeedbackConfig { gain_a0, phase_phi, filter_bandwidth }
    }

    /// Loop switched off.
    pub fn off() -> Self {
        FeedbackConfig { gain_a0: 0.0, phase_phi: 0.0, filter_bandwidth: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.gain_a0 >= 0.0 && self.filter_bandwidth >= 0.0
    }
}

/// Slow modulation of the cavity frequency at the tone spacing, with
/// effective amplitude k_eff = 8 K A_p A_t. The sign is absorbed into the
/// phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrModulation {
    /// Effective Kerr constant, rad/s, >= 0.
    pub k_eff: f64,
    /// Relative phase of the modulation, radians.
    pub phase: f64,
}

impl KerrModulation {
    pub fn new(k_eff: f64, phase: f64) -> Self {
        KerrModulation { k_eff, phase }
    }

    pub fn off() -> Self {
        KerrModulation { k_eff: 0.0, phase: 0.0 }
    }
}

/// Bose occupancy 1/(exp(h_bar omega / k_B T) - 1); zero at T = 0.
pub fn thermal_occupancy(temperature_k: f64, omega: f64) -> f64 {
    assert!(temperature_k >= 0.0, "temperature must be >= 0");
    assert!(omega > 0.0, "omega must be positive");
    if temperature_k == 0.0 {
        return 0.0;
    }
    let x = HBAR * omega / (K_B * temperature_k);
    // exp_m1 keeps precision in the high-temperature limit x << 1
    1.0 / x.exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn device() -> SystemParams {
        SystemParams {
            omega_c: hz(4.554e9),
            omega_m: hz(707.2e3),
            gamma: hz(9e-3),
            kappa_i: hz(340e3),
            kappa_e: hz(1.16e6),
            n_m_thermal: 588.77,
            n_c_thermal: 0.42,
            n_add: 2.5,
        }
    }

    #[test]
    fn derived_kappa_matches_device_value() {
        let p = device();
        assert_relative_eq!(to_hz(p.kappa()), 1.5e6, max_relative = 1e-12);
        assert!(p.validate().is_valid());
    }

    #[test]
    fn zero_gamma_is_invalid() {
        let mut p = device();
        p.gamma = 0.0;
        let report = p.validate();
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| v.contains("gamma")));
    }

    #[test]
    fn negative_added_noise_is_invalid() {
        let mut p = device();
        p.n_add = -1.0;
        assert!(!p.validate().is_valid());
    }

    #[test]
    fn hz_round_trip_is_exact() {
        for &f in &[9e-3, 707.2e3, 1.16e6, 4.554e9] {
            assert_relative_eq!(to_hz(hz(f)), f, max_relative = 1e-15);
        }
    }

    #[test]
    fn bose_factor_against_direct_evaluation() {
        let omega = hz(707.2e3);
        // frozen from arbitrary-precision evaluation of the Bose expression
        assert_relative_eq!(
            thermal_occupancy(0.020, omega),
            588.77104458778431,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            thermal_occupancy(0.050, omega),
            1472.6773144923161,
            max_relative = 1e-12
        );
        assert_eq!(thermal_occupancy(0.0, omega), 0.0);
    }

    #[test]
    fn bose_factor_monotonic() {
        let omega = hz(707.2e3);
        assert!(thermal_occupancy(0.030, omega) > thermal_occupancy(0.020, omega));
        assert!(thermal_occupancy(0.020, hz(800e3)) < thermal_occupancy(0.020, omega));
    }

    #[test]
    fn tone_set_spacing_is_derived() {
        let ts = ToneSet::new(Tone::new(0.0, hz(6.32e3)), Tone::new(hz(-48e3), hz(1.65e3)));
        assert_eq!(ts.delta, hz(-48e3));
        assert!(ts.is_consistent());
    }
}
