//! Closed-form feedback-cooling expressions: damping rates, the occupancy
//! budget, sideband-asymmetry thermometry, cavity output noise, and the
//! dynamical-backaction (sideband cooling) rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{FeedbackConfig, SystemParams, Tone};

/// Maximum feedback-induced damping, reached at the optimum phase:
/// gamma_fb = 4 G_p A0 / sqrt(kappa^2 + 4 omega_m^2).
pub fn gamma_fb(params: &SystemParams, probe: &Tone, fb: &FeedbackConfig) -> f64 {
    4.0 * probe.g_eff * fb.gain_a0 / params.kappa2_4wm2().sqrt()
}

/// Effective damping with its stability status. Anti-damped results are
/// returned flagged, never clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDamping {
    /// gamma_eff, rad/s (may be <= 0 when the loop anti-damps).
    pub rate: f64,
    pub stable: bool,
}

/// Effective mechanical damping under feedback:
/// gamma_eff = gamma + gamma_fb (kappa sin phi - 2 omega_m cos phi)
///                              / sqrt(kappa^2 + 4 omega_m^2).
pub fn gamma_eff(params: &SystemParams, probe: &Tone, fb: &FeedbackConfig) -> EffectiveDamping {
    let root = params.kappa2_4wm2().sqrt();
    let phase_factor =
        (params.kappa() * fb.phase_phi.sin() - 2.0 * params.omega_m * fb.phase_phi.cos()) / root;
    let rate = params.gamma + gamma_fb(params, probe, fb) * phase_factor;
    EffectiveDamping { rate, stable: rate > 0.0 }
}

/// The phase maximizing the feedback damping: sin phi = kappa / r,
/// cos phi = -2 omega_m / r with r = sqrt(kappa^2 + 4 omega_m^2).
pub fn optimum_phase(params: &SystemParams) -> f64 {
    f64::atan2(params.kappa(), -2.0 * params.omega_m)
}

/// Contributions to the feedback-cooled occupancy,
/// n_m + 1/2 = n_T + n_ba + n_fb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyBudget {
    /// Residual thermal contribution.
    pub n_t: f64,
    /// Quantum plus cavity-noise backaction contribution.
    pub n_ba: f64,
    /// Feedback noise-injection contribution.
    pub n_fb: f64,
    /// Final occupancy n_m = n_T + n_ba + n_fb - 1/2.
    pub n_m: f64,
    /// Effective damping rate, rad/s.
    pub gamma_eff: f64,
    /// Effective cooperativity 4 G_p^2 / (kappa gamma_eff).
    pub c_eff: f64,
}

/// Evaluate the full occupancy budget at the optimum-phase-or-configured
/// feedback point. Errs with [`Error::Unstable`] when gamma_eff <= 0.
pub fn occupancy_budget(
    params: &SystemParams,
    probe: &Tone,
    fb: &FeedbackConfig,
) -> Result<OccupancyBudget> {
    params.checked()?;
    let damping = gamma_eff(params, probe, fb);
    if !damping.stable {
        return Err(Error::Unstable { gamma_eff: damping.rate });
    }
    let g_eff = damping.rate;
    let kappa = params.kappa();
    let k2w2 = params.kappa2_4wm2();

    let n_t = params.gamma / g_eff * (params.n_m_thermal + 0.5);
    let c_eff = 4.0 * probe.g_eff * probe.g_eff / (kappa * g_eff);
    let n_ba = c_eff * kappa * kappa / k2w2 * (1.0 + 2.0 * params.n_c_thermal);
    let n_fb = fb.gain_a0 * fb.gain_a0 / (2.0 * params.kappa_e * g_eff)
        * (params.n_add + 0.5 + 8.0 * kappa * params.kappa_e / k2w2 * params.n_c_thermal);

    Ok(OccupancyBudget {
        n_t,
        n_ba,
        n_fb,
        n_m: n_t + n_ba + n_fb - 0.5,
        gamma_eff: g_eff,
        c_eff,
    })
}

/// Phonon number from sideband weights, n_m = A+ / (A- - A+).
/// Errs when A- <= A+ (squashing/Kerr-dominated data).
pub fn occupancy_from_asymmetry(a_plus: f64, a_minus: f64) -> Result<f64> {
    if a_plus < 0.0 || a_minus <= a_plus {
        return Err(Error::NonPhysicalWeights { a_plus, a_minus });
    }
    Ok(a_plus / (a_minus - a_plus))
}

/// Sideband asymmetry eta = (A- - A+) / A-. May be negative (squashing).
pub fn asymmetry_eta(a_plus: f64, a_minus: f64) -> f64 {
    assert!(a_minus > 0.0, "a_minus must be positive");
    (a_minus - a_plus) / a_minus
}

/// Output noise of the hot cavity alone, in quanta:
/// kappa_e kappa n_c^T / ((omega - omega_c)^2 + (kappa/2)^2).
pub fn cavity_noise_psd(params: &SystemParams, omega: f64) -> f64 {
    let kappa = params.kappa();
    let det = omega - params.omega_c;
    params.kappa_e * kappa * params.n_c_thermal / (det * det + 0.25 * kappa * kappa)
}

/// Dynamical-backaction damping of a single detuned tone:
/// gamma_opt = G^2 kappa [1/((kappa/2)^2 + (Delta + omega_m)^2)
///                      - 1/((kappa/2)^2 + (Delta - omega_m)^2)].
/// Positive for red detuning (cooling), negative for blue.
pub fn sideband_cooling_rate(params: &SystemParams, tone: &Tone) -> f64 {
    let half_k2 = 0.25 * params.kappa() * params.kappa();
    let plus = tone.detuning + params.omega_m;
    let minus = tone.detuning - params.omega_m;
    tone.g_eff * tone.g_eff
        * params.kappa()
        * (1.0 / (half_k2 + plus * plus) - 1.0 / (half_k2 + minus * minus))
}
