//! Simulation and inference engine for a feedback-cooled cavity
//! electromechanical system.
//!
//! The crate computes predicted output spectra and phonon occupancies from
//! first principles along three routes (closed-form budget, frequency-
//! domain Floquet solver, stochastic time-domain loop) and inverts measured
//! or synthetic spectra back to occupancy via sideband-asymmetry
//! thermometry with cavity-noise and Kerr corrections.

pub mod closed_form;
pub mod error;
pub mod floquet;
pub mod inference;
pub mod lm;
pub mod lorentzian;
pub mod params;
pub mod sim;
pub mod spectrum;
pub mod welch;

pub use error::{Error, Result};
pub use params::{
    hz, thermal_occupancy, to_hz, FeedbackConfig, KerrModulation, SystemParams, Tone, ToneSet,
};
pub use spectrum::{Frame, Spectrum};
