//! Averaged-periodogram (Welch) spectral estimation.
//!
//! Normalization: the integral of the returned PSD over frequency in Hz
//! (equivalently d omega / 2 pi) equals the signal variance.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::spectrum::{Frame, Spectrum};

/// One-sided Welch PSD of a real signal sampled at `dt` seconds.
///
/// Hann-windowed segments of `segment_len` samples with fractional
/// `overlap` in [0, 1). Requires at least 8 segments. Frequencies in the
/// returned [`Spectrum`] are angular (rad/s); PSD units are
/// (signal unit)^2 per Hz, so that the trapezoidal integral over
/// d omega / 2 pi reproduces the variance.
pub fn estimate_psd(signal: &[f64], dt: f64, segment_len: usize, overlap: f64) -> Result<Spectrum> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput("overlap must be in [0, 1)".into()));
    }
    if segment_len < 8 {
        return Err(Error::InvalidInput("segment_len must be >= 8".into()));
    }
    let hop = ((segment_len as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let n_segments = if signal.len() < segment_len {
        0
    } else {
        (signal.len() - segment_len) / hop + 1
    };
    if n_segments < 8 {
        return Err(Error::InvalidInput(format!(
            "trajectory supports only {n_segments} segments of {segment_len} (need >= 8)"
        )));
    }

    let window = hann(segment_len);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);

    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![C64::new(0.0, 0.0); segment_len];
    for s in 0..n_segments {
        let seg = &signal[s * hop..s * hop + segment_len];
        for (b, (&x, &w)) in buf.iter_mut().zip(seg.iter().zip(window.iter())) {
            *b = C64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }

    // one-sided: double all interior bins; dt / window_power makes the
    // density per Hz
    let scale = dt / (window_power * n_segments as f64);
    let fs = 1.0 / dt;
    let mut psd = vec![0.0; n_bins];
    for (k, p) in psd.iter_mut().enumerate() {
        let one_sided = if k == 0 || (segment_len % 2 == 0 && k == n_bins - 1) {
            1.0
        } else {
            2.0
        };
        *p = acc[k] * scale * one_sided;
    }
    let freqs: Vec<f64> = (0..n_bins)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 * fs / segment_len as f64)
        .collect();
    Spectrum::new(freqs, psd, Frame::LabFrame)
}

/// Two-sided Welch PSD of a complex signal (demodulated quadrature pair).
/// Frequencies run from -Nyquist to +Nyquist (angular); the integral over
/// d omega / 2 pi equals the mean square of the signal.
pub fn estimate_psd_complex(
    signal: &[C64],
    dt: f64,
    segment_len: usize,
    overlap: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput("overlap must be in [0, 1)".into()));
    }
    let hop = ((segment_len as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let n_segments = if signal.len() < segment_len {
        0
    } else {
        (signal.len() - segment_len) / hop + 1
    };
    if n_segments < 8 {
        return Err(Error::InvalidInput(format!(
            "trajectory supports only {n_segments} segments of {segment_len} (need >= 8)"
        )));
    }
    let window = hann(segment_len);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(segment_len);

    let mut acc = vec![0.0; segment_len];
    let mut buf = vec![C64::new(0.0, 0.0); segment_len];
    for s in 0..n_segments {
        let seg = &signal[s * hop..s * hop + segment_len];
        for (b, (&z, &w)) in buf.iter_mut().zip(seg.iter().zip(window.iter())) {
            *b = z * w;
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }
    let scale = dt / (window_power * n_segments as f64);
    let fs = 1.0 / dt;
    // reorder to [-Nyq, +Nyq)
    let half = segment_len / 2;
    let mut freqs = Vec::with_capacity(segment_len);
    let mut psd = Vec::with_capacity(segment_len);
    for k in 0..segment_len {
        let bin = (k + half) % segment_len;
        let f = (k as f64 - half as f64) * fs / segment_len as f64;
        freqs.push(2.0 * std::f64::consts::PI * f);
        psd.push(acc[bin] * scale);
    }
    Ok((freqs, psd))
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let x = std::f64::consts::PI * k as f64 / n as f64;
            x.sin() * x.sin()
        })
        .collect()
}

/// Trapezoidal integral of a PSD over d omega / 2 pi (i.e. over Hz).
pub fn integrate_psd(freqs: &[f64], psd: &[f64]) -> f64 {
    freqs
        .windows(2)
        .zip(psd.windows(2))
        .map(|(f, p)| 0.5 * (p[0] + p[1]) * (f[1] - f[0]))
        .sum::<f64>()
        / (2.0 * std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn white_noise_is_flat_at_the_known_level() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let dt = 1e-3;
        let n = 1 << 17;
        let x: Vec<f64> = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let s = estimate_psd(&x, dt, 1024, 0.5).unwrap(); // ~250 segments
        // two-sided density sigma^2 dt -> one-sided 2 sigma^2 dt
        let expect = 2.0 * dt;
        let mid = &s.psd[10..s.psd.len() - 10];
        let mean = mid.iter().sum::<f64>() / mid.len() as f64;
        assert_relative_eq!(mean, expect, max_relative = 0.05);
        // integral equals the variance
        let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert_relative_eq!(integrate_psd(&s.frequencies, &s.psd), var, max_relative = 0.02);
    }

    #[test]
    fn sinusoid_power_is_half_amplitude_squared() {
        let dt = 1e-4;
        let n = 1 << 16;
        let amp = 3.2;
        let f0 = 731.0; // Hz, on-bin for 2048-sample segments at 10 kHz? not exactly; fine
        let x: Vec<f64> = (0..n)
            .map(|k| amp * (2.0 * std::f64::consts::PI * f0 * k as f64 * dt).sin())
            .collect();
        let s = estimate_psd(&x, dt, 2048, 0.5).unwrap();
        assert_relative_eq!(
            integrate_psd(&s.frequencies, &s.psd),
            amp * amp / 2.0,
            max_relative = 0.02
        );
        // peak lands at the drive frequency
        let k_max = s
            .psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let f_peak = s.frequencies[k_max] / (2.0 * std::f64::consts::PI);
        assert!((f_peak - f0).abs() < 2.0 * (1.0 / dt) / 2048.0);
    }

    #[test]
    fn too_few_segments_is_an_error() {
        let x = vec![0.0; 1000];
        assert!(estimate_psd(&x, 1e-3, 512, 0.0).is_err());
    }

    #[test]
    fn complex_psd_integrates_to_mean_square() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let dt = 1e-3;
        let n = 1 << 15;
        let z: Vec<C64> = (0..n)
            .map(|_| {
                let re: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                let im: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                C64::new(re, im)
            })
            .collect();
        let (freqs, psd) = estimate_psd_complex(&z, dt, 1024, 0.5).unwrap();
        let ms = z.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert_relative_eq!(integrate_psd(&freqs, &psd), ms, max_relative = 0.03);
    }
}
