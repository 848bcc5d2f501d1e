//! Frequency grid plus PSD in quanta units, with frame metadata and the
//! CSV/JSON exchange formats shared by the solvers and the fitters.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{hz, to_hz};

/// Reference frame of the frequency axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Absolute lab-frame frequencies.
    LabFrame,
    /// Offsets from the probe tone.
    ProbeRotatingFrame,
}

/// A sampled power spectral density in quanta (vacuum plus amplifier floor
/// sits at n_add + 1/2). Frequencies are angular, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Analysis frequencies, rad/s, strictly increasing.
    pub frequencies: Vec<f64>,
    /// PSD per grid point, quanta, same length as `frequencies`.
    pub psd: Vec<f64>,
    pub frame: Frame,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, psd: Vec<f64>, frame: Frame) -> Result<Self> {
        if frequencies.len() != psd.len() {
            return Err(Error::InvalidInput(format!(
                "frequency/psd length mismatch: {} vs {}",
                frequencies.len(),
                psd.len()
            )));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if psd.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput("psd must be finite and >= 0".into()));
        }
        Ok(Spectrum { frequencies, psd, frame })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Trapezoidal integral of (psd - baseline(omega)) over [lo, hi], in
    /// quanta * rad/s. Points outside the range are ignored.
    pub fn integrate_above<F>(&self, lo: f64, hi: f64, baseline: F) -> f64
    where
        F: Fn(f64) -> f64,
    {
        let mut acc = 0.0;
        for w in self
            .frequencies
            .iter()
            .zip(self.psd.iter())
            .filter(|(&f, _)| f >= lo && f <= hi)
            .map(|(&f, &p)| (f, p - baseline(f)))
            .collect::<Vec<_>>()
            .windows(2)
        {
            let (f0, y0) = w[0];
            let (f1, y1) = w[1];
            acc += 0.5 * (y0 + y1) * (f1 - f0);
        }
        acc
    }

    /// Index range covering [lo, hi] (inclusive ends), or an error when
    /// fewer than two points fall inside.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Result<std::ops::Range<usize>> {
        let start = self.frequencies.partition_point(|&f| f < lo);
        let end = self.frequencies.partition_point(|&f| f <= hi);
        if end.saturating_sub(start) < 2 {
            return Err(Error::InvalidInput(format!(
                "window [{lo:.6e}, {hi:.6e}] rad/s covers {} grid points",
                end.saturating_sub(start)
            )));
        }
        Ok(start..end)
    }

    /// Write the two-column CSV (frequency_hz, psd_quanta) at full
    /// round-trip precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "frequency_hz,psd_quanta")?;
        for (&f, &p) in self.frequencies.iter().zip(self.psd.iter()) {
            writeln!(out, "{:.16e},{:.16e}", to_hz(f), p)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read the two-column CSV produced by [`Spectrum::write_csv`] (or by
    /// instruments following the same schema).
    pub fn read_csv<R: std::io::Read>(reader: R, frame: Frame) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty spectrum file".into()))??;
        if header.trim() != "frequency_hz,psd_quanta" {
            return Err(Error::Parse(format!(
                "unexpected header `{}` (want `frequency_hz,psd_quanta`)",
                header.trim()
            )));
        }
        let mut frequencies = Vec::new();
        let mut psd = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let f: f64 = parse_field(cols.next(), k + 2, "frequency_hz")?;
            let p: f64 = parse_field(cols.next(), k + 2, "psd_quanta")?;
            if cols.next().is_some() {
                return Err(Error::Parse(format!("line {}: too many columns", k + 2)));
            }
            frequencies.push(hz(f));
            psd.push(p);
        }
        Spectrum::new(frequencies, psd, frame)
    }

    pub fn load_csv(path: &Path, frame: Frame) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, frame)
    }

    /// JSON document with metadata (frame, floor, parameter hash).
    pub fn to_json(&self, floor: f64, params_hash: &str) -> String {
        let doc = SpectrumJson {
            schema_version: 1,
            frame: self.frame,
            floor_quanta: floor,
            params_hash: params_hash.to_string(),
            frequency_hz: self.frequencies.iter().map(|&f| to_hz(f)).collect(),
            psd_quanta: self.psd.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("spectrum serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, f64)> {
        let doc: SpectrumJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let s = Spectrum::new(
            doc.frequency_hz.into_iter().map(hz).collect(),
            doc.psd_quanta,
            doc.frame,
        )?;
        Ok((s, doc.floor_quanta))
    }
}

fn parse_field(field: Option<&str>, line: usize, name: &str) -> Result<f64> {
    field
        .ok_or_else(|| Error::Parse(format!("line {line}: missing column {name}")))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("line {line}: bad {name}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct SpectrumJson {
    schema_version: u32,
    frame: Frame,
    floor_quanta: f64,
    params_hash: String,
    frequency_hz: Vec<f64>,
    psd_quanta: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let s = Spectrum::new(
            vec![1.0, 2.5, 3.7e6, 4.554e9 * 2.0 * std::f64::consts::PI],
            vec![0.5, 3.0000000001, 1.2992, 7.25],
            Frame::LabFrame,
        )
        .unwrap();
        let text = s.to_csv_string();
        let back = Spectrum::read_csv(text.as_bytes(), Frame::LabFrame).unwrap();
        assert_eq!(s.psd, back.psd);
        for (a, b) in s.frequencies.iter().zip(back.frequencies.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
        // a second serialization of the round-tripped spectrum is identical
        assert_eq!(text, back.to_csv_string());
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(Spectrum::new(vec![1.0, 1.0], vec![0.0, 0.0], Frame::LabFrame).is_err());
        assert!(Spectrum::new(vec![2.0, 1.0], vec![0.0, 0.0], Frame::LabFrame).is_err());
    }

    #[test]
    fn integrate_above_flat_baseline() {
        let n = 2001;
        let freqs: Vec<f64> = (0..n).map(|k| -10.0 + 20.0 * k as f64 / (n - 1) as f64).collect();
        // unit-area Lorentzian (fwhm 1) on a floor of 3
        let psd: Vec<f64> = freqs
            .iter()
            .map(|&f| 3.0 + (0.5 / std::f64::consts::PI) / (f * f + 0.25))
            .collect();
        let s = Spectrum::new(freqs, psd, Frame::ProbeRotatingFrame).unwrap();
        let area = s.integrate_above(-10.0, 10.0, |_| 3.0);
        // tails beyond +-10 fwhm carry ~3.2% of the area
        let coverage = 2.0 / std::f64::consts::PI * (20.0f64).atan();
        assert_relative_eq!(area, coverage, max_relative = 1e-4);
    }

    #[test]
    fn json_round_trip_keeps_metadata() {
        let s = Spectrum::new(vec![1.0, 2.0], vec![3.0, 3.5], Frame::ProbeRotatingFrame).unwrap();
        let text = s.to_json(3.0, "abc123");
        let (back, floor) = Spectrum::from_json(&text).unwrap();
        assert_eq!(back.frame, Frame::ProbeRotatingFrame);
        assert_eq!(floor, 3.0);
        assert_eq!(back.psd, s.psd);
    }
}
