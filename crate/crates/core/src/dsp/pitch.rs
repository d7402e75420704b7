//! Normalized cross-correlation pitch tracker.
//!
//! For each analysis frame starting at `i·step`, the correlation window of
//! `1/f0_min` seconds is compared with itself shifted by every lag between
//! `sr/f0_max` and `sr/f0_min`:
//!
//! ```text
//! φ(k) = Σ x[n]·x[n+k] / sqrt(Σ x[n]² · Σ x[n+k]²)
//! ```
//!
//! The reported period is the shortest interior local maximum reaching 90%
//! of the global maximum, refined by parabolic interpolation. Frames whose
//! maximum falls below the voicing threshold are unvoiced with f0 = 0.

use std::io::Write;
use std::path::Path;

use super::DspError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchConfig {
    pub sample_rate: u32,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Seconds between analysis frames.
    pub step: f64,
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            f0_min: 40.0,
            f0_max: 500.0,
            step: 0.010,
            voicing_threshold: 0.3,
        }
    }
}

impl PitchConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max < nyquist) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 < f0_min < f0_max < {nyquist}"
            )));
        }
        if !(self.step > 0.0) {
            return Err(DspError::InvalidConfig("pitch step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PitchContour {
    pub times: Vec<f64>,
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, v)| **v)
            .map(|(f, _)| *f)
    }
}

pub fn estimate_pitch(samples: &[f64], cfg: &PitchConfig) -> Result<PitchContour, DspError> {
    cfg.validate()?;
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / cfg.f0_max).floor().max(1.0) as usize;
    let max_lag = (sr / cfg.f0_min).ceil() as usize;
    let win = max_lag;
    let step = ((cfg.step * sr).round() as usize).max(1);
    let span = win + max_lag + 1;

    let mut contour = PitchContour::default();
    if samples.len() < span {
        return Ok(contour);
    }
    let n_frames = 1 + (samples.len() - span) / step;
    let mut phi = vec![0.0; max_lag + 2];
    for i in 0..n_frames {
        let start = i * step;
        let frame = &samples[start..start + span];
        let e0: f64 = frame[..win].iter().map(|v| v * v).sum();
        // running energy of the shifted window
        let mut ek: f64 = frame[min_lag - 1..min_lag - 1 + win].iter().map(|v| v * v).sum();
        let mut best = 0.0f64;
        for k in min_lag - 1..=max_lag + 1 {
            if k > min_lag - 1 {
                ek += frame[k + win - 1] * frame[k + win - 1] - frame[k - 1] * frame[k - 1];
            }
            let denom = (e0 * ek.max(0.0)).sqrt();
            let r = if denom > 1e-12 {
                let cross: f64 = frame[..win]
                    .iter()
                    .zip(&frame[k..k + win])
                    .map(|(a, b)| a * b)
                    .sum();
                cross / denom
            } else {
                0.0
            };
            phi[k] = r;
            if (min_lag..=max_lag).contains(&k) {
                best = best.max(r);
            }
        }

        contour.times.push(start as f64 / sr);
        let pick = if best >= cfg.voicing_threshold {
            (min_lag..=max_lag).find(|&k| {
                phi[k] >= 0.9 * best && phi[k] >= phi[k - 1] && phi[k] >= phi[k + 1]
            })
        } else {
            None
        };
        match pick {
            Some(k) => {
                let (a, b, c) = (phi[k - 1], phi[k], phi[k + 1]);
                let curvature = a - 2.0 * b + c;
                let delta = if curvature.abs() > 1e-12 {
                    (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                contour.f0.push(sr / (k as f64 + delta));
                contour.voiced.push(true);
            }
            None => {
                contour.f0.push(0.0);
                contour.voiced.push(false);
            }
        }
    }
    Ok(contour)
}

/// CSV `time_sec,f0_hz,voiced` with six decimals.
pub fn write_pitch_csv(contour: &PitchContour, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "time_sec,f0_hz,voiced")?;
    for ((t, f), v) in contour.times.iter().zip(&contour.f0).zip(&contour.voiced) {
        writeln!(out, "{t:.6},{f:.6},{}", u8::from(*v))?;
    }
    Ok(())
}

pub fn save_pitch_csv(contour: &PitchContour, path: &Path) -> Result<(), DspError> {
    let f = std::fs::File::create(path)?;
    write_pitch_csv(contour, std::io::BufWriter::new(f))?;
    Ok(())
}
