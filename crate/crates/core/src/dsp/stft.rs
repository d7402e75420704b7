use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, FrameConfig};

/// T×(fft_size/2+1) power spectrogram.
#[derive(Clone, Debug)]
pub struct PowerSpectrogram {
    pub config: FrameConfig,
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Pre-emphasis over the whole signal, then Hamming-windowed frames
/// zero-padded to `fft_size`, power = |X_k|² for k in 0..=fft_size/2.
pub fn stft_power(samples: &[f64], cfg: &FrameConfig) -> Result<PowerSpectrogram, DspError> {
    cfg.validate()?;
    let win = cfg.window_samples();
    if samples.len() < win {
        return Err(DspError::TooShort {
            samples: samples.len(),
            window: win,
        });
    }
    let hop = cfg.hop_samples();
    let n_frames = cfg.frame_count(samples.len());
    let n_bins = cfg.fft_size / 2 + 1;

    let mut emphasized = Vec::with_capacity(samples.len());
    let mut prev = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        emphasized.push(if i == 0 { x } else { x - cfg.preemphasis * prev });
        prev = x;
    }

    let window = hamming(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * hop;
        for (k, slot) in buf.iter_mut().enumerate() {
            let v = if k < win {
                emphasized[start + k] * window[k]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrogram {
        config: *cfg,
        n_frames,
        n_bins,
        data,
    })
}
