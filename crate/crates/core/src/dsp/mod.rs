//! Audio front-end: framing, power spectra, log-Mel features, and pitch.

mod mel;
mod pitch;
mod stft;
pub mod wav;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use mel::{hz_to_mel, logmel, mel_filterbank, mel_to_hz, MelConfig};
pub use pitch::{estimate_pitch, save_pitch_csv, write_pitch_csv, PitchConfig, PitchContour};
pub use stft::{hamming, stft_power, PowerSpectrogram};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("utterance too short: {samples} samples, need at least {window}")]
    TooShort { samples: usize, window: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Short-time analysis geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameConfig {
    pub sample_rate: u32,
    /// Window length in seconds.
    pub window_len: f64,
    /// Hop between frame starts in seconds.
    pub hop_len: f64,
    pub fft_size: usize,
    pub preemphasis: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 0.025,
            hop_len: 0.010,
            fft_size: 512,
            preemphasis: 0.97,
        }
    }
}

impl FrameConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_len * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_len * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: &str| Err(DspError::InvalidConfig(m.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.hop_len > 0.0) || self.hop_samples() == 0 {
            return bad("hop_len must be positive");
        }
        if self.window_len < self.hop_len {
            return bad("window_len must be at least hop_len");
        }
        if !self.fft_size.is_power_of_two() {
            return bad("fft_size must be a power of two");
        }
        if self.fft_size < self.window_samples() {
            return bad("fft_size must cover the window");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        Ok(())
    }

    /// Number of whole frames that fit in `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        let w = self.window_samples();
        if n < w {
            0
        } else {
            1 + (n - w) / self.hop_samples()
        }
    }
}

/// Stable 64-bit hash of the feature front-end configuration.
pub fn feature_fingerprint(frame: &FrameConfig, mel: &MelConfig) -> u64 {
    let canon = format!(
        "sr={};win={:.6};hop={:.6};fft={};pre={:.6};n={};fmin={:.6};fmax={:.6};floor={:e}",
        frame.sample_rate,
        frame.window_len,
        frame.hop_len,
        frame.fft_size,
        frame.preemphasis,
        mel.n_filters,
        mel.f_min,
        mel.f_max,
        mel.log_floor
    );
    hash64(canon.as_bytes())
}

/// First eight bytes of SHA-256, big-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// T×D log-Mel frames with their start times.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    dim: usize,
    frame_times: Vec<f64>,
    hop: f64,
    fingerprint: u64,
}

impl FeatureSequence {
    /// `data` is row-major T×`dim`; frame `t` starts at `start + t·hop`.
    pub fn new(
        data: Vec<f64>,
        dim: usize,
        start: f64,
        hop: f64,
        fingerprint: u64,
    ) -> Result<Self, DspError> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(DspError::InvalidConfig(format!(
                "feature data of length {} is not a nonempty multiple of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidConfig("non-finite feature value".into()));
        }
        let t = data.len() / dim;
        let frame_times = (0..t).map(|i| start + i as f64 * hop).collect();
        Ok(Self {
            data,
            dim,
            frame_times,
            hop,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn hop(&self) -> f64 {
        self.hop
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Frames `[start, end)`, keeping their original start times.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        assert!(start < end && end <= self.len(), "slice out of range");
        Self {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
            frame_times: self.frame_times[start..end].to_vec(),
            hop: self.hop,
            fingerprint: self.fingerprint,
        }
    }

    /// Time-mean of every feature dimension.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in 0..self.len() {
            for (a, v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// Waveform → log-Mel features with the given front-end.
pub fn featurize(
    samples: &[f64],
    frame: &FrameConfig,
    mel: &MelConfig,
) -> Result<FeatureSequence, DspError> {
    let spec = stft_power(samples, frame)?;
    logmel(&spec, mel)
}
