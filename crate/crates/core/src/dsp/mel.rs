use super::{feature_fingerprint, DspError, FeatureSequence, PowerSpectrogram};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub n_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_filters: 23,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.n_filters == 0 {
            return Err(DspError::InvalidConfig("n_filters must be at least 1".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(DspError::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centres equally spaced in mel, as
/// `n_filters` rows of `fft_size/2 + 1` weights.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32, fft_size: usize) -> Vec<Vec<f64>> {
    let n_bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_filters + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    (0..cfg.n_filters)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (centre - left);
                    let down = (right - f) / (right - centre);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// ln(max(filter energy, floor)) per frame and filter.
pub fn logmel(spec: &PowerSpectrogram, cfg: &MelConfig) -> Result<FeatureSequence, DspError> {
    let frame = &spec.config;
    cfg.validate(frame.sample_rate)?;
    if spec.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DspError::InvalidConfig(
            "power spectrogram must be finite and nonnegative".into(),
        ));
    }
    let bank = mel_filterbank(cfg, frame.sample_rate, frame.fft_size);
    let mut data = Vec::with_capacity(spec.n_frames * cfg.n_filters);
    for t in 0..spec.n_frames {
        let p = spec.frame(t);
        for filt in &bank {
            let e: f64 = filt.iter().zip(p).map(|(w, v)| w * v).sum();
            data.push(e.max(cfg.log_floor).ln());
        }
    }
    FeatureSequence::new(
        data,
        cfg.n_filters,
        0.0,
        frame.hop_samples() as f64 / frame.sample_rate as f64,
        feature_fingerprint(frame, cfg),
    )
}
