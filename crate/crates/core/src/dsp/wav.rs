//! 16-bit mono PCM WAV input/output.

use std::path::Path;

use super::DspError;

pub const SAMPLE_RATE: u32 = 16_000;

/// Reads a 16 kHz mono PCM16 file; samples are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Vec<f64>, DspError> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::UnsupportedFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(DspError::UnsupportedFormat(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DspError::UnsupportedFormat(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            path.display(),
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| Ok(s? as f64 / 32768.0))
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q)?;
    }
    w.finalize()?;
    Ok(())
}
