use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use super::alignment::{cv_class, write_alignment, AlignmentTiers, PhoneInterval, WordInterval};
use super::{write_manifest, Corpus, CorpusError, Emotion, Split, Utterance};
use crate::dsp::wav::{write_wav, SAMPLE_RATE};

/// Where the class-discriminative pattern sits inside each utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CuePlacement {
    Global,
    /// First 40% of the utterance.
    LeftOnly,
    /// Last 40% of the utterance.
    RightOnly,
}

impl CuePlacement {
    pub fn name(self) -> &'static str {
        match self {
            CuePlacement::Global => "global",
            CuePlacement::LeftOnly => "left",
            CuePlacement::RightOnly => "right",
        }
    }

    /// Sample range `[start, end)` carrying the cue.
    pub fn region(self, n: usize) -> (usize, usize) {
        let part = (n as f64 * CUE_SHARE).round() as usize;
        match self {
            CuePlacement::Global => (0, n),
            CuePlacement::LeftOnly => (0, part),
            CuePlacement::RightOnly => (n - part, n),
        }
    }
}

impl FromStr for CuePlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(CuePlacement::Global),
            "left" | "left-only" => Ok(CuePlacement::LeftOnly),
            "right" | "right-only" => Ok(CuePlacement::RightOnly),
            other => Err(format!("unknown cue placement `{other}` (global, left, right)")),
        }
    }
}

const CUE_SHARE: f64 = 0.4;
const NEUTRAL_F0: f64 = 120.0;
const AMPLITUDE: f64 = 0.25;
const AM_DEPTH: f64 = 0.4;
const MAX_HARMONICS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Seconds.
    pub min_duration: f64,
    pub max_duration: f64,
    pub sample_rate: u32,
    pub placement: CuePlacement,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            train_per_class: 20,
            test_per_class: 5,
            min_duration: 0.8,
            max_duration: 1.2,
            sample_rate: SAMPLE_RATE,
            placement: CuePlacement::Global,
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.classes == 0 || self.classes > Emotion::ALL.len() {
            return bad(format!("classes must be in 1..={}", Emotion::ALL.len()));
        }
        if self.sample_rate != SAMPLE_RATE {
            return bad(format!("sample rate must be {SAMPLE_RATE} Hz"));
        }
        // two 25 ms analysis windows
        if !(self.min_duration > 0.05) {
            return bad("durations must exceed 0.05 s".into());
        }
        if !(self.max_duration >= self.min_duration) || !self.max_duration.is_finite() {
            return bad("max_duration must be at least min_duration".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise level must be non-negative".into());
        }
        Ok(())
    }

    /// Base F0 of class `k`.
    pub fn class_f0(k: usize) -> f64 {
        120.0 + 30.0 * k as f64
    }

    /// Amplitude-modulation rate of class `k`.
    pub fn class_am_rate(k: usize) -> f64 {
        2.0 + k as f64
    }
}

struct Job {
    index: u64,
    id: String,
    class: usize,
    split: Split,
}

/// Writes `wav/`, `align/` and `manifest.jsonl` under `out_dir` and returns
/// the corpus. Every byte is determined by the config.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    let align_dir = out_dir.join("align");
    std::fs::create_dir_all(&wav_dir)?;
    std::fs::create_dir_all(&align_dir)?;

    let mut jobs = Vec::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
        for class in 0..cfg.classes {
            for i in 0..per_class {
                jobs.push(Job {
                    index: jobs.len() as u64,
                    id: format!("{}-{}-{i:03}", split.name(), Emotion::ALL[class].name()),
                    class,
                    split,
                });
            }
        }
    }
    let utterances = jobs
        .par_iter()
        .map(|job| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(
                cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(job.index),
            );
            let (samples, tiers) = synth_utterance(cfg, job.class, &mut rng);
            let audio = wav_dir.join(format!("{}.wav", job.id));
            let alignment = align_dir.join(format!("{}.txt", job.id));
            write_wav(&audio, &samples)?;
            std::fs::write(&alignment, write_alignment(&tiers))?;
            Ok(Utterance {
                id: job.id.clone(),
                audio,
                label: Emotion::ALL[job.class],
                split: job.split,
                alignment: Some(alignment),
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let corpus = Corpus { utterances };
    write_manifest(&corpus, out_dir, &out_dir.join("manifest.jsonl"))?;
    Ok(corpus)
}

/// One utterance of class `class` plus its pseudo-alignment.
pub(crate) fn synth_utterance(
    cfg: &SynthConfig,
    class: usize,
    rng: &mut Xoshiro256PlusPlus,
) -> (Vec<f64>, AlignmentTiers) {
    let sr = cfg.sample_rate as f64;
    let duration = if cfg.max_duration > cfg.min_duration {
        rng.gen_range(cfg.min_duration..cfg.max_duration)
    } else {
        cfg.min_duration
    };
    // whole milliseconds keep alignment times exact
    let duration = (duration * 1000.0).round() / 1000.0;
    let n = (duration * sr).round() as usize;
    let gain = rng.gen_range(0.6..1.0);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let (cue_start, cue_end) = cfg.placement.region(n);
    let (f0_cue, am_rate) = (SynthConfig::class_f0(class), SynthConfig::class_am_rate(class));

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let in_cue = (cue_start..cue_end).contains(&i);
        let (f0, envelope) = if in_cue {
            (f0_cue, 1.0 - AM_DEPTH * 0.5 * (1.0 - (2.0 * PI * am_rate * t + am_phase).cos()))
        } else {
            (NEUTRAL_F0, 1.0)
        };
        let harmonics = MAX_HARMONICS.min(((sr / 2.0 - 1.0) / f0) as usize).max(1);
        let norm: f64 = (1..=harmonics).map(|h| 1.0 / h as f64).sum();
        let tone: f64 = (1..=harmonics)
            .map(|h| (h as f64 * phase).sin() / h as f64)
            .sum::<f64>()
            / norm;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_level;
        samples.push(AMPLITUDE * gain * envelope * tone + noise);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
    }
    (samples, pseudo_alignment(duration, rng))
}

const CONSONANTS: [&str; 6] = ["K", "T", "S", "M", "N", "D"];
const VOWEL_SET: [&str; 6] = ["AA", "IY", "UW", "AH", "EH", "OW"];

/// Leading and trailing silence around alternating consonant/vowel phones;
/// every two syllables form a word.
fn pseudo_alignment(duration: f64, rng: &mut Xoshiro256PlusPlus) -> AlignmentTiers {
    let total_ms = (duration * 1000.0).round() as u64;
    let sil_ms = 50;
    let mut phones = vec![phone(0, sil_ms, "sil")];
    let mut words = Vec::new();
    let speech_end = total_ms.saturating_sub(sil_ms);
    let mut t = sil_ms;
    let mut word_start = t;
    let mut syllables = 0;
    while t + 60 + 120 <= speech_end {
        let c = CONSONANTS[rng.gen_range(0..CONSONANTS.len())];
        let v = VOWEL_SET[rng.gen_range(0..VOWEL_SET.len())];
        phones.push(phone(t, t + 60, c));
        phones.push(phone(t + 60, t + 180, v));
        t += 180;
        syllables += 1;
        if syllables % 2 == 0 {
            words.push(WordInterval {
                start: ms(word_start),
                end: ms(t),
                token: format!("w{}", words.len()),
            });
            word_start = t;
        }
    }
    if word_start < t {
        words.push(WordInterval {
            start: ms(word_start),
            end: ms(t),
            token: format!("w{}", words.len()),
        });
    }
    if t < total_ms {
        phones.push(phone(t, total_ms, "sil"));
    }
    AlignmentTiers { words, phones }
}

fn ms(v: u64) -> f64 {
    v as f64 / 1000.0
}

fn phone(start: u64, end: u64, token: &str) -> PhoneInterval {
    PhoneInterval {
        start: ms(start),
        end: ms(end),
        token: token.to_string(),
        class: cv_class(token),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CvClass;

    #[test]
    fn utterance_is_deterministic_and_bounded() {
        let cfg = SynthConfig::default();
        let mut a = Xoshiro256PlusPlus::seed_from_u64(9);
        let mut b = Xoshiro256PlusPlus::seed_from_u64(9);
        let (x, ta) = synth_utterance(&cfg, 2, &mut a);
        let (y, tb) = synth_utterance(&cfg, 2, &mut b);
        assert_eq!(x, y);
        assert_eq!(ta, tb);
        let secs = x.len() as f64 / 16_000.0;
        assert!((0.8..=1.2).contains(&secs));
        assert!(x.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn alignment_alternates() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let tiers = pseudo_alignment(1.0, &mut rng);
        let classes: Vec<CvClass> = tiers.phones.iter().map(|p| p.class).collect();
        assert_eq!(classes[0], CvClass::Silence);
        for pair in classes[1..classes.len() - 1].chunks(2) {
            assert_eq!(pair, [CvClass::Consonant, CvClass::Vowel]);
        }
        assert!((tiers.phones.last().unwrap().end - 1.0).abs() < 1e-12);
        for w in tiers.phones.windows(2) {
            assert!((w[0].end - w[1].start).abs() < 1e-12);
        }
    }

    #[test]
    fn cue_regions() {
        assert_eq!(CuePlacement::Global.region(100), (0, 100));
        assert_eq!(CuePlacement::LeftOnly.region(100), (0, 40));
        assert_eq!(CuePlacement::RightOnly.region(100), (60, 100));
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig {
                classes: 7,
                ..Default::default()
            },
            SynthConfig {
                min_duration: 0.04,
                ..Default::default()
            },
            SynthConfig {
                noise_level: -1.0,
                ..Default::default()
            },
            SynthConfig {
                sample_rate: 8000,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
