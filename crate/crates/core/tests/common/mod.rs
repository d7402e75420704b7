#![allow(dead_code)]

use emoctx::corpus::{featurize_corpus, synth_corpus, Corpus, CuePlacement, Split, SynthConfig, Utterance};
use emoctx::dsp::{FeatureSequence, FrameConfig, MelConfig};
use emoctx::model::ModelConfig;
use emoctx::training::{Example, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use tempfile::TempDir;

pub struct SynthData {
    pub dir: TempDir,
    pub corpus: Corpus,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn examples(utts: &[&Utterance]) -> Vec<Example> {
    let feats = featurize_corpus(utts, &FrameConfig::default(), &MelConfig::default(), None).unwrap();
    utts.iter()
        .zip(feats)
        .map(|(u, features)| Example {
            id: u.id.clone(),
            features,
            label: u.label.index(),
        })
        .collect()
}

/// Default-sized synthetic corpus (6 classes, 120 train / 30 test).
pub fn synth_data(placement: CuePlacement) -> SynthData {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        placement,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, dir.path()).unwrap();
    let train = examples(&corpus.split(Split::Train).collect::<Vec<_>>());
    let test = examples(&corpus.split(Split::Test).collect::<Vec<_>>());
    SynthData {
        dir,
        corpus,
        train,
        test,
    }
}

/// Training setup used for every synthetic-corpus experiment.
pub fn pinned_train() -> (TrainConfig, ModelConfig) {
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        epochs: 30,
        seed: 0,
        ..TrainConfig::default()
    };
    (cfg, ModelConfig::toy(32, 16))
}

/// Attention mass on the cue region (first or last 40% of frames).
pub fn cue_mass(weights: &[f64], placement: CuePlacement) -> f64 {
    let t = weights.len();
    let k = (t as f64 * 0.4).floor() as usize;
    match placement {
        CuePlacement::RightOnly => weights[t - k..].iter().sum(),
        _ => weights[..k].iter().sum(),
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn random_features(t: usize, d: usize, seed: u64) -> FeatureSequence {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let data = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureSequence::new(data, d, 0.0, 0.01, 0).unwrap()
}
