//! Corpus manifests, word/phone alignments and the synthetic corpus.

mod alignment;
mod features;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspError;

pub use alignment::{
    cv_class, load_alignment, parse_alignment, write_alignment, AlignmentTiers, CvClass,
    PhoneInterval, WordInterval, VOWELS,
};
pub use features::{featurize_corpus, featurize_utterance, FeatureCache};
pub use synth::{synth_corpus, CuePlacement, SynthConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty manifest: {0}")]
    EmptyManifest(PathBuf),
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Alignment {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: overlapping {tier} intervals at {start:.3}s")]
    Overlap {
        path: PathBuf,
        tier: &'static str,
        start: f64,
    },
    #[error("invalid synthetic corpus configuration: {0}")]
    Config(String),
    #[error("utterance {id}: {source}")]
    Audio { id: String, source: DspError },
    #[error("feature cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The six label names, in class-index order.
pub const EMOTIONS: [&str; 6] = ["happy", "sad", "anger", "surprise", "disgust", "fear"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Happy,
    Sad,
    Anger,
    Surprise,
    Disgust,
    Fear,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Anger,
        Emotion::Surprise,
        Emotion::Disgust,
        Emotion::Fear,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        EMOTIONS[self.index()]
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EMOTIONS
            .iter()
            .position(|&n| n == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| format!("unknown label `{s}` (expected one of {})", EMOTIONS.join(", ")))
    }
}

/// Label name for a class index, or the index itself past the six.
pub fn label_name(class: usize) -> String {
    Emotion::from_index(class).map_or_else(|| class.to_string(), |e| e.name().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: PathBuf,
    pub label: Emotion,
    pub split: Split,
    pub alignment: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

#[derive(Deserialize, Serialize)]
struct ManifestRow {
    id: String,
    audio: String,
    label: String,
    split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alignment: Option<String>,
}

/// Reads a JSON-lines manifest. Relative paths resolve against the
/// manifest's directory; unknown fields are ignored; blank lines skipped.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let err = |line: usize, message: String| CorpusError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut corpus = Corpus::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: ManifestRow =
            serde_json::from_str(raw).map_err(|e| err(line, format!("malformed entry: {e}")))?;
        let label: Emotion = row.label.parse().map_err(|e| err(line, e))?;
        let split: Split = row.split.parse().map_err(|e| err(line, e))?;
        if !seen.insert(row.id.clone()) {
            return Err(err(line, format!("duplicate id `{}`", row.id)));
        }
        let audio = base.join(&row.audio);
        if !audio.is_file() {
            return Err(err(line, format!("missing audio file {}", audio.display())));
        }
        corpus.utterances.push(Utterance {
            id: row.id,
            audio,
            label,
            split,
            alignment: row.alignment.map(|a| base.join(a)),
        });
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyManifest(path.to_path_buf()));
    }
    Ok(corpus)
}

/// Concatenates several manifests; ids must be unique across all of them.
pub fn load_manifests(paths: &[PathBuf]) -> Result<Corpus, CorpusError> {
    let mut all = Corpus::default();
    let mut seen = HashSet::new();
    for path in paths {
        for u in load_manifest(path)?.utterances {
            if !seen.insert(u.id.clone()) {
                return Err(CorpusError::Manifest {
                    path: path.clone(),
                    line: 0,
                    message: format!("id `{}` already defined by an earlier manifest", u.id),
                });
            }
            all.utterances.push(u);
        }
    }
    Ok(all)
}

/// Writes a manifest with paths relative to `base` where possible.
pub fn write_manifest(corpus: &Corpus, base: &Path, path: &Path) -> Result<(), CorpusError> {
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let mut out = String::new();
    for u in &corpus.utterances {
        let row = ManifestRow {
            id: u.id.clone(),
            audio: rel(&u.audio),
            label: u.label.name().to_string(),
            split: u.split.name().to_string(),
            alignment: u.alignment.as_deref().map(rel),
        };
        out.push_str(&serde_json::to_string(&row).expect("plain strings serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
