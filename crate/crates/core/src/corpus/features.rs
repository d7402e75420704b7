use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{CorpusError, Utterance};
use crate::dsp::wav::read_wav;
use crate::dsp::{feature_fingerprint, featurize, FeatureSequence, FrameConfig, MelConfig};

const MAGIC: &[u8; 4] = b"EMOF";
const VERSION: u32 = 1;

/// On-disk feature store keyed by (audio content hash, front-end fingerprint).
#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry(&self, audio_hash: &str, fingerprint: u64) -> PathBuf {
        self.dir.join(format!("{audio_hash}-{fingerprint:016x}.feat"))
    }

    fn load(&self, path: &Path) -> Result<Option<FeatureSequence>, CorpusError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode(&bytes)
            .map(Some)
            .ok_or_else(|| CorpusError::Cache {
                path: path.to_path_buf(),
                message: "corrupt entry".into(),
            })
    }

    fn store(&self, path: &Path, features: &FeatureSequence) -> Result<(), CorpusError> {
        // write-then-rename so concurrent readers never see a partial file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, encode(features))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn encode(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + f.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&f.fingerprint().to_le_bytes());
    out.extend_from_slice(&(f.len() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    out.extend_from_slice(&f.frame_times()[0].to_le_bytes());
    out.extend_from_slice(&f.hop().to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<FeatureSequence> {
    let take = |at: usize, n: usize| bytes.get(at..at + n);
    if take(0, 4)? != MAGIC || u32::from_le_bytes(take(4, 4)?.try_into().ok()?) != VERSION {
        return None;
    }
    let fp = u64::from_le_bytes(take(8, 8)?.try_into().ok()?);
    let t = u32::from_le_bytes(take(16, 4)?.try_into().ok()?) as usize;
    let d = u32::from_le_bytes(take(20, 4)?.try_into().ok()?) as usize;
    let start = f64::from_le_bytes(take(24, 8)?.try_into().ok()?);
    let hop = f64::from_le_bytes(take(32, 8)?.try_into().ok()?);
    let body = bytes.get(40..)?;
    if body.len() != t * d * 8 {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    FeatureSequence::new(data, d, start, hop, fp).ok()
}

/// Log-Mel features for one utterance, via the cache when given.
pub fn featurize_utterance(
    utt: &Utterance,
    frame: &FrameConfig,
    mel: &MelConfig,
    cache: Option<&FeatureCache>,
) -> Result<FeatureSequence, CorpusError> {
    let wrap = |source| CorpusError::Audio {
        id: utt.id.clone(),
        source,
    };
    let entry = match cache {
        Some(c) => {
            let bytes = std::fs::read(&utt.audio)?;
            let hash = hex(&Sha256::digest(&bytes)[..16]);
            let path = c.entry(&hash, feature_fingerprint(frame, mel));
            if let Some(f) = c.load(&path)? {
                return Ok(f);
            }
            Some((c, path))
        }
        None => None,
    };
    let samples = read_wav(&utt.audio).map_err(wrap)?;
    let features = featurize(&samples, frame, mel).map_err(wrap)?;
    if let Some((c, path)) = entry {
        c.store(&path, &features)?;
    }
    Ok(features)
}

/// Features for every utterance, in input order.
pub fn featurize_corpus(
    utterances: &[&Utterance],
    frame: &FrameConfig,
    mel: &MelConfig,
    cache: Option<&FeatureCache>,
) -> Result<Vec<FeatureSequence>, CorpusError> {
    utterances
        .par_iter()
        .map(|u| featurize_utterance(u, frame, mel, cache))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_round_trip() {
        let f = FeatureSequence::new(vec![1.5, -2.0, 0.25, 1e-10], 2, 0.0, 0.01, 77).unwrap();
        assert_eq!(decode(&encode(&f)).unwrap(), f);
        let mut bad = encode(&f);
        bad[0] = b'X';
        assert!(decode(&bad).is_none());
        assert!(decode(&encode(&f)[..45]).is_none());
    }
}
