//! `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ablation::SkipSpec;
use crate::dsp::{hash64, FrameConfig, MelConfig, PitchConfig};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Syntax {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing required key `run.seed`")]
    MissingSeed { path: PathBuf },
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const OUT_DIR_ENV: &str = "EMOCTX_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub frame: FrameConfig,
    pub mel: MelConfig,
    pub pitch: PitchConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifests: Vec<PathBuf>,
    pub specs: Vec<SkipSpec>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            mel: MelConfig::default(),
            pitch: PitchConfig::default(),
            model: ModelConfig::full(),
            train: TrainConfig::default(),
            manifests: Vec::new(),
            specs: SkipSpec::parse_list("0-0,0-30,0-100,0-200").expect("valid literal"),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn join_specs(specs: &[SkipSpec]) -> String {
    specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its current value, one per line.
    pub fn dump(&self) -> String {
        let f = &self.frame;
        let m = &self.mel;
        let p = &self.pitch;
        let md = &self.model;
        let t = &self.train;
        let manifests = self
            .manifests
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("frame.sample_rate", f.sample_rate.to_string());
        kv("frame.window_len", f.window_len.to_string());
        kv("frame.hop_len", f.hop_len.to_string());
        kv("frame.fft_size", f.fft_size.to_string());
        kv("frame.preemphasis", f.preemphasis.to_string());
        kv("mel.n_filters", m.n_filters.to_string());
        kv("mel.f_min", m.f_min.to_string());
        kv("mel.f_max", m.f_max.to_string());
        kv("mel.log_floor", format!("{:e}", m.log_floor));
        kv("pitch.f0_min", p.f0_min.to_string());
        kv("pitch.f0_max", p.f0_max.to_string());
        kv("pitch.step", p.step.to_string());
        kv("pitch.voicing_threshold", p.voicing_threshold.to_string());
        kv("model.input_dim", md.input_dim.to_string());
        kv("model.hidden_dim", md.hidden_dim.to_string());
        kv("model.num_layers", md.num_layers.to_string());
        kv("model.context_dim", md.context_dim.to_string());
        kv("model.num_classes", md.num_classes.to_string());
        kv("model.attention_iterations", md.attention_iterations.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.clip_norm", t.clip_norm.to_string());
        kv("train.beta1", t.beta1.to_string());
        kv("train.beta2", t.beta2.to_string());
        kv("train.epsilon", format!("{:e}", t.epsilon));
        kv("train.precision", t.precision.to_string());
        kv("data.manifests", manifests);
        kv("ablation.specs", join_specs(&self.specs));
        kv("run.out_dir", self.out_dir.display().to_string());
        kv("run.seed", self.seed.to_string());
        out
    }

    /// Stable hash of everything that affects results; the output
    /// directory is left out.
    pub fn hash(&self) -> u64 {
        let dump = self.dump();
        let kept: String = dump
            .lines()
            .filter(|l| !l.starts_with("run.out_dir "))
            .flat_map(|l| [l, "\n"])
            .collect();
        hash64(kept.as_bytes())
    }

    /// Applies `key = value` lines on top of `self`. `run.seed` must be set.
    pub fn parse(mut self, text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut seed_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Syntax {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `section.key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            self.set(key, value).map_err(err)?;
            seed_seen |= key == "run.seed";
        }
        if !seed_seen {
            return Err(ConfigError::MissingSeed {
                path: origin.to_path_buf(),
            });
        }
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::default().parse(&std::fs::read_to_string(path)?, path)
    }

    /// Sets one key; the error is a message without location.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
        }
        match key {
            "frame.sample_rate" => self.frame.sample_rate = num(key, value)?,
            "frame.window_len" => self.frame.window_len = num(key, value)?,
            "frame.hop_len" => self.frame.hop_len = num(key, value)?,
            "frame.fft_size" => self.frame.fft_size = num(key, value)?,
            "frame.preemphasis" => self.frame.preemphasis = num(key, value)?,
            "mel.n_filters" => self.mel.n_filters = num(key, value)?,
            "mel.f_min" => self.mel.f_min = num(key, value)?,
            "mel.f_max" => self.mel.f_max = num(key, value)?,
            "mel.log_floor" => self.mel.log_floor = num(key, value)?,
            "pitch.f0_min" => self.pitch.f0_min = num(key, value)?,
            "pitch.f0_max" => self.pitch.f0_max = num(key, value)?,
            "pitch.step" => self.pitch.step = num(key, value)?,
            "pitch.voicing_threshold" => self.pitch.voicing_threshold = num(key, value)?,
            "model.input_dim" => self.model.input_dim = num(key, value)?,
            "model.hidden_dim" => self.model.hidden_dim = num(key, value)?,
            "model.num_layers" => self.model.num_layers = num(key, value)?,
            "model.context_dim" => self.model.context_dim = num(key, value)?,
            "model.num_classes" => self.model.num_classes = num(key, value)?,
            "model.attention_iterations" => self.model.attention_iterations = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.clip_norm" => self.train.clip_norm = num(key, value)?,
            "train.beta1" => self.train.beta1 = num(key, value)?,
            "train.beta2" => self.train.beta2 = num(key, value)?,
            "train.epsilon" => self.train.epsilon = num(key, value)?,
            "train.precision" => self.train.precision = value.parse()?,
            "data.manifests" => {
                self.manifests = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "ablation.specs" => {
                self.specs = SkipSpec::parse_list(value).map_err(|e| e.to_string())?
            }
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.seed" => self.seed = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Range checks on every section plus existence of referenced manifests.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.frame.validate().map_err(|e| invalid(&e))?;
        self.mel
            .validate(self.frame.sample_rate)
            .map_err(|e| invalid(&e))?;
        self.pitch.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if self.model.input_dim != self.mel.n_filters {
            return Err(ConfigError::Invalid(format!(
                "model.input_dim {} must equal mel.n_filters {}",
                self.model.input_dim, self.mel.n_filters
            )));
        }
        if let Some(missing) = self.manifests.iter().find(|p| !p.exists()) {
            return Err(ConfigError::MissingPath(missing.clone()));
        }
        Ok(())
    }
}
