//! Mini-batch training with Adam, global-norm clipping and best-WA selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsp::FeatureSequence;
use crate::metrics::{score, MetricsError};
use crate::model::{init_model, loss_graph, predict, ModelConfig, ModelError, ModelParams, SequenceBatch};
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("train split has {found} distinct labels, need {needed}")]
    TooFewLabels { found: usize, needed: usize },
    #[error("cannot batch: {0}")]
    Batch(String),
    #[error("divergence at epoch {epoch}, step {step}: non-finite loss")]
    Divergence { epoch: usize, step: u64 },
    #[error("divergence at epoch {epoch}, step {step}: non-finite parameter `{name}`")]
    NonFiniteParam { epoch: usize, step: u64, name: String },
    #[error("utterance {id}: {source}")]
    Utterance { id: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Arithmetic used for the optimization itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            other => Err(format!("unknown precision `{other}` (f32 or f64)")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        // `lr = 0` is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be non-negative and finite");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// A featurized, labelled utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: FeatureSequence,
    pub label: usize,
}

/// Zero-pads sequences to the longest one.
pub fn pad_batch(sequences: &[&FeatureSequence]) -> Result<SequenceBatch, TrainError> {
    let first = sequences
        .first()
        .ok_or_else(|| TrainError::Batch("no sequences".into()))?;
    let dim = first.dim();
    if let Some(s) = sequences.iter().find(|s| s.dim() != dim) {
        return Err(TrainError::Batch(format!(
            "mixed feature dimensions {dim} and {}",
            s.dim()
        )));
    }
    let steps = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
    let b = sequences.len();
    let mut block = vec![0.0; b * steps * dim];
    let mut mask = vec![false; b * steps];
    for (i, s) in sequences.iter().enumerate() {
        let off = i * steps * dim;
        block[off..off + s.data().len()].copy_from_slice(s.data());
        mask[i * steps..i * steps + s.len()].fill(true);
    }
    Ok(SequenceBatch::new(b, steps, dim, block, mask)?)
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: BTreeMap<_, _> = params
            .tensors()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.dims())))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Global L2 norm of a gradient map.
pub fn global_norm<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads.values().map(|g| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Loss and parameter gradients for one batch, without updating anything.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    labels: &[usize],
) -> Result<(f64, BTreeMap<String, Tensor<T>>), TrainError> {
    let (mut g, loss, _) = loss_graph::<T>(params.config(), batch, labels)?;
    let value = g
        .evaluate(params.tensors(), loss)
        .map_err(ModelError::from)?
        .data()[0]
        .as_f64();
    let grads = g
        .backward(loss, &Tensor::filled(&[1, 1], T::one()))
        .map_err(ModelError::from)?;
    Ok((value, grads))
}

/// Per-utterance losses of a padded batch.
pub fn per_item_loss<T: Scalar>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    labels: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let (mut g, _, per_item) = loss_graph::<T>(params.config(), batch, labels)?;
    let v = g
        .evaluate(params.tensors(), per_item)
        .map_err(ModelError::from)?;
    Ok(v.data().iter().map(|x| x.as_f64()).collect())
}

/// One clipped Adam update. Returns the mean batch loss before the update.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    batch: &SequenceBatch,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    step_at_epoch(params, state, batch, labels, cfg, 0)
}

fn step_at_epoch<T: Scalar>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    batch: &SequenceBatch,
    labels: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError> {
    let step = state.step + 1;
    let (loss, mut grads) = match batch_gradients(params, batch, labels) {
        Err(TrainError::Model(ModelError::Numerics(e))) if e.is_non_finite() => {
            return Err(TrainError::Divergence { epoch, step })
        }
        other => other?,
    };
    if !loss.is_finite() {
        return Err(TrainError::Divergence { epoch, step });
    }
    if cfg.learning_rate == 0.0 {
        state.step = step;
        return Ok(loss);
    }
    clip_global_norm(&mut grads, cfg.clip_norm);

    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let lr = T::of(cfg.learning_rate);
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (tc1, tc2, eps) = (T::of(c1), T::of(c2), T::of(cfg.epsilon));
    for (name, p) in params.tensors_mut().iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("moment per tensor");
        let v = state.v.get_mut(name).expect("moment per tensor");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = tb1 * *mi + ob1 * gi;
            *vi = tb2 * *vi + ob2 * gi * gi;
            let m_hat = *mi / tc1;
            let v_hat = *vi / tc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.all_finite() {
            return Err(TrainError::NonFiniteParam {
                epoch,
                step,
                name: name.clone(),
            });
        }
    }
    state.step = step;
    Ok(loss)
}

/// Batches of indices for one epoch. Examples are sorted by length, cut
/// into buckets of a few batches, shuffled inside each bucket, and the
/// resulting batches are shuffled. Depends only on (seed, epoch).
pub fn epoch_batches(lengths: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(
        seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let bucket = batch_size * 4;
    let mut batches = Vec::new();
    for chunk in order.chunks_mut(bucket) {
        chunk.shuffle(&mut rng);
        batches.extend(chunk.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub ua: f64,
    pub wa: f64,
    pub seconds: f64,
}

/// One record per completed epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,ua,wa,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{:.4},{:.4},{:.3}",
                r.epoch, r.mean_loss, r.ua, r.wa, r.seconds
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct Trained {
    /// Parameters from the last epoch with the best held-out WA (initialization
    /// when no epoch ran).
    pub params: ModelParams<f32>,
    /// 0 means initialization.
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// UA and WA of `params` on a labelled split.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, split: &[Example]) -> Result<(f64, f64), TrainError> {
    let predictions: Vec<usize> = split
        .par_iter()
        .map(|ex| {
            predict(params, &ex.features)
                .map(|p| p.class)
                .map_err(|source| TrainError::Utterance {
                    id: ex.id.clone(),
                    source,
                })
        })
        .collect::<Result<_, _>>()?;
    let references: Vec<usize> = split.iter().map(|ex| ex.label).collect();
    Ok(score(&predictions, &references, params.config().num_classes)?)
}

/// Full training run from a seeded initialization.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train_split: &[Example],
    test_split: &[Example],
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_split.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if test_split.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut labels: Vec<usize> = train_split.iter().map(|e| e.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < model_cfg.num_classes {
        return Err(TrainError::TooFewLabels {
            found: labels.len(),
            needed: model_cfg.num_classes,
        });
    }
    match cfg.precision {
        Precision::F32 => run::<f32>(cfg, model_cfg, train_split, test_split),
        Precision::F64 => run::<f64>(cfg, model_cfg, train_split, test_split),
    }
}

fn run<T: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train_split: &[Example],
    test_split: &[Example],
) -> Result<Trained, TrainError> {
    let mut params = init_model::<T>(model_cfg, cfg.seed)?;
    let mut state = AdamState::new(&params);
    let mut best = (params.cast::<f32>(), 0usize, f64::NEG_INFINITY);
    let mut log = TrainLog::default();
    let lengths: Vec<usize> = train_split.iter().map(|e| e.features.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut total = 0.0;
        for idx in epoch_batches(&lengths, cfg.batch_size, cfg.seed, epoch) {
            let seqs: Vec<&FeatureSequence> = idx.iter().map(|&i| &train_split[i].features).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_split[i].label).collect();
            let batch = pad_batch(&seqs)?;
            let loss = step_at_epoch(&mut params, &mut state, &batch, &labels, cfg, epoch)?;
            total += loss * idx.len() as f64;
        }
        let (ua, wa) = evaluate(&params, test_split)?;
        // ties go to the later, longer-trained epoch
        if wa >= best.2 {
            best = (params.cast::<f32>(), epoch, wa);
        }
        log.records.push(EpochRecord {
            epoch,
            mean_loss: total / train_split.len() as f64,
            ua,
            wa,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained {
        params: best.0,
        best_epoch: best.1,
        log,
    })
}
