//! BiLSTM with shared-memory additive attention and a linear classifier.
//!
//! Pipeline per utterance: T×23 log-Mel frames → stacked bidirectional LSTM
//! (T×2H) → attention weights over time → C-dimensional weighted summary →
//! projection back to 2H → class logits.

mod network;
mod params;

use thiserror::Error;

use crate::dsp::FeatureSequence;
use crate::numerics::{Graph, NumericsError, Scalar, Tensor};

pub use network::{
    build_attention, build_blstm, build_classifier, build_forward, build_loss, AttentionNodes,
    ForwardNodes, SequenceBatch,
};
pub use params::{
    attention_name, init_model, lstm_name, Direction, Init, ModelConfig, ModelParams, ParamSpec,
    CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, PROJECTION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("feature dimension {found} does not match model input {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` holds non-finite values")]
    NonFinite(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Attention internals for one utterance (rows are frames).
#[derive(Clone, Debug)]
pub struct AttentionInternals<T> {
    /// BiLSTM output, T×2H.
    pub hidden: Tensor<T>,
    /// tanh(V_s1·tanh(H)), T×C.
    pub activated: Tensor<T>,
    /// Shared memory repeated over time, T×C.
    pub memory: Tensor<T>,
    /// T×C.
    pub gamma: Tensor<T>,
    /// Raw scores α, length T.
    pub scores: Vec<T>,
    /// Normalized weights, length T.
    pub weights: Vec<T>,
}

/// Output of a full forward pass over one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Runs the stacked BiLSTM over one sequence. Masked frames do not update
/// the recurrent state. Returns T×2H with rows `[forward_t, backward_t]`.
pub fn blstm_forward<T: Scalar>(
    params: &ModelParams<T>,
    features: &FeatureSequence,
    mask: Option<&[bool]>,
) -> Result<Tensor<T>, ModelError> {
    let cfg = params.config();
    if features.dim() != cfg.input_dim {
        return Err(ModelError::InputDim {
            expected: cfg.input_dim,
            found: features.dim(),
        });
    }
    let batch = SequenceBatch::single(features, mask)?;
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(
        features.len(),
        features.dim(),
        features.data().iter().map(|&v| T::of(v)).collect(),
    )?);
    let h = build_blstm(&mut g, cfg, x, &batch);
    Ok(g.evaluate(params.tensors(), h)?.clone())
}

/// Attention over a T×2H hidden matrix. Returns the projected context
/// (length 2H) and the internals of the final pass.
pub fn attention<T: Scalar>(
    params: &ModelParams<T>,
    hidden: &Tensor<T>,
) -> Result<(Vec<T>, AttentionInternals<T>), ModelError> {
    let cfg = params.config();
    let (steps, width) = hidden
        .shape2()
        .ok_or_else(|| ModelError::Config("hidden must be rank 2".into()))?;
    if steps == 0 {
        return Err(ModelError::EmptySequence);
    }
    if width != cfg.output_width() {
        return Err(ModelError::InputDim {
            expected: cfg.output_width(),
            found: width,
        });
    }
    let batch = SequenceBatch::new(1, steps, 0, Vec::new(), vec![true; steps])?;
    let mut g = Graph::new();
    let h = g.constant(hidden.clone());
    let (passes, summary) = build_attention(&mut g, cfg, h, &batch);
    let (context, _) = build_classifier(&mut g, cfg, summary, 1);
    g.evaluate(params.tensors(), context)?;
    let last = passes.last().expect("one pass");
    let val = |id| g.value(id).expect("evaluated").clone();
    let memory_row = val(last.memory);
    let internals = AttentionInternals {
        hidden: hidden.clone(),
        activated: val(last.activated),
        memory: Tensor::from_fn(steps, cfg.context_dim, |_, c| memory_row.get(0, c)),
        gamma: val(last.gamma),
        scores: val(last.scores).into_data(),
        weights: val(last.weights).into_data(),
    };
    Ok((val(context).into_data(), internals))
}

/// Affine classifier on a 2H context vector; no softmax.
pub fn classify<T: Scalar>(params: &ModelParams<T>, context: &[T]) -> Result<Vec<T>, ModelError> {
    let cfg = params.config();
    if context.len() != cfg.output_width() {
        return Err(ModelError::InputDim {
            expected: cfg.output_width(),
            found: context.len(),
        });
    }
    let mut g = Graph::new();
    let ctx = g.constant(Tensor::row(context.to_vec()));
    let logits = network::build_head_only(&mut g, ctx);
    Ok(g.evaluate(params.tensors(), logits)?.data().to_vec())
}

/// −log softmax(logits)[label].
pub fn loss(logits: &[f64], label: usize) -> Result<f64, ModelError> {
    if label >= logits.len() {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[label])
}

/// Full forward pass over one utterance.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    features: &FeatureSequence,
) -> Result<Prediction, ModelError> {
    let batch = SequenceBatch::single(features, None)?;
    let mut g = Graph::new();
    let nodes = build_forward(&mut g, params.config(), &batch)?;
    let logits: Vec<f64> = g
        .evaluate(params.tensors(), nodes.logits)?
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let weights = g
        .value(nodes.final_attention().weights)
        .expect("evaluated")
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    Ok(Prediction {
        class: argmax(&logits),
        logits,
        weights,
    })
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean batch loss graph for a labelled batch, ready to evaluate against
/// the parameter tensors. Returns (graph, loss node, per-item loss node).
pub fn loss_graph<T: Scalar>(
    cfg: &ModelConfig,
    batch: &SequenceBatch,
    labels: &[usize],
) -> Result<(Graph<T>, crate::numerics::NodeId, crate::numerics::NodeId), ModelError> {
    if labels.len() != batch.batch() {
        return Err(ModelError::Config(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.batch()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= cfg.num_classes) {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: cfg.num_classes,
        });
    }
    let mut g = Graph::new();
    let nodes = build_forward(&mut g, cfg, batch)?;
    let (mean, per_item) = build_loss(&mut g, nodes.logits, labels, cfg.num_classes);
    Ok((g, mean, per_item))
}
