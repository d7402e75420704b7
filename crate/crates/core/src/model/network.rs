//! Graph construction for the BiLSTM → attention → classifier pipeline.
//!
//! All per-frame tensors are laid out time-major: row `t·B + b` holds frame
//! `t` of batch element `b`.

use super::params::{
    attention_name, lstm_name, Direction, ModelConfig, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT,
    PROJECTION,
};
use super::ModelError;
use crate::dsp::FeatureSequence;
use crate::numerics::{Graph, NodeId, Scalar, Tensor};

/// Zero-padded batch of feature sequences with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    batch: usize,
    steps: usize,
    dim: usize,
    /// B×T×D, row-major.
    block: Vec<f64>,
    /// B×T.
    mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn new(
        batch: usize,
        steps: usize,
        dim: usize,
        block: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self, ModelError> {
        if batch == 0 || steps == 0 {
            return Err(ModelError::EmptySequence);
        }
        if block.len() != batch * steps * dim || mask.len() != batch * steps {
            return Err(ModelError::Config("batch block/mask size mismatch".into()));
        }
        let s = Self {
            batch,
            steps,
            dim,
            block,
            mask,
        };
        if (0..batch).any(|b| s.length(b) == 0) {
            return Err(ModelError::EmptySequence);
        }
        Ok(s)
    }

    /// One sequence, every frame valid unless `mask` says otherwise.
    pub fn single(features: &FeatureSequence, mask: Option<&[bool]>) -> Result<Self, ModelError> {
        let t = features.len();
        let mask = match mask {
            Some(m) if m.len() != t => {
                return Err(ModelError::Config(format!(
                    "mask has {} entries for {t} frames",
                    m.len()
                )))
            }
            Some(m) => m.to_vec(),
            None => vec![true; t],
        };
        Self::new(1, t, features.dim(), features.data().to_vec(), mask)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self) -> &[f64] {
        &self.block
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.steps + t]
    }

    /// Number of valid frames of element `b`.
    pub fn length(&self, b: usize) -> usize {
        self.mask[b * self.steps..(b + 1) * self.steps]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    fn time_major<T: Scalar>(&self) -> Tensor<T> {
        let (bs, d) = (self.batch, self.dim);
        Tensor::from_fn(self.steps * bs, d, |row, col| {
            let (t, b) = (row / bs, row % bs);
            T::of(self.block[(b * self.steps + t) * d + col])
        })
    }
}

/// Nodes of one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    /// V_s1·tanh(H) before the outer tanh, (T·B)×C.
    pub projected: NodeId,
    /// tanh of `projected`, (T·B)×C.
    pub activated: NodeId,
    /// Shared memory row per batch element, B×C (identical for every frame).
    pub memory: NodeId,
    /// activated ⊙ memory, (T·B)×C.
    pub gamma: NodeId,
    /// Raw scores, B×T.
    pub scores: NodeId,
    /// Normalized weights, B×T.
    pub weights: NodeId,
    /// Weighted sum of `activated` over time, B×C.
    pub summary: NodeId,
}

#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// BiLSTM output, (T·B)×2H.
    pub hidden: NodeId,
    pub attention: Vec<AttentionNodes>,
    /// Projected context, B×2H.
    pub context: NodeId,
    /// B×num_classes.
    pub logits: NodeId,
}

impl ForwardNodes {
    pub fn final_attention(&self) -> &AttentionNodes {
        self.attention.last().expect("at least one attention pass")
    }
}

/// Adds the full forward pass for `batch` to `g`. Parameters are graph
/// inputs named after [`ModelConfig::param_specs`].
pub fn build_forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    batch: &SequenceBatch,
) -> Result<ForwardNodes, ModelError> {
    if batch.dim() != cfg.input_dim {
        return Err(ModelError::InputDim {
            expected: cfg.input_dim,
            found: batch.dim(),
        });
    }
    let x = g.constant(batch.time_major());
    let hidden = build_blstm(g, cfg, x, batch);
    let (attention, summary) = build_attention(g, cfg, hidden, batch);
    let (context, logits) = build_classifier(g, cfg, summary, batch.batch());
    Ok(ForwardNodes {
        hidden,
        attention,
        context,
        logits,
    })
}

/// Stacked bidirectional LSTM over the time-major input `x`.
pub fn build_blstm<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    x: NodeId,
    batch: &SequenceBatch,
) -> NodeId {
    let mut layer_in = x;
    for layer in 0..cfg.num_layers {
        let outs: Vec<NodeId> = Direction::BOTH
            .iter()
            .map(|&dir| build_direction(g, cfg, layer, dir, layer_in, batch))
            .collect();
        layer_in = g.concat(outs, 1);
    }
    layer_in
}

fn build_direction<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    layer: usize,
    dir: Direction,
    input: NodeId,
    batch: &SequenceBatch,
) -> NodeId {
    let h = cfg.hidden_dim;
    let (bs, steps) = (batch.batch(), batch.steps());
    let w_ih = g.input(&lstm_name(layer, dir, "w_ih"));
    let w_hh = g.input(&lstm_name(layer, dir, "w_hh"));
    let bias = g.input(&lstm_name(layer, dir, "bias"));
    let w_ih_t = g.transpose(w_ih);
    let w_hh_t = g.transpose(w_hh);

    // input contributions for every frame at once
    let xw = g.matmul(input, w_ih_t);
    let bias_rows = g.repeat(bias, 0, steps * bs);
    let xw = g.add(xw, bias_rows);

    let mut hs = g.constant(Tensor::zeros(&[bs, h]));
    let mut cs = g.constant(Tensor::zeros(&[bs, h]));
    let mut outputs = vec![hs; steps];
    let order: Vec<usize> = match dir {
        Direction::Forward => (0..steps).collect(),
        Direction::Backward => (0..steps).rev().collect(),
    };
    for t in order {
        let xt = g.slice(xw, 0, t * bs, (t + 1) * bs);
        let rec = g.matmul(hs, w_hh_t);
        let gates = g.add(xt, rec);
        let i_pre = g.slice(gates, 1, 0, h);
        let f_pre = g.slice(gates, 1, h, 2 * h);
        let c_pre = g.slice(gates, 1, 2 * h, 3 * h);
        let o_pre = g.slice(gates, 1, 3 * h, 4 * h);
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(c_pre);
        let o = g.sigmoid(o_pre);
        let keep = g.mul(f, cs);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let c_act = g.tanh(c_new);
        let h_new = g.mul(o, c_act);

        if (0..bs).all(|b| batch.is_valid(b, t)) {
            cs = c_new;
            hs = h_new;
        } else {
            // masked rows keep their previous state
            let on = Tensor::from_fn(bs, h, |b, _| {
                if batch.is_valid(b, t) {
                    T::one()
                } else {
                    T::zero()
                }
            });
            let off = on.map(|v| T::one() - v);
            let on = g.constant(on);
            let off = g.constant(off);
            cs = blend(g, on, off, c_new, cs);
            hs = blend(g, on, off, h_new, hs);
        }
        outputs[t] = hs;
    }
    g.concat(outputs, 0)
}

fn blend<T: Scalar>(g: &mut Graph<T>, on: NodeId, off: NodeId, new: NodeId, old: NodeId) -> NodeId {
    let a = g.mul(on, new);
    let b = g.mul(off, old);
    g.add(a, b)
}

/// Shared-memory additive attention over the BiLSTM output.
///
/// Pass k computes P = tanh(H)·V_s1ᵀ, A = tanh(P), the memory
/// M = tanh(m·V_s2ᵀ) repeated over time, γ = A ⊙ M and scores α = γ·V_s3.
/// In the first pass m is the masked time-mean of P; later passes use the
/// previous weighted summary instead. Scores of masked frames are excluded
/// from the softmax.
pub fn build_attention<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    hidden: NodeId,
    batch: &SequenceBatch,
) -> (Vec<AttentionNodes>, NodeId) {
    let c = cfg.context_dim;
    let (bs, steps) = (batch.batch(), batch.steps());
    let rows = bs * steps;
    let lengths: Vec<f64> = (0..bs).map(|b| batch.length(b) as f64).collect();

    // B×(T·B) masked time-mean operator and plain per-element sum operator
    let mean_op = g.constant(Tensor::from_fn(bs, rows, |b, col| {
        let (t, bb) = (col / bs, col % bs);
        if bb == b && batch.is_valid(b, t) {
            T::of(1.0 / lengths[b])
        } else {
            T::zero()
        }
    }));
    let sum_op = g.constant(Tensor::from_fn(bs, rows, |b, col| {
        if col % bs == b {
            T::one()
        } else {
            T::zero()
        }
    }));

    let tanh_h = g.tanh(hidden);
    let mut passes = Vec::with_capacity(cfg.attention_iterations);
    let mut summary = None;
    for k in 0..cfg.attention_iterations {
        let v_s1 = g.input(&attention_name(k, "v_s1"));
        let v_s2 = g.input(&attention_name(k, "v_s2"));
        let v_s3 = g.input(&attention_name(k, "v_s3"));
        let v_s1_t = g.transpose(v_s1);
        let v_s2_t = g.transpose(v_s2);

        let projected = g.matmul(tanh_h, v_s1_t);
        let activated = g.tanh(projected);
        let pooled = match summary {
            None => g.matmul(mean_op, projected),
            Some(prev) => prev,
        };
        let mem_pre = g.matmul(pooled, v_s2_t);
        let memory = g.tanh(mem_pre);
        let memory_rows = g.repeat(memory, 0, steps);
        let gamma = g.mul(activated, memory_rows);
        let alpha = g.matmul(gamma, v_s3);
        let alpha_tb = g.reshape(alpha, vec![steps, bs]);
        let scores = g.transpose(alpha_tb);
        let weights = g.masked_softmax(scores, 1, batch.mask().to_vec());

        let w_tb = g.transpose(weights);
        let w_col = g.reshape(w_tb, vec![rows, 1]);
        let w_rep = g.repeat(w_col, 1, c);
        let weighted = g.mul(w_rep, activated);
        let s = g.matmul(sum_op, weighted);
        passes.push(AttentionNodes {
            projected,
            activated,
            memory,
            gamma,
            scores,
            weights,
            summary: s,
        });
        summary = Some(s);
    }
    (passes, summary.expect("attention_iterations >= 1"))
}

/// Projection of the C-dimensional summary back to 2H, then the affine
/// classifier. Returns (context, logits).
pub fn build_classifier<T: Scalar>(
    g: &mut Graph<T>,
    _cfg: &ModelConfig,
    summary: NodeId,
    batch: usize,
) -> (NodeId, NodeId) {
    let proj = g.input(PROJECTION);
    let proj_t = g.transpose(proj);
    let context = g.matmul(summary, proj_t);
    let logits = build_logits(g, context, batch);
    (context, logits)
}

fn build_logits<T: Scalar>(g: &mut Graph<T>, context: NodeId, batch: usize) -> NodeId {
    let w = g.input(CLASSIFIER_WEIGHT);
    let b = g.input(CLASSIFIER_BIAS);
    let w_t = g.transpose(w);
    let z = g.matmul(context, w_t);
    let b_rows = g.repeat(b, 0, batch);
    g.add(z, b_rows)
}

/// Cross-entropy per batch element and its batch mean.
/// Returns (mean loss 1×1, per-element loss B×1).
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    labels: &[usize],
    num_classes: usize,
) -> (NodeId, NodeId) {
    let onehot = Tensor::from_fn(labels.len(), num_classes, |b, c| {
        if labels[b] == c {
            T::one()
        } else {
            T::zero()
        }
    });
    let onehot = g.constant(onehot);
    let logp = g.log_softmax(logits, 1);
    let picked = g.mul(logp, onehot);
    let row_mean = g.mean(picked, 1);
    let per_item = g.scale(row_mean, -(num_classes as f64));
    let mean = g.mean(per_item, 0);
    (mean, per_item)
}

/// Classifier head alone, for a context vector bound as input `context`.
pub(crate) fn build_head_only<T: Scalar>(g: &mut Graph<T>, context: NodeId) -> NodeId {
    build_logits(g, context, 1)
}
