//! Minimal dense reverse-mode differentiation.
//!
//! A [`Graph`] is built once from primitive applications, then
//! [`Graph::evaluate`]d with named input tensors and differentiated with
//! [`Graph::backward`]. Everything is generic over [`Scalar`] so the same
//! model code runs in 64-bit for finite-difference checks and in 32-bit for
//! training.

mod graph;
mod tensor;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

pub use graph::{Graph, NodeId};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("node {node} ({op}): shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("node {node} ({op}): expected a rank-2 tensor, got {dims:?}")]
    Rank {
        node: usize,
        op: &'static str,
        dims: Vec<usize>,
    },
    #[error("node {node} ({op}): invalid axis {axis}")]
    Axis {
        node: usize,
        op: &'static str,
        axis: usize,
    },
    #[error("node {node}: slice [{start}, {end}) out of range for {dims:?}")]
    SliceRange {
        node: usize,
        start: usize,
        end: usize,
        dims: Vec<usize>,
    },
    #[error("node {0}: concat of zero tensors")]
    EmptyConcat(usize),
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("backward called before evaluate")]
    NotEvaluated,
    #[error("tensor dims {dims:?} do not match data length {len}")]
    DataLength { dims: Vec<usize>, len: usize },
    #[error("gradient check needs a scalar output, got {0:?}")]
    NonScalarOutput(Vec<usize>),
}

impl NumericsError {
    pub fn is_non_finite(&self) -> bool {
        matches!(self, NumericsError::NonFinite { .. })
    }
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, as (input name, flat index).
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on a seeded subsample of at most `max_coords`
/// input coordinates (all of them when there are fewer).
///
/// The error per coordinate is `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn gradient_check<T: Scalar>(
    graph: &mut Graph<T>,
    inputs: &BTreeMap<String, Tensor<T>>,
    output: NodeId,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError> {
    let out_dims = graph.evaluate(inputs, output)?.dims().to_vec();
    if out_dims.iter().product::<usize>() != 1 {
        return Err(NumericsError::NonScalarOutput(out_dims));
    }
    let analytic = graph.backward(output, &Tensor::filled(&out_dims, T::one()))?;

    let coords: Vec<(String, usize)> = analytic
        .iter()
        .flat_map(|(name, g)| (0..g.len()).map(move |i| (name.clone(), i)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut idx = sample(&mut rng, coords.len(), max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = inputs.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: chosen.len(),
    };
    for ci in chosen {
        let (name, i) = &coords[ci];
        let original = inputs[name].data()[*i];
        let mut eval_at = |delta: f64| -> Result<f64, NumericsError> {
            probe.get_mut(name).expect("bound").data_mut()[*i] =
                T::of(original.as_f64() + delta);
            Ok(graph.evaluate(&probe, output)?.data()[0].as_f64())
        };
        let plus = eval_at(eps)?;
        let minus = eval_at(-eps)?;
        probe.get_mut(name).expect("bound").data_mut()[*i] = original;

        let fd = (plus - minus) / (2.0 * eps);
        let ad = analytic[name].data()[*i].as_f64();
        let denom = ad.abs().max(fd.abs()).max(1e-8);
        let err = (ad - fd).abs() / denom;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), *i));
        }
    }
    // leave the graph holding values for the unperturbed inputs
    graph.evaluate(inputs, output)?;
    Ok(report)
}
