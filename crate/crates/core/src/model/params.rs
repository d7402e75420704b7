use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::ModelError;
use crate::numerics::{Scalar, Tensor};

/// Layer sizes of the BiLSTM-attention classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden units per direction.
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub context_dim: usize,
    pub num_classes: usize,
    /// Number of attention refinement passes.
    pub attention_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// 23 log-Mel inputs, 2×512 BiLSTM, 128-d attention context, 6 classes.
    pub fn full() -> Self {
        Self {
            input_dim: 23,
            hidden_dim: 512,
            num_layers: 2,
            context_dim: 128,
            num_classes: 6,
            attention_iterations: 1,
        }
    }

    pub fn toy(hidden_dim: usize, context_dim: usize) -> Self {
        Self {
            hidden_dim,
            context_dim,
            ..Self::full()
        }
    }

    /// Width of a BiLSTM output frame.
    pub fn output_width(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("context_dim", self.context_dim),
            ("num_classes", self.num_classes),
            ("attention_iterations", self.attention_iterations),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Every trainable tensor in canonical (sorted) order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let h = self.hidden_dim;
        let c = self.context_dim;
        let w = self.output_width();
        let mut specs = Vec::new();
        for layer in 0..self.num_layers {
            let input = if layer == 0 { self.input_dim } else { w };
            for dir in Direction::BOTH {
                specs.push(ParamSpec::weight(lstm_name(layer, dir, "w_ih"), 4 * h, input, input));
                specs.push(ParamSpec::weight(lstm_name(layer, dir, "w_hh"), 4 * h, h, h));
                specs.push(ParamSpec {
                    name: lstm_name(layer, dir, "bias"),
                    dims: [1, 4 * h],
                    init: Init::LstmBias { hidden: h },
                });
            }
        }
        for k in 0..self.attention_iterations {
            specs.push(ParamSpec::weight(attention_name(k, "v_s1"), c, w, w));
            specs.push(ParamSpec::weight(attention_name(k, "v_s2"), c, c, c));
            specs.push(ParamSpec::weight(attention_name(k, "v_s3"), c, 1, c));
        }
        specs.push(ParamSpec::weight(PROJECTION.into(), w, c, c));
        specs.push(ParamSpec::weight(CLASSIFIER_WEIGHT.into(), self.num_classes, w, w));
        specs.push(ParamSpec {
            name: CLASSIFIER_BIAS.into(),
            dims: [1, self.num_classes],
            init: Init::Zero,
        });
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        specs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

pub const PROJECTION: &str = "projection.weight";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

/// `blstm.l{layer}.{fwd|bwd}.{kind}`; gates are stacked as
/// [input, forget, cell, output] along the first axis.
pub fn lstm_name(layer: usize, dir: Direction, kind: &str) -> String {
    format!("blstm.l{layer}.{}.{kind}", dir.tag())
}

pub fn attention_name(iteration: usize, kind: &str) -> String {
    format!("attention.{iteration}.{kind}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform { fan_in: usize },
    /// Forget-gate slice 1.0, everything else 0.
    LstmBias { hidden: usize },
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: [usize; 2],
    pub init: Init,
}

impl ParamSpec {
    fn weight(name: String, rows: usize, cols: usize, fan_in: usize) -> Self {
        Self {
            name,
            dims: [rows, cols],
            init: Init::Uniform { fan_in },
        }
    }
}

/// All trainable tensors, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Checks that exactly the expected tensors are present with the
    /// expected shapes and finite values.
    pub fn from_tensors(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.param_specs();
        for spec in &specs {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| ModelError::MissingTensor(spec.name.clone()))?;
            if t.dims() != spec.dims {
                return Err(ModelError::TensorShape {
                    name: spec.name.clone(),
                    expected: spec.dims.to_vec(),
                    found: t.dims().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(ModelError::NonFinite(spec.name.clone()));
            }
        }
        if let Some(extra) = tensors
            .keys()
            .find(|k| !specs.iter().any(|s| &s.name == *k))
        {
            return Err(ModelError::UnexpectedTensor(extra.clone()));
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[name]
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// Seeded initialization: uniform(±1/√fan_in) weights drawn from
/// xoshiro256++ in canonical tensor order, forget-gate bias 1, other biases 0.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>, ModelError> {
    cfg.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in cfg.param_specs() {
        let [rows, cols] = spec.dims;
        let t = match spec.init {
            Init::Uniform { fan_in } => {
                let a = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..a)))
            }
            Init::LstmBias { hidden } => Tensor::from_fn(rows, cols, |_, c| {
                if (hidden..2 * hidden).contains(&c) {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            Init::Zero => Tensor::zeros(&[rows, cols]),
        };
        tensors.insert(spec.name, t);
    }
    ModelParams::from_tensors(*cfg, tensors)
}
