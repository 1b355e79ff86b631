use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GnnKind, ModelConfig, ProjectionKind};
use super::ModelError;
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::modality::Modality;

pub const LSTM_GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Every trainable tensor, in a fixed registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

/// Shape and initializer of one parameter.
#[derive(Clone, Debug)]
struct Slot {
    name: String,
    shape: [usize; 2],
    init: Init,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Constant(f64),
    /// Glorot uniform.
    Glorot,
}

fn slot(name: String, rows: usize, cols: usize, init: Init) -> Slot {
    Slot {
        name,
        shape: [rows, cols],
        init,
    }
}

fn linear(prefix: &str, input: usize, output: usize, slots: &mut Vec<Slot>) {
    slots.push(slot(format!("{prefix}.w"), input, output, Init::Glorot));
    slots.push(slot(format!("{prefix}.b"), 1, output, Init::Zeros));
}

fn gnn_slots(prefix: &str, config: &ModelConfig, slots: &mut Vec<Slot>) {
    for (l, (input, output)) in config.gnn_dims().into_iter().enumerate() {
        slots.push(slot(format!("{prefix}.layer{l}.w"), input, output, Init::Glorot));
        if config.gnn_kind == GnnKind::Attention {
            slots.push(slot(format!("{prefix}.layer{l}.a_dst"), output, 1, Init::Glorot));
            slots.push(slot(format!("{prefix}.layer{l}.a_src"), output, 1, Init::Glorot));
        }
    }
}

/// Parameter layout implied by a config. Only the blocks the ablation
/// variant actually uses are allocated.
fn layout(config: &ModelConfig) -> Vec<Slot> {
    let d = config.d;
    let mut slots = Vec::new();
    for m in [Modality::Visual, Modality::Audio] {
        let input = config.widths.get(m);
        match config.projection_visual_audio {
            ProjectionKind::Lstm => {
                for gate in LSTM_GATES {
                    let p = format!("proj.{m}.lstm");
                    slots.push(slot(format!("{p}.w_{gate}"), input, d, Init::Glorot));
                    slots.push(slot(format!("{p}.u_{gate}"), d, d, Init::Glorot));
                    let bias = if gate == "f" { Init::Constant(1.0) } else { Init::Zeros };
                    slots.push(slot(format!("{p}.b_{gate}"), 1, d, bias));
                }
            }
            ProjectionKind::Mlp => {
                linear(&format!("proj.{m}.mlp.l1"), input, d, &mut slots);
                linear(&format!("proj.{m}.mlp.l2"), d, d, &mut slots);
            }
        }
    }
    linear("proj.text.mlp.l1", config.widths.text, d, &mut slots);
    linear("proj.text.mlp.l2", d, d, &mut slots);
    if config.ablation.uses_weight_graph() {
        gnn_slots("weight_gnn", config, &mut slots);
        linear("weight_head.l1", d, config.weight_head_hidden, &mut slots);
        linear("weight_head.l2", config.weight_head_hidden, 1, &mut slots);
    }
    if config.ablation.uses_instance_graph() {
        gnn_slots("instance_gnn", config, &mut slots);
    }
    linear("classifier.l1", 3 * d, config.classifier_hidden, &mut slots);
    linear("classifier.l2", config.classifier_hidden, 2, &mut slots);
    slots
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: Glorot-uniform weights, zero biases, and a unit
    /// forget-gate bias for LSTMs.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for s in layout(config) {
            let [r, c] = s.shape;
            let data = match s.init {
                Init::Zeros => vec![T::zero(); r * c],
                Init::Constant(v) => vec![T::of(v); r * c],
                Init::Glorot => {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    (0..r * c).map(|_| T::of(rng.random_range(-limit..limit))).collect()
                }
            };
            names.push(s.name);
            tensors.push(Arc::new(Tensor::matrix(r, c, data)));
        }
        Ok(Self::from_parts(names, tensors))
    }

    fn from_parts(names: Vec<String>, tensors: Vec<Arc<Tensor<T>>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// Builds a parameter set from named tensors, checking it against the
    /// layout `config` implies.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != named.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        for (slot, (name, t)) in expected.iter().zip(&named) {
            if &slot.name != name || t.shape() != slot.shape {
                return Err(ModelError::Config(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    slot.name,
                    slot.shape
                )));
            }
        }
        let (names, tensors) = named.into_iter().map(|(n, t)| (n, Arc::new(t))).unzip();
        Ok(Self::from_parts(names, tensors))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| self.tensors[i].as_ref())
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    /// Mutable access for optimizers. Clones only if a tape still holds the tensor.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), ModelError> {
        let &i = self.index.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(ModelError::Config(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(Arc::as_ref))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams::from_parts(
            self.names.clone(),
            self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        )
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn register(&self, tape: &Tape<T>) -> ParamVars {
        let vars = self.tensors.iter().map(|t| tape.param_shared(Arc::clone(t))).collect();
        ParamVars {
            index: self.index.clone(),
            vars,
        }
    }
}

/// Parameters as recorded on one tape.
#[derive(Clone, Debug)]
pub struct ParamVars {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Vars in parameter registration order.
    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}
