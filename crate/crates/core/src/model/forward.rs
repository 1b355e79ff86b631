//! Differentiable forward pass recorded on a [`Tape`].
//!
//! Shapes: projected features are `[N, D]` per modality; weight-graph node
//! representations are `[3N, D]` (modality-major); node weights are one
//! `[N, 1]` column per modality; instance weights are `[K, 1]`; instance
//! features are `[K, 3D]`; the classification feature is `[1, 3D]`.

use std::sync::Arc;

use rand::Rng;

use super::config::{Ablation, GnnKind, ModelConfig, ProjectionKind};
use super::params::{ModelParams, ParamVars, LSTM_GATES};
use super::ModelError;
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::features::SegmentFeatures;
use crate::graph::{build_instance_subgraphs, build_weight_graph, VideoGraph};
use crate::modality::Modality;
use crate::segment::InstancePartition;

type Result<T> = std::result::Result<T, ModelError>;

fn indices(range: std::ops::Range<usize>) -> Arc<[usize]> {
    range.collect::<Vec<_>>().into()
}

/// `x W + b`.
pub fn linear<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, vars.get(&format!("{prefix}.w"))?)?;
    Ok(tape.add(xw, vars.get(&format!("{prefix}.b"))?)?)
}

/// Single-layer LSTM over the rows of `x` (one row per time step); returns
/// the hidden state at every step stacked as `[steps, D]`. Initial state is zero.
pub fn lstm<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let steps = tape.shape(x)[0];
    // input contributions for all steps at once, one [steps, D] block per gate
    let mut xw = Vec::with_capacity(4);
    let mut u = Vec::with_capacity(4);
    for gate in LSTM_GATES {
        let w = tape.matmul(x, vars.get(&format!("{prefix}.w_{gate}"))?)?;
        xw.push(tape.add(w, vars.get(&format!("{prefix}.b_{gate}"))?)?);
        u.push(vars.get(&format!("{prefix}.u_{gate}"))?);
    }
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut pre = [xw[0]; 4];
        for (g, slot) in pre.iter_mut().enumerate() {
            let row = tape.gather_rows(xw[g], vec![t].into())?;
            *slot = match h {
                Some(h) => tape.add(row, tape.matmul(h, u[g])?)?,
                None => row,
            };
        }
        let i = tape.sigmoid(pre[0])?;
        let f = tape.sigmoid(pre[1])?;
        let g = tape.tanh(pre[2])?;
        let o = tape.sigmoid(pre[3])?;
        let ig = tape.mul(i, g)?;
        let c_next = match c {
            Some(c) => tape.add(tape.mul(f, c)?, ig)?,
            None => ig,
        };
        let h_next = tape.mul(o, tape.tanh(c_next)?)?;
        outputs.push(h_next);
        h = Some(h_next);
        c = Some(c_next);
    }
    Ok(tape.concat(&outputs, 0)?)
}

/// Two-layer perceptron with a tanh hidden layer.
pub fn tanh_mlp<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let hidden = tape.tanh(linear(tape, vars, &format!("{prefix}.l1"), x)?)?;
    linear(tape, vars, &format!("{prefix}.l2"), hidden)
}

/// Two-layer perceptron with a relu hidden layer.
fn relu_mlp<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let hidden = tape.relu(linear(tape, vars, &format!("{prefix}.l1"), x)?)?;
    linear(tape, vars, &format!("{prefix}.l2"), hidden)
}

/// Records raw features as constants, checking widths and segment count.
pub fn input_blocks<T: Scalar>(tape: &Tape<T>, video: &SegmentFeatures, config: &ModelConfig) -> Result<[Var; 3]> {
    if video.n_segments() != config.n_segments {
        return Err(ModelError::SegmentCount {
            expected: config.n_segments,
            found: video.n_segments(),
        });
    }
    video.check_widths(&config.widths)?;
    Ok(Modality::ALL.map(|m| tape.constant(video.block(m).cast())))
}

/// Maps raw segment features to `[N, D]` per modality: LSTM (or MLP) for
/// visual and audio, tanh-MLP for text.
pub fn project_segments<T: Scalar>(
    tape: &Tape<T>,
    vars: &ParamVars,
    raw: [Var; 3],
    config: &ModelConfig,
) -> Result<[Var; 3]> {
    let mut out = raw;
    for m in Modality::ALL {
        let x = raw[m.index()];
        out[m.index()] = match (m, config.projection_visual_audio) {
            (Modality::Text, _) => tanh_mlp(tape, vars, "proj.text.mlp", x)?,
            (_, ProjectionKind::Lstm) => lstm(tape, vars, &format!("proj.{m}.lstm"), x)?,
            (_, ProjectionKind::Mlp) => tanh_mlp(tape, vars, &format!("proj.{m}.mlp"), x)?,
        };
    }
    Ok(out)
}

/// Message passing over `graph` starting from node representations `h`.
///
/// Relu between layers, identity after the last.
pub fn gnn_forward<T: Scalar>(
    tape: &Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    graph: &VideoGraph,
    h: Var,
    config: &ModelConfig,
) -> Result<Var> {
    let index = graph.message_index();
    let n = index.n_nodes;
    if tape.shape(h)[0] != n {
        return Err(ModelError::Config(format!(
            "graph has {n} nodes but {} representations were given",
            tape.shape(h)[0]
        )));
    }
    let norm = match config.gnn_kind {
        GnnKind::DegreeNormalizedConv => {
            let deg = index.degrees();
            let coef: Vec<T> = index
                .targets
                .iter()
                .zip(index.sources.iter())
                .map(|(&t, &s)| T::of(1.0 / ((deg[t] * deg[s]) as f64).sqrt()))
                .collect();
            Some(tape.constant(Tensor::matrix(coef.len(), 1, coef)))
        }
        GnnKind::Attention => None,
    };
    let mut h = h;
    for l in 0..config.gnn_layers {
        let w = vars.get(&format!("{prefix}.layer{l}.w"))?;
        let hw = tape.matmul(h, w)?;
        let messages = tape.gather_rows(hw, index.sources.clone())?;
        let coef = match norm {
            Some(c) => c,
            None => {
                let a_dst = vars.get(&format!("{prefix}.layer{l}.a_dst"))?;
                let a_src = vars.get(&format!("{prefix}.layer{l}.a_src"))?;
                let s_dst = tape.gather_rows(tape.matmul(hw, a_dst)?, index.targets.clone())?;
                let s_src = tape.gather_rows(tape.matmul(hw, a_src)?, index.sources.clone())?;
                let logits = tape.leaky_relu(tape.add(s_dst, s_src)?, config.attention_slope)?;
                tape.group_softmax(logits, index.targets.clone(), n)?
            }
        };
        let weighted = tape.mul(messages, coef)?;
        h = tape.scatter_add_rows(weighted, index.targets.clone(), n)?;
        if l + 1 < config.gnn_layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Attention coefficients of the first attention layer, one per directed
/// message (targets sorted). Exposed for inspection and tests.
pub fn attention_coefficients<T: Scalar>(
    tape: &Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    graph: &VideoGraph,
    h: Var,
    slope: f64,
) -> Result<Var> {
    let index = graph.message_index();
    let hw = tape.matmul(h, vars.get(&format!("{prefix}.layer0.w"))?)?;
    let s_dst = tape.gather_rows(tape.matmul(hw, vars.get(&format!("{prefix}.layer0.a_dst"))?)?, index.targets.clone())?;
    let s_src = tape.gather_rows(tape.matmul(hw, vars.get(&format!("{prefix}.layer0.a_src"))?)?, index.sources.clone())?;
    let logits = tape.leaky_relu(tape.add(s_dst, s_src)?, slope)?;
    Ok(tape.group_softmax(logits, index.targets.clone(), index.n_nodes)?)
}

/// Scores each weight-graph node through the weight head, then normalizes
/// the scores of each modality with a softmax over its `N` nodes.
pub fn node_importance<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, reps: Var, n: usize) -> Result<[Var; 3]> {
    let scores = relu_mlp(tape, vars, "weight_head", reps)?;
    Ok(Modality::ALL.map(|m| {
        let block = tape.gather_rows(scores, indices(m.index() * n..(m.index() + 1) * n))?;
        tape.softmax(block, 0)
    })
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()?
    .try_into()
    .expect("three modalities"))
}

/// Instance weight: one third of the summed node weights of all three
/// modalities over the instance's segments. Returns `[K, 1]`.
pub fn instance_weights<T: Scalar>(
    tape: &Tape<T>,
    alpha_hat: [Var; 3],
    partition: &InstancePartition,
) -> Result<Var> {
    let total = tape.add(tape.add(alpha_hat[0], alpha_hat[1])?, alpha_hat[2])?;
    let third = tape.scale(total, 1.0 / 3.0)?;
    Ok(tape.scatter_add_rows(third, partition.instance_of().into(), partition.k())?)
}

/// Per-modality mean of a subgraph's node representations, concatenated
/// visual, audio, text. `reps` is `[3M, D]`; the result is `[1, 3D]`.
pub fn pool_instance<T: Scalar>(tape: &Tape<T>, reps: Var, m: usize) -> Result<Var> {
    let parts = Modality::ALL
        .map(|modality| {
            let rows = tape.gather_rows(reps, indices(modality.index() * m..(modality.index() + 1) * m))?;
            tape.row_mean(rows)
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(tape.concat(&parts, 1)?)
}

/// Instance features `[K, 3D]` from the node representations of each subgraph.
pub fn instance_features<T: Scalar>(tape: &Tape<T>, subgraph_reps: &[Var], partition: &InstancePartition) -> Result<Var> {
    let rows = subgraph_reps
        .iter()
        .map(|&r| pool_instance(tape, r, partition.instance_len()))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat(&rows, 0)?)
}

/// `f = sum_i alpha_i f_i` as `[1, 3D]`.
pub fn aggregate<T: Scalar>(tape: &Tape<T>, alpha: Var, f_instances: Var) -> Result<Var> {
    Ok(tape.matmul(tape.transpose(alpha)?, f_instances)?)
}

/// Classifier MLP logits and their softmax probabilities.
pub fn classify<T: Scalar>(tape: &Tape<T>, vars: &ParamVars, f: Var) -> Result<(Var, Var)> {
    let logits = relu_mlp(tape, vars, "classifier", f)?;
    Ok((logits, tape.softmax(logits, 1)?))
}

/// Handles to the interesting intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub projected: [Var; 3],
    pub logits: Var,
    /// `[1, 2]`: non-hate, hate.
    pub h_hat: Var,
    /// `[K, 1]`.
    pub alpha: Var,
    /// Per-modality `[N, 1]` node weights when the weight graph is used.
    pub alpha_hat: Option<[Var; 3]>,
    /// `[K, 3D]` when the instance graph is used.
    pub f_instances: Option<Var>,
    /// `[1, 3D]`.
    pub feature: Var,
    pub weight_graph: Option<VideoGraph>,
    pub subgraphs: Vec<VideoGraph>,
}

/// Records the whole model on `tape`.
///
/// With `dropout_rng` set and a positive `config.dropout`, an inverted
/// dropout mask is applied to the classification feature.
pub fn forward_on_tape<T: Scalar, R: Rng>(
    tape: &Tape<T>,
    vars: &ParamVars,
    video: &SegmentFeatures,
    config: &ModelConfig,
    dropout_rng: Option<&mut R>,
) -> Result<ForwardVars> {
    let raw = input_blocks(tape, video, config)?;
    let projected = project_segments(tape, vars, raw, config)?;
    let partition = InstancePartition::new(config.n_segments, config.n_instances)?;
    let n = config.n_segments;
    let k = config.n_instances;
    let values = projected.map(|v| tape.value(v));
    let blocks = [values[0].as_ref(), values[1].as_ref(), values[2].as_ref()];

    let mut weight_graph = None;
    let mut alpha_hat = None;
    let mut alpha = None;
    if config.ablation.uses_weight_graph() {
        let graph = build_weight_graph(blocks, config.epsilon);
        let stacked = tape.concat(&projected, 0)?;
        let reps = gnn_forward(tape, vars, "weight_gnn", &graph, stacked, config)?;
        let weights = node_importance(tape, vars, reps, n)?;
        alpha = Some(instance_weights(tape, weights, &partition)?);
        alpha_hat = Some(weights);
        weight_graph = Some(graph);
    }

    let mut subgraphs = Vec::new();
    let mut f_instances = None;
    if config.ablation.uses_instance_graph() {
        subgraphs = build_instance_subgraphs(blocks, &partition, config.epsilon);
        let mut reps = Vec::with_capacity(k);
        for (i, g) in subgraphs.iter().enumerate() {
            let rows = indices(partition.segments(i));
            let parts = projected
                .iter()
                .map(|&p| tape.gather_rows(p, rows.clone()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let h0 = tape.concat(&parts, 0)?;
            reps.push(gnn_forward(tape, vars, "instance_gnn", g, h0, config)?);
        }
        f_instances = Some(instance_features(tape, &reps, &partition)?);
    }

    let uniform = || tape.constant(Tensor::filled(&[k, 1], T::one() / T::of(k as f64)));
    let (feature, alpha) = match config.ablation {
        Ablation::Full => {
            let alpha = alpha.expect("weight graph ran");
            (aggregate(tape, alpha, f_instances.expect("instance graph ran"))?, alpha)
        }
        Ablation::InstanceOnly => (tape.row_mean(f_instances.expect("instance graph ran"))?, uniform()),
        Ablation::WeightOnly => {
            let weights = alpha_hat.expect("weight graph ran");
            let parts = Modality::ALL
                .map(|m| tape.matmul(tape.transpose(weights[m.index()])?, projected[m.index()]))
                .into_iter()
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (tape.concat(&parts, 1)?, alpha.expect("weight graph ran"))
        }
        Ablation::NoGraph => {
            let parts = projected
                .iter()
                .map(|&p| tape.row_mean(p))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (tape.concat(&parts, 1)?, uniform())
        }
    };

    let feature = match dropout_rng {
        Some(rng) if config.dropout > 0.0 => {
            let keep = 1.0 - config.dropout;
            let width = tape.shape(feature)[1];
            let mask: Vec<T> = (0..width)
                .map(|_| if rng.random::<f64>() < keep { T::of(1.0 / keep) } else { T::zero() })
                .collect();
            tape.mul(feature, tape.constant(Tensor::matrix(1, width, mask)))?
        }
        _ => feature,
    };

    let (logits, h_hat) = classify(tape, vars, feature)?;
    Ok(ForwardVars {
        projected,
        logits,
        h_hat,
        alpha,
        alpha_hat,
        f_instances,
        feature,
        weight_graph,
        subgraphs,
    })
}

/// Plain values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `[non-hate, hate]` probabilities.
    pub h_hat: [f64; 2],
    pub logits: [f64; 2],
    /// One weight per instance.
    pub alpha: Vec<f64>,
    /// Node weights per modality (visual, audio, text) when the weight graph is used.
    pub alpha_hat: Option<[Vec<f64>; 3]>,
    /// Instance features, `K` rows of width `3D`, when the instance graph is used.
    pub f_instances: Option<Vec<Vec<f64>>>,
}

impl ForwardOutput {
    pub fn predicted_label(&self) -> u8 {
        u8::from(self.h_hat[1] > self.h_hat[0])
    }

    /// Index of the largest instance weight (first on ties).
    pub fn top_instance(&self) -> usize {
        self.alpha
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &a)| if a > best.1 { (i, a) } else { best })
            .0
    }
}

pub fn read_output<T: Scalar>(tape: &Tape<T>, vars: &ForwardVars) -> ForwardOutput {
    let pair = |v: Var| {
        let t = tape.value(v);
        [t.data()[0].as_f64(), t.data()[1].as_f64()]
    };
    ForwardOutput {
        h_hat: pair(vars.h_hat),
        logits: pair(vars.logits),
        alpha: tape.value(vars.alpha).to_f64_vec(),
        alpha_hat: vars.alpha_hat.map(|w| w.map(|v| tape.value(v).to_f64_vec())),
        f_instances: vars.f_instances.map(|f| {
            let t = tape.value(f);
            (0..t.rows()).map(|r| t.row(r).iter().map(|x| x.as_f64()).collect()).collect()
        }),
    }
}

/// Inference-mode forward pass.
pub fn forward<T: Scalar>(video: &SegmentFeatures, params: &ModelParams<T>, config: &ModelConfig) -> Result<ForwardOutput> {
    let tape = Tape::new();
    let vars = params.register(&tape);
    let out = forward_on_tape::<T, rand_chacha::ChaCha8Rng>(&tape, &vars, video, config, None)?;
    Ok(read_output(&tape, &out))
}
