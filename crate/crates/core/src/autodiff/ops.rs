use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Lower clamp applied by [`Primitive::Log`] before taking the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Differentiable primitive operations.
///
/// Matrix-shaped primitives operate on rank-2 tensors. Binary elementwise
/// primitives accept a right operand of identical shape, a `[1, cols]` row
/// (broadcast down the rows) or a `[rows, 1]` column (broadcast across columns).
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Concat { axis: usize },
    /// Mean over rows: `[r, c] -> [1, c]`.
    RowMean,
    /// Sum over rows: `[r, c] -> [1, c]`.
    RowSum,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu { slope: f64 },
    Softmax { axis: usize },
    /// Natural log of `max(x, LOG_CLAMP)`; the gradient is zero where clamped.
    Log,
    Exp,
    GatherRows { indices: Arc<[usize]> },
    ScatterAddRows { indices: Arc<[usize]>, size: usize },
    Transpose,
    /// Softmax of a `[E, 1]` column within groups: entry `e` belongs to group
    /// `groups[e]`. Used for neighbourhood-normalized attention.
    GroupSoftmax { groups: Arc<[usize]>, count: usize },
}

/// Attribute value for [`Primitive::from_id`].
#[derive(Clone, Debug, PartialEq)]
pub enum Attr {
    Int(usize),
    Float(f64),
    Indices(Vec<usize>),
}

pub type Attrs = BTreeMap<String, Attr>;

fn attr_int(op: &str, attrs: &Attrs, key: &str) -> Result<usize, AutodiffError> {
    match attrs.get(key) {
        Some(Attr::Int(v)) => Ok(*v),
        _ => Err(AutodiffError::MissingAttr {
            op: op.to_string(),
            attr: key.to_string(),
        }),
    }
}

fn attr_float(op: &str, attrs: &Attrs, key: &str) -> Result<f64, AutodiffError> {
    match attrs.get(key) {
        Some(Attr::Float(v)) => Ok(*v),
        Some(Attr::Int(v)) => Ok(*v as f64),
        _ => Err(AutodiffError::MissingAttr {
            op: op.to_string(),
            attr: key.to_string(),
        }),
    }
}

fn attr_indices(op: &str, attrs: &Attrs, key: &str) -> Result<Arc<[usize]>, AutodiffError> {
    match attrs.get(key) {
        Some(Attr::Indices(v)) => Ok(v.clone().into()),
        _ => Err(AutodiffError::MissingAttr {
            op: op.to_string(),
            attr: key.to_string(),
        }),
    }
}

impl Primitive {
    /// Looks a primitive up by its string id, pulling attributes from `attrs`.
    pub fn from_id(id: &str, attrs: &Attrs) -> Result<Self, AutodiffError> {
        Ok(match id {
            "matmul" => Self::MatMul,
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" | "elementwise-mul" => Self::Mul,
            "scalar-mul" | "scale" => Self::Scale(attr_float(id, attrs, "scalar")?),
            "concat" => Self::Concat {
                axis: attr_int(id, attrs, "axis")?,
            },
            "row-mean" => Self::RowMean,
            "row-sum" => Self::RowSum,
            "tanh" => Self::Tanh,
            "sigmoid" => Self::Sigmoid,
            "relu" => Self::Relu,
            "leaky-relu" => Self::LeakyRelu {
                slope: attr_float(id, attrs, "slope")?,
            },
            "softmax" => Self::Softmax {
                axis: attr_int(id, attrs, "axis")?,
            },
            "log" => Self::Log,
            "exp" => Self::Exp,
            "gather-rows" => Self::GatherRows {
                indices: attr_indices(id, attrs, "indices")?,
            },
            "scatter-add-rows" => Self::ScatterAddRows {
                indices: attr_indices(id, attrs, "indices")?,
                size: attr_int(id, attrs, "size")?,
            },
            "transpose" => Self::Transpose,
            "group-softmax" => Self::GroupSoftmax {
                groups: attr_indices(id, attrs, "groups")?,
                count: attr_int(id, attrs, "count")?,
            },
            other => return Err(AutodiffError::UnknownPrimitive(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MatMul => "matmul",
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "elementwise-mul",
            Self::Scale(_) => "scalar-mul",
            Self::Concat { .. } => "concat",
            Self::RowMean => "row-mean",
            Self::RowSum => "row-sum",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
            Self::LeakyRelu { .. } => "leaky-relu",
            Self::Softmax { .. } => "softmax",
            Self::Log => "log",
            Self::Exp => "exp",
            Self::GatherRows { .. } => "gather-rows",
            Self::ScatterAddRows { .. } => "scatter-add-rows",
            Self::Transpose => "transpose",
            Self::GroupSoftmax { .. } => "group-softmax",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Self::MatMul | Self::Add | Self::Sub | Self::Mul => Some(2),
            Self::Concat { .. } => None,
            _ => Some(1),
        }
    }

    /// Evaluates the primitive, validating input shapes.
    pub fn forward<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, AutodiffError> {
        let op = self.name();
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(AutodiffError::Arity {
                    op,
                    expected: n,
                    found: inputs.len(),
                })
            }
            None if inputs.is_empty() => {
                return Err(AutodiffError::Arity {
                    op,
                    expected: 1,
                    found: 0,
                })
            }
            _ => {}
        }
        let needs_matrix = !matches!(self, Self::Tanh | Self::Sigmoid | Self::Relu | Self::LeakyRelu { .. } | Self::Log | Self::Exp | Self::Scale(_));
        if needs_matrix {
            if let Some(bad) = inputs.iter().find(|t| !t.is_matrix()) {
                return Err(AutodiffError::shape(op, format!("expected rank-2 input, got {:?}", bad.shape())));
            }
        }
        let out = match self {
            Self::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.cols() != b.rows() {
                    return Err(AutodiffError::shape(
                        op,
                        format!("inner dims differ: {:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                a.matmul_raw(b)
            }
            Self::Add => broadcast_binary(op, inputs[0], inputs[1], |x, y| x + y)?,
            Self::Sub => broadcast_binary(op, inputs[0], inputs[1], |x, y| x - y)?,
            Self::Mul => broadcast_binary(op, inputs[0], inputs[1], |x, y| x * y)?,
            Self::Scale(s) => {
                let s = T::of(*s);
                inputs[0].map(|x| x * s)
            }
            Self::Concat { axis } => concat(inputs, *axis)?,
            Self::RowMean => {
                let mut out = row_sum(inputs[0]);
                let inv = T::one() / T::of(inputs[0].rows() as f64);
                out.data_mut().iter_mut().for_each(|x| *x = *x * inv);
                out
            }
            Self::RowSum => row_sum(inputs[0]),
            Self::Tanh => inputs[0].map(|x| x.tanh()),
            Self::Sigmoid => inputs[0].map(sigmoid),
            Self::Relu => inputs[0].map(|x| x.max(T::zero())),
            Self::LeakyRelu { slope } => {
                let s = T::of(*slope);
                inputs[0].map(|x| if x > T::zero() { x } else { x * s })
            }
            Self::Softmax { axis } => softmax(op, inputs[0], *axis)?,
            Self::Log => {
                let eps = T::of(LOG_CLAMP);
                inputs[0].map(|x| x.max(eps).ln())
            }
            Self::Exp => inputs[0].map(|x| x.exp()),
            Self::GatherRows { indices } => gather_rows(op, inputs[0], indices)?,
            Self::ScatterAddRows { indices, size } => {
                scatter_add_rows(op, inputs[0], indices, *size)?
            }
            Self::Transpose => inputs[0].transpose(),
            Self::GroupSoftmax { groups, count } => group_softmax(op, inputs[0], groups, *count)?,
        };
        Ok(out)
    }

    /// Vector-Jacobian product: gradients for each input given the upstream
    /// gradient `grad` of the output `out`.
    pub(crate) fn backward<T: Scalar>(
        &self,
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Tensor<T>> {
        match self {
            Self::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                vec![grad.matmul_raw(&b.transpose()), a.transpose().matmul_raw(grad)]
            }
            Self::Add => vec![grad.clone(), reduce_to(grad, inputs[1].shape())],
            Self::Sub => vec![
                grad.clone(),
                reduce_to(&grad.map(|x| -x), inputs[1].shape()),
            ],
            Self::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let ga = broadcast_binary("mul", grad, b, |g, y| g * y).expect("shapes checked in forward");
                // `a` always has the output's shape; only `b` may be broadcast.
                let gb = zip(grad, a, |g, x| g * x);
                vec![ga, reduce_to(&gb, b.shape())]
            }
            Self::Scale(s) => {
                let s = T::of(*s);
                vec![grad.map(|g| g * s)]
            }
            Self::Concat { axis } => split(grad, inputs, *axis),
            Self::RowMean => {
                let x = inputs[0];
                let inv = T::one() / T::of(x.rows() as f64);
                vec![broadcast_rows(&grad.map(|g| g * inv), x.rows())]
            }
            Self::RowSum => vec![broadcast_rows(grad, inputs[0].rows())],
            Self::Tanh => vec![zip(grad, out, |g, y| g * (T::one() - y * y))],
            Self::Sigmoid => vec![zip(grad, out, |g, y| g * y * (T::one() - y))],
            Self::Relu => vec![zip(grad, inputs[0], |g, x| if x > T::zero() { g } else { T::zero() })],
            Self::LeakyRelu { slope } => {
                let s = T::of(*slope);
                vec![zip(grad, inputs[0], |g, x| if x > T::zero() { g } else { g * s })]
            }
            Self::Softmax { axis } => vec![softmax_backward(out, grad, *axis)],
            Self::Log => {
                let eps = T::of(LOG_CLAMP);
                vec![zip(grad, inputs[0], |g, x| if x > eps { g / x } else { T::zero() })]
            }
            Self::Exp => vec![zip(grad, out, |g, y| g * y)],
            Self::GatherRows { indices } => {
                let x = inputs[0];
                vec![scatter_add_rows("gather-rows", grad, indices, x.rows()).expect("indices checked in forward")]
            }
            Self::ScatterAddRows { indices, .. } => {
                vec![gather_rows("scatter-add-rows", grad, indices).expect("indices checked in forward")]
            }
            Self::Transpose => vec![grad.transpose()],
            Self::GroupSoftmax { groups, count } => {
                let mut dot = vec![T::zero(); *count];
                for (e, &g) in groups.iter().enumerate() {
                    dot[g] = dot[g] + grad.data()[e] * out.data()[e];
                }
                let data = groups
                    .iter()
                    .enumerate()
                    .map(|(e, &g)| out.data()[e] * (grad.data()[e] - dot[g]))
                    .collect();
                vec![Tensor::new(out.shape().to_vec(), data).expect("same shape")]
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

enum Broadcast {
    Same,
    Row,
    Col,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        Some(Broadcast::Same)
    } else if a.len() == 2 && b.len() == 2 && b[0] == 1 && b[1] == a[1] {
        Some(Broadcast::Row)
    } else if a.len() == 2 && b.len() == 2 && b[1] == 1 && b[0] == a[0] {
        Some(Broadcast::Col)
    } else {
        None
    }
}

fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, AutodiffError> {
    let kind = broadcast_kind(a.shape(), b.shape()).ok_or_else(|| {
        AutodiffError::shape(
            op,
            format!("cannot combine {:?} with {:?}", a.shape(), b.shape()),
        )
    })?;
    let c = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &x)| {
            let y = match kind {
                Broadcast::Same => b.data()[idx],
                Broadcast::Row => b.data()[idx % c],
                Broadcast::Col => b.data()[idx / c],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Sums a gradient of the broadcast output shape back down to `shape`.
fn reduce_to<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    match broadcast_kind(grad.shape(), shape).expect("shape checked in forward") {
        Broadcast::Same => grad.clone(),
        Broadcast::Row => row_sum(grad),
        Broadcast::Col => {
            let r = grad.rows();
            let data = (0..r).map(|i| grad.row(i).iter().copied().sum()).collect();
            Tensor::matrix(r, 1, data)
        }
    }
}

fn row_sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut out = vec![T::zero(); c];
    for i in 0..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(i)) {
            *o = *o + v;
        }
    }
    Tensor::matrix(1, c, out)
}

fn broadcast_rows<T: Scalar>(row: &Tensor<T>, rows: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows * row.cols());
    for _ in 0..rows {
        data.extend_from_slice(row.data());
    }
    Tensor::matrix(rows, row.cols(), data)
}

fn concat<T: Scalar>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, AutodiffError> {
    let first = inputs[0];
    match axis {
        0 => {
            let c = first.cols();
            if let Some(bad) = inputs.iter().find(|t| t.cols() != c) {
                return Err(AutodiffError::shape(
                    "concat",
                    format!("axis 0 needs equal column counts, got {} and {}", c, bad.cols()),
                ));
            }
            let rows = inputs.iter().map(|t| t.rows()).sum();
            let data = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(Tensor::matrix(rows, c, data))
        }
        1 => {
            let r = first.rows();
            if let Some(bad) = inputs.iter().find(|t| t.rows() != r) {
                return Err(AutodiffError::shape(
                    "concat",
                    format!("axis 1 needs equal row counts, got {} and {}", r, bad.rows()),
                ));
            }
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for t in inputs {
                    data.extend_from_slice(t.row(i));
                }
            }
            Ok(Tensor::matrix(r, cols, data))
        }
        _ => Err(AutodiffError::shape("concat", format!("axis {axis} out of range for rank 2"))),
    }
}

fn split<T: Scalar>(grad: &Tensor<T>, inputs: &[&Tensor<T>], axis: usize) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(inputs.len());
    if axis == 0 {
        let c = grad.cols();
        let mut offset = 0;
        for t in inputs {
            let n = t.rows() * c;
            out.push(Tensor::matrix(t.rows(), c, grad.data()[offset..offset + n].to_vec()));
            offset += n;
        }
    } else {
        let mut col = 0;
        for t in inputs {
            let w = t.cols();
            let mut data = Vec::with_capacity(grad.rows() * w);
            for i in 0..grad.rows() {
                data.extend_from_slice(&grad.row(i)[col..col + w]);
            }
            out.push(Tensor::matrix(grad.rows(), w, data));
            col += w;
        }
    }
    out
}

fn softmax<T: Scalar>(op: &'static str, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, AutodiffError> {
    match axis {
        1 => {
            let mut out = x.clone();
            let c = x.cols();
            for row in out.data_mut().chunks_mut(c) {
                softmax_in_place(row);
            }
            Ok(out)
        }
        0 => Ok(softmax(op, &x.transpose(), 1)?.transpose()),
        _ => Err(AutodiffError::shape(op, format!("axis {axis} out of range for rank 2"))),
    }
}

fn softmax_in_place<T: Scalar>(values: &mut [T]) {
    let max = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in values.iter_mut() {
        *v = *v / total;
    }
}

fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    if axis == 0 {
        return softmax_backward(&y.transpose(), &g.transpose(), 1).transpose();
    }
    let c = y.cols();
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::matrix(y.rows(), c, out)
}

fn gather_rows<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    indices: &[usize],
) -> Result<Tensor<T>, AutodiffError> {
    if indices.is_empty() {
        return Err(AutodiffError::shape(op, "empty index list".to_string()));
    }
    let mut data = Vec::with_capacity(indices.len() * x.cols());
    for &i in indices {
        if i >= x.rows() {
            return Err(AutodiffError::shape(
                op,
                format!("row index {i} out of range for {} rows", x.rows()),
            ));
        }
        data.extend_from_slice(x.row(i));
    }
    Ok(Tensor::matrix(indices.len(), x.cols(), data))
}

fn scatter_add_rows<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    indices: &[usize],
    size: usize,
) -> Result<Tensor<T>, AutodiffError> {
    if indices.len() != x.rows() {
        return Err(AutodiffError::shape(
            op,
            format!("{} indices for {} rows", indices.len(), x.rows()),
        ));
    }
    if size == 0 {
        return Err(AutodiffError::shape(op, "output size 0".to_string()));
    }
    let c = x.cols();
    let mut out = Tensor::zeros(&[size, c]);
    for (src, &dst) in indices.iter().enumerate() {
        if dst >= size {
            return Err(AutodiffError::shape(
                op,
                format!("target row {dst} out of range for size {size}"),
            ));
        }
        let row = &mut out.data_mut()[dst * c..(dst + 1) * c];
        for (o, &v) in row.iter_mut().zip(x.row(src)) {
            *o = *o + v;
        }
    }
    Ok(out)
}

fn group_softmax<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    groups: &[usize],
    count: usize,
) -> Result<Tensor<T>, AutodiffError> {
    if x.cols() != 1 || x.rows() != groups.len() {
        return Err(AutodiffError::shape(
            op,
            format!("expected [{}, 1], got {:?}", groups.len(), x.shape()),
        ));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= count) {
        return Err(AutodiffError::shape(op, format!("group {g} out of range for {count} groups")));
    }
    let mut max = vec![T::neg_infinity(); count];
    for (&g, &v) in groups.iter().zip(x.data()) {
        max[g] = max[g].max(v);
    }
    let exps: Vec<T> = groups.iter().zip(x.data()).map(|(&g, &v)| (v - max[g]).exp()).collect();
    let mut total = vec![T::zero(); count];
    for (&g, &e) in groups.iter().zip(&exps) {
        total[g] = total[g] + e;
    }
    let data = groups.iter().zip(&exps).map(|(&g, &e)| e / total[g]).collect();
    Tensor::new(x.shape().to_vec(), data)
}
