//! Tape-based reverse-mode differentiation at tensor-op granularity.
//!
//! A [`Tape`] records every primitive application in topological order; a
//! [`Var`] is a handle to one recorded node. Calling [`backward`] on a
//! scalar-valued node yields gradients for every `requires_grad` leaf.
//! Tapes are single-threaded; independent tapes may live on separate
//! threads.

pub mod adam;
pub mod grad_check;
pub(crate) mod kernels;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::tensor::{self, DenseTensor};
use kernels::{bce_term, rmsnorm_forward, rotary_forward, sigmoid, signed_log_product, softmax_rows_inplace};

/// Base used for rotary angle schedules.
pub const ROTARY_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub enum AutodiffError {
    /// `backward` was called on a non-scalar node.
    NonScalarRoot { len: usize },
    /// A `Var` from a different tape was supplied.
    ForeignVar,
    /// A non-finite value was produced where finiteness is required.
    NonFinite { context: &'static str },
    /// Parameter/gradient/state shapes disagree.
    ShapeMismatch { context: &'static str },
}

impl fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutodiffError::NonScalarRoot { len } => {
                write!(f, "backward root must be scalar, found {len} elements")
            }
            AutodiffError::ForeignVar => write!(f, "variable belongs to a different tape"),
            AutodiffError::NonFinite { context } => write!(f, "non-finite value in {context}"),
            AutodiffError::ShapeMismatch { context } => write!(f, "shape mismatch in {context}"),
        }
    }
}

impl std::error::Error for AutodiffError {}

#[derive(Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Neg,
    MulElem,
    DivElem,
    Scale(f64),
    Matmul,
    Transpose,
    Reshape { from: Vec<usize>, to: Vec<usize> },
    /// inputs: [matrix, tensor]
    ModeProduct { mode: usize },
    SoftmaxRows,
    Exp,
    Ln,
    Sigmoid,
    Silu,
    SumAll,
    SumAxis { axis: usize },
    MeanAxis { axis: usize },
    ProdAxis { axis: usize },
    /// inputs: [x, gain]
    RmsNorm { eps: f64 },
    Rotary { positions: Rc<Vec<f64>> },
    /// inputs: [tensor, bias]
    AddBias,
    GatherRows { ids: Rc<Vec<usize>> },
    ConcatAxis { axis: usize, split: usize },
    IndexAxis { axis: usize, index: usize },
    /// inputs: [matrix (p,q), colvec (p)]
    SubColVec,
    /// inputs: [tensor, divisor vector (extent of `axis`)]
    DivAxisVec { axis: usize },
    BceWithLogits { targets: Rc<Vec<f64>>, mask: Rc<Vec<f64>> },
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: DenseTensor,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

/// Gradients produced by [`backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zero for nodes that do not
    /// contribute to the root.
    pub fn of(&self, v: &Var) -> DenseTensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => DenseTensor::zeros(&self.shapes[v.id]),
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let e = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, e, inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(a, _)| *a != axis)
        .map(|(_, &e)| e)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

impl Tape {
    pub fn new() -> Self {
        Self { inner: Rc::new(RefCell::new(Vec::new())) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: Vec<usize>, value: DenseTensor, requires_grad: bool) -> Var {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(Node { op, inputs, value, requires_grad });
        Var { tape: self.clone(), id: nodes.len() - 1 }
    }

    /// Record a non-differentiable input.
    pub fn constant(&self, value: DenseTensor) -> Var {
        self.push(Op::Leaf, vec![], value, false)
    }

    /// Record a differentiable parameter leaf.
    pub fn param(&self, value: DenseTensor) -> Var {
        self.push(Op::Leaf, vec![], value, true)
    }

    fn check_owner(&self, v: &Var) {
        assert!(Rc::ptr_eq(&self.inner, &v.tape.inner), "variable belongs to a different tape");
    }

    fn unary(&self, a: &Var, op: Op, value: DenseTensor) -> Var {
        self.check_owner(a);
        let rg = self.inner.borrow()[a.id].requires_grad;
        self.push(op, vec![a.id], value, rg)
    }

    fn binary(&self, a: &Var, b: &Var, op: Op, value: DenseTensor) -> Var {
        self.check_owner(a);
        self.check_owner(b);
        let rg = {
            let nodes = self.inner.borrow();
            nodes[a.id].requires_grad || nodes[b.id].requires_grad
        };
        self.push(op, vec![a.id, b.id], value, rg)
    }

    /// Recompute every non-leaf node from its inputs and compare bit-exactly
    /// with the recorded values. Used to validate tape integrity.
    pub fn replay_check(&self) -> bool {
        let nodes = self.inner.borrow();
        for node in nodes.iter() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let inputs: Vec<&DenseTensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
            let recomputed = forward_value(&node.op, &inputs);
            if recomputed.shape() != node.value.shape() || recomputed.data() != node.value.data() {
                return false;
            }
        }
        true
    }
}

/// Forward evaluation of one op given input values. Shape preconditions are
/// asserted; graph construction errors are programmer errors.
fn forward_value(op: &Op, inputs: &[&DenseTensor]) -> DenseTensor {
    match op {
        Op::Leaf => unreachable!("leaf nodes are not recomputed"),
        Op::Add => inputs[0].add(inputs[1]).expect("add shapes"),
        Op::Sub => inputs[0].sub(inputs[1]).expect("sub shapes"),
        Op::Neg => inputs[0].scale(-1.0),
        Op::MulElem => inputs[0].mul(inputs[1]).expect("mul shapes"),
        Op::DivElem => inputs[0]
            .zip_div(inputs[1])
            .expect("div shapes"),
        Op::Scale(c) => inputs[0].scale(*c),
        Op::Matmul => inputs[0].matmul(inputs[1]).expect("matmul shapes"),
        Op::Transpose => inputs[0].transpose().expect("transpose requires a matrix"),
        Op::Reshape { to, .. } => tensor::reshape(inputs[0], to).expect("reshape"),
        Op::ModeProduct { mode } => {
            tensor::mode_product(inputs[1], inputs[0], *mode).expect("mode_product shapes")
        }
        Op::SoftmaxRows => {
            let x = inputs[0];
            assert_eq!(x.order(), 2, "softmax_rows requires a matrix");
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut data = x.data().to_vec();
            softmax_rows_inplace(&mut data, r, c);
            DenseTensor::from_vec(x.shape(), data).unwrap()
        }
        Op::Exp => inputs[0].map(f64::exp),
        Op::Ln => inputs[0].map(f64::ln),
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Silu => inputs[0].map(|v| v * sigmoid(v)),
        Op::SumAll => DenseTensor::scalar(inputs[0].data().iter().sum()),
        Op::SumAxis { axis } | Op::MeanAxis { axis } => {
            let x = inputs[0];
            let (outer, e, inner) = axis_split(x.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..e {
                    let base = (o * e + j) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[base + i];
                    }
                }
            }
            if matches!(op, Op::MeanAxis { .. }) {
                let inv = 1.0 / e as f64;
                out.iter_mut().for_each(|v| *v *= inv);
            }
            DenseTensor::from_vec(&reduced_shape(x.shape(), *axis), out).unwrap()
        }
        Op::ProdAxis { axis } => {
            let x = inputs[0];
            let (outer, e, inner) = axis_split(x.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let (p, _, _, _) =
                        signed_log_product((0..e).map(|j| x.data()[(o * e + j) * inner + i]));
                    out[o * inner + i] = p;
                }
            }
            DenseTensor::from_vec(&reduced_shape(x.shape(), *axis), out).unwrap()
        }
        Op::RmsNorm { eps } => {
            let x = inputs[0];
            let gain = inputs[1];
            let d = *x.shape().last().unwrap();
            assert_eq!(gain.len(), d, "rmsnorm gain width");
            DenseTensor::from_vec(x.shape(), rmsnorm_forward(x.data(), gain.data(), d, *eps))
                .unwrap()
        }
        Op::Rotary { positions } => {
            let x = inputs[0];
            assert_eq!(x.order(), 2, "rotary expects (rows, d)");
            let (r, d) = (x.shape()[0], x.shape()[1]);
            assert_eq!(d % 2, 0, "rotary requires an even feature width");
            DenseTensor::from_vec(
                x.shape(),
                rotary_forward(x.data(), r, d, positions, ROTARY_BASE, false),
            )
            .unwrap()
        }
        Op::AddBias => {
            let x = inputs[0];
            let b = inputs[1];
            let d = *x.shape().last().unwrap();
            assert_eq!(b.len(), d, "bias width");
            let mut data = x.data().to_vec();
            for fiber in data.chunks_exact_mut(d) {
                for (v, &bv) in fiber.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            DenseTensor::from_vec(x.shape(), data).unwrap()
        }
        Op::GatherRows { ids } => {
            let table = inputs[0];
            assert_eq!(table.order(), 2, "gather_rows expects a (rows, d) table");
            let d = table.shape()[1];
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids.iter() {
                data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
            }
            DenseTensor::from_vec(&[ids.len(), d], data).unwrap()
        }
        Op::ConcatAxis { axis, .. } => {
            let (a, b) = (inputs[0], inputs[1]);
            let (outer, ea, inner) = axis_split(a.shape(), *axis);
            let eb = b.shape()[*axis];
            let mut shape = a.shape().to_vec();
            shape[*axis] = ea + eb;
            let mut data = Vec::with_capacity(a.len() + b.len());
            for o in 0..outer {
                data.extend_from_slice(&a.data()[o * ea * inner..(o + 1) * ea * inner]);
                data.extend_from_slice(&b.data()[o * eb * inner..(o + 1) * eb * inner]);
            }
            DenseTensor::from_vec(&shape, data).unwrap()
        }
        Op::IndexAxis { axis, index } => {
            let x = inputs[0];
            let (outer, e, inner) = axis_split(x.shape(), *axis);
            assert!(*index < e, "index along axis out of range");
            let mut data = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                let base = (o * e + index) * inner;
                data.extend_from_slice(&x.data()[base..base + inner]);
            }
            DenseTensor::from_vec(&reduced_shape(x.shape(), *axis), data).unwrap()
        }
        Op::SubColVec => {
            let (a, v) = (inputs[0], inputs[1]);
            assert_eq!(a.order(), 2);
            let (p, q) = (a.shape()[0], a.shape()[1]);
            assert_eq!(v.len(), p, "column vector length");
            let mut data = a.data().to_vec();
            for i in 0..p {
                let c = v.data()[i];
                for x in &mut data[i * q..(i + 1) * q] {
                    *x -= c;
                }
            }
            DenseTensor::from_vec(a.shape(), data).unwrap()
        }
        Op::DivAxisVec { axis } => {
            let (x, z) = (inputs[0], inputs[1]);
            let (outer, e, inner) = axis_split(x.shape(), *axis);
            assert_eq!(z.len(), e, "divisor vector length");
            let mut data = x.data().to_vec();
            for o in 0..outer {
                for j in 0..e {
                    let inv = 1.0 / z.data()[j];
                    for v in &mut data[(o * e + j) * inner..(o * e + j + 1) * inner] {
                        *v *= inv;
                    }
                }
            }
            DenseTensor::from_vec(x.shape(), data).unwrap()
        }
        Op::BceWithLogits { targets, mask } => {
            let z = inputs[0];
            assert_eq!(z.len(), targets.len());
            assert_eq!(z.len(), mask.len());
            let total: f64 = mask.iter().sum();
            let denom = if total > 0.0 { total } else { 1.0 };
            let mut loss = 0.0;
            for ((&zi, &yi), &mi) in z.data().iter().zip(targets.iter()).zip(mask.iter()) {
                loss += mi * bce_term(zi, yi);
            }
            DenseTensor::scalar(loss / denom)
        }
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Clone of the recorded value.
    pub fn value(&self) -> DenseTensor {
        self.tape.inner.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self) -> f64 {
        let nodes = self.tape.inner.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "scalar_value on a non-scalar node");
        v.data()[0]
    }

    fn with_values<R>(&self, other: Option<&Var>, f: impl FnOnce(&DenseTensor, Option<&DenseTensor>) -> R) -> R {
        let nodes = self.tape.inner.borrow();
        let a = &nodes[self.id].value;
        let b = other.map(|v| &nodes[v.id].value);
        f(a, b)
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.with_values(Some(other), |a, b| a.add(b.unwrap()).expect("add shapes"));
        self.tape.binary(self, other, Op::Add, v)
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.with_values(Some(other), |a, b| a.sub(b.unwrap()).expect("sub shapes"));
        self.tape.binary(self, other, Op::Sub, v)
    }

    pub fn neg(&self) -> Var {
        let v = self.with_values(None, |a, _| a.scale(-1.0));
        self.tape.unary(self, Op::Neg, v)
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = self.with_values(Some(other), |a, b| a.mul(b.unwrap()).expect("mul shapes"));
        self.tape.binary(self, other, Op::MulElem, v)
    }

    pub fn div(&self, other: &Var) -> Var {
        let v = self.with_values(Some(other), |a, b| a.zip_div(b.unwrap()).expect("div shapes"));
        self.tape.binary(self, other, Op::DivElem, v)
    }

    pub fn scale(&self, c: f64) -> Var {
        let v = self.with_values(None, |a, _| a.scale(c));
        self.tape.unary(self, Op::Scale(c), v)
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let v = self.with_values(Some(other), |a, b| a.matmul(b.unwrap()).expect("matmul shapes"));
        self.tape.binary(self, other, Op::Matmul, v)
    }

    pub fn transpose(&self) -> Var {
        let v = self.with_values(None, |a, _| a.transpose().expect("transpose"));
        self.tape.unary(self, Op::Transpose, v)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Var {
        let (v, from) = self.with_values(None, |a, _| {
            (tensor::reshape(a, new_shape).expect("reshape"), a.shape().to_vec())
        });
        self.tape.unary(self, Op::Reshape { from, to: new_shape.to_vec() }, v)
    }

    /// `matrix` applied along `mode` of `self`.
    pub fn mode_product(&self, matrix: &Var, mode: usize) -> Var {
        let v = {
            let nodes = self.tape.inner.borrow();
            tensor::mode_product(&nodes[self.id].value, &nodes[matrix.id].value, mode)
                .expect("mode_product shapes")
        };
        self.tape.binary(matrix, self, Op::ModeProduct { mode }, v)
    }

    /// Row-wise softmax of an order-2 node.
    pub fn softmax_rows(&self) -> Var {
        let v = self.with_values(None, |a, _| forward_value(&Op::SoftmaxRows, &[a]));
        self.tape.unary(self, Op::SoftmaxRows, v)
    }

    pub fn exp(&self) -> Var {
        let v = self.with_values(None, |a, _| a.map(f64::exp));
        self.tape.unary(self, Op::Exp, v)
    }

    pub fn ln(&self) -> Var {
        let v = self.with_values(None, |a, _| a.map(f64::ln));
        self.tape.unary(self, Op::Ln, v)
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.with_values(None, |a, _| a.map(sigmoid));
        self.tape.unary(self, Op::Sigmoid, v)
    }

    pub fn silu(&self) -> Var {
        let v = self.with_values(None, |a, _| a.map(|x| x * sigmoid(x)));
        self.tape.unary(self, Op::Silu, v)
    }

    pub fn sum_all(&self) -> Var {
        let v = self.with_values(None, |a, _| DenseTensor::scalar(a.data().iter().sum()));
        self.tape.unary(self, Op::SumAll, v)
    }

    pub fn sum_axis(&self, axis: usize) -> Var {
        let op = Op::SumAxis { axis };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    pub fn mean_axis(&self, axis: usize) -> Var {
        let op = Op::MeanAxis { axis };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    /// Product reduction along `axis`, pooled in log-magnitude/sign space.
    pub fn prod_axis(&self, axis: usize) -> Var {
        let op = Op::ProdAxis { axis };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    /// RMS normalization over the last axis with a learned gain.
    pub fn rmsnorm(&self, gain: &Var, eps: f64) -> Var {
        let op = Op::RmsNorm { eps };
        let v = {
            let nodes = self.tape.inner.borrow();
            forward_value(&op, &[&nodes[self.id].value, &nodes[gain.id].value])
        };
        self.tape.binary(self, gain, op, v)
    }

    /// Rotary rotation of an order-2 `(rows, d)` node; `positions[r]` is the
    /// sequence position of row `r`.
    pub fn rotary(&self, positions: &[f64]) -> Var {
        let op = Op::Rotary { positions: Rc::new(positions.to_vec()) };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    /// Add a bias vector along the last axis.
    pub fn add_bias(&self, bias: &Var) -> Var {
        let v = {
            let nodes = self.tape.inner.borrow();
            forward_value(&Op::AddBias, &[&nodes[self.id].value, &nodes[bias.id].value])
        };
        self.tape.binary(self, bias, Op::AddBias, v)
    }

    /// Gather rows of a `(rows, d)` table; backward scatters with addition.
    pub fn gather_rows(&self, ids: &[usize]) -> Var {
        let op = Op::GatherRows { ids: Rc::new(ids.to_vec()) };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    pub fn concat_axis(&self, other: &Var, axis: usize) -> Var {
        let split = self.shape()[axis];
        let op = Op::ConcatAxis { axis, split };
        let v = {
            let nodes = self.tape.inner.borrow();
            forward_value(&op, &[&nodes[self.id].value, &nodes[other.id].value])
        };
        self.tape.binary(self, other, op, v)
    }

    /// Select one index along `axis`, dropping that axis.
    pub fn index_axis(&self, axis: usize, index: usize) -> Var {
        let op = Op::IndexAxis { axis, index };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }

    /// Subtract a length-`rows` vector from every column of a matrix.
    pub fn sub_colvec(&self, v: &Var) -> Var {
        let out = {
            let nodes = self.tape.inner.borrow();
            forward_value(&Op::SubColVec, &[&nodes[self.id].value, &nodes[v.id].value])
        };
        self.tape.binary(self, v, Op::SubColVec, out)
    }

    /// Divide by a vector broadcast along `axis`.
    pub fn div_axis_vec(&self, z: &Var, axis: usize) -> Var {
        let op = Op::DivAxisVec { axis };
        let out = {
            let nodes = self.tape.inner.borrow();
            forward_value(&op, &[&nodes[self.id].value, &nodes[z.id].value])
        };
        self.tape.binary(self, z, op, out)
    }

    /// Mean binary cross-entropy with logits over masked elements.
    pub fn bce_with_logits(&self, targets: &[f64], mask: &[f64]) -> Var {
        let op = Op::BceWithLogits { targets: Rc::new(targets.to_vec()), mask: Rc::new(mask.to_vec()) };
        let v = self.with_values(None, |a, _| forward_value(&op, &[a]));
        self.tape.unary(self, op, v)
    }
}

impl DenseTensor {
    fn zip_div(&self, other: &DenseTensor) -> tensor::Result<DenseTensor> {
        if self.shape() != other.shape() {
            return Err(tensor::TensorError::DimMismatch {
                context: "div",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        DenseTensor::from_vec(
            self.shape(),
            self.data().iter().zip(other.data()).map(|(&a, &b)| a / b).collect(),
        )
    }
}

fn accumulate(slot: &mut Option<DenseTensor>, delta: DenseTensor) {
    match slot {
        Some(g) => *g = g.add(&delta).expect("gradient shapes"),
        None => *slot = Some(delta),
    }
}

/// Reverse-mode sweep from a scalar root. Returns gradients for every node;
/// nodes that do not contribute to the root read back as zero.
pub fn backward(root: &Var) -> Result<Gradients, AutodiffError> {
    let nodes = root.tape.inner.borrow();
    if root.id >= nodes.len() {
        return Err(AutodiffError::ForeignVar);
    }
    if nodes[root.id].value.len() != 1 {
        return Err(AutodiffError::NonScalarRoot { len: nodes[root.id].value.len() });
    }
    let mut grads: Vec<Option<DenseTensor>> = (0..nodes.len()).map(|_| None).collect();
    grads[root.id] = Some(DenseTensor::filled(nodes[root.id].value.shape(), 1.0));

    for id in (0..=root.id).rev() {
        if grads[id].is_none() || !nodes[id].requires_grad {
            continue;
        }
        let g = grads[id].clone().unwrap();
        let node = &nodes[id];
        let input_vals: Vec<&DenseTensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
        let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
        let deltas = op_backward(&node.op, &g, &node.value, &input_vals, &needs);
        for (slot, delta) in node.inputs.iter().zip(deltas) {
            if let Some(d) = delta {
                accumulate(&mut grads[*slot], d);
            }
        }
    }

    let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
    Ok(Gradients { grads, shapes })
}

/// Per-op vector-Jacobian products. Returns one optional delta per input;
/// `None` where the input does not require gradients.
fn op_backward(
    op: &Op,
    g: &DenseTensor,
    out: &DenseTensor,
    inputs: &[&DenseTensor],
    needs: &[bool],
) -> Vec<Option<DenseTensor>> {
    match op {
        Op::Leaf => vec![],
        Op::Add => vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.clone()),
        ],
        Op::Sub => vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.scale(-1.0)),
        ],
        Op::Neg => vec![needs[0].then(|| g.scale(-1.0))],
        Op::MulElem => vec![
            needs[0].then(|| g.mul(inputs[1]).unwrap()),
            needs[1].then(|| g.mul(inputs[0]).unwrap()),
        ],
        Op::DivElem => {
            let da = needs[0].then(|| g.zip_div(inputs[1]).unwrap());
            let db = needs[1].then(|| {
                // -g * a / b^2 = -g * out / b
                g.mul(out).unwrap().zip_div(inputs[1]).unwrap().scale(-1.0)
            });
            vec![da, db]
        }
        Op::Scale(c) => vec![needs[0].then(|| g.scale(*c))],
        Op::Matmul => {
            let da = needs[0].then(|| g.matmul(&inputs[1].transpose().unwrap()).unwrap());
            let db = needs[1].then(|| inputs[0].transpose().unwrap().matmul(g).unwrap());
            vec![da, db]
        }
        Op::Transpose => vec![needs[0].then(|| g.transpose().unwrap())],
        Op::Reshape { from, .. } => vec![needs[0].then(|| tensor::reshape(g, from).unwrap())],
        Op::ModeProduct { mode } => {
            // out = m x_mode t; inputs = [m, t]
            let (m, t) = (inputs[0], inputs[1]);
            let dm = needs[0].then(|| {
                let g_mat = tensor::matricize(g, *mode).unwrap();
                let t_mat = tensor::matricize(t, *mode).unwrap();
                g_mat.matmul(&t_mat.transpose().unwrap()).unwrap()
            });
            let dt = needs[1]
                .then(|| tensor::mode_product(g, &m.transpose().unwrap(), *mode).unwrap());
            vec![dm, dt]
        }
        Op::SoftmaxRows => {
            let delta = needs[0].then(|| {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let y = &out.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        data[i * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                DenseTensor::from_vec(out.shape(), data).unwrap()
            });
            vec![delta]
        }
        Op::Exp => vec![needs[0].then(|| g.mul(out).unwrap())],
        Op::Ln => vec![needs[0].then(|| g.zip_div(inputs[0]).unwrap())],
        Op::Sigmoid => vec![needs[0].then(|| {
            let ones = DenseTensor::filled(out.shape(), 1.0);
            g.mul(out).unwrap().mul(&ones.sub(out).unwrap()).unwrap()
        })],
        Op::Silu => vec![needs[0].then(|| {
            let x = inputs[0];
            let mut data = Vec::with_capacity(x.len());
            for (&xv, &gv) in x.data().iter().zip(g.data()) {
                let s = sigmoid(xv);
                data.push(gv * (s + xv * s * (1.0 - s)));
            }
            DenseTensor::from_vec(x.shape(), data).unwrap()
        })],
        Op::SumAll => vec![needs[0].then(|| DenseTensor::filled(inputs[0].shape(), g.data()[0]))],
        Op::SumAxis { axis } | Op::MeanAxis { axis } => {
            let delta = needs[0].then(|| {
                let x = inputs[0];
                let (outer, e, inner) = axis_split(x.shape(), *axis);
                let scale = if matches!(op, Op::MeanAxis { .. }) { 1.0 / e as f64 } else { 1.0 };
                let mut data = vec![0.0; x.len()];
                for o in 0..outer {
                    for j in 0..e {
                        for i in 0..inner {
                            data[(o * e + j) * inner + i] = g.data()[o * inner + i] * scale;
                        }
                    }
                }
                DenseTensor::from_vec(x.shape(), data).unwrap()
            });
            vec![delta]
        }
        Op::ProdAxis { axis } => {
            let delta = needs[0].then(|| {
                let x = inputs[0];
                let (outer, e, inner) = axis_split(x.shape(), *axis);
                let mut data = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let (_, sign, log_sum, zeros) =
                            signed_log_product((0..e).map(|j| x.data()[(o * e + j) * inner + i]));
                        let gv = g.data()[o * inner + i];
                        for j in 0..e {
                            let xv = x.data()[(o * e + j) * inner + i];
                            let prod_except = match zeros {
                                0 => (sign * xv.signum()) * (log_sum - xv.abs().ln()).exp(),
                                1 if xv == 0.0 => sign * log_sum.exp(),
                                _ => 0.0,
                            };
                            data[(o * e + j) * inner + i] = gv * prod_except;
                        }
                    }
                }
                DenseTensor::from_vec(x.shape(), data).unwrap()
            });
            vec![delta]
        }
        Op::RmsNorm { eps } => {
            let x = inputs[0];
            let gain = inputs[1];
            let d = *x.shape().last().unwrap();
            let n_fibers = x.len() / d;
            let dx = needs[0].then(|| {
                let mut data = vec![0.0; x.len()];
                for f in 0..n_fibers {
                    let xs = &x.data()[f * d..(f + 1) * d];
                    let gs = &g.data()[f * d..(f + 1) * d];
                    let ms = xs.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let r = (ms + eps).sqrt();
                    let dot: f64 = (0..d).map(|j| gs[j] * gain.data()[j] * xs[j]).sum();
                    let coef = dot / (d as f64 * r * r * r);
                    for j in 0..d {
                        data[f * d + j] = gs[j] * gain.data()[j] / r - xs[j] * coef;
                    }
                }
                DenseTensor::from_vec(x.shape(), data).unwrap()
            });
            let dgain = needs[1].then(|| {
                let mut data = vec![0.0; d];
                for f in 0..n_fibers {
                    let xs = &x.data()[f * d..(f + 1) * d];
                    let gs = &g.data()[f * d..(f + 1) * d];
                    let ms = xs.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let r = (ms + eps).sqrt();
                    for j in 0..d {
                        data[j] += gs[j] * xs[j] / r;
                    }
                }
                DenseTensor::from_vec(&[d], data).unwrap()
            });
            vec![dx, dgain]
        }
        Op::Rotary { positions } => {
            let delta = needs[0].then(|| {
                let (r, d) = (out.shape()[0], out.shape()[1]);
                DenseTensor::from_vec(
                    out.shape(),
                    rotary_forward(g.data(), r, d, positions, ROTARY_BASE, true),
                )
                .unwrap()
            });
            vec![delta]
        }
        Op::AddBias => {
            let dx = needs[0].then(|| g.clone());
            let db = needs[1].then(|| {
                let d = *inputs[0].shape().last().unwrap();
                let mut data = vec![0.0; d];
                for fiber in g.data().chunks_exact(d) {
                    for (acc, &v) in data.iter_mut().zip(fiber) {
                        *acc += v;
                    }
                }
                DenseTensor::from_vec(&[d], data).unwrap()
            });
            vec![dx, db]
        }
        Op::GatherRows { ids } => {
            let delta = needs[0].then(|| {
                let table = inputs[0];
                let d = table.shape()[1];
                let mut data = vec![0.0; table.len()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        data[id * d + j] += g.data()[row * d + j];
                    }
                }
                DenseTensor::from_vec(table.shape(), data).unwrap()
            });
            vec![delta]
        }
        Op::ConcatAxis { axis, split } => {
            let (a, b) = (inputs[0], inputs[1]);
            let (outer, ea, inner) = axis_split(a.shape(), *axis);
            debug_assert_eq!(ea, *split);
            let eb = b.shape()[*axis];
            let da = needs[0].then(|| {
                let mut data = Vec::with_capacity(a.len());
                for o in 0..outer {
                    let base = o * (ea + eb) * inner;
                    data.extend_from_slice(&g.data()[base..base + ea * inner]);
                }
                DenseTensor::from_vec(a.shape(), data).unwrap()
            });
            let db = needs[1].then(|| {
                let mut data = Vec::with_capacity(b.len());
                for o in 0..outer {
                    let base = o * (ea + eb) * inner + ea * inner;
                    data.extend_from_slice(&g.data()[base..base + eb * inner]);
                }
                DenseTensor::from_vec(b.shape(), data).unwrap()
            });
            vec![da, db]
        }
        Op::IndexAxis { axis, index } => {
            let delta = needs[0].then(|| {
                let x = inputs[0];
                let (outer, e, inner) = axis_split(x.shape(), *axis);
                let mut data = vec![0.0; x.len()];
                for o in 0..outer {
                    let base = (o * e + index) * inner;
                    data[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
                DenseTensor::from_vec(x.shape(), data).unwrap()
            });
            vec![delta]
        }
        Op::SubColVec => {
            let (p, q) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let da = needs[0].then(|| g.clone());
            let dv = needs[1].then(|| {
                let mut data = vec![0.0; p];
                for i in 0..p {
                    data[i] = -g.data()[i * q..(i + 1) * q].iter().sum::<f64>();
                }
                DenseTensor::from_vec(inputs[1].shape(), data).unwrap()
            });
            vec![da, dv]
        }
        Op::DivAxisVec { axis } => {
            let (x, z) = (inputs[0], inputs[1]);
            let (outer, e, inner) = axis_split(x.shape(), *axis);
            let dx = needs[0].then(|| {
                let mut data = g.data().to_vec();
                for o in 0..outer {
                    for j in 0..e {
                        let inv = 1.0 / z.data()[j];
                        for v in &mut data[(o * e + j) * inner..(o * e + j + 1) * inner] {
                            *v *= inv;
                        }
                    }
                }
                DenseTensor::from_vec(x.shape(), data).unwrap()
            });
            let dz = needs[1].then(|| {
                let mut data = vec![0.0; e];
                for o in 0..outer {
                    for j in 0..e {
                        let base = (o * e + j) * inner;
                        let mut acc = 0.0;
                        for i in 0..inner {
                            acc += g.data()[base + i] * out.data()[base + i];
                        }
                        data[j] -= acc / z.data()[j];
                    }
                }
                DenseTensor::from_vec(z.shape(), data).unwrap()
            });
            vec![dx, dz]
        }
        Op::BceWithLogits { targets, mask } => {
            let delta = needs[0].then(|| {
                let z = inputs[0];
                let total: f64 = mask.iter().sum();
                let denom = if total > 0.0 { total } else { 1.0 };
                let gv = g.data()[0] / denom;
                let mut data = Vec::with_capacity(z.len());
                for ((&zi, &yi), &mi) in z.data().iter().zip(targets.iter()).zip(mask.iter()) {
                    data.push(gv * mi * (sigmoid(zi) - yi));
                }
                DenseTensor::from_vec(z.shape(), data).unwrap()
            });
            vec![delta]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.param(DenseTensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let loss = x.mul(&x).sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.of(&x).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(DenseTensor::scalar(2.0));
        let y = tape.param(DenseTensor::scalar(5.0));
        let loss = x.mul(&x).sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.of(&y).data(), &[0.0]);
        assert_eq!(grads.of(&x).data(), &[4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(DenseTensor::zeros(&[3]));
        assert!(matches!(backward(&x), Err(AutodiffError::NonScalarRoot { len: 3 })));
    }

    #[test]
    fn matmul_sum_gradient_is_column_sums() {
        // loss = sum(A x) for constant A => grad(x)_j = sum_i A_ij
        let tape = Tape::new();
        let a_val = DenseTensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = tape.constant(a_val);
        let x = tape.param(DenseTensor::from_vec(&[3, 1], vec![0.5, -1.0, 2.0]).unwrap());
        let loss = a.matmul(&x).sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.of(&x).data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn gradient_linearity_over_summed_losses() {
        let mut rng = Rng::seed_from(9);
        let x_val = random(&[4], &mut rng);
        let a_val = random(&[4], &mut rng);
        let b_val = random(&[4], &mut rng);

        let grad_of = |mix: &dyn Fn(&Var, &Var, &Var) -> Var| {
            let tape = Tape::new();
            let x = tape.param(x_val.clone());
            let a = tape.constant(a_val.clone());
            let b = tape.constant(b_val.clone());
            let loss = mix(&x, &a, &b);
            backward(&loss).unwrap().of(&x)
        };

        let g_sum = grad_of(&|x, a, b| x.mul(a).sum_all().add(&x.mul(x).mul(b).sum_all()));
        let g1 = grad_of(&|x, a, _| x.mul(a).sum_all());
        let g2 = grad_of(&|x, _, b| x.mul(x).mul(b).sum_all());
        let diff = g_sum.sub(&g1.add(&g2).unwrap()).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "linearity residual {diff}");
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut rng = Rng::seed_from(17);
        let tape = Tape::new();
        let x = tape.param(random(&[3, 4], &mut rng));
        let w = tape.param(random(&[4, 2], &mut rng));
        let h = x.matmul(&w).silu().softmax_rows();
        let _loss = h.sum_all();
        assert!(tape.replay_check());
    }

    #[test]
    fn tape_topological_invariant_holds() {
        let tape = Tape::new();
        let x = tape.param(DenseTensor::scalar(1.0));
        let y = x.exp().scale(2.0);
        let z = y.add(&x);
        let nodes = tape.inner.borrow();
        for (id, node) in nodes.iter().enumerate() {
            for &i in &node.inputs {
                assert!(i < id, "input {i} does not precede node {id}");
            }
        }
        drop(nodes);
        let _ = z;
    }

    #[test]
    fn identical_graphs_are_bit_identical() {
        let build = || {
            let mut rng = Rng::seed_from(31);
            let tape = Tape::new();
            let x = tape.param(random(&[4, 4], &mut rng));
            let y = x.matmul(&x).softmax_rows().sum_all();
            y.scalar_value()
        };
        assert_eq!(build().to_bits(), build().to_bits());
    }
}
