//! Dense-tensor reverse-mode automatic differentiation on a per-pass tape.
//!
//! Define-by-run: a fresh [`Tape`] is built for every forward pass and
//! discarded afterwards. A [`Tensor`] is an immutable value snapshot; tensors
//! produced by tape operations carry the id of the node that produced them so
//! [`Tape::backward`] can return gradients keyed by node. All arithmetic is
//! 64-bit; every operation records an exact local derivative rule.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Guard for divisions, norms and logs throughout the crate.
pub const EPS_NUM: f64 = 1e-8;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
struct NodeRef {
    tape: u64,
    id: NodeId,
}

/// Dense real tensor, 1-D or 2-D. Constants have no tape node.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    node: Option<NodeRef>,
}

impl Tensor {
    pub fn from_shape(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            node: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            node: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_shape(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarOutput(self.shape.clone()))
        }
    }

    /// Id of the tape node that produced this tensor, if any.
    pub fn node_id(&self) -> Option<NodeId> {
        self.node.map(|n| n.id)
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Operation kinds recordable on the tape.
///
/// `Scale`, `AddScalar`, `ClampMin` and `Concat` are glue for building losses
/// out of the core set without broadcasting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    /// Elementwise quotient; the divisor may also be a scalar tensor.
    Div,
    Relu,
    Sigmoid,
    Exp,
    /// Natural log, guarded: `ln(x + EPS_NUM)` with `x >= 0` required.
    Log,
    Sum,
    Mean,
    /// Euclidean norm of the flattened tensor (scalar output).
    L2Norm,
    /// Inner product of two flattened tensors of equal length.
    Dot,
    Scale(f64),
    AddScalar(f64),
    /// Elementwise `max(x, c)`; gradient passes only where `x > c`.
    ClampMin(f64),
    /// Flattens all inputs into a single `[1, total]` row.
    Concat,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::L2Norm => "l2_norm",
            OpKind::Dot => "dot",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::ClampMin(_) => "clamp_min",
            OpKind::Concat => "concat",
        }
    }
}

enum Op {
    Leaf,
    Apply(OpKind),
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Vec<f64>,
    shape: Vec<usize>,
}

/// Append-only record of one forward pass.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a value as a tape leaf (a differentiable input).
    pub fn leaf(&self, t: Tensor) -> Result<Tensor> {
        if !t.all_finite() {
            return Err(Error::NonFinite("leaf".into()));
        }
        let id = self.push(Op::Leaf, Vec::new(), t.data.clone(), t.shape.clone());
        Ok(Tensor {
            shape: t.shape,
            data: t.data,
            node: Some(NodeRef { tape: self.id, id }),
        })
    }

    fn push(&self, op: Op, inputs: Vec<NodeId>, value: Vec<f64>, shape: Vec<usize>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs,
            value,
            shape,
        });
        nodes.len() - 1
    }

    /// Resolves a tensor to a node id, auto-registering constants as leaves.
    fn input_id(&self, t: &Tensor) -> Result<NodeId> {
        match t.node {
            Some(r) if r.tape == self.id => Ok(r.id),
            Some(_) => Err(Error::TapeMismatch),
            None => {
                if !t.all_finite() {
                    return Err(Error::NonFinite("constant input".into()));
                }
                Ok(self.push(Op::Leaf, Vec::new(), t.data.clone(), t.shape.clone()))
            }
        }
    }

    /// Records one operation and returns its result.
    pub fn forward_op(&self, kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
        let arity = match kind {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::Dot => 2,
            OpKind::Concat => {
                if inputs.is_empty() {
                    return Err(Error::invalid("concat requires at least one input"));
                }
                inputs.len()
            }
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!(
                "{} expects {} inputs, got {}",
                kind.name(),
                arity,
                inputs.len()
            )));
        }
        for t in inputs {
            if !t.all_finite() {
                return Err(Error::NonFinite(kind.name().into()));
            }
        }

        let (value, shape) = eval(kind, inputs)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(kind.name().into()));
        }

        let ids = inputs
            .iter()
            .map(|t| self.input_id(t))
            .collect::<Result<Vec<_>>>()?;
        let id = self.push(Op::Apply(kind), ids, value.clone(), shape.clone());
        Ok(Tensor {
            shape,
            data: value,
            node: Some(NodeRef { tape: self.id, id }),
        })
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::MatMul, &[a, b])
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Add, &[a, b])
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Sub, &[a, b])
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Mul, &[a, b])
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Div, &[a, b])
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Relu, &[a])
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Sigmoid, &[a])
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Exp, &[a])
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Log, &[a])
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Sum, &[a])
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Mean, &[a])
    }

    pub fn l2_norm(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::L2Norm, &[a])
    }

    pub fn dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward_op(OpKind::Dot, &[a, b])
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.forward_op(OpKind::Scale(c), &[a])
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.forward_op(OpKind::AddScalar(c), &[a])
    }

    pub fn clamp_min(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.forward_op(OpKind::ClampMin(c), &[a])
    }

    pub fn concat(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.forward_op(OpKind::Concat, inputs)
    }

    /// Reverse pass from a scalar output. Returns gradients for every node
    /// reachable from it; unreached nodes read back as zero.
    pub fn backward(&self, output: &Tensor) -> Result<Gradients> {
        let out = match output.node {
            Some(r) if r.tape == self.id => r.id,
            Some(_) => return Err(Error::TapeMismatch),
            None => return Err(Error::invalid("backward output is not on the tape")),
        };
        if !output.is_scalar() {
            return Err(Error::NonScalarOutput(output.shape.clone()));
        }

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[out] = Some(vec![1.0]);

        for id in (0..=out).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            if let Op::Apply(kind) = node.op {
                let (lower, _) = grads.split_at_mut(id);
                accumulate_vjp(kind, node, &g, &nodes, lower);
            }
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }
}

/// Gradient map produced by [`Tape::backward`], keyed by node id.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a tensor on the same tape (zeros if the
    /// output did not depend on it).
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor> {
        let r = t.node.ok_or(Error::TapeMismatch)?;
        if r.tape != self.tape {
            return Err(Error::TapeMismatch);
        }
        let data = match &self.grads[r.id] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[r.id].iter().product()],
        };
        Tensor::from_shape(self.shapes[r.id].clone(), data)
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn mat_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::invalid(format!(
            "{op} requires 2-D tensors, got {other:?}"
        ))),
    }
}

fn eval(kind: OpKind, inputs: &[&Tensor]) -> Result<(Vec<f64>, Vec<usize>)> {
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = mat_dims(a, "matmul")?;
            let (k2, n) = mat_dims(b, "matmul")?;
            if k != k2 {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += av * b.data[p * n + j];
                    }
                }
            }
            Ok((out, vec![m, n]))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape != b.shape {
                return Err(shape_err(kind.name(), a, b));
            }
            let out = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| match kind {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Ok((out, a.shape.clone()))
        }
        OpKind::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let scalar_div = b.is_scalar();
            if !scalar_div && a.shape != b.shape {
                return Err(shape_err("div", a, b));
            }
            if b.data.iter().any(|v| v.abs() < EPS_NUM) {
                return Err(Error::DivisionByNearZero("div"));
            }
            let out = if scalar_div {
                let d = b.data[0];
                a.data.iter().map(|x| x / d).collect()
            } else {
                a.data.iter().zip(&b.data).map(|(x, y)| x / y).collect()
            };
            Ok((out, a.shape.clone()))
        }
        OpKind::Relu => Ok((
            inputs[0].data.iter().map(|&x| x.max(0.0)).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::Sigmoid => Ok((
            inputs[0].data.iter().map(|&x| sigmoid(x)).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::Exp => Ok((
            inputs[0].data.iter().map(|&x| x.exp()).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::Log => {
            let a = inputs[0];
            if a.data.iter().any(|&x| x < 0.0) {
                return Err(Error::invalid("log requires non-negative input"));
            }
            Ok((
                a.data.iter().map(|&x| (x + EPS_NUM).ln()).collect(),
                a.shape.clone(),
            ))
        }
        OpKind::Sum => Ok((vec![inputs[0].data.iter().sum()], vec![1])),
        OpKind::Mean => {
            let a = inputs[0];
            if a.is_empty() {
                return Err(Error::invalid("mean of an empty tensor"));
            }
            Ok((vec![a.data.iter().sum::<f64>() / a.len() as f64], vec![1]))
        }
        OpKind::L2Norm => {
            let s: f64 = inputs[0].data.iter().map(|x| x * x).sum();
            Ok((vec![s.sqrt()], vec![1]))
        }
        OpKind::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.len() != b.len() || a.is_empty() {
                return Err(shape_err("dot", a, b));
            }
            let s = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
            Ok((vec![s], vec![1]))
        }
        OpKind::Scale(c) => Ok((
            inputs[0].data.iter().map(|x| x * c).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::AddScalar(c) => Ok((
            inputs[0].data.iter().map(|x| x + c).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::ClampMin(c) => Ok((
            inputs[0].data.iter().map(|x| x.max(c)).collect(),
            inputs[0].shape.clone(),
        )),
        OpKind::Concat => {
            let total: usize = inputs.iter().map(|t| t.len()).sum();
            let mut out = Vec::with_capacity(total);
            for t in inputs {
                out.extend_from_slice(&t.data);
            }
            Ok((out, vec![1, total]))
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

/// Applies the vector-Jacobian product of `kind` given the output gradient
/// `g`, accumulating into the input slots (which all precede the node).
fn accumulate_vjp(
    kind: OpKind,
    node: &Node,
    g: &[f64],
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
) {
    let ins = &node.inputs;
    match kind {
        OpKind::MatMul => {
            let a = &nodes[ins[0]];
            let b = &nodes[ins[1]];
            let (m, k) = (a.shape[0], a.shape[1]);
            let n = b.shape[1];
            acc(&mut grads[ins[0]], m * k, |da| {
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += gv * b.value[p * n + j];
                        }
                    }
                }
            });
            acc(&mut grads[ins[1]], k * n, |db| {
                for i in 0..m {
                    for p in 0..k {
                        let av = a.value[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
            });
        }
        OpKind::Add => {
            for &i in ins {
                acc(&mut grads[i], g.len(), |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
        }
        OpKind::Sub => {
            acc(&mut grads[ins[0]], g.len(), |d| {
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv += gv;
                }
            });
            acc(&mut grads[ins[1]], g.len(), |d| {
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv -= gv;
                }
            });
        }
        OpKind::Mul => {
            let a = &nodes[ins[0]].value;
            let b = &nodes[ins[1]].value;
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * b[i];
                }
            });
            acc(&mut grads[ins[1]], b.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * a[i];
                }
            });
        }
        OpKind::Div => {
            let a = &nodes[ins[0]].value;
            let b = &nodes[ins[1]].value;
            if b.len() == 1 {
                let d0 = b[0];
                acc(&mut grads[ins[0]], a.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / d0;
                    }
                });
                acc(&mut grads[ins[1]], 1, |d| {
                    let mut s = 0.0;
                    for i in 0..a.len() {
                        s -= g[i] * a[i];
                    }
                    d[0] += s / (d0 * d0);
                });
            } else {
                acc(&mut grads[ins[0]], a.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / b[i];
                    }
                });
                acc(&mut grads[ins[1]], b.len(), |d| {
                    for i in 0..d.len() {
                        d[i] -= g[i] * a[i] / (b[i] * b[i]);
                    }
                });
            }
        }
        OpKind::Relu => {
            let a = &nodes[ins[0]].value;
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    if a[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        OpKind::Sigmoid => {
            let y = &node.value;
            acc(&mut grads[ins[0]], y.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        OpKind::Exp => {
            let y = &node.value;
            acc(&mut grads[ins[0]], y.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            });
        }
        OpKind::Log => {
            let a = &nodes[ins[0]].value;
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / (a[i] + EPS_NUM);
                }
            });
        }
        OpKind::Sum => {
            let n = nodes[ins[0]].value.len();
            acc(&mut grads[ins[0]], n, |d| {
                for dv in d.iter_mut() {
                    *dv += g[0];
                }
            });
        }
        OpKind::Mean => {
            let n = nodes[ins[0]].value.len();
            let s = g[0] / n as f64;
            acc(&mut grads[ins[0]], n, |d| {
                for dv in d.iter_mut() {
                    *dv += s;
                }
            });
        }
        OpKind::L2Norm => {
            let a = &nodes[ins[0]].value;
            let norm = node.value[0];
            let s = g[0] / (norm + EPS_NUM);
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    d[i] += s * a[i];
                }
            });
        }
        OpKind::Dot => {
            let a = &nodes[ins[0]].value;
            let b = &nodes[ins[1]].value;
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[0] * b[i];
                }
            });
            acc(&mut grads[ins[1]], b.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[0] * a[i];
                }
            });
        }
        OpKind::Scale(c) => {
            acc(&mut grads[ins[0]], g.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * c;
                }
            });
        }
        OpKind::AddScalar(_) => {
            acc(&mut grads[ins[0]], g.len(), |d| {
                for i in 0..d.len() {
                    d[i] += g[i];
                }
            });
        }
        OpKind::ClampMin(c) => {
            let a = &nodes[ins[0]].value;
            acc(&mut grads[ins[0]], a.len(), |d| {
                for i in 0..d.len() {
                    if a[i] > c {
                        d[i] += g[i];
                    }
                }
            });
        }
        OpKind::Concat => {
            let mut offset = 0;
            for &i in ins {
                let len = nodes[i].value.len();
                acc(&mut grads[i], len, |d| {
                    for j in 0..len {
                        d[j] += g[offset + j];
                    }
                });
                offset += len;
            }
        }
    }
}

/// Cosine similarity of two equal-length vectors with guarded denominator,
/// used to detect objective conflicts. Returns 0 when either norm is below
/// the guard.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < EPS_NUM || nb < EPS_NUM {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb + EPS_NUM))
}
