//! Arena-backed computation graph with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so parents always have smaller
//! indices than their children and the graph is acyclic by construction.
//! Calling [`Graph::backward`] twice without [`Graph::zero_grads`] adds the
//! second set of gradients onto the first.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Forward primitive with a recorded backward rule.
#[derive(Clone)]
pub enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Exp,
    Log,
    Tanh,
    Abs,
    Sum,
    SliceRows(Range<usize>),
    ConcatRows,
    Scale(f64),
    /// Elementwise map with a caller-supplied derivative.
    Map { f: ScalarFn, df: ScalarFn },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::MatMul => write!(f, "MatMul"),
            Op::Add => write!(f, "Add"),
            Op::Sub => write!(f, "Sub"),
            Op::Mul => write!(f, "Mul"),
            Op::Relu => write!(f, "Relu"),
            Op::Exp => write!(f, "Exp"),
            Op::Log => write!(f, "Log"),
            Op::Tanh => write!(f, "Tanh"),
            Op::Abs => write!(f, "Abs"),
            Op::Sum => write!(f, "Sum"),
            Op::SliceRows(r) => write!(f, "SliceRows({r:?})"),
            Op::ConcatRows => write!(f, "ConcatRows"),
            Op::Scale(k) => write!(f, "Scale({k})"),
            Op::Map { .. } => write!(f, "Map"),
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Option<Op>,
    parents: Vec<NodeId>,
    requires_grad: bool,
    /// True when this node or any ancestor requires a gradient.
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op: None,
            parents: Vec::new(),
            requires_grad,
            tracked: requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient, or zeros if backward never reached the node.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Evaluates `op` on `operands` and records it.
    pub fn apply(&mut self, op: Op, operands: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = operands.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = forward(&op, &values)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("{op:?} produced a non-finite value")));
        }
        let tracked = operands.iter().any(|id| self.nodes[id.0].tracked);
        self.nodes.push(Node {
            value,
            grad: None,
            op: Some(op),
            parents: operands.to_vec(),
            requires_grad: false,
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Abs, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }
    pub fn slice_rows(&mut self, a: NodeId, rows: Range<usize>) -> Result<NodeId> {
        self.apply(Op::SliceRows(rows), &[a])
    }
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::ConcatRows, parts)
    }
    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.apply(Op::Scale(k), &[a])
    }
    pub fn map(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<NodeId> {
        self.apply(
            Op::Map {
                f: Arc::new(f),
                df: Arc::new(df),
            },
            &[a],
        )
    }

    /// Sign pattern of every ReLU and abs input. Two evaluations with equal
    /// patterns lie on the same smooth piece of the graph's function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Some(Op::Relu | Op::Abs) = node.op {
                let input = &self.nodes[node.parents[0].0].value;
                pattern.extend(input.values().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    /// Propagates `d output / d node` to every tracked node and adds it to
    /// the stored gradient of each `requires_grad` leaf or node.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape()
            )));
        }
        let mut adjoint: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adjoint[output.0] = Some(Tensor::filled(self.nodes[output.0].value.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(upstream) = adjoint[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(op) = &node.op {
                let parent_vals: Vec<&Tensor> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let contributions = backward_rule(op, &parent_vals, &node.value, &upstream);
                for (parent, contrib) in node.parents.iter().zip(contributions) {
                    if !self.nodes[parent.0].tracked {
                        continue;
                    }
                    match &mut adjoint[parent.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            let node = &mut self.nodes[idx];
            if node.requires_grad {
                match &mut node.grad {
                    Some(g) => g.add_assign(&upstream),
                    slot @ None => *slot = Some(upstream),
                }
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn arity(op: &Op, operands: &[&Tensor], n: usize) -> Result<()> {
    if operands.len() != n {
        return Err(Error::contract(format!(
            "{op:?} takes {n} operand(s), got {}",
            operands.len()
        )));
    }
    Ok(())
}

fn forward(op: &Op, x: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::MatMul => {
            arity(op, x, 2)?;
            x[0].matmul(x[1])
        }
        Op::Add | Op::Sub | Op::Mul => {
            arity(op, x, 2)?;
            same_shape(x[0], x[1], &format!("{op:?}"))?;
            Ok(match op {
                Op::Add => x[0].zip_map(x[1], |a, b| a + b),
                Op::Sub => x[0].zip_map(x[1], |a, b| a - b),
                _ => x[0].zip_map(x[1], |a, b| a * b),
            })
        }
        Op::Relu => {
            arity(op, x, 1)?;
            Ok(x[0].map(|v| if v > 0.0 { v } else { 0.0 }))
        }
        Op::Exp => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::exp))
        }
        Op::Log => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::ln))
        }
        Op::Tanh => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::tanh))
        }
        Op::Abs => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::abs))
        }
        Op::Sum => {
            arity(op, x, 1)?;
            Ok(Tensor::scalar(x[0].sum()))
        }
        Op::Scale(k) => {
            arity(op, x, 1)?;
            let k = *k;
            Ok(x[0].map(|v| v * k))
        }
        Op::Map { f, .. } => {
            arity(op, x, 1)?;
            Ok(x[0].map(|v| f(v)))
        }
        Op::SliceRows(range) => {
            arity(op, x, 1)?;
            let t = x[0];
            if range.start >= range.end || range.end > t.rows() {
                return Err(Error::contract(format!(
                    "row slice {range:?} out of bounds for {:?}",
                    t.shape()
                )));
            }
            let cols = t.cols();
            let vals = t.values()[range.start * cols..range.end * cols].to_vec();
            let mut shape = t.shape().to_vec();
            shape[0] = range.len();
            Tensor::new(shape, vals)
        }
        Op::ConcatRows => {
            if x.is_empty() {
                return Err(Error::contract("concat of zero tensors"));
            }
            let tail = &x[0].shape()[1..];
            let mut rows = 0;
            let mut vals = Vec::new();
            for t in x {
                if &t.shape()[1..] != tail {
                    return Err(Error::contract(format!(
                        "concat_rows trailing shape mismatch {:?} vs {:?}",
                        x[0].shape(),
                        t.shape()
                    )));
                }
                rows += t.rows();
                vals.extend_from_slice(t.values());
            }
            let mut shape = x[0].shape().to_vec();
            shape[0] = rows;
            Tensor::new(shape, vals)
        }
    }
}

/// Contribution of `upstream = d out / d node` to each parent.
fn backward_rule(op: &Op, x: &[&Tensor], out: &Tensor, upstream: &Tensor) -> Vec<Tensor> {
    match op {
        Op::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (n, k, m) = (a.rows(), a.cols(), b.cols());
            let mut ga = Tensor::zeros(a.shape());
            matmul_bt_into(upstream.values(), b.values(), ga.values_mut(), n, m, k);
            let mut gb = Tensor::zeros(b.shape());
            matmul_at_into(a.values(), upstream.values(), gb.values_mut(), n, k, m);
            vec![ga, gb]
        }
        Op::Add => vec![upstream.clone(), upstream.clone()],
        Op::Sub => vec![upstream.clone(), upstream.map(|g| -g)],
        Op::Mul => vec![
            upstream.zip_map(x[1], |g, b| g * b),
            upstream.zip_map(x[0], |g, a| g * a),
        ],
        // Subgradient 0 at exactly 0.
        Op::Relu => vec![upstream.zip_map(x[0], |g, v| if v > 0.0 { g } else { 0.0 })],
        Op::Exp => vec![upstream.zip_map(out, |g, e| g * e)],
        Op::Log => vec![upstream.zip_map(x[0], |g, v| g / v)],
        Op::Tanh => vec![upstream.zip_map(out, |g, t| g * (1.0 - t * t))],
        Op::Abs => vec![upstream.zip_map(x[0], |g, v| {
            if v > 0.0 {
                g
            } else if v < 0.0 {
                -g
            } else {
                0.0
            }
        })],
        Op::Sum => {
            let g = upstream.values()[0];
            vec![Tensor::filled(x[0].shape(), g)]
        }
        Op::Scale(k) => {
            let k = *k;
            vec![upstream.map(|g| g * k)]
        }
        Op::Map { df, .. } => vec![upstream.zip_map(x[0], |g, v| g * df(v))],
        Op::SliceRows(range) => {
            let t = x[0];
            let cols = t.cols();
            let mut g = Tensor::zeros(t.shape());
            g.values_mut()[range.start * cols..range.end * cols].copy_from_slice(upstream.values());
            vec![g]
        }
        Op::ConcatRows => {
            let mut offset = 0;
            x.iter()
                .map(|t| {
                    let n = t.len();
                    let g = Tensor::new(
                        t.shape().to_vec(),
                        upstream.values()[offset..offset + n].to_vec(),
                    )
                    .expect("concat slice shape");
                    offset += n;
                    g
                })
                .collect()
        }
    }
}
