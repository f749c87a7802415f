use std::sync::{Arc, Mutex, MutexGuard};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Primitive operations the tape can record.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Offset(f64),
    MatMul,
    Transpose,
    Tanh,
    Softplus,
    Sigmoid,
    Square,
    Sqrt,
    Sum,
    Mean,
    /// Concatenation along the last axis; holds each input's width.
    Concat(Vec<usize>),
    /// Half-open column range along the last axis.
    Slice(usize, usize),
    Broadcast,
    SumTo,
    Reshape,
    /// `[B, m*k] x [B, k] -> [B, m]`, each row a matrix-vector product.
    Bmv(usize, usize),
    /// `[B, m*k] x [B, m] -> [B, k]`, transposed matrix-vector product.
    Bmtv(usize, usize),
    /// `[B, m] x [B, k] -> [B, m*k]`, per-row outer product.
    Bouter(usize, usize),
}

#[derive(Clone)]
pub(crate) struct Input {
    pub id: Option<usize>,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

impl Input {
    pub fn to_tensor(&self, tape: Option<&Tape>) -> Tensor {
        let mut t = Tensor::from_parts(self.shape.clone(), Arc::clone(&self.data));
        if let (Some(tape), Some(id)) = (tape, self.id) {
            t.node = Some(NodeRef {
                tape: tape.clone(),
                id,
            });
        }
        t
    }
}

#[derive(Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Input>,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Append-only record of operations, replayed backward by
/// [`gradient`](super::gradient).
///
/// A tape is meant for one recorder at a time; give each worker its own.
#[derive(Clone)]
pub struct Tape {
    inner: Arc<Mutex<TapeInner>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Arc::new(Mutex::new(TapeInner { nodes: Vec::new() })),
        }
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, TapeInner> {
        self.inner.lock().expect("tape mutex poisoned")
    }

    pub fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable input on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let mut out = value.detach();
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: out.shape.clone(),
            data: Arc::clone(&out.data),
        });
        out.node = Some(NodeRef {
            tape: self.clone(),
            id,
        });
        out
    }

    fn push(&self, node: Node) -> usize {
        let mut inner = self.lock();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }
}

/// The tape shared by all attached inputs, or an error if they disagree.
pub(crate) fn common_tape(op: &'static str, inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<&Tape> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match found {
                None => found = Some(&n.tape),
                Some(f) if f.same(&n.tape) => {}
                Some(_) => {
                    return Err(Error::Autodiff(format!(
                        "`{op}` received tensors from different tapes"
                    )))
                }
            }
        }
    }
    Ok(found.cloned())
}

/// Wraps freshly computed values, recording a node when any input is
/// attached.
pub(crate) fn record(
    tape: Option<Tape>,
    op: Op,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
) -> Tensor {
    let data = Arc::new(data);
    let mut out = Tensor::from_parts(shape, data);
    if let Some(tape) = tape {
        let node = Node {
            op,
            inputs: inputs
                .iter()
                .map(|t| Input {
                    id: t.node.as_ref().map(|n| n.id),
                    shape: t.shape.clone(),
                    data: Arc::clone(&t.data),
                })
                .collect(),
            shape: out.shape.clone(),
            data: Arc::clone(&out.data),
        };
        let id = tape.push(node);
        out.node = Some(NodeRef { tape, id });
    }
    out
}
