//! Recording of forward primitives and their reverse sweep.
//!
//! Nodes hold 2-D values (`rows × cols`). Parameters are not copied onto the
//! tape; affine nodes reference the store by id and remember the parameter
//! version they read, so a backward pass after a mutation is refused.

use super::mlp::Activation;
use super::tensor::gemm;
use super::{NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf whose gradient is reported back to the caller.
    Input,
    /// Leaf without gradient.
    Constant,
    /// `x·Wᵀ + b` with `W` of shape `out × in`.
    Affine { x: NodeId, w: ParamId, b: ParamId },
    /// Column-wise concatenation.
    Concat { a: NodeId, b: NodeId },
    Act { x: NodeId, kind: Activation },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    reads: Vec<(ParamId, u64)>,
    output: Option<NodeId>,
}

/// Gradients produced by one reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct TapeGrads {
    pub params: Vec<(ParamId, Tensor)>,
    pub inputs: Vec<(NodeId, Tensor)>,
}

impl TapeGrads {
    pub fn input(&self, id: NodeId) -> Option<&Tensor> {
        self.inputs.iter().find(|(n, _)| *n == id).map(|(_, g)| g)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

fn as_matrix(t: Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    Tensor::matrix(r, c, t.into_data()).expect("row/col split preserves length")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf whose gradient backward reports.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(as_matrix(value), Op::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(as_matrix(value), Op::Constant)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    fn note_read(&mut self, store: &ParamStore, id: ParamId) {
        if !self.reads.iter().any(|(p, _)| *p == id) {
            self.reads.push((id, store.get(id).version()));
        }
    }

    pub fn affine(
        &mut self,
        store: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: ParamId,
    ) -> Result<NodeId, NnError> {
        let xv = &self.nodes[x.0].value;
        let wv = store.value(w);
        let bv = store.value(b);
        let (rows, inw) = (xv.rows(), xv.cols());
        let (out, w_in) = (wv.shape()[0], wv.cols());
        if w_in != inw {
            return Err(NnError::ShapeMismatch {
                expected: vec![rows, w_in],
                got: xv.shape().to_vec(),
            });
        }
        if bv.len() != out {
            return Err(NnError::ShapeMismatch {
                expected: vec![out],
                got: bv.shape().to_vec(),
            });
        }
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(bv.data());
        }
        let i = inw as isize;
        gemm(rows, inw, out, xv.data(), (i, 1), wv.data(), (1, i), 1.0, &mut y);
        let value = Tensor::matrix(rows, out, y)?;
        value.check_finite(&store.get(w).name)?;
        self.note_read(store, w);
        self.note_read(store, b);
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows() != bv.rows() {
            return Err(NnError::ShapeMismatch {
                expected: vec![av.rows(), bv.cols()],
                got: bv.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Tensor::matrix(rows, ca + cb, data)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId, NnError> {
        if kind == Activation::Identity {
            return Ok(x);
        }
        let mut value = self.nodes[x.0].value.clone();
        value.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
        value.check_finite("activation")?;
        Ok(self.push(value, Op::Act { x, kind }))
    }

    fn check_fresh(&self, store: &ParamStore) -> Result<(), NnError> {
        for &(id, version) in &self.reads {
            if store.get(id).version() != version {
                return Err(NnError::StaleTape(store.get(id).name.clone()));
            }
        }
        Ok(())
    }
}

/// Reverse sweep from the tape's output without touching the store.
pub fn gradients(
    tape: &Tape,
    store: &ParamStore,
    output_grad: &Tensor,
) -> Result<TapeGrads, NnError> {
    let out = tape
        .output
        .ok_or_else(|| NnError::InvalidSpec("tape has no output".into()))?;
    let out_shape = tape.value(out).shape();
    if output_grad.len() != tape.value(out).len() || output_grad.cols() != tape.value(out).cols()
    {
        return Err(NnError::ShapeMismatch {
            expected: out_shape.to_vec(),
            got: output_grad.shape().to_vec(),
        });
    }
    tape.check_fresh(store)?;

    let mut node_grads: Vec<Option<Tensor>> = vec![None; tape.nodes.len()];
    node_grads[out.0] = Some(as_matrix(output_grad.clone()));
    let mut param_grads: Vec<(ParamId, Tensor)> = Vec::new();
    let mut inputs = Vec::new();

    fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
        match slot {
            Some(acc) => acc.add_scaled(&g, 1.0).expect("matching node shapes"),
            None => *slot = Some(g),
        }
    }

    for idx in (0..=out.0).rev() {
        let Some(g) = node_grads[idx].take() else {
            continue;
        };
        let node = &tape.nodes[idx];
        match &node.op {
            Op::Input => inputs.push((NodeId(idx), g)),
            Op::Constant => {}
            Op::Affine { x, w, b } => {
                let xv = &tape.nodes[x.0].value;
                let wv = store.value(*w);
                let (rows, inw, outw) = (xv.rows(), xv.cols(), g.cols());
                let mut dw = vec![0.0; outw * inw];
                let o = outw as isize;
                let i = inw as isize;
                // dW = dYᵀ·X
                gemm(outw, rows, inw, g.data(), (1, o), xv.data(), (i, 1), 0.0, &mut dw);
                let mut db = vec![0.0; outw];
                for r in 0..rows {
                    for (acc, v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                // dX = dY·W
                let mut dx = vec![0.0; rows * inw];
                gemm(rows, outw, inw, g.data(), (o, 1), wv.data(), (i, 1), 0.0, &mut dx);
                add_param_grad(&mut param_grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                let bshape = store.value(*b).shape().to_vec();
                add_param_grad(&mut param_grads, *b, Tensor::new(bshape, db)?);
                accumulate(&mut node_grads[x.0], Tensor::matrix(rows, inw, dx)?);
            }
            Op::Concat { a, b } => {
                let ca = tape.nodes[a.0].value.cols();
                let cb = tape.nodes[b.0].value.cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                accumulate(&mut node_grads[a.0], Tensor::matrix(rows, ca, ga)?);
                accumulate(&mut node_grads[b.0], Tensor::matrix(rows, cb, gb)?);
            }
            Op::Act { x, kind } => {
                let xv = &tape.nodes[x.0].value;
                let mut gx = g;
                for ((gv, xin), y) in gx
                    .data_mut()
                    .iter_mut()
                    .zip(xv.data())
                    .zip(node.value.data())
                {
                    *gv *= kind.derivative(*xin, *y);
                }
                accumulate(&mut node_grads[x.0], gx);
            }
        }
    }
    inputs.reverse();
    Ok(TapeGrads {
        params: param_grads,
        inputs,
    })
}

fn add_param_grad(grads: &mut Vec<(ParamId, Tensor)>, id: ParamId, g: Tensor) {
    match grads.iter_mut().find(|(p, _)| *p == id) {
        Some((_, acc)) => acc.add_scaled(&g, 1.0).expect("same parameter shape"),
        None => grads.push((id, g)),
    }
}

/// Accumulates `∂(output · output_grad)/∂θ` into every parameter gradient the
/// tape touches and returns the gradient with respect to the first input leaf.
pub fn backward(
    tape: &Tape,
    store: &mut ParamStore,
    output_grad: &Tensor,
) -> Result<Option<Tensor>, NnError> {
    let grads = gradients(tape, store, output_grad)?;
    for (id, g) in &grads.params {
        store.grad_mut(*id).add_scaled(g, 1.0)?;
    }
    Ok(grads.inputs.into_iter().next().map(|(_, g)| g))
}
