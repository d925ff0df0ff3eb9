//! Tape of executed operations with a reverse sweep.
//!
//! Nodes are appended in execution order, so the tape is already
//! topologically sorted and the reverse sweep is a single backwards scan.

use super::ops::{self, Activation, LstmTrace, LstmWeights};
use super::{ParamId, ParamSet, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad_left: usize,
    },
    MaxPool {
        x: NodeId,
        winners: Vec<usize>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Act {
        x: NodeId,
        act: Activation,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    Lstm {
        seq: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        trace: LstmTrace,
    },
    SoftmaxXent {
        logits: NodeId,
        label: usize,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    /// `None` for parameter nodes, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a loss with respect to each parameter of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|g| g.as_ref())
    }

    /// `param.grad += scale * g` for every parameter reached by the sweep.
    pub fn accumulate_into(&self, params: &mut ParamSet, scale: f64) -> Result<()> {
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(g) = slot {
                params.get_mut(ParamId(i)).grad.add_scaled(g, scale)?;
            }
        }
        Ok(())
    }

    /// Dense view, zeros for unreached parameters.
    pub fn to_dense(&self, params: &ParamSet) -> Vec<Tensor> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| match self.slots.get(i).and_then(|g| g.as_ref()) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            })
            .collect()
    }
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        value.ensure_finite("graph")?;
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<NodeId> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<NodeId> {
        let out = ops::conv1d(self.value(x), self.value(w), self.value(b), stride, pad_left, pad_right)?;
        let rg = self.rg(&[x, w, b]);
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad_left,
            },
            rg,
        )
    }

    pub fn maxpool1d(&mut self, x: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        let (out, winners) = ops::maxpool1d_with_indices(self.value(x), size, stride)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::MaxPool { x, winners }, rg)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        if act == Activation::Identity {
            return Ok(x);
        }
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        let rg = self.rg(&[x]);
        self.push(out, Op::Act { x, act }, rg)
    }

    /// `activation(x · w + b)`
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId, act: Activation) -> Result<NodeId> {
        let lin = self.linear(x, w, b)?;
        self.activation(lin, act)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::elementwise_mul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul { a, b }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add { a, b }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum { x }, rg)
    }

    /// Embedding lookup; returns the gathered rows and the active-position mask.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<(NodeId, Vec<bool>)> {
        let (out, mask) = ops::embedding_lookup(indices, self.value(table))?;
        let rg = self.rg(&[table]);
        let id = self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )?;
        Ok((id, mask))
    }

    pub fn lstm(&mut self, seq: NodeId, mask: Option<&[bool]>, wx: NodeId, wh: NodeId, b: NodeId) -> Result<NodeId> {
        let weights = LstmWeights {
            wx: self.value(wx),
            wh: self.value(wh),
            bias: self.value(b),
        };
        let (out, trace) = ops::lstm_forward(self.value(seq), mask, weights)?;
        let rg = self.rg(&[seq, wx, wh, b]);
        self.push(out, Op::Lstm { seq, wx, wh, b, trace }, rg)
    }

    pub fn softmax_xent(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let (loss, probs) = ops::softmax_xent(self.value(logits), label)?;
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, label, probs }, rg)
    }

    /// Reverse sweep from `loss`, seeding its adjoint with `seed` in every
    /// element. Returns per-parameter gradients.
    pub fn backward(&self, loss: NodeId, seed: f64) -> Result<Grads> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(TensorError::NoForward);
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape(), seed));
        let mut grads = Grads {
            slots: vec![None; self.params.len()],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(p) => match &mut grads.slots[p.0] {
                    Some(acc) => acc.add_scaled(&g, 1.0)?,
                    slot @ None => *slot = Some(g),
                },
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    pad_left,
                } => {
                    let mut dx = self.want(*x);
                    let mut dw = self.want(*w);
                    let mut db = self.want(*b);
                    ops::conv1d_backward(
                        self.value(*x),
                        self.value(*w),
                        *stride,
                        *pad_left,
                        &g,
                        dx.as_mut(),
                        dw.as_mut(),
                        db.as_mut(),
                    );
                    self.deposit(&mut adj, *x, dx)?;
                    self.deposit(&mut adj, *w, dw)?;
                    self.deposit(&mut adj, *b, db)?;
                }
                Op::MaxPool { x, winners } => {
                    if let Some(mut dx) = self.want(*x) {
                        let d = dx.data_mut();
                        for (&src, &gv) in winners.iter().zip(g.data()) {
                            d[src] += gv;
                        }
                        self.deposit(&mut adj, *x, Some(dx))?;
                    }
                }
                Op::Linear { x, w, b } => {
                    let m = g.len();
                    if let Some(mut dx) = self.want(*x) {
                        ops::mat_vec_acc(self.value(*w).data(), g.data(), m, dx.data_mut());
                        self.deposit(&mut adj, *x, Some(dx))?;
                    }
                    if let Some(mut dw) = self.want(*w) {
                        ops::outer_acc(self.value(*x).data(), g.data(), dw.data_mut());
                        self.deposit(&mut adj, *w, Some(dw))?;
                    }
                    if self.nodes[b.0].requires_grad {
                        self.deposit(&mut adj, *b, Some(g.clone()))?;
                    }
                }
                Op::Act { x, act } => {
                    let y = self.value(NodeId(idx));
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * act.derivative_from_output(*yv))
                        .collect();
                    let dx = Tensor::new(g.shape().to_vec(), data)?;
                    self.deposit(&mut adj, *x, Some(dx))?;
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::elementwise_mul(&g, self.value(*b))?;
                        self.deposit(&mut adj, *a, Some(da))?;
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = ops::elementwise_mul(&g, self.value(*a))?;
                        self.deposit(&mut adj, *b, Some(db))?;
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        self.deposit(&mut adj, *a, Some(g.clone()))?;
                    }
                    if self.nodes[b.0].requires_grad {
                        self.deposit(&mut adj, *b, Some(g.clone()))?;
                    }
                }
                Op::Sum { x } => {
                    let dx = Tensor::filled(self.value(*x).shape(), g.data()[0]);
                    self.deposit(&mut adj, *x, Some(dx))?;
                }
                Op::Gather { table, indices } => {
                    if let Some(mut dt) = self.want(*table) {
                        let e = dt.shape()[1];
                        let d = dt.data_mut();
                        for (row, &ix) in indices.iter().enumerate() {
                            for j in 0..e {
                                d[ix * e + j] += g.data()[row * e + j];
                            }
                        }
                        self.deposit(&mut adj, *table, Some(dt))?;
                    }
                }
                Op::Lstm { seq, wx, wh, b, trace } => {
                    let mut dseq = self.want(*seq);
                    let mut dwx = self.want(*wx);
                    let mut dwh = self.want(*wh);
                    let mut db = self.want(*b);
                    let weights = LstmWeights {
                        wx: self.value(*wx),
                        wh: self.value(*wh),
                        bias: self.value(*b),
                    };
                    ops::lstm_backward(
                        self.value(*seq),
                        weights,
                        trace,
                        g.data(),
                        dseq.as_mut(),
                        dwx.as_mut(),
                        dwh.as_mut(),
                        db.as_mut(),
                    );
                    self.deposit(&mut adj, *seq, dseq)?;
                    self.deposit(&mut adj, *wx, dwx)?;
                    self.deposit(&mut adj, *wh, dwh)?;
                    self.deposit(&mut adj, *b, db)?;
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let gv = g.data()[0];
                    let mut d = probs.clone();
                    d.data_mut()[*label] -= 1.0;
                    d.data_mut().iter_mut().for_each(|x| *x *= gv);
                    self.deposit(&mut adj, *logits, Some(d))?;
                }
            }
        }
        for g in grads.slots.iter().flatten() {
            g.ensure_finite("backward")?;
        }
        Ok(grads)
    }

    /// Fresh zero buffer for `id`'s adjoint if it needs one.
    fn want(&self, id: NodeId) -> Option<Tensor> {
        if self.nodes[id.0].requires_grad {
            Some(Tensor::zeros(self.value(id).shape()))
        } else {
            None
        }
    }

    fn deposit(&self, adj: &mut [Option<Tensor>], id: NodeId, g: Option<Tensor>) -> Result<()> {
        let Some(g) = g else { return Ok(()) };
        match &mut adj[id.0] {
            Some(acc) => acc.add_scaled(&g, 1.0),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient() {
        // loss = w * x with x = 3
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::scalar(0.7)).unwrap();
        let unused = ps.insert("unused", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new(&ps);
        let wn = g.param(w);
        let x = g.input(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(wn, x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss, 1.0).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0]);
        assert!(grads.get(unused).is_none());
        let dense = grads.to_dense(&ps);
        assert_eq!(dense[unused.index()].data(), &[0.0]);
    }

    #[test]
    fn backward_without_forward() {
        let ps = ParamSet::new();
        let g = Graph::new(&ps);
        assert!(matches!(g.backward(NodeId(0), 1.0), Err(TensorError::NoForward)));
    }

    #[test]
    fn shared_node_adjoints_accumulate() {
        // loss = sum(w ⊙ w) → 2w
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::from_vec(vec![1.5, -2.0])).unwrap();
        let mut g = Graph::new(&ps);
        let wn = g.param(w);
        let sq = g.mul(wn, wn).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss, 1.0).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn accumulate_scales() {
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::scalar(1.0)).unwrap();
        let grads = {
            let mut g = Graph::new(&ps);
            let wn = g.param(w);
            let x = g.input(Tensor::scalar(4.0)).unwrap();
            let y = g.mul(wn, x).unwrap();
            g.backward(y, 1.0).unwrap()
        };
        grads.accumulate_into(&mut ps, 0.5).unwrap();
        grads.accumulate_into(&mut ps, 0.5).unwrap();
        assert_eq!(ps.get(w).grad.data(), &[4.0]);
    }
}
