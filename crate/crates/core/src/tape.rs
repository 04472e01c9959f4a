//! Operation recording and reverse-mode replay.
//!
//! Every operator appends one node holding its output value. When any input
//! requires a gradient, the node also keeps the inputs and whatever forward
//! intermediates its backward rule needs. [`Tape::backward`] walks the nodes
//! in strict reverse order. Intermediate gradients are scratch; only leaves
//! keep theirs, and they accumulate across calls.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{activation, attention, conv, elementwise, norm, resample};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{shape_str, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Conv2d(conv::ConvRecord),
    BatchNorm(norm::BatchNormRecord),
    Activation(activation::ActivationRecord),
    Upsample2x(resample::UpsampleRecord),
    Concat(elementwise::ConcatRecord),
    EcaGate(attention::EcaRecord),
    Pointwise(elementwise::PointwiseRecord),
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant or a differentiation leaf, depending on the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: None, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.set_requires_grad(false);
        self.leaf(value)
    }

    /// Places every trainable parameter of `store` on the tape. The returned
    /// vector is indexed by [`ParamId`].
    pub fn bind_params(&mut self, store: &ParamStore, requires_grad: bool) -> Vec<Var> {
        store
            .iter()
            .map(|(id, p)| {
                let mut value = p.tensor.clone();
                value.zero_grad();
                value.set_requires_grad(requires_grad);
                self.nodes.push(Node { value, op: None, param: Some(id) });
                Var(self.nodes.len() - 1)
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub(crate) fn take_param_grad(&mut self, v: Var) -> Option<(ParamId, Vec<f32>)> {
        let node = &mut self.nodes[v.0];
        let id = node.param?;
        node.value.take_grad().map(|g| (id, g))
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.param.is_some()).map(|(i, _)| Var(i))
    }

    /// Appends an operator output. The record closure only runs when some
    /// input requires a gradient, so inference keeps no saved state.
    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], record: impl FnOnce() -> Op) -> Var {
        let track = inputs.iter().any(|&v| self.requires_grad(v));
        let mut value = value;
        value.set_requires_grad(track);
        let op = if track { Some(record()) } else { None };
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar `loss`, accumulating into every
    /// reachable leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::NonScalarLoss(shape_str(shape)));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads = Grads::new(&self.nodes[..=loss.0]);
        grads.slots[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else { continue };
            match &self.nodes[i].op {
                Some(op) => {
                    let out = &self.nodes[i].value;
                    let ctx = BackwardCtx { nodes: &self.nodes };
                    match op {
                        Op::Conv2d(r) => r.backward(&ctx, &g, &mut grads),
                        Op::BatchNorm(r) => r.backward(&ctx, &g, &mut grads),
                        Op::Activation(r) => r.backward(&ctx, out, &g, &mut grads),
                        Op::Upsample2x(r) => r.backward(&ctx, &g, &mut grads),
                        Op::Concat(r) => r.backward(&ctx, &g, &mut grads),
                        Op::EcaGate(r) => r.backward(&ctx, &g, &mut grads),
                        Op::Pointwise(r) => r.backward(&ctx, out, &g, &mut grads),
                    }
                }
                None => {
                    let node = &mut self.nodes[i];
                    if node.value.requires_grad() {
                        node.value.accumulate_grad(&g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Clears the gradients of every leaf.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }
}

/// Read access to recorded values during backward.
pub(crate) struct BackwardCtx<'a> {
    nodes: &'a [Node],
}

impl BackwardCtx<'_> {
    pub(crate) fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

/// Scratch gradient buffers, one lazily allocated slot per node.
pub(crate) struct Grads {
    slots: Vec<Option<Vec<f32>>>,
    lens: Vec<usize>,
    tracked: Vec<bool>,
}

impl Grads {
    fn new(nodes: &[Node]) -> Self {
        Grads {
            slots: nodes.iter().map(|_| None).collect(),
            lens: nodes.iter().map(|n| n.value.shape().numel()).collect(),
            tracked: nodes.iter().map(|n| n.value.requires_grad()).collect(),
        }
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Runs `f` on the gradient slot of `v` when `v` is tracked. The slot is
    /// zero-initialized on first touch and `f` must add into it.
    pub(crate) fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f32])) {
        if !self.tracked[v.0] {
            return;
        }
        let len = self.lens[v.0];
        let slot = self.slots[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f32]) {
        self.accumulate(v, |slot| slot.iter_mut().zip(g).for_each(|(s, x)| *s += x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -2.0, 3.0, 0.5]).unwrap().with_grad());
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let mut tape = Tape::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), data.clone()).unwrap().with_grad());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let expect: Vec<f32> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), &expect[..]);
    }

    #[test]
    fn non_scalar_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)).with_grad());
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn second_backward_doubles() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.3, -0.7, 1.1]).unwrap().with_grad());
        let y = tape.sigmoid(x);
        let y2 = tape.mul(y, x).unwrap();
        let loss = tape.sum(y2);
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap().to_vec();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn unreachable_leaf_untouched() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape::vector(2), 1.0).with_grad());
        let unused = tape.leaf(Tensor::full(Shape::vector(2), 1.0).with_grad());
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(tape.grad(unused).is_none());
    }

    #[test]
    fn constants_are_not_tracked() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full(Shape::vector(2), 1.0).with_grad());
        let y = tape.relu(c);
        assert!(!tape.requires_grad(y));
    }
}
