use crate::error::{Error, Result};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only tape of eagerly evaluated operations.
///
/// Parents always precede their children, so the node order is a valid
/// topological order and backward is a single reverse sweep.
pub struct Graph<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a tensor as a leaf; it takes part in backward iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, requires_grad)
    }

    /// Inserts a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Parent handles of a node, in operand order.
    pub fn parents(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.parents()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_pooled(loss, &mut BufferPool::new())
    }

    /// As [`Graph::backward`], drawing gradient buffers from `pool`. Hand the
    /// result back with [`Gradients::recycle`] to reuse the memory in the
    /// next sweep.
    pub fn backward_pooled(&self, loss: Var, pool: &mut BufferPool<T>) -> Result<Gradients<T>> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Contract(format!("loss node {} is not part of this graph", loss.0)));
        };
        if node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut acc = GradAcc {
            grads: (0..=loss.0).map(|_| None).collect(),
            graph: self,
            pool,
        };
        acc.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = acc.grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                node.op.backward(&node.value, &grad, &mut acc);
            }
            acc.grads[idx] = Some(grad);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads: acc.grads,
            shapes,
        })
    }
}

/// Per-node gradient accumulator used during the reverse sweep.
pub(crate) struct GradAcc<'g, T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    graph: &'g Graph<T>,
    pool: &'g mut BufferPool<T>,
}

impl<T: Scalar> GradAcc<'_, T> {
    pub(crate) fn value(&self, var: Var) -> &Tensor<T> {
        &self.graph.nodes[var.0].value
    }

    pub(crate) fn wants(&self, var: Var) -> bool {
        self.graph.nodes[var.0].requires_grad
    }

    /// Zero-initialized (on first use) gradient buffer of `var`, or `None`
    /// when `var` does not take part in backward.
    pub(crate) fn slot(&mut self, var: Var) -> Option<&mut [T]> {
        if !self.wants(var) {
            return None;
        }
        let len = self.graph.nodes[var.0].value.numel();
        let pool = &mut *self.pool;
        Some(self.grads[var.0].get_or_insert_with(|| pool.take(len)).as_mut_slice())
    }

    /// Adds `contribution` into the gradient of `var`, reusing the buffer
    /// when the slot is still empty.
    pub(crate) fn add_owned(&mut self, var: Var, contribution: Vec<T>) {
        if !self.wants(var) {
            return;
        }
        match &mut self.grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e = *e + c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    pub(crate) fn add_slice(&mut self, var: Var, contribution: &[T]) {
        if !self.wants(var) {
            return;
        }
        if let Some(buf) = self.slot(var) {
            for (e, &c) in buf.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
    }
}

/// Recycled gradient buffers.
///
/// Large fresh allocations are expensive (every page is faulted in and
/// zeroed by the OS); training loops that differentiate graphs of the same
/// shape repeatedly can keep their buffers here.
pub struct BufferPool<T> {
    free: Vec<Vec<T>>,
}

impl<T> std::fmt::Debug for BufferPool<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool").field("buffers", &self.free.len()).finish()
    }
}

/// Clones start empty; pooled memory is never shared.
impl<T> Clone for BufferPool<T> {
    fn clone(&self) -> Self {
        BufferPool::default()
    }
}

impl<T> Default for BufferPool<T> {
    fn default() -> Self {
        BufferPool { free: Vec::new() }
    }
}

impl<T: Scalar> BufferPool<T> {
    pub const CAPACITY: usize = 512;

    pub fn new() -> Self {
        Self::default()
    }

    /// Number of buffers held.
    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    /// A zeroed buffer of `len` elements, reusing the smallest held buffer
    /// that is large enough.
    pub fn take(&mut self, len: usize) -> Vec<T> {
        let mut buf = self.take_empty(len);
        buf.resize(len, T::zero());
        buf
    }

    /// Pooled buffer holding a copy of `src`.
    pub fn take_copy(&mut self, src: &[T]) -> Vec<T> {
        let mut buf = self.take_empty(src.len());
        buf.extend_from_slice(src);
        buf
    }

    fn take_empty(&mut self, len: usize) -> Vec<T> {
        let best = self
            .free
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= len)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let mut buf = self.free.swap_remove(i);
                buf.clear();
                buf
            }
            None => Vec::with_capacity(len),
        }
    }

    /// Adds `buf` to the pool. Beyond [`BufferPool::CAPACITY`] buffers the
    /// smallest one is dropped, since large buffers are the ones worth
    /// keeping.
    pub fn give(&mut self, buf: Vec<T>) {
        self.free.push(buf);
        if self.free.len() > Self::CAPACITY {
            let smallest = (0..self.free.len())
                .min_by_key(|&i| self.free[i].capacity())
                .expect("pool is non-empty");
            self.free.swap_remove(smallest);
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Returns every gradient buffer to `pool`.
    pub fn recycle(self, pool: &mut BufferPool<T>) {
        for buf in self.grads.into_iter().flatten() {
            pool.give(buf);
        }
    }

    /// Gradient of the loss with respect to `var`, if backward reached it.
    pub fn get(&self, var: Var) -> Option<Tensor<T>> {
        let grad = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[var.0].clone(), grad.clone()))
    }

    /// Borrowed gradient buffer of `var`, if backward reached it.
    pub fn slice(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0)?.as_deref()
    }

    /// Gradient of the loss with respect to `var`; zero when `var` is not
    /// connected to the loss.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        match (self.get(var), self.shapes.get(var.0)) {
            (Some(g), _) => g,
            (None, Some(shape)) => Tensor::zeros(shape),
            (None, None) => panic!("{var:?} is not part of the differentiated graph"),
        }
    }
}
