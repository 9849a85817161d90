//! Reference-counted tensors with a dynamically recorded reverse-mode graph.
//!
//! Every op that consumes a tensor with `requires_grad` set records a backward
//! closure together with its parents. [`Tensor::backward`] walks that graph in
//! reverse topological order and adds the resulting partial derivatives into
//! each participating tensor's `grad` buffer.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Backward rule: maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major array that can take part in reverse-mode differentiation.
///
/// Cloning is cheap and shares the underlying node.
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.0.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor(Arc::new(node))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor whose gradient is accumulated by backward passes.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::from_vec(vec![T::zero(); numel(shape)], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![v], &[1]).expect("scalar shape")
    }

    /// Builds the output of an op. Records `backward` only when some parent
    /// tracks gradients and recording is enabled.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = track.then(|| GradFn {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Self::from_node(Node {
            shape,
            data,
            requires_grad: track,
            grad: Mutex::new(None),
            grad_fn,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_node(Node {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            grad: Mutex::new(None),
            grad_fn: None,
        })
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode pass from a one-element tensor. Gradients add into any
    /// existing `grad` buffers.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.key(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in gf.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains_key(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            if let Some(gf) = &t.0.grad_fn {
                let parent_grads = (gf.backward)(&g);
                debug_assert_eq!(parent_grads.len(), gf.parents.len());
                for (p, pg) in gf.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.len());
                    match pending.get_mut(&p.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                        None => {
                            pending.insert(p.key(), pg);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.lock().expect("grad lock");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
