//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional value plus the op that produced
//! it. Ops record enough state to run their backward pass; [`backward`] walks
//! the graph in reverse topological order and accumulates gradients into the
//! leaves that were created with `requires_grad`.
//!
//! Element type is generic: `f32` is the experiment default, `f64` is used by
//! gradient-check builds. See [`element::Element`].

pub mod adam;
pub mod element;
pub(crate) mod gemm;
pub mod ops;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use element::Element;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule of a recorded op: maps the upstream gradient to gradients
/// w.r.t. each parent (in parent order; `None` where the parent needs none).
pub(crate) trait Backward<E: Element>: Send + Sync {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>>;
}

struct Node<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<E>,
    /// Explicitly marked leaf whose gradient should be kept.
    requires_grad: bool,
    /// True if any gradient flows through this node.
    needs_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    parents: Vec<Tensor<E>>,
    op: Option<Box<dyn Backward<E>>>,
}

/// Dense tensor handle. Cloning is cheap (shared node).
pub struct Tensor<E: Element> {
    node: Arc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.node.id, self.node.shape, self.node.requires_grad
        )
    }
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    /// Leaf that accumulates a gradient during [`backward`].
    pub fn param(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn scalar(v: E) -> Self {
        Self::new(vec![], vec![v], false).expect("scalar is always consistent")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![E::ZERO; n], false).expect("consistent by construction")
    }

    fn new(shape: Vec<usize>, data: Vec<E>, requires_grad: bool) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                needs_grad: requires_grad,
                grad: Mutex::new(None),
                parents: Vec::new(),
                op: None,
            }),
        })
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        op: Box<dyn Backward<E>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = parents.iter().any(|p| p.node.needs_grad);
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad: false,
                needs_grad,
                grad: Mutex::new(None),
                parents,
                op: if needs_grad { Some(op) } else { None },
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<E>> {
        self.node.grad.lock().expect("grad lock").take()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, contribution: &[E]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(g) => {
                for (gi, &ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

/// Reverse-mode sweep from a scalar `loss`. Fills the `grad` slot of every
/// reachable `requires_grad` leaf; repeated calls accumulate.
pub fn backward<E: Element>(loss: &Tensor<E>) -> Result<()> {
    if loss.len() != 1 {
        return Err(TensorError::NonScalarRoot(loss.shape().to_vec()));
    }

    // Reverse topological order via iterative post-order DFS.
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(loss.clone(), 0)];
    while let Some((t, child_idx)) = stack.pop() {
        if child_idx == 0 {
            if visited.contains_key(&t.node.id) {
                continue;
            }
            visited.insert(t.node.id, ());
        }
        if child_idx < t.node.parents.len() {
            let child = t.node.parents[child_idx].clone();
            stack.push((t, child_idx + 1));
            if !visited.contains_key(&child.node.id) && child.node.needs_grad {
                stack.push((child, 0));
            }
        } else {
            order.push(t);
        }
    }

    // Per-call gradient buffers; only marked leaves receive persistent grads.
    let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
    grads.insert(loss.node.id, vec![E::ONE]);

    for t in order.iter().rev() {
        let upstream = match grads.remove(&t.node.id) {
            Some(g) => g,
            None => continue,
        };
        if t.node.requires_grad {
            t.accumulate_grad(&upstream);
        }
        if let Some(op) = &t.node.op {
            let parent_grads = op.backward(&t.node.parents, &upstream);
            debug_assert_eq!(parent_grads.len(), t.node.parents.len());
            for (parent, pg) in t.node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.len(), parent.len());
                    match grads.get_mut(&parent.node.id) {
                        Some(acc) => {
                            for (a, &g) in acc.iter_mut().zip(&pg) {
                                *a += g;
                            }
                        }
                        None => {
                            grads.insert(parent.node.id, pg);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Tensor::param(vec![], vec![3.0f64]).unwrap();
        let loss = ops::mul(&x, &x).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn relu_of_negated_input_has_zero_grad() {
        let x = Tensor::param(vec![], vec![2.0f64]).unwrap();
        let loss = ops::relu(&ops::neg(&x));
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let x = Tensor::param(vec![], vec![3.0f64]).unwrap();
        let loss = ops::mul(&x, &x).unwrap();
        backward(&loss).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::param(vec![2], vec![1.0f64, 2.0]).unwrap();
        assert!(matches!(
            backward(&x),
            Err(TensorError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0f32; 5]).is_err());
    }
}
