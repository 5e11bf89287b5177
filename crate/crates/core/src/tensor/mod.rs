//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! The tape is define-by-run: every tracked operation stores its parents and
//! a backward closure on the output tensor, so re-running a network simply
//! rebuilds the graph. [`Tensor::backward`] walks the graph in reverse
//! topological order and accumulates gradients into every tracked tensor,
//! in particular into `requires_grad` leaves (parameters and attack inputs).

mod gradcheck;
pub mod ops;

pub use gradcheck::check_gradients;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Node<F: Scalar> {
    parents: Vec<Tensor<F>>,
    /// Maps the output gradient to one gradient per parent.
    backward: Box<dyn Fn(&[F]) -> Vec<Vec<F>>>,
}

struct Inner<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
    node: Option<Node<F>>,
}

/// Shared handle to a tensor value. Cloning is cheap and aliases storage.
pub struct Tensor<F: Scalar> {
    inner: Rc<RefCell<Inner<F>>>,
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![F::zero(); numel(shape)], false, None)
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(vec![], vec![value], false, None)
    }

    /// Leaf that participates in gradient accumulation.
    pub fn leaf(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    fn from_parts(
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        node: Option<Node<F>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                node,
            })),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        op_name: &'static str,
        parents: Vec<Tensor<F>>,
        backward: Box<dyn Fn(&[F]) -> Vec<Vec<F>>>,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op_name));
        }
        let tracked = parents.iter().any(Tensor::tracked);
        let node = if tracked {
            Some(Node { parents, backward })
        } else {
            None
        };
        Ok(Self::from_parts(shape, data, false, node))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.borrow().shape)
    }

    pub fn data(&self) -> Ref<'_, [F]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> F {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    /// Overwrite the stored values in place. Only meaningful on leaves; the
    /// training loop uses this for SGD updates.
    pub fn set_data(&self, data: &[F]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, value: bool) {
        self.inner.borrow_mut().requires_grad = value;
    }

    fn tracked(&self) -> bool {
        let inner = self.inner.borrow();
        inner.requires_grad || inner.node.is_some()
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    fn accumulate_stored_grad(&self, g: &[F]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![F::zero(); n]);
        for (gi, &v) in grad.iter_mut().zip(g) {
            *gi += v;
        }
    }

    /// Detached copy of the values (no tape participation).
    pub fn detach(&self) -> Tensor<F> {
        let inner = self.inner.borrow();
        Self::from_parts(inner.shape.clone(), inner.data.clone(), false, None)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients flow through a
    /// transient table and are written into every `requires_grad` leaf that
    /// is reachable from the loss; repeated calls without `zero_grad`
    /// accumulate there.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let order = self.topo_order();
        let key = |t: &Tensor<F>| Rc::as_ptr(&t.inner) as *const ();
        let mut table: std::collections::HashMap<*const (), Vec<F>> =
            std::collections::HashMap::new();
        table.insert(key(self), vec![F::one()]);
        for t in order.iter().rev() {
            let Some(grad) = table.remove(&key(t)) else { continue };
            if t.requires_grad() {
                t.accumulate_stored_grad(&grad);
            }
            let inner = t.inner.borrow();
            let Some(node) = inner.node.as_ref() else { continue };
            let parent_grads = (node.backward)(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if !p.tracked() {
                    continue;
                }
                let entry = table
                    .entry(key(p))
                    .or_insert_with(|| vec![F::zero(); p.numel()]);
                for (ei, v) in entry.iter_mut().zip(pg) {
                    *ei += v;
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<F>> {
        // Iterative DFS; forward order comes out in postorder.
        let mut order = Vec::new();
        let mut visited: HashSet<*const ()> = HashSet::new();
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(self.clone(), 0)];
        while let Some((t, child)) = stack.pop() {
            let key = Rc::as_ptr(&t.inner) as *const ();
            if child == 0 {
                if !visited.insert(key) {
                    continue;
                }
            }
            let next = {
                let inner = t.inner.borrow();
                inner
                    .node
                    .as_ref()
                    .and_then(|n| n.parents.get(child).cloned())
            };
            match next {
                Some(p) => {
                    stack.push((t, child + 1));
                    stack.push((p, 0));
                }
                None => order.push(t),
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::leaf(&[5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let loss = ops::sum(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn backward_of_half_square_norm_is_identity() {
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, -2.0, 0.25]).unwrap();
        let half_sq = ops::scale(&ops::sum(&ops::mul(&x, &x).unwrap()).unwrap(), 0.5).unwrap();
        half_sq.backward().unwrap();
        let g = x.grad().unwrap();
        for (&gi, xi) in g.iter().zip(x.to_vec()) {
            assert!((gi - xi).abs() <= 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = ops::scale(&x, 2.0).unwrap();
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let loss = ops::sum(&x).unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g)
        let point = vec![0.3, -1.2, 2.0];
        let (a, b) = (2.5, -1.25);

        let grad_of = |build: &dyn Fn(&Tensor<f64>) -> Tensor<f64>| {
            let x = Tensor::leaf(&[3], point.clone()).unwrap();
            build(&x).backward().unwrap();
            x.grad().unwrap()
        };

        let f = |x: &Tensor<f64>| ops::sum(&ops::mul(x, x).unwrap()).unwrap();
        let g = |x: &Tensor<f64>| ops::sum(&ops::relu(x).unwrap()).unwrap();
        let gf = grad_of(&f);
        let gg = grad_of(&g);
        let combined = grad_of(&|x| {
            ops::add(
                &ops::scale(&f(x), a).unwrap(),
                &ops::scale(&g(x), b).unwrap(),
            )
            .unwrap()
        });
        for i in 0..3 {
            assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() <= 1e-10);
        }
    }
}
