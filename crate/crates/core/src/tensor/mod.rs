//! Dense f64 tensors with reverse-mode gradients.
//!
//! A [`Tensor`] is a reference-counted node in a computation graph. Ops build
//! new nodes that remember their parents and a closure mapping the output
//! gradient to parent gradients. Calling [`Tensor::backward`] on a scalar
//! walks the graph in reverse topological order and accumulates gradients
//! into leaf tensors created with [`Tensor::param`].

pub mod checkpoint;
pub mod conv;
pub mod ops;
pub mod optim;
pub mod params;
pub mod signal;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph construction on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Constant tensor; panics if `data` does not fill `shape`.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::new(data, shape).expect("tensor data does not match shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![0.0; shape.iter().product()], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::leaf(vec![value; shape.iter().product()], shape.to_vec(), false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![v], vec![], false)
    }

    /// Trainable leaf that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "param shape");
        Self::leaf(data, shape.to_vec(), true)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Builds the output of a differentiable op. The graph link is dropped
    /// when gradients are disabled or no parent needs one.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let track = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Self::leaf(data, shape, false);
        }
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values, used by optimizers and checkpoint loading.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.to_vec(), self.0.shape.clone(), false)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Accumulates d(self)/d(leaf) into every trainable leaf reachable from
    /// this scalar.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.0.shape
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(Rc::as_ptr(&self.0), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&Rc::as_ptr(&t.0)) else {
                continue;
            };
            match &t.0.backward {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let grads = f(&g);
                    debug_assert_eq!(grads.len(), t.0.parents.len());
                    for (p, pg) in t.0.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.entry(Rc::as_ptr(&p.0)) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                e.get_mut().iter_mut().zip(&pg).for_each(|(a, b)| *a += b)
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes needing gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn relu_of_negative_has_zero_gradient() {
        let x = Tensor::param(vec![-1.0, -0.5, -3.0], &[3]);
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn non_scalar_backward_errors() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        assert!(x.scale(2.0).backward().is_err());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::param(vec![3.0], &[1]);
        let y = x.mul(&x).add(&x);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn no_grad_builds_no_graph() {
        let x = Tensor::param(vec![1.0], &[1]);
        let y = {
            let _g = no_grad();
            x.scale(2.0)
        };
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn shape_mismatch_in_constructor() {
        assert!(Tensor::new(vec![1.0; 5], &[2, 3]).is_err());
    }
}
