//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! A [`Var`] is a shared tensor value plus, when it depends on something that
//! requires a gradient, the id of the tape node that produced it. Ops whose
//! inputs are all constants record nothing, so inference with constant
//! parameters keeps no intermediate activations alive.

use std::cell::RefCell;
use std::rc::Rc;

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Computes parent gradients from the output gradient. The flag slice says
/// which parents actually need one; the rest may be returned as `None`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Rc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Scalar> Var<T> {
    pub fn constant(t: Tensor<T>) -> Self {
        Var {
            value: Rc::new(t),
            node: None,
        }
    }

    pub fn from_shared(t: Rc<Tensor<T>>) -> Self {
        Var {
            value: t,
            node: None,
        }
    }

    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, detached from the tape.
    pub fn detach(&self) -> Self {
        Var {
            value: Rc::clone(&self.value),
            node: None,
        }
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Rc<Tensor<T>>) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some(nodes.len() - 1),
        }
    }

    /// Records an op output. Returns a constant when no parent needs a gradient.
    pub fn record(
        &self,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        if parents.iter().all(|p| p.node.is_none()) {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: parents.iter().map(|p| p.node).collect(),
            backward: Some(Box::new(backward)),
        });
        Var {
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    /// Propagates `seed` (d loss / d root) back through the tape, consuming it.
    pub fn backward(&self, root: &Var<T>, seed: Tensor<T>) -> Grads<T> {
        assert_eq!(seed.shape(), root.shape(), "seed gradient shape");
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.node else {
            return Grads { by_node: grads };
        };
        grads[root_id] = Some(seed);
        let mut nodes = nodes;
        for id in (0..=root_id).rev() {
            let Some(bw) = nodes[id].backward.take() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parents = std::mem::take(&mut nodes[id].parents);
            let needs: Vec<bool> = parents.iter().map(Option::is_some).collect();
            let pg = bw(&g, &needs);
            debug_assert_eq!(pg.len(), parents.len());
            for (p, g) in parents.iter().zip(pg) {
                if let (Some(p), Some(g)) = (p, g) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Grads { by_node: grads }
    }
}

/// Gradients of the leaves after [`Tape::backward`].
pub struct Grads<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.node.and_then(|n| self.by_node.get(n)).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        v.node
            .and_then(|n| self.by_node.get_mut(n))
            .and_then(Option::take)
    }
}
