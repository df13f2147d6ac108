//! Reverse-mode differentiation over a flat, append-only node list.
//!
//! Nodes are pushed in evaluation order, so the node list is already a
//! topological order and the backward sweep walks it in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use super::Real;

pub type Tensor<F> = ArrayD<F>;

type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Real> {
    value: Rc<Tensor<F>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

/// A single forward/backward recording.
pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real> {
    pub(crate) graph: &'g Graph<F>,
    pub(crate) id: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    /// Input that receives a gradient in [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.insert(Rc::new(value), Vec::new(), None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(
        &self,
        value: Rc<Tensor<F>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<F>>,
        requires_grad: bool,
    ) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation. `backward` maps the output gradient to one
    /// gradient per parent (in order); `None` marks a parent that gets no
    /// contribution. The closure is dropped when no parent needs gradients.
    pub(crate) fn op<B>(&self, value: Tensor<F>, parents: &[Var<'_, F>], backward: B) -> Var<'_, F>
    where
        B: Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let backward: Option<BackwardFn<F>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.insert(Rc::new(value), ids, backward, requires_grad)
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar root (any single-element tensor).
    pub fn backward(&self, root: Var<'_, F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward root must hold exactly one element"
        );
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; nodes.len()];
        grads[root.id] = Some(ArrayD::from_elem(nodes[root.id].value.raw_dim(), F::one()));
        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[pid].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when it was unreachable.
    pub fn get_or_zeros(&self, var: Var<'_, F>) -> Tensor<F> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(var.value().raw_dim()),
        }
    }
}

impl<'g, F: Real> Var<'g, F> {
    pub fn value(&self) -> Rc<Tensor<F>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    /// Value as a scalar; panics unless the tensor has one element.
    pub fn scalar(&self) -> F {
        let v = self.value();
        assert_eq!(v.len(), 1);
        *v.iter().next().unwrap()
    }

    /// Copy of the value that is cut off from the gradient flow.
    pub fn detach(&self) -> Var<'g, F> {
        self.graph.constant((*self.value()).clone())
    }
}

pub(crate) fn scalar_tensor<F: Real>(x: F) -> Tensor<F> {
    ArrayD::from_elem(IxDyn(&[]), x)
}
