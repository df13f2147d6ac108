//! Named parameter collections and their binding into a [`Graph`].

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::graph::{Gradients, Graph, Tensor, Var};
use super::Real;

/// Ordered map from parameter name to array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F: Real> {
    map: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_elements(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| G::from(x).unwrap())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Entries whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        ParamSet {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

impl<F: Real> FromIterator<(String, Tensor<F>)> for ParamSet<F> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<F>)>>(iter: I) -> Self {
        ParamSet {
            map: iter.into_iter().collect(),
        }
    }
}

/// Whether normalisation layers use batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of one network placed into a graph for one pass.
pub struct Bound<'g, F: Real> {
    graph: &'g Graph<F>,
    vars: BTreeMap<String, Var<'g, F>>,
    buffers: RefCell<ParamSet<F>>,
    mode: Mode,
}

impl<'g, F: Real> Bound<'g, F> {
    /// Binds `params`; when `trainable` they become gradient leaves,
    /// otherwise constants.
    pub fn new(
        graph: &'g Graph<F>,
        params: &ParamSet<F>,
        buffers: &ParamSet<F>,
        mode: Mode,
        trainable: bool,
    ) -> Self {
        let vars = params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    graph.leaf(v.clone())
                } else {
                    graph.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound {
            graph,
            vars,
            buffers: RefCell::new(buffers.clone()),
            mode,
        }
    }

    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Var<'g, F> {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn buffer(&self, name: &str) -> Tensor<F> {
        match self.buffers.borrow().get(name) {
            Some(v) => v.clone(),
            None => panic!("buffer `{name}` is not bound"),
        }
    }

    pub fn set_buffer(&self, name: &str, value: Tensor<F>) {
        self.buffers.borrow_mut().insert(name, value);
    }

    pub fn into_buffers(self) -> ParamSet<F> {
        self.buffers.into_inner()
    }

    /// Gradient for every bound parameter (zeros where unreachable).
    pub fn gradients(&self, grads: &Gradients<F>) -> ParamSet<F> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}
