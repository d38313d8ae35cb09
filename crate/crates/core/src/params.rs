//! Named parameter storage and initialization.

use std::ops::Index;
use std::sync::Arc;

use cvit_tensor::{Element, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(_, _, t)| t.numel()).sum()
    }

    /// Parameter tensors in store order.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|v| (**v).clone()).collect()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
        }
    }

    /// Registers every parameter as a gradient-tracking leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound { vars: self.values.iter().map(|v| graph.param(v.clone())).collect() }
    }
}

/// Parameters bound to one graph, indexable by [`ParamId`].
pub struct Bound<'g, T: Element> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Element> Bound<'g, T> {
    /// Uses caller-made variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'g, T>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    /// Gradient per parameter after `backward`, in store order.
    pub fn grads(&self) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

impl<'g, T: Element> Index<ParamId> for Bound<'g, T> {
    type Output = Var<'g, T>;

    fn index(&self, id: ParamId) -> &Var<'g, T> {
        &self.vars[id.0]
    }
}

/// Creates parameters with a seeded generator.
pub struct ParamBuilder<T: Element> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        ParamBuilder { store: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Normal(0, std) truncated to two standard deviations.
    pub fn trunc_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        });
        self.store.insert(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.store.insert(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.store.insert(name, Tensor::ones(shape.to_vec()))
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
