use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// An ordered, named collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Put every tensor on `graph`; tensors whose name satisfies `trainable`
    /// become leaves, the rest constants.
    pub fn bind(&self, graph: &Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .iter()
            .map(|(n, t)| if trainable(n) { graph.leaf(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn bind_all(&self, graph: &Graph) -> Bound {
        self.bind(graph, |_| true)
    }

    pub fn bind_frozen(&self, graph: &Graph) -> Bound {
        self.bind(graph, |_| false)
    }

    /// SHA-256 over names, shapes and values; equal iff every parameter is bit-identical.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut entries: Vec<(&str, &Tensor)> = self.iter().collect();
        entries.sort_by_key(|(n, _)| *n);
        for (n, t) in entries {
            h.update(n.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Parameters of a [`ParamSet`] placed on a graph.
#[derive(Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn grads(&self, loss: &Var) -> Vec<Tensor> {
        let refs: Vec<&Var> = self.vars.iter().collect();
        loss.graph().grad(loss, &refs, false).into_iter().map(|v| v.to_tensor()).collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Draw a `rows x cols` tensor with entries `N(0, std^2)`.
pub fn normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}
