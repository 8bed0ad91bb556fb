//! Named parameter table with deterministic (lexicographic) iteration.

use std::collections::BTreeMap;

use super::{Elem, Tensor};

/// Map from parameter path (e.g. `mgi.0.epi.biss.ssm_fwd.a_log`) to a leaf
/// variable tensor.
#[derive(Default)]
pub struct ParamStore<E: Elem> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: &str, t: Tensor<E>) {
        assert!(
            self.map.insert(path.to_string(), t).is_none(),
            "duplicate parameter path: {}",
            path
        );
    }

    pub fn get(&self, path: &str) -> &Tensor<E> {
        self.map
            .get(path)
            .unwrap_or_else(|| panic!("missing parameter path: {}", path))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.map.contains_key(path)
    }

    pub fn replace(&mut self, path: &str, t: Tensor<E>) {
        assert!(
            self.map.insert(path.to_string(), t).is_some(),
            "replace of unknown parameter path: {}",
            path
        );
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.map.iter()
    }

    pub fn paths(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.map.values().map(|t| t.elem_count()).sum()
    }

    /// Allocates (or resets) a zero gradient for every parameter, so that a
    /// following backward pass leaves unreachable parameters at exactly zero.
    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }

    /// Concatenation of all parameter values in path order.
    pub fn flat_values(&self) -> Vec<E> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.map.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds every parameter from a flat buffer laid out in path order.
    pub fn load_flat_values(&mut self, flat: &[E]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter size mismatch");
        let mut offset = 0;
        let paths = self.paths();
        for path in paths {
            let shape = self.map[&path].shape().to_vec();
            let n: usize = shape.iter().product();
            let t = Tensor::var(flat[offset..offset + n].to_vec(), &shape);
            self.map.insert(path, t);
            offset += n;
        }
    }

    /// Concatenation of all gradients in path order (zeros where absent).
    pub fn flat_grads(&self) -> Vec<E> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.map.values() {
            match t.grad() {
                Some(g) => out.extend_from_slice(&g),
                None => out.extend(std::iter::repeat(E::zero()).take(t.elem_count())),
            }
        }
        out
    }

    /// Detached copy: same values, but constants (no gradient tracking).
    /// Used for frozen teachers and inference.
    pub fn frozen(&self) -> ParamStore<E> {
        let mut out = ParamStore::new();
        for (path, t) in self.iter() {
            out.insert(path, t.detach());
        }
        out
    }

    /// Casts every parameter to another element type.
    pub fn cast<F: Elem>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for (path, t) in self.iter() {
            let data: Vec<F> = t.data().iter().map(|v| F::of_f64(v.as_f64())).collect();
            out.insert(path, Tensor::var(data, t.shape()));
        }
        out
    }
}
