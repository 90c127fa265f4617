use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<S> {
    name: String,
    value: Tensor<S>,
    frozen: bool,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: Vec<Entry<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a tensor. Panics on duplicate names, which is a wiring bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, value, frozen: false });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.frozen = true;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Overwrites registered tensors from named values; every registered name
    /// must be present with a matching shape.
    pub fn load_named(&mut self, values: &HashMap<String, Tensor<S>>) -> Result<()> {
        for e in &mut self.entries {
            let v = values
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", e.name)))?;
            if v.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    v.shape(),
                    e.value.shape()
                )));
            }
            e.value = v.clone();
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest over names and exact value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for v in e.value.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Gradients keyed by [`ParamId`]; `None` for parameters the graph never touched.
#[derive(Clone, Debug)]
pub struct Grads<S> {
    pub(crate) values: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn empty(len: usize) -> Self {
        Grads { values: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.values.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor<S>) {
        self.values[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn global_norm(&self) -> S {
        self.values
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .fold(S::zero(), |acc, &g| acc + g * g)
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        for t in self.values.iter_mut().flatten() {
            for g in t.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Adds another set of gradients (same store) into this one.
    pub fn accumulate(&mut self, other: &Grads<S>) {
        for (mine, theirs) in self.values.iter_mut().zip(&other.values) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += *b;
                    }
                }
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }
}
