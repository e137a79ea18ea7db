//! Named, ordered parameter collections with a stable global flat index.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T = f64> {
    pub tensor: Tensor<T>,
    pub prunable: bool,
}

/// Ordered map of unique names to tensors.
///
/// Scalars are enumerated by entry insertion order, then row-major inside each
/// tensor; that enumeration is the flat index used for pruning tie-breaks and
/// mask alignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T = f64> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, prunable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Layout(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, ParamEntry { tensor, prunable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count |θ|.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn num_prunable_scalars(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.prunable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn entry(&self, index: usize) -> (&str, &ParamEntry<T>) {
        let (k, v) = self.entries.get_index(index).expect("entry index in range");
        (k.as_str(), v)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entry(index).1.tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries.get_index_mut(index).expect("entry index in range").1.tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Offset of each entry's first scalar in the flat index.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.entries
            .values()
            .map(|e| {
                let o = acc;
                acc += e.tensor.len();
                o
            })
            .collect()
    }

    pub fn flat_index(&self, entry: usize, position: usize) -> usize {
        self.offsets()[entry] + position
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        let mut acc = 0;
        for (i, e) in self.entries.values().enumerate() {
            let n = e.tensor.len();
            if flat < acc + n {
                return Some((i, flat - acc));
            }
            acc += n;
        }
        None
    }

    pub fn flat_get(&self, flat: usize) -> Option<T> {
        self.locate(flat).map(|(e, p)| self.tensor(e).values()[p])
    }

    pub fn flat_set(&mut self, flat: usize, v: T) {
        let (e, p) = self.locate(flat).expect("flat index in range");
        self.tensor_mut(e).values_mut()[p] = v;
    }

    /// Same names, shapes and prunable flags.
    pub fn same_layout(&self, other: &ParameterStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| {
                    na == nb && a.prunable == b.prunable && a.tensor.shape() == b.tensor.shape()
                })
    }

    /// Bitwise equality of every scalar.
    pub fn bit_eq(&self, other: &ParameterStore<T>) -> bool {
        self.same_layout(other)
            && self
                .entries
                .values()
                .zip(other.entries.values())
                .all(|(a, b)| a.tensor.bit_eq(&b.tensor))
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            per_entry: self.entries.values().map(|e| vec![T::zero(); e.tensor.len()]).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            tensor: e.tensor.cast(),
                            prunable: e.prunable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned entry-by-entry with a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f64> {
    pub per_entry: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn entry(&self, index: usize) -> &[T] {
        &self.per_entry[index]
    }

    pub fn entry_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.per_entry[index]
    }

    pub fn flat(&self) -> Vec<T> {
        self.per_entry.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.per_entry.iter().flatten().all(|v| v.is_finite())
    }

    pub fn check_aligned(&self, store: &ParameterStore<T>) -> Result<()> {
        if self.per_entry.len() != store.len()
            || self
                .per_entry
                .iter()
                .enumerate()
                .any(|(i, g)| g.len() != store.tensor(i).len())
        {
            return Err(Error::Layout("gradients not aligned to parameter store".into()));
        }
        Ok(())
    }
}
