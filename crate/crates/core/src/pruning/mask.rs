use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Real;

use super::bits::BitArray;

pub const AGNOSTIC: &str = "agnostic";

/// Bits for one prunable parameter entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskEntry {
    pub name: String,
    pub bits: BitArray,
}

/// Binary mask over the prunable entries of a parameter store. Entries that
/// are not prunable carry no bits and are always kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruningMask {
    pub owner: String,
    pub entries: Vec<MaskEntry>,
    /// Scalars in non-prunable entries; needed for Param(%) accounting.
    pub non_prunable_scalars: usize,
}

impl PruningMask {
    pub fn all_ones<T: Real>(store: &ParameterStore<T>, owner: impl Into<String>) -> Self {
        Self::filled(store, owner, true)
    }

    pub fn all_zeros<T: Real>(store: &ParameterStore<T>, owner: impl Into<String>) -> Self {
        Self::filled(store, owner, false)
    }

    fn filled<T: Real>(store: &ParameterStore<T>, owner: impl Into<String>, on: bool) -> Self {
        let entries = store
            .iter()
            .filter(|(_, e)| e.prunable)
            .map(|(name, e)| MaskEntry {
                name: name.to_string(),
                bits: if on {
                    BitArray::ones(e.tensor.len())
                } else {
                    BitArray::zeros(e.tensor.len())
                },
            })
            .collect();
        Self {
            owner: owner.into(),
            entries,
            non_prunable_scalars: store.num_scalars() - store.num_prunable_scalars(),
        }
    }

    /// Mask from one flag per prunable scalar, in flat order.
    pub fn from_flags<T: Real>(store: &ParameterStore<T>, owner: impl Into<String>, flags: &[bool]) -> Result<Self> {
        let mut m = Self::all_ones(store, owner);
        if flags.len() != m.prunable_len() {
            return Err(Error::Layout(format!(
                "{} flags for {} prunable scalars",
                flags.len(),
                m.prunable_len()
            )));
        }
        let mut it = flags.iter();
        for e in &mut m.entries {
            for i in 0..e.bits.len() {
                e.bits.set(i, *it.next().expect("length checked"));
            }
        }
        Ok(m)
    }

    pub fn prunable_len(&self) -> usize {
        self.entries.iter().map(|e| e.bits.len()).sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.prunable_len() + self.non_prunable_scalars
    }

    pub fn surviving(&self) -> usize {
        self.entries.iter().map(|e| e.bits.count_ones()).sum()
    }

    /// Fraction of prunable scalars that are zeroed.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.surviving() as f64 / self.prunable_len() as f64
    }

    /// Prunable bits concatenated in flat order.
    pub fn flags(&self) -> Vec<bool> {
        self.entries.iter().flat_map(|e| e.bits.iter()).collect()
    }

    pub fn same_layout(&self, other: &PruningMask) -> bool {
        self.non_prunable_scalars == other.non_prunable_scalars
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.bits.len() == b.bits.len())
    }

    pub(crate) fn check_layout(&self, other: &PruningMask) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!("masks `{}` and `{}` differ in layout", self.owner, other.owner)))
        }
    }

    /// Store entry index for each mask entry, checking names, flags and lengths.
    pub fn resolve<T: Real>(&self, store: &ParameterStore<T>) -> Result<Vec<usize>> {
        let prunable = store.iter().filter(|(_, e)| e.prunable).count();
        if prunable != self.entries.len() {
            return Err(Error::Layout(format!(
                "mask `{}` has {} entries, store has {prunable} prunable",
                self.owner,
                self.entries.len()
            )));
        }
        self.entries
            .iter()
            .map(|me| {
                let idx = store
                    .index_of(&me.name)
                    .ok_or_else(|| Error::Layout(format!("mask entry `{}` not in store", me.name)))?;
                let (_, e) = store.entry(idx);
                if !e.prunable || e.tensor.len() != me.bits.len() {
                    return Err(Error::Layout(format!("mask entry `{}` misaligned", me.name)));
                }
                Ok(idx)
            })
            .collect()
    }

    /// Bitwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &PruningMask) -> bool {
        self.same_layout(other) && self.entries.iter().zip(&other.entries).all(|(a, b)| a.bits.is_subset_of(&b.bits))
    }

    /// Keep-bit for the scalar at `position` of store entry `name`; true for non-prunable entries.
    pub fn keeps(&self, name: &str, position: usize) -> bool {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map_or(true, |e| e.bits.get(position))
    }
}

/// Per-task masks over one shared layout, in task order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSet {
    masks: IndexMap<String, PruningMask>,
}

impl MaskSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mask: PruningMask) -> Result<()> {
        if let Some(first) = self.masks.values().next() {
            first.check_layout(&mask)?;
        }
        self.masks.insert(mask.owner.clone(), mask);
        Ok(())
    }

    /// The same mask under every task id (task-agnostic pruning).
    pub fn shared(mask: &PruningMask, task_ids: &[&str]) -> Self {
        let mut set = Self::new();
        for id in task_ids {
            let mut m = mask.clone();
            m.owner = id.to_string();
            set.insert(m).expect("identical layout");
        }
        set
    }

    pub fn get(&self, task: &str) -> Result<&PruningMask> {
        self.masks
            .get(task)
            .ok_or_else(|| Error::Pruning(format!("no mask for task `{task}`")))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PruningMask> {
        self.masks.values()
    }

    pub fn owners(&self) -> Vec<&str> {
        self.masks.keys().map(String::as_str).collect()
    }

    /// Bits kept by at least one mask.
    pub fn union(&self) -> Result<PruningMask> {
        let mut it = self.masks.values();
        let mut acc = it
            .next()
            .ok_or_else(|| Error::Pruning("union of an empty mask set".into()))?
            .clone();
        acc.owner = "union".into();
        for m in it {
            for (a, b) in acc.entries.iter_mut().zip(&m.entries) {
                a.bits.or_assign(&b.bits);
            }
        }
        Ok(acc)
    }
}
