use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Real;

use super::mask::{MaskSet, PruningMask};

/// Zeroes the `⌊p · survivors⌋` smallest-magnitude surviving prunable scalars,
/// ranked jointly across every prunable entry. Equal magnitudes are pruned in
/// flat-index order.
pub fn global_magnitude_prune<T: Real>(params: &ParameterStore<T>, mask: &PruningMask, p: f64) -> Result<PruningMask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Pruning(format!("prune rate {p} outside (0, 1)")));
    }
    let indices = mask.resolve(params)?;
    let mut candidates: Vec<(T, usize, usize, usize)> = Vec::with_capacity(mask.surviving());
    let offsets = params.offsets();
    for (k, (me, &idx)) in mask.entries.iter().zip(&indices).enumerate() {
        let values = params.tensor(idx).values();
        for (pos, v) in values.iter().enumerate() {
            if me.bits.get(pos) {
                candidates.push((v.abs(), offsets[idx] + pos, k, pos));
            }
        }
    }
    let survivors = candidates.len();
    if survivors == 0 {
        return Err(Error::Pruning(format!("mask `{}` has no surviving scalars", mask.owner)));
    }
    let n_prune = prune_count(survivors, p);
    if n_prune >= survivors {
        return Err(Error::Pruning("pruning would leave no survivors".into()));
    }
    candidates.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite parameters").then(a.1.cmp(&b.1)));
    let mut out = mask.clone();
    for &(_, _, k, pos) in &candidates[..n_prune] {
        out.entries[k].bits.set(pos, false);
    }
    Ok(out)
}

/// `⌊p · n⌋`, computed so that exact products such as 0.5 · 4 are not lost to rounding.
pub fn prune_count(n: usize, p: f64) -> usize {
    (p * n as f64 + 1e-9).floor() as usize
}

/// Survivors after `rounds` applications of the floor rule starting from `n`.
pub fn surviving_after(n: usize, p: f64, rounds: u32) -> usize {
    (0..rounds).fold(n, |s, _| s - prune_count(s, p))
}

/// `1 - (1 - p)^Q`.
pub fn expected_sparsity(p: f64, rounds: u32) -> f64 {
    1.0 - (1.0 - p).powi(rounds as i32)
}

/// `m ⊙ θ`: masked prunable scalars set to zero, everything else copied.
pub fn apply_mask<T: Real>(params: &ParameterStore<T>, mask: &PruningMask) -> Result<ParameterStore<T>> {
    let indices = mask.resolve(params)?;
    let mut out = params.clone();
    for (me, idx) in mask.entries.iter().zip(indices) {
        for (pos, v) in out.tensor_mut(idx).values_mut().iter_mut().enumerate() {
            if !me.bits.get(pos) {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

/// Zeroes gradient wherever the mask is zero.
pub fn mask_gradients<T: Real>(grads: &Gradients<T>, mask: &PruningMask, params: &ParameterStore<T>) -> Result<Gradients<T>> {
    grads.check_aligned(params)?;
    let indices = mask.resolve(params)?;
    let mut out = grads.clone();
    for (me, idx) in mask.entries.iter().zip(indices) {
        for (pos, g) in out.entry_mut(idx).iter_mut().enumerate() {
            if !me.bits.get(pos) {
                *g = T::zero();
            }
        }
    }
    Ok(out)
}

/// Jaccard ratio `|m_i ∩ m_j| / |m_i ∪ m_j|` over prunable bits.
pub fn overlap(a: &PruningMask, b: &PruningMask) -> Result<f64> {
    a.check_layout(b)?;
    let (inter, union) = a
        .entries
        .iter()
        .zip(&b.entries)
        .fold((0, 0), |(i, u), (x, y)| (i + x.bits.and_count(&y.bits), u + x.bits.or_count(&y.bits)));
    if union == 0 {
        return Err(Error::Pruning("overlap of two empty masks".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Pairwise overlaps in mask-set order.
pub fn overlap_matrix(masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    let ms: Vec<&PruningMask> = masks.iter().collect();
    let mut out = vec![vec![0.0; ms.len()]; ms.len()];
    for i in 0..ms.len() {
        for j in i..ms.len() {
            let v = if i == j { 1.0 } else { overlap(ms[i], ms[j])? };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamMode {
    /// Parameters needed to run one task.
    One(String),
    /// All tasks in one shared store: union of masks.
    AllMultiTask,
    /// All tasks as separate pruned models: sum of per-task percentages.
    AllSingleTask,
}

impl FromStr for ParamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-multitask" => Ok(ParamMode::AllMultiTask),
            "all-singletask" => Ok(ParamMode::AllSingleTask),
            _ => match s.strip_prefix("one:") {
                Some(task) if !task.is_empty() => Ok(ParamMode::One(task.to_string())),
                _ => Err(Error::Config(format!(
                    "unknown Param(%) mode `{s}` (expected one:<task>, all-multitask, all-singletask)"
                ))),
            },
        }
    }
}

fn one_percent(m: &PruningMask) -> f64 {
    100.0 * (m.surviving() + m.non_prunable_scalars) as f64 / m.total_scalars() as f64
}

/// Percentage of |θ| that is nonzero for the given deployment.
pub fn param_percent(masks: &MaskSet, mode: &ParamMode) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::Pruning("Param(%) of an empty mask set".into()));
    }
    match mode {
        ParamMode::One(task) => Ok(one_percent(masks.get(task)?)),
        ParamMode::AllMultiTask => Ok(one_percent(&masks.union()?)),
        ParamMode::AllSingleTask => Ok(masks.iter().map(one_percent).sum()),
    }
}

/// Mean per-task `One` percentage.
pub fn param_percent_one_mean(masks: &MaskSet) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::Pruning("Param(%) of an empty mask set".into()));
    }
    Ok(masks.iter().map(one_percent).sum::<f64>() / masks.len() as f64)
}
