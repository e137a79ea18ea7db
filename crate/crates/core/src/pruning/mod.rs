//! Mask mathematics: global magnitude pruning, masking of parameters and
//! gradients, the iterative sparsity law, Jaccard overlap and Param(%)
//! accounting.

mod bits;
mod mask;
mod ops;

pub use bits::BitArray;
pub use mask::{MaskEntry, MaskSet, PruningMask, AGNOSTIC};
pub use ops::{
    apply_mask, expected_sparsity, global_magnitude_prune, mask_gradients, overlap, overlap_matrix, param_percent,
    param_percent_one_mean, prune_count, surviving_after, ParamMode,
};

#[cfg(test)]
mod tests;
