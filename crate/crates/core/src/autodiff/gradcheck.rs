use crate::error::Result;
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Real;

/// Central-difference gradient estimate of `f` at `params`, one scalar at a time.
pub fn fd_gradient<T, F>(mut f: F, params: &ParameterStore<T>, h: f64) -> Result<Gradients<T>>
where
    T: Real,
    F: FnMut(&ParameterStore<T>) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut out = params.zero_gradients();
    let hh = T::from_f64(h);
    for e in 0..params.len() {
        for j in 0..params.tensor(e).len() {
            let orig = params.tensor(e).values()[j];
            probe.tensor_mut(e).values_mut()[j] = orig + hh;
            let up = f(&probe)?;
            probe.tensor_mut(e).values_mut()[j] = orig - hh;
            let down = f(&probe)?;
            probe.tensor_mut(e).values_mut()[j] = orig;
            out.entry_mut(e)[j] = T::from_f64((up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Gradients below this magnitude are compared absolutely; central differences
/// at h=1e-5 carry roughly 1e-11 of round-off, which would swamp a relative
/// comparison of near-zero entries.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// Largest `|a - b| / max(|a|, |b|, floor)` over all scalars.
pub fn max_relative_error<T: Real>(a: &Gradients<T>, b: &Gradients<T>) -> f64 {
    a.per_entry
        .iter()
        .flatten()
        .zip(b.per_entry.iter().flatten())
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_ERROR_FLOOR)
        })
        .fold(0.0, f64::max)
}
