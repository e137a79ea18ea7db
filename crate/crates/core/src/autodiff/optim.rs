use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.98;
pub const EPSILON: f64 = 1e-9;

/// Linear warmup to `base_lr`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64) -> Self {
        Self {
            base_lr,
            warmup_steps,
        }
    }

    /// Learning rate used by the optimizer step numbered `step` (1-based).
    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.base_lr;
        }
        self.base_lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// First and second moment buffers plus the global step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f64> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParameterStore<T>) -> Self {
        let zeros = |s: &ParameterStore<T>| -> Vec<Vec<T>> {
            (0..s.len()).map(|i| vec![T::zero(); s.tensor(i).len()]).collect()
        };
        Self {
            first_moment: zeros(store),
            second_moment: zeros(store),
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.first_moment.iter_mut().flatten().for_each(|v| *v = T::zero());
        self.second_moment.iter_mut().flatten().for_each(|v| *v = T::zero());
        self.step = 0;
    }
}

/// One Adam update. Scalars whose gradient is exactly zero are skipped
/// entirely (moments and value untouched), so masked or unreachable
/// parameters never drift through stale momentum.
pub fn adam_step<T: Real>(
    params: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    schedule: &WarmupSchedule,
) -> Result<()> {
    grads.check_aligned(params)?;
    if state.first_moment.len() != params.len() {
        return Err(Error::Layout("optimizer state not aligned to parameter store".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("adam_step gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = T::from_f64(schedule.lr(state.step));
    let (b1, b2, eps) = (T::from_f64(BETA1), T::from_f64(BETA2), T::from_f64(EPSILON));
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);

    for e in 0..params.len() {
        let g = grads.entry(e);
        let m = &mut state.first_moment[e];
        let v = &mut state.second_moment[e];
        let w = params.tensor_mut(e).values_mut();
        for j in 0..w.len() {
            let gj = g[j];
            if gj == T::zero() {
                continue;
            }
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            w[j] = w[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
