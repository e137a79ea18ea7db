//! Row-major dense kernels shared by forward and backward passes.

use crate::tensor::Real;

/// `[m, k] x [k, n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if av == T::zero() {
                continue;
            }
            crow.iter_mut().zip(brow).for_each(|(c, &bv)| *c = *c + av * bv);
        }
    }
    c
}

/// `A^T B` with `A: [m, k]`, `B: [m, n]`, giving `[k, n]`.
pub fn matmul_at_b<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (&av, crow) in arow.iter().zip(c.chunks_exact_mut(n)) {
            if av == T::zero() {
                continue;
            }
            crow.iter_mut().zip(brow).for_each(|(c, &bv)| *c = *c + av * bv);
        }
    }
    c
}

/// `A B^T` with `A: [m, n]`, `B: [k, n]`, giving `[m, k]`.
pub fn matmul_a_bt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for (crow, arow) in c.chunks_exact_mut(k).zip(a.chunks_exact(n)) {
        for (cv, brow) in crow.iter_mut().zip(b.chunks_exact(n)) {
            *cv = arow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    c
}

/// Writes `softmax(row)` into `out` and returns `ln sum exp(row)`.
pub fn softmax_into<T: Real>(row: &[T], out: &mut [T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        z = z + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / z);
    max + z.ln()
}
