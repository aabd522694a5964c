//! Matrix-product kernels.
//!
//! Three orientations cover every forward and backward product without
//! materializing transposes. All kernels *accumulate* into `out`, so the
//! backward pass can add straight into gradient buffers.
//!
//! Determinism: each output element is written by exactly one task and its
//! k-summation runs in a fixed order, so results are bit-identical for any
//! thread count. `LPA_THREADS` caps the worker pool.

use std::sync::Once;

use crate::scalar::Scalar;

static POOL_INIT: Once = Once::new();

/// Build the global rayon pool once, honoring `LPA_THREADS`.
fn ensure_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(v) = std::env::var("LPA_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                let n = n.max(1);
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    });
}

/// Work threshold below which threading overhead dominates.
const PAR_MIN_MACS: usize = 1 << 17;

fn run_rows<T, F>(out: &mut [T], row_len: usize, macs: usize, body: F)
where
    T: Scalar,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    ensure_pool();
    if macs >= PAR_MIN_MACS && rayon::current_num_threads() > 1 {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            body(i, row);
        }
    }
}

/// out += a * b, with a: m x k, b: k x n, out: m x n.
pub(crate) fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    run_rows(out, n, m * k * n, |i, out_row| {
        let a_row = &a[i * k..i * k + k];
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = &b[l * n..l * n + n];
            for (o, &b_lj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_il * b_lj;
            }
        }
    });
}

/// out += a * b^T, with a: m x k, b: n x k, out: m x n.
pub(crate) fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    run_rows(out, n, m * k * n, |i, out_row| {
        let a_row = &a[i * k..i * k + k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..j * k + k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            *o += acc;
        }
    });
}

/// out += a^T * b, with a: k x m, b: k x n, out: m x n.
pub(crate) fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    run_rows(out, n, m * k * n, |i, out_row| {
        for l in 0..k {
            let a_li = a[l * m + i];
            let b_row = &b[l * n..l * n + n];
            for (o, &b_lj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_li * b_lj;
            }
        }
    });
}
