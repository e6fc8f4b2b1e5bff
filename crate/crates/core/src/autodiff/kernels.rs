//! Dense kernels. Each output row is accumulated in a fixed order, so
//! results are bit-identical whatever the thread count.

use rayon::prelude::*;

use super::Real;

const ROWS_PER_TASK: usize = 64;

/// `out[n×m] = a[n×k] · b[k×m]`.
pub(crate) fn matmul(a: &[Real], b: &[Real], n: usize, k: usize, m: usize) -> Vec<Real> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    if m == 0 {
        return out;
    }
    out.par_chunks_mut(m * ROWS_PER_TASK)
        .enumerate()
        .for_each(|(task, block)| {
            let first = task * ROWS_PER_TASK;
            for (r, orow) in block.chunks_exact_mut(m).enumerate() {
                let arow = &a[(first + r) * k..(first + r + 1) * k];
                for (kk, &s) in arow.iter().enumerate() {
                    // Post-ReLU inputs are mostly zero; skipping them leaves
                    // finite sums unchanged.
                    if s == 0.0 {
                        continue;
                    }
                    let brow = &b[kk * m..(kk + 1) * m];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += s * bv;
                    }
                }
            }
        });
    out
}

pub(crate) fn transpose(a: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
