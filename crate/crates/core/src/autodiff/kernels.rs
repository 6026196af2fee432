//! Dense f64 kernels behind the tape ops. Every output element is computed
//! by a fixed-order sequential reduction, so the row-parallel dispatch in
//! `matmul` cannot change results.

use crate::par;

/// Row count below which parallel dispatch is not worth the overhead.
const PAR_MIN_FLOPS: usize = 1 << 18;

/// c[m,n] = a[m,k] * b[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let body = |row0: usize, chunk: &mut [f64]| {
        for (local, c_row) in chunk.chunks_mut(n).enumerate() {
            let i = row0 + local;
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = &b[kk * n..kk * n + n];
                for (cj, bj) in c_row.iter_mut().zip(b_row) {
                    *cj += aik * bj;
                }
            }
        }
    };
    if m * k * n >= PAR_MIN_FLOPS && m > 1 {
        par::for_each_row_chunk(&mut c, n, 1.max(m / 32), body);
    } else {
        body(0, &mut c);
    }
    c
}

/// c[m,n] = a[m,k] * b[n,k]^T  (rows of `a` dotted with rows of `b`)
pub fn matmul_tb(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let body = |row0: usize, chunk: &mut [f64]| {
        for (local, c_row) in chunk.chunks_mut(n).enumerate() {
            let i = row0 + local;
            let a_row = &a[i * k..(i + 1) * k];
            for (j, cj) in c_row.iter_mut().enumerate() {
                let b_row = &b[j * k..(j + 1) * k];
                *cj = dot(a_row, b_row);
            }
        }
    };
    if m * k * n >= PAR_MIN_FLOPS && m > 1 {
        par::for_each_row_chunk(&mut c, n, 1.max(m / 32), body);
    } else {
        body(0, &mut c);
    }
    c
}

/// c[n,k] = a[m,n]^T * b[m,k]
pub fn matmul_ta(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let b_row = &b[i * k..(i + 1) * k];
        for (j, &aij) in a_row.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let c_row = &mut c[j * k..(j + 1) * k];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aij * bj;
            }
        }
    }
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax in place over rows of length `n`.
pub fn softmax_rows(data: &mut [f64], n: usize) {
    for row in data.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Row-wise log-softmax in place over rows of length `n`.
pub fn log_softmax_rows(data: &mut [f64], n: usize) {
    for row in data.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}
