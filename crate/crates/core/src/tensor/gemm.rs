//! Row-major matrix kernels.
//!
//! All kernels reduce over `k` sequentially within each output row, so results
//! are bit-identical regardless of how many threads rayon hands us. Rows are
//! independent and may be computed in parallel.

use rayon::prelude::*;

use super::element::Element;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

/// `c[M×N] += a[M×K] · b[K×N]`
pub fn gemm_acc<E: Element>(c: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |c_row: &mut [E], a_row: &[E]| {
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == E::ZERO {
                continue;
            }
            let b_row = &b[kk * n..kk * n + n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(c_row, a_row)| row(c_row, a_row));
    } else {
        for (c_row, a_row) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(c_row, a_row);
        }
    }
}

/// Out-of-place transpose of a row-major `rows×cols` matrix.
pub fn transpose<E: Element>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut t = vec![E::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let m = 7;
        let k = 5;
        let n = 9;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.73).cos()).collect();
        let mut c = vec![0.0f64; m * n];
        gemm_acc(&mut c, &a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|kk| a[i * k + kk] * b[kk * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let t = transpose(&a, 3, 4);
        let back = transpose(&t, 4, 3);
        assert_eq!(a, back);
    }
}
