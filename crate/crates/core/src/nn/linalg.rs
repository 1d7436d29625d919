//! Row-major matrix kernels used by every layer.
//!
//! All products accumulate into the output. The transposed variants copy the
//! transposed operand into scratch so that every inner loop is a contiguous
//! `c_row += a * b_row` update, which the compiler vectorizes.

use alloc::vec::Vec;

use super::Scalar;

const ROW_BLOCK: usize = 4;
const COL_BLOCK: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let mut i0 = 0;
    while i0 + ROW_BLOCK <= m {
        let block = &mut c[i0 * n..(i0 + ROW_BLOCK) * n];
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let a0 = &a[i0 * k..(i0 + 1) * k];
        let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
        let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
        let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + COL_BLOCK).min(n);
            let (r0, r1, r2, r3) = (
                &mut c0[j0..j1],
                &mut c1[j0..j1],
                &mut c2[j0..j1],
                &mut c3[j0..j1],
            );
            for p in 0..k {
                let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
                if v0 == T::zero() && v1 == T::zero() && v2 == T::zero() && v3 == T::zero() {
                    continue;
                }
                let brow = &b[p * n + j0..p * n + j1];
                for ((((x0, x1), x2), x3), &bv) in r0
                    .iter_mut()
                    .zip(r1.iter_mut())
                    .zip(r2.iter_mut())
                    .zip(r3.iter_mut())
                    .zip(brow)
                {
                    *x0 += v0 * bv;
                    *x1 += v1 * bv;
                    *x2 += v2 * bv;
                    *x3 += v3 * bv;
                }
            }
            j0 = j1;
        }
        i0 += ROW_BLOCK;
    }
    for i in i0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &v) in arow.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (x, &bv) in crow.iter_mut().zip(brow) {
                *x += v * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is `[k×m]` and `b` is `[k×n]`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let at = transpose(k, m, a);
    gemm(m, k, n, &at, b, c);
}

/// `c[m×n] += a · bᵀ` where `a` is `[m×k]` and `b` is `[n×k]`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(n, k, b);
    gemm(m, k, n, a, &bt, c);
}

/// Transpose of a `[rows×cols]` matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = alloc::vec![T::zero(); rows * cols];
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// Adds `bias[n]` to every row of `c[m×n]`.
pub fn add_row_bias<T: Scalar>(c: &mut [T], bias: &[T]) {
    for row in c.chunks_exact_mut(bias.len()) {
        for (x, &b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

/// Accumulates the column sums of `g[m×n]` into `acc[n]`.
pub fn add_col_sums<T: Scalar>(g: &[T], acc: &mut [T]) {
    for row in g.chunks_exact(acc.len()) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn fill(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn gemm_matches_naive_on_ragged_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (5, 3, 7), (9, 17, 300), (4, 8, 513), (13, 2, 2)] {
            let a = fill(m * k, 1);
            let b = fill(k * n, 2);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a, &b, &mut c);
            let expect = naive(m, k, n, &a, &b);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_variants() {
        let (m, k, n) = (6, 5, 9);
        let a = fill(m * k, 3);
        let b = fill(k * n, 4);
        let expect = naive(m, k, n, &a, &b);

        let at = transpose(m, k, &a);
        let mut c = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c);
        assert!(c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt = transpose(k, n, &b);
        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c);
        assert!(c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gemm_accumulates() {
        let mut c = vec![1.0; 4];
        gemm(2, 1, 2, &[1.0, 2.0], &[3.0, 4.0], &mut c);
        assert_eq!(c, vec![4.0, 5.0, 7.0, 9.0]);
    }
}
