//! Blocked matrix product used by the convolution kernels.
//!
//! Every output element accumulates its inner-dimension terms strictly in
//! ascending order, starting from the value already in `c`. The blocking only
//! changes which elements are computed together, never the order of the
//! additions into any single element, so results are bit-identical to a
//! naive triple loop.

use crate::tensor::Scalar;

const MR: usize = 8;
const NR: usize = 16;
const KC: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let panels = m.div_ceil(MR);
    let kc_max = KC.min(k);
    let mut apack = vec![T::zero(); panels * MR * kc_max];
    let mut bpack = vec![T::zero(); kc_max * NR];

    // Inner-dimension blocks run in ascending order; each block adds its
    // terms on top of the partial sums already stored in `c`.
    for k0 in (0..k).step_by(KC) {
        let kc = KC.min(k - k0);
        // A packed into MR-row panels, k-major inside each panel.
        for panel in 0..panels {
            let dst = &mut apack[panel * MR * kc..(panel + 1) * MR * kc];
            for i in 0..MR {
                let row = panel * MR + i;
                if row >= m {
                    break;
                }
                for (p, &v) in a[row * k + k0..row * k + k0 + kc].iter().enumerate() {
                    dst[p * MR + i] = v;
                }
            }
        }
        for j0 in (0..n).step_by(NR) {
            let nb = NR.min(n - j0);
            for p in 0..kc {
                let src = (k0 + p) * n + j0;
                bpack[p * NR..p * NR + nb].copy_from_slice(&b[src..src + nb]);
            }
            for panel in 0..panels {
                let i0 = panel * MR;
                let mb = MR.min(m - i0);
                let ap = &apack[panel * MR * kc..(panel + 1) * MR * kc];
                if mb == MR && nb == NR {
                    kernel_full(kc, ap, &bpack, c, n, i0, j0);
                } else {
                    kernel_edge(kc, ap, &bpack, c, n, i0, j0, mb, nb);
                }
            }
        }
    }
}

macro_rules! kernel_rows {
    ($k:expr, $ap:expr, $bp:expr, $c:expr, $ldc:expr, $i0:expr, $j0:expr; $($i:literal => $r:ident),+) => {{
        $(let mut $r: [_; NR] = $c[($i0 + $i) * $ldc + $j0..($i0 + $i) * $ldc + $j0 + NR].try_into().expect("NR");)+
        for (a, brow) in $ap.chunks_exact(MR).zip($bp.chunks_exact(NR)).take($k) {
            let brow: &[_; NR] = brow.try_into().expect("NR");
            $(axpy_row(&mut $r, a[$i], brow);)+
        }
        $($c[($i0 + $i) * $ldc + $j0..($i0 + $i) * $ldc + $j0 + NR].copy_from_slice(&$r);)+
    }};
}

#[inline(always)]
fn axpy_row<T: Scalar>(r: &mut [T; NR], av: T, b: &[T; NR]) {
    for j in 0..NR {
        r[j] = r[j] + av * b[j];
    }
}

#[inline(always)]
fn kernel_full<T: Scalar>(k: usize, ap: &[T], bp: &[T], c: &mut [T], ldc: usize, i0: usize, j0: usize) {
    kernel_rows!(k, ap, bp, c, ldc, i0, j0; 0 => r0, 1 => r1, 2 => r2, 3 => r3, 4 => r4, 5 => r5, 6 => r6, 7 => r7);
}

#[allow(clippy::too_many_arguments)]
fn kernel_edge<T: Scalar>(
    k: usize,
    ap: &[T],
    bp: &[T],
    c: &mut [T],
    ldc: usize,
    i0: usize,
    j0: usize,
    mb: usize,
    nb: usize,
) {
    // Lanes past `nb` compute on stale packing data and are discarded.
    for i in 0..mb {
        let dst = &mut c[(i0 + i) * ldc + j0..(i0 + i) * ldc + j0 + nb];
        let mut r = [T::zero(); NR];
        r[..nb].copy_from_slice(dst);
        for (p, brow) in bp.chunks_exact(NR).take(k).enumerate() {
            axpy_row(&mut r, ap[p * MR + i], brow.try_into().expect("NR"));
        }
        dst.copy_from_slice(&r[..nb]);
    }
}

/// Row-major transpose of an `rows × cols` matrix.
pub(crate) fn transpose<T: Copy>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for (cidx, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            dst[cidx * rows + r] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
    }

    #[test]
    fn bit_identical_to_naive_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, k, n) in &[(1, 1, 1), (4, 9, 16), (5, 7, 17), (13, 33, 40), (64, 576, 35)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let init: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut fast = init.clone();
            let mut slow = init;
            matmul_acc(m, k, n, &a, &b, &mut fast);
            naive(m, k, n, &a, &b, &mut slow);
            assert_eq!(fast, slow, "m={m} k={k} n={n}");
        }
    }

    #[test]
    fn transpose_round_trip() {
        let src: Vec<u32> = (0..12).collect();
        let mut t = vec![0; 12];
        let mut back = vec![0; 12];
        transpose(3, 4, &src, &mut t);
        transpose(4, 3, &t, &mut back);
        assert_eq!(t[1], 4);
        assert_eq!(back, src);
    }
}
