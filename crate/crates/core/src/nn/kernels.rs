//! Inner loops. Every kernel has a fixed summation order so results are
//! reproducible bit-for-bit; the lane-split accumulators let the compiler
//! vectorize without reassociating.

use super::Real;

const LANES: usize = 16;

/// `y += s * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], s: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * *xi;
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] = acc[k] + acc[k + width];
        }
    }
    acc[0] + tail
}

/// `y[r, :] += sum_i a[r, i] * w[i, :]` for `rows` rows.
///
/// `a` is `rows x inner`, `w` is `inner x out`, `y` is `rows x out`, all
/// row-major. The weight row stays hot while it is applied to every batch
/// row; zero multipliers (ReLU outputs, one-hot inputs) are skipped.
pub fn gemm_acc<T: Real>(y: &mut [T], a: &[T], w: &[T], rows: usize, inner: usize, out: usize) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * out);
    debug_assert_eq!(y.len(), rows * out);
    for i in 0..inner {
        let wrow = &w[i * out..(i + 1) * out];
        for r in 0..rows {
            let s = a[r * inner + i];
            if s != T::zero() {
                axpy(&mut y[r * out..(r + 1) * out], s, wrow);
            }
        }
    }
}

/// `dw[i, :] += sum_r a[r, i] * dy[r, :]`
pub fn gemm_tn_acc<T: Real>(dw: &mut [T], a: &[T], dy: &[T], rows: usize, inner: usize, out: usize) {
    debug_assert_eq!(dw.len(), inner * out);
    for i in 0..inner {
        let drow = &mut dw[i * out..(i + 1) * out];
        for r in 0..rows {
            let s = a[r * inner + i];
            if s != T::zero() {
                axpy(drow, s, &dy[r * out..(r + 1) * out]);
            }
        }
    }
}

/// `da[r, i] = dot(w[i, :], dy[r, :])` (overwrites `da`).
pub fn gemm_nt<T: Real>(da: &mut [T], dy: &[T], w: &[T], rows: usize, inner: usize, out: usize) {
    debug_assert_eq!(da.len(), rows * inner);
    for i in 0..inner {
        let wrow = &w[i * out..(i + 1) * out];
        for r in 0..rows {
            da[r * inner + i] = dot(wrow, &dy[r * out..(r + 1) * out]);
        }
    }
}

/// Adds each row of `dy` into `db`.
pub fn sum_rows_acc<T: Real>(db: &mut [T], dy: &[T], rows: usize, out: usize) {
    for r in 0..rows {
        for (b, d) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *b += *d;
        }
    }
}
