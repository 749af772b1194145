//! Small dense matrix products used by convolution and linear layers.
//!
//! All routines accumulate into `c` in a fixed order, so results do not
//! depend on anything but the inputs.

use crate::tensor::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm(c: &mut [Scalar], a: &[Scalar], b: &[Scalar], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if n >= 16 {
        const COLS: usize = 256;
        let mut i = 0;
        while i + 4 <= m {
            let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            for j0 in (0..n).step_by(COLS) {
                let j1 = (j0 + COLS).min(n);
                for p in 0..k {
                    let av = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
                    let brow = &b[p * n + j0..p * n + j1];
                    let rows = (&mut c0[j0..j1], &mut c1[j0..j1], &mut c2[j0..j1], &mut c3[j0..j1]);
                    for (j, &bv) in brow.iter().enumerate() {
                        rows.0[j] += av[0] * bv;
                        rows.1[j] += av[1] * bv;
                        rows.2[j] += av[2] * bv;
                        rows.3[j] += av[3] * bv;
                    }
                }
            }
            i += 4;
        }
        for i in i..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                axpy(crow, av, &b[p * n..(p + 1) * n]);
            }
        }
    } else {
        let bt = transpose(b, k, n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                c[i * n + j] += dot(arow, &bt[j * k..(j + 1) * k]);
            }
        }
    }
}

/// Row-major transpose of an `r×c` matrix.
pub(crate) fn transpose(a: &[Scalar], r: usize, c: usize) -> Vec<Scalar> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[inline]
pub(crate) fn axpy(y: &mut [Scalar], a: Scalar, x: &[Scalar]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
pub(crate) fn dot(x: &[Scalar], y: &[Scalar]) -> Scalar {
    let n = x.len().min(y.len());
    let chunks = n / 4;
    let mut acc = [0.0 as Scalar; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += x[j] * y[j];
        acc[1] += x[j + 1] * y[j + 1];
        acc[2] += x[j + 2] * y[j + 2];
        acc[3] += x[j + 3] * y[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += x[j] * y[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
