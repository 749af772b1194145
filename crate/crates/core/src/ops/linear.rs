use super::gemm::{gemm, transpose};
use crate::error::{check_dim, Result};
use crate::tensor::{Scalar, Tensor};

/// `x[B, n] · Wᵀ + bias`, with `W` of shape `[m, n]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, n, m) = linear_dims(x, weight, bias)?;
    Tensor::new(
        &[b, m],
        forward(x.data(), weight.data(), bias.map(Tensor::data), b, n, m),
    )
}

pub(crate) fn linear_dims(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    let (b, n) = x.dims2("linear")?;
    let (m, wn) = weight.dims2("linear")?;
    check_dim("linear", "weight inner dimension", n, wn)?;
    if let Some(bias) = bias {
        check_dim("linear", "bias length", m, bias.numel())?;
    }
    Ok((b, n, m))
}

pub(crate) fn forward(
    x: &[Scalar],
    w: &[Scalar],
    bias: Option<&[Scalar]>,
    b: usize,
    n: usize,
    m: usize,
) -> Vec<Scalar> {
    let mut out = vec![0.0; b * m];
    let wt = transpose(w, m, n);
    gemm(&mut out, x, &wt, b, n, m);
    if let Some(bias) = bias {
        for row in out.chunks_exact_mut(m) {
            row.iter_mut().zip(bias).for_each(|(o, bv)| *o += bv);
        }
    }
    out
}

/// Returns `(dx, dW, db)`.
pub(crate) fn backward(
    x: &[Scalar],
    w: &[Scalar],
    dout: &[Scalar],
    b: usize,
    n: usize,
    m: usize,
) -> (Vec<Scalar>, Vec<Scalar>, Vec<Scalar>) {
    let mut dx = vec![0.0; b * n];
    gemm(&mut dx, dout, w, b, m, n);
    let mut dw = vec![0.0; m * n];
    let dout_t = transpose(dout, b, m);
    gemm(&mut dw, &dout_t, x, m, b, n);
    let mut db = vec![0.0; m];
    for row in dout.chunks_exact(m) {
        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
    }
    (dx, dw, db)
}
