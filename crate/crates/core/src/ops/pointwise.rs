//! Elementwise maps, channel broadcasting, concatenation and normalization.

use crate::error::{check_dim, invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest representable value strictly below one.
const BELOW_ONE: Scalar = 1.0 - Scalar::EPSILON / 2.0;

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where the exact value rounds to an endpoint.
#[inline]
pub fn sigmoid_scalar(x: Scalar) -> Scalar {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(Scalar::MIN_POSITIVE, BELOW_ONE)
}

#[inline]
pub(crate) fn silu_scalar(x: Scalar) -> Scalar {
    x * sigmoid_scalar(x)
}

#[inline]
pub(crate) fn silu_grad(x: Scalar) -> Scalar {
    let s = sigmoid_scalar(x);
    s * (1.0 + x * (1.0 - s))
}

fn map(x: &Tensor, f: impl Fn(Scalar) -> Scalar) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn silu(x: &Tensor) -> Tensor {
    map(x, silu_scalar)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(invalid(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ))
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
}

/// `x[B, C, H, W] ⊙ s[B, C]` broadcast over the spatial dimensions.
pub fn mul_channels(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("mul_channels")?;
    let (sb, sc) = s.dims2("mul_channels")?;
    check_dim("mul_channels", "batch", b, sb)?;
    check_dim("mul_channels", "channels", c, sc)?;
    let hw = h * w;
    let mut out = x.data().to_vec();
    for (plane, &g) in out.chunks_exact_mut(hw).zip(s.data()) {
        plane.iter_mut().for_each(|v| *v *= g);
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn concat_shape(shapes: &[&[usize]]) -> Result<[usize; 4]> {
    let first = shapes.first().ok_or_else(|| invalid("concat_channels", "no inputs"))?;
    let (b, h, w) = match **first {
        [b, _, h, w] => (b, h, w),
        _ => return Err(invalid("concat_channels", "inputs must be rank 4")),
    };
    let mut c = 0;
    for s in shapes {
        match **s {
            [sb, sc, sh, sw] => {
                check_dim("concat_channels", "batch", b, sb)?;
                check_dim("concat_channels", "height", h, sh)?;
                check_dim("concat_channels", "width", w, sw)?;
                c += sc;
            }
            _ => return Err(invalid("concat_channels", "inputs must be rank 4")),
        }
    }
    Ok([b, c, h, w])
}

/// Concatenation along the channel axis.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = xs.iter().map(|t| t.shape()).collect();
    let out_shape = concat_shape(&shapes)?;
    let b = out_shape[0];
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for bi in 0..b {
        for x in xs {
            let per = x.numel() / b;
            out.extend_from_slice(&x.data()[bi * per..(bi + 1) * per]);
        }
    }
    Tensor::new(&out_shape, out)
}

/// `sin(alpha · (z ⊙ w) + theta)` over `z[B, r]`; `w` and `theta` of length
/// `r`. A missing `theta` is zero and a missing `alpha` is one.
pub(crate) fn sin_affine_forward(
    z: &[Scalar],
    w: &[Scalar],
    theta: Option<&[Scalar]>,
    alpha: Option<Scalar>,
) -> Vec<Scalar> {
    let r = w.len();
    z.chunks_exact(r)
        .flat_map(|row| {
            row.iter().enumerate().map(move |(i, &zv)| {
                let mut arg = zv * w[i];
                if let Some(a) = alpha {
                    arg *= a;
                }
                if let Some(t) = theta {
                    arg += t[i];
                }
                arg.sin()
            })
        })
        .collect()
}

/// Stateless sinusoidal mixing `sin(z ⊙ w + theta)`.
pub fn sin_affine(z: &Tensor, w: &Tensor, theta: &Tensor) -> Result<Tensor> {
    let (_, r) = z.dims2("sin_affine")?;
    check_dim("sin_affine", "w length", r, w.numel())?;
    check_dim("sin_affine", "theta length", r, theta.numel())?;
    Tensor::new(
        z.shape(),
        sin_affine_forward(z.data(), w.data(), Some(theta.data()), None),
    )
}

pub const BN_EPS: Scalar = 1e-3;

/// Per-channel statistics used by batch normalization.
#[derive(Clone, Debug)]
pub(crate) struct BnSaved {
    pub xhat: Vec<Scalar>,
    pub inv_std: Vec<Scalar>,
    pub batch_stats: bool,
}

/// Normalizes with batch statistics when `running` is `None`, otherwise with
/// the supplied `(mean, var)` buffers.
pub(crate) fn batchnorm_forward(
    x: &[Scalar],
    shape: &[usize],
    gamma: &[Scalar],
    beta: &[Scalar],
    running: Option<(&[Scalar], &[Scalar])>,
) -> (Vec<Scalar>, BnSaved) {
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let n = (b * hw) as Scalar;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    match running {
        Some((m, v)) => {
            mean.copy_from_slice(m);
            var.copy_from_slice(v);
        }
        None => {
            for bi in 0..b {
                for ch in 0..c {
                    let plane = &x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
                    mean[ch] += plane.iter().sum::<Scalar>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ch in 0..c {
                    let plane = &x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
                    var[ch] += plane.iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<Scalar>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
        }
    }
    let inv_std: Vec<Scalar> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                y[i] = gamma[ch] * xhat[i] + beta[ch];
            }
        }
    }
    (
        y,
        BnSaved {
            xhat,
            inv_std,
            batch_stats: running.is_none(),
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward(
    saved: &BnSaved,
    shape: &[usize],
    gamma: &[Scalar],
    dy: &[Scalar],
) -> (Vec<Scalar>, Vec<Scalar>, Vec<Scalar>) {
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let n = (b * hw) as Scalar;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for (&g, &xh) in dy[off..off + hw].iter().zip(&saved.xhat[off..off + hw]) {
                dgamma[ch] += g * xh;
                dbeta[ch] += g;
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            let k = gamma[ch] * saved.inv_std[ch];
            for i in off..off + hw {
                dx[i] = if saved.batch_stats {
                    k * (dy[i] - dbeta[ch] / n - saved.xhat[i] * dgamma[ch] / n)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Mean softmax cross-entropy over the batch and the softmax probabilities.
pub(crate) fn cross_entropy_forward(logits: &[Scalar], k: usize, labels: &[usize]) -> (Scalar, Vec<Scalar>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (bi, row) in logits.chunks_exact(k).enumerate() {
        let max = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
        let sum: Scalar = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[labels[bi]];
        for (j, v) in row.iter().enumerate() {
            probs[bi * k + j] = (v - lse).exp();
        }
    }
    (total / labels.len() as Scalar, probs)
}
