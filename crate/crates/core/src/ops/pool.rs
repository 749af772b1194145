//! Global average pooling, max pooling and nearest-neighbour upsampling.

use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// `[B, C, H, W]` → `[B, C]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("global_avg_pool")?;
    if h * w == 0 {
        return Err(invalid("global_avg_pool", "empty spatial extent"));
    }
    let hw = h * w;
    let inv = 1.0 / hw as Scalar;
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<Scalar>() * inv)
        .collect();
    Tensor::new(&[b, c], out)
}

pub(crate) fn gap_backward(shape: &[usize], dout: &[Scalar]) -> Vec<Scalar> {
    let hw = shape[2] * shape[3];
    let inv = 1.0 / hw as Scalar;
    dout.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPoolConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn maxpool_out(x: &[usize], cfg: MaxPoolConfig) -> Result<[usize; 4]> {
    let (b, c, h, w) = match *x {
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(invalid("maxpool", format!("input must be rank 4, got {x:?}"))),
    };
    if cfg.kernel == 0 || cfg.stride == 0 {
        return Err(invalid("maxpool", "kernel and stride must be positive"));
    }
    if cfg.padding * 2 > cfg.kernel {
        return Err(invalid("maxpool", "padding must be at most half the kernel"));
    }
    if h + 2 * cfg.padding < cfg.kernel || w + 2 * cfg.padding < cfg.kernel {
        return Err(invalid("maxpool", "kernel larger than padded input"));
    }
    let oh = (h + 2 * cfg.padding - cfg.kernel) / cfg.stride + 1;
    let ow = (w + 2 * cfg.padding - cfg.kernel) / cfg.stride + 1;
    Ok([b, c, oh, ow])
}

/// Returns pooled values and, per output element, the flat input index of
/// the first maximum. Padding never wins.
pub(crate) fn maxpool_forward(x: &Tensor, cfg: MaxPoolConfig) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = maxpool_out(x.shape(), cfg)?;
    let (_, _, h, w) = x.dims4("maxpool")?;
    let [b, c, oh, ow] = out_shape;
    let data = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let pad = cfg.padding as isize;
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = Scalar::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..cfg.kernel {
                    let iy = (oy * cfg.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..cfg.kernel {
                        let ix = (ox * cfg.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if data[i] > best || best_i == usize::MAX {
                            best = data[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(&out_shape, out)?, arg))
}

pub fn maxpool(x: &Tensor, cfg: MaxPoolConfig) -> Result<Tensor> {
    maxpool_forward(x, cfg).map(|(t, _)| t)
}

/// Nearest-neighbour 2× upsampling of a rank-4 tensor.
pub fn upsample_nearest_2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("upsample")?;
    let src = x.data();
    let mut out = Vec::with_capacity(b * c * h * w * 4);
    for plane in src.chunks_exact(h * w) {
        for y in 0..2 * h {
            let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor::new(&[b, c, 2 * h, 2 * w], out)
}

pub(crate) fn upsample_backward(in_shape: &[usize], dout: &[Scalar]) -> Vec<Scalar> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let planes = in_shape[0] * in_shape[1];
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dout[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
            }
        }
    }
    dx
}
