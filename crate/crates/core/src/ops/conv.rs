//! Direct 2-D convolution via im2col.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, transpose};
use crate::error::{check_dim, invalid, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dConfig {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
    pub cfg: Conv2dConfig,
}

impl ConvGeom {
    pub fn new(x: &[usize], wt: &[usize], cfg: Conv2dConfig) -> Result<Self> {
        const OP: &str = "conv2d";
        let (b, cin, h, w) = match *x {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(invalid(OP, format!("input must be rank 4, got {x:?}"))),
        };
        let (cout, cin_g, kh, kw) = match *wt {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(invalid(OP, format!("weight must be rank 4, got {wt:?}"))),
        };
        if cfg.groups == 0 || cfg.stride == 0 {
            return Err(invalid(OP, "stride and groups must be positive"));
        }
        if kh == 0 || kh != kw {
            return Err(invalid(
                OP,
                format!("kernel must be square and non-empty, got {kh}x{kw}"),
            ));
        }
        if cin % cfg.groups != 0 {
            return Err(invalid(
                OP,
                format!("input channels {cin} not divisible by groups {}", cfg.groups),
            ));
        }
        if cout % cfg.groups != 0 {
            return Err(invalid(
                OP,
                format!("output channels {cout} not divisible by groups {}", cfg.groups),
            ));
        }
        check_dim(OP, "weight input channels", cin / cfg.groups, cin_g)?;
        if h + 2 * cfg.padding < kh || w + 2 * cfg.padding < kw {
            return Err(invalid(OP, "kernel larger than padded input"));
        }
        let oh = (h + 2 * cfg.padding - kh) / cfg.stride + 1;
        let ow = (w + 2 * cfg.padding - kw) / cfg.stride + 1;
        Ok(Self {
            b,
            cin,
            h,
            w,
            cout,
            k: kh,
            oh,
            ow,
            cfg,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.cfg.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.cfg.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.cfg.stride == 1 && self.cfg.padding == 0
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.b, self.cout, self.oh, self.ow]
    }

    /// Multiply-accumulates of one call.
    pub fn macs(&self) -> u64 {
        (self.b * self.cout * self.oh * self.ow * self.patch()) as u64
    }

    /// Fills `cols[patch × oh·ow]` for channels `[c0, c0+cin_g)` of sample `x`.
    fn im2col(&self, x: &[Scalar], c0: usize, cols: &mut [Scalar]) {
        let (k, s, pad) = (self.k, self.cfg.stride, self.cfg.padding as isize);
        let p = self.oh * self.ow;
        for ci in 0..self.cin_g() {
            let plane = &x[(c0 + ci) * self.h * self.w..(c0 + ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into sample gradient `dx`.
    fn col2im(&self, cols: &[Scalar], c0: usize, dx: &mut [Scalar]) {
        let (k, s, pad) = (self.k, self.cfg.stride, self.cfg.padding as isize);
        let p = self.oh * self.ow;
        for ci in 0..self.cin_g() {
            let plane = &mut dx[(c0 + ci) * self.h * self.w..(c0 + ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(g: &ConvGeom, x: &[Scalar], w: &[Scalar], bias: Option<&[Scalar]>) -> Vec<Scalar> {
    let p = g.oh * g.ow;
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let mut out = vec![0.0; g.b * g.cout * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; patch * p]
    };
    for b in 0..g.b {
        let xs = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let os = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        for grp in 0..g.cfg.groups {
            let c0 = grp * cin_g;
            let cols_ref: &[Scalar] = if g.is_pointwise() {
                &xs[c0 * p..(c0 + cin_g) * p]
            } else {
                g.im2col(xs, c0, &mut cols);
                &cols
            };
            let wg = &w[grp * cout_g * patch..(grp + 1) * cout_g * patch];
            let og = &mut os[grp * cout_g * p..(grp + 1) * cout_g * p];
            gemm(og, wg, cols_ref, cout_g, patch, p);
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                os[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<Scalar>>,
    pub dw: Vec<Scalar>,
    pub db: Option<Vec<Scalar>>,
}

pub(crate) fn backward(
    g: &ConvGeom,
    x: &[Scalar],
    w: &[Scalar],
    dout: &[Scalar],
    need_dx: bool,
    need_db: bool,
) -> ConvGrads {
    let p = g.oh * g.ow;
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let mut dw = vec![0.0; w.len()];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut db = need_db.then(|| vec![0.0; g.cout]);
    let mut cols = vec![0.0; patch * p];
    let wt: Vec<Vec<Scalar>> = (0..g.cfg.groups)
        .map(|grp| transpose(&w[grp * cout_g * patch..(grp + 1) * cout_g * patch], cout_g, patch))
        .collect();
    for b in 0..g.b {
        let xs = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ds = &dout[b * g.cout * p..(b + 1) * g.cout * p];
        for grp in 0..g.cfg.groups {
            let c0 = grp * cin_g;
            if g.is_pointwise() {
                cols.copy_from_slice(&xs[c0 * p..(c0 + cin_g) * p]);
            } else {
                g.im2col(xs, c0, &mut cols);
            }
            let dg = &ds[grp * cout_g * p..(grp + 1) * cout_g * p];
            let cols_t = transpose(&cols, patch, p);
            gemm(
                &mut dw[grp * cout_g * patch..(grp + 1) * cout_g * patch],
                dg,
                &cols_t,
                cout_g,
                p,
                patch,
            );
            if let Some(dx) = dx.as_mut() {
                let mut dcols = vec![0.0; patch * p];
                gemm(&mut dcols, &wt[grp], dg, patch, cout_g, p);
                let dxs = &mut dx[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
                if g.is_pointwise() {
                    for (d, v) in dxs[c0 * p..(c0 + cin_g) * p].iter_mut().zip(&dcols) {
                        *d += v;
                    }
                } else {
                    g.col2im(&dcols, c0, dxs);
                }
            }
        }
        if let Some(db) = db.as_mut() {
            for (co, d) in db.iter_mut().enumerate() {
                *d += ds[co * p..(co + 1) * p].iter().sum::<Scalar>();
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Stateless convolution: `x` is `[B, Cin, H, W]`, `weight` is
/// `[Cout, Cin/groups, k, k]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, cfg: Conv2dConfig) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), weight.shape(), cfg)?;
    if let Some(b) = bias {
        check_dim("conv2d", "bias length", g.cout, b.numel())?;
    }
    let out = forward(&g, x.data(), weight.data(), bias.map(Tensor::data));
    Tensor::new(&g.out_shape(), out)
}
