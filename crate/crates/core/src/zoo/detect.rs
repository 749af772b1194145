use rand::Rng;

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::conv::{ConvBlock, PlainConv};
use super::Mode;

pub const REG_MAX: usize = 16;

/// One scale of the decoupled head: a box branch and a class branch.
#[derive(Clone, Debug)]
pub struct DetectScale {
    pub box_convs: [ConvBlock; 2],
    pub box_out: PlainConv,
    pub cls_convs: [ConvBlock; 2],
    pub cls_out: PlainConv,
}

/// Anchor-free decoupled detection head over three scales.
///
/// Outputs are the raw per-scale maps `[B, 4·reg_max + nc, H, W]`. The
/// distribution-focal projection weights (`arange(reg_max)`) are stored as a
/// frozen block so the parameter total follows the usual convention, but
/// decoding is not performed.
#[derive(Clone, Debug)]
pub struct Detect {
    pub nc: usize,
    pub ch: Vec<usize>,
    /// Box-branch width.
    pub c2: usize,
    /// Class-branch width.
    pub c3: usize,
    pub scales: Vec<DetectScale>,
    pub dfl: ParamId,
}

impl Detect {
    pub fn widths(ch0: usize, nc: usize) -> (usize, usize) {
        let c2 = 16.max(ch0 / 4).max(REG_MAX * 4);
        let c3 = ch0.max(nc.min(100));
        (c2, c3)
    }

    pub fn build<R: Rng>(store: &mut ParamStore, rng: &mut R, nc: usize, ch: &[usize]) -> Self {
        let (c2, c3) = Self::widths(ch[0], nc);
        let scales = ch
            .iter()
            .enumerate()
            .map(|(i, &x)| DetectScale {
                box_convs: [
                    ConvBlock::build(store, rng, &format!("cv2.{i}.0"), x, c2, 3, 1),
                    ConvBlock::build(store, rng, &format!("cv2.{i}.1"), c2, c2, 3, 1),
                ],
                box_out: PlainConv::build(store, rng, &format!("cv2.{i}.2"), c2, 4 * REG_MAX, 1, 1, true),
                cls_convs: [
                    ConvBlock::build(store, rng, &format!("cv3.{i}.0"), x, c3, 3, 1),
                    ConvBlock::build(store, rng, &format!("cv3.{i}.1"), c3, c3, 3, 1),
                ],
                cls_out: PlainConv::build(store, rng, &format!("cv3.{i}.2"), c3, nc, 1, 1, true),
            })
            .collect();
        let arange =
            Tensor::new(&[1, REG_MAX, 1, 1], (0..REG_MAX).map(|v| v as Scalar).collect()).expect("static shape");
        let dfl = store.add("dfl.conv.weight", arange);
        let block = store.get_mut(dfl);
        block.frozen = true;
        block.decay = false;
        Self {
            nc,
            ch: ch.to_vec(),
            c2,
            c3,
            scales,
            dfl,
        }
    }

    pub fn out_channels(&self) -> usize {
        4 * REG_MAX + self.nc
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: &[Var], mode: Mode) -> Result<Vec<Var>> {
        xs.iter()
            .zip(&self.scales)
            .map(|(&x, s)| {
                let mut b = x;
                for c in &s.box_convs {
                    b = c.forward(tape, store, b, mode)?;
                }
                let b = s.box_out.forward(tape, store, b)?;
                let mut c = x;
                for cv in &s.cls_convs {
                    c = cv.forward(tape, store, c, mode)?;
                }
                let c = s.cls_out.forward(tape, store, c)?;
                tape.concat_channels(&[b, c])
            })
            .collect()
    }

    pub fn flops(&self, sizes: &[(usize, usize)]) -> u64 {
        sizes
            .iter()
            .zip(&self.scales)
            .map(|(&(h, w), s)| {
                s.box_convs
                    .iter()
                    .chain(&s.cls_convs)
                    .map(|c| c.flops(h, w))
                    .sum::<u64>()
                    + s.box_out.flops(h, w)
                    + s.cls_out.flops(h, w)
            })
            .sum()
    }
}
