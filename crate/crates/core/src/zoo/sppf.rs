use rand::Rng;

use crate::error::Result;
use crate::ops::MaxPoolConfig;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

use super::conv::ConvBlock;
use super::Mode;

/// Spatial pyramid pooling (fast): three chained `k×k` stride-1 max pools.
#[derive(Clone, Debug)]
pub struct Sppf {
    pub c1: usize,
    pub c2: usize,
    pub k: usize,
    pub cv1: ConvBlock,
    pub cv2: ConvBlock,
}

impl Sppf {
    pub fn build<R: Rng>(store: &mut ParamStore, rng: &mut R, c1: usize, c2: usize, k: usize) -> Self {
        let hidden = c1 / 2;
        Self {
            c1,
            c2,
            k,
            cv1: ConvBlock::build(store, rng, "cv1", c1, hidden, 1, 1),
            cv2: ConvBlock::build(store, rng, "cv2", hidden * 4, c2, 1, 1),
        }
    }

    fn pool(&self) -> MaxPoolConfig {
        MaxPoolConfig {
            kernel: self.k,
            stride: 1,
            padding: self.k / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let x = self.cv1.forward(tape, store, x, mode)?;
        let y1 = tape.maxpool(x, self.pool())?;
        let y2 = tape.maxpool(y1, self.pool())?;
        let y3 = tape.maxpool(y2, self.pool())?;
        let cat = tape.concat_channels(&[x, y1, y2, y3])?;
        self.cv2.forward(tape, store, cat, mode)
    }

    /// Max pools count one FLOP per window element.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let pools = 3 * (self.c1 / 2 * h * w * self.k * self.k) as u64;
        self.cv1.flops(h, w) + pools + self.cv2.flops(h, w)
    }
}
