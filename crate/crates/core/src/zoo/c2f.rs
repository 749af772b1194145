use rand::Rng;

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

use super::conv::ConvBlock;
use super::Mode;

/// Two 3×3 convs at constant width, with an optional residual add.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub cv1: ConvBlock,
    pub cv2: ConvBlock,
    pub add: bool,
}

impl Bottleneck {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.cv1.forward(tape, store, x, mode)?;
        let y = self.cv2.forward(tape, store, y, mode)?;
        if self.add {
            tape.add(x, y)
        } else {
            Ok(y)
        }
    }
}

/// Split-and-concat bottleneck stack: `cv1` to `2c` channels, split in
/// half, `n` bottlenecks chained off the second half, then every
/// intermediate concatenated (`(2+n)·c` channels) into `cv2`.
#[derive(Clone, Debug)]
pub struct C2f {
    pub c1: usize,
    pub c2: usize,
    pub n: usize,
    pub shortcut: bool,
    /// Hidden width, `c2 / 2`.
    pub c: usize,
    pub cv1: ConvBlock,
    pub blocks: Vec<Bottleneck>,
    pub cv2: ConvBlock,
}

impl C2f {
    pub fn build<R: Rng>(store: &mut ParamStore, rng: &mut R, c1: usize, c2: usize, n: usize, shortcut: bool) -> Self {
        let c = c2 / 2;
        let cv1 = ConvBlock::build(store, rng, "cv1", c1, 2 * c, 1, 1);
        let blocks = (0..n)
            .map(|i| Bottleneck {
                cv1: ConvBlock::build(store, rng, &format!("m.{i}.cv1"), c, c, 3, 1),
                cv2: ConvBlock::build(store, rng, &format!("m.{i}.cv2"), c, c, 3, 1),
                add: shortcut,
            })
            .collect();
        let cv2 = ConvBlock::build(store, rng, "cv2", (2 + n) * c, c2, 1, 1);
        Self {
            c1,
            c2,
            n,
            shortcut,
            c,
            cv1,
            blocks,
            cv2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.cv1.forward(tape, store, x, mode)?;
        let mut parts = vec![
            tape.slice_channels(y, 0, self.c)?,
            tape.slice_channels(y, self.c, self.c)?,
        ];
        for b in &self.blocks {
            let last = *parts.last().expect("non-empty");
            parts.push(b.forward(tape, store, last, mode)?);
        }
        let cat = tape.concat_channels(&parts)?;
        self.cv2.forward(tape, store, cat, mode)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        let residual = if self.shortcut { self.c as u64 * hw } else { 0 };
        self.cv1.flops(h, w)
            + self
                .blocks
                .iter()
                .map(|b| b.cv1.flops(h, w) + b.cv2.flops(h, w) + residual)
                .sum::<u64>()
            + self.cv2.flops(h, w)
    }
}
