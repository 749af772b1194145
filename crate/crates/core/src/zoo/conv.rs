//! Convolution building blocks: `Conv → BN → SiLU` and a bare convolution.

use rand::Rng;

use crate::error::Result;
use crate::ops::conv::{Conv2dConfig, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

/// He-style uniform bound for a fan-in.
pub(crate) fn he_bound(fan_in: usize) -> Scalar {
    (6.0 / fan_in as Scalar).sqrt()
}

pub(crate) fn he_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let b = he_bound(fan_in);
    Tensor::uniform(shape, -b, b, rng)
}

pub(crate) fn conv_out(h: usize, k: usize, s: usize, p: usize) -> usize {
    (h + 2 * p - k) / s + 1
}

/// `SiLU(BN(conv(x)))` with "same" padding `k / 2` and no conv bias.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub c1: usize,
    pub c2: usize,
    pub k: usize,
    pub s: usize,
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Normalization buffers used in [`Mode::Eval`]; not parameters.
    pub running_mean: Vec<Scalar>,
    pub running_var: Vec<Scalar>,
}

impl ConvBlock {
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.conv.weight"),
            he_uniform(&[c2, c1, k, k], c1 * k * k, rng),
        );
        let gamma = store.add(format!("{name}.bn.weight"), Tensor::full(&[c2], 1.0));
        let beta = store.add(format!("{name}.bn.bias"), Tensor::zeros(&[c2]));
        Self {
            c1,
            c2,
            k,
            s,
            weight,
            gamma,
            beta,
            running_mean: vec![0.0; c2],
            running_var: vec![1.0; c2],
        }
    }

    pub fn padding(&self) -> usize {
        self.k / 2
    }

    fn cfg(&self) -> Conv2dConfig {
        Conv2dConfig::new(self.s, self.padding())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.conv2d(x, w, None, self.cfg())?;
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let running = match mode {
            Mode::Train => None,
            Mode::Eval => Some((self.running_mean.as_slice(), self.running_var.as_slice())),
        };
        let y = tape.batch_norm(y, g, b, running)?;
        Ok(tape.silu(y))
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.k, self.s, self.padding()),
            conv_out(w, self.k, self.s, self.padding()),
        )
    }

    /// `2·MACs` of the folded conv plus one per output element for SiLU.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_hw(h, w);
        let out = (self.c2 * oh * ow) as u64;
        2 * out * (self.c1 * self.k * self.k) as u64 + out
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.weight, self.gamma, self.beta]
    }
}

/// Convolution with optional bias and no normalization or activation.
#[derive(Clone, Debug)]
pub struct PlainConv {
    pub c1: usize,
    pub c2: usize,
    pub k: usize,
    pub s: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl PlainConv {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_uniform(&[c2, c1, k, k], c1 * k * k, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c2])));
        Self {
            c1,
            c2,
            k,
            s,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, Conv2dConfig::new(self.s, self.k / 2))
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.k, self.s, self.k / 2),
            conv_out(w, self.k, self.s, self.k / 2),
        )
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_hw(h, w);
        let geom = ConvGeom::new(
            &[1, self.c1, h, w],
            &[self.c2, self.c1, self.k, self.k],
            Conv2dConfig::new(self.s, self.k / 2),
        )
        .expect("valid geometry");
        debug_assert_eq!((geom.oh, geom.ow), (oh, ow));
        2 * geom.macs()
    }
}
