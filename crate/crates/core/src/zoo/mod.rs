//! Constructible layer kinds with exact parameter and FLOP accounting.
//!
//! FLOPs follow one convention everywhere: `2·MACs` for convolutions and
//! linear maps (normalization folded into the convolution), one FLOP per
//! output element for each elementwise primitive (activation, residual add,
//! gate, sinusoid stage), one per input element for global average pooling
//! and one per window element for max pooling. Concatenation and
//! upsampling are free.

pub mod c2f;
pub mod conv;
pub mod detect;
pub mod qmix;
pub mod sppf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{check_dim, invalid, Error, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

pub use c2f::{Bottleneck, C2f};
pub use conv::{ConvBlock, PlainConv};
pub use detect::{Detect, REG_MAX};
pub use qmix::{MixerRef, QMixBlock, SharedMixer, VariantKind, MIXER_CAPACITY};
pub use sppf::Sppf;

/// Normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Stored running statistics.
    #[default]
    Eval,
}

/// SplitMix64 finalizer over `base ^ salt·φ`, used to give every layer an
/// independent, position-keyed init stream.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hyperparameters of one layer, with every width already resolved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
    },
    Conv2d {
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
        bias: bool,
    },
    C2f {
        c1: usize,
        c2: usize,
        n: usize,
        shortcut: bool,
    },
    Sppf {
        c1: usize,
        c2: usize,
        k: usize,
    },
    Upsample {
        c: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Detect {
        nc: usize,
        ch: Vec<usize>,
    },
    QMix {
        c1: usize,
        c2: usize,
        ratio: usize,
        variant: VariantKind,
        spatial_depth: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::Conv2d { .. } => "Conv2d",
            LayerSpec::C2f { .. } => "C2f",
            LayerSpec::Sppf { .. } => "SPPF",
            LayerSpec::Upsample { .. } => "Upsample",
            LayerSpec::Concat { .. } => "Concat",
            LayerSpec::Detect { .. } => "Detect",
            LayerSpec::QMix { variant, .. } => variant.name(),
        }
    }

    /// Arguments in architecture-file order.
    pub fn args(&self) -> Value {
        match self {
            LayerSpec::Conv { c2, k, s, .. } => json!([c2, k, s]),
            LayerSpec::Conv2d { c2, k, s, bias, .. } => json!([c2, k, s, bias]),
            LayerSpec::C2f { c2, shortcut, .. } => json!([c2, shortcut]),
            LayerSpec::Sppf { c2, k, .. } => json!([c2, k]),
            LayerSpec::Upsample { .. } => json!([null, 2, "nearest"]),
            LayerSpec::Concat { .. } => json!([1]),
            LayerSpec::Detect { nc, .. } => json!([nc]),
            LayerSpec::QMix { c2, ratio, .. } => json!([c2, ratio]),
        }
    }

    pub fn channels_out(&self) -> usize {
        match self {
            LayerSpec::Conv { c2, .. }
            | LayerSpec::Conv2d { c2, .. }
            | LayerSpec::C2f { c2, .. }
            | LayerSpec::Sppf { c2, .. }
            | LayerSpec::QMix { c2, .. } => *c2,
            LayerSpec::Upsample { c } => *c,
            LayerSpec::Concat { inputs } => inputs.iter().sum(),
            LayerSpec::Detect { nc, .. } => 4 * REG_MAX + nc,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(ConvBlock),
    Conv2d(PlainConv),
    C2f(C2f),
    Sppf(Sppf),
    Upsample,
    Concat,
    Detect(Detect),
    QMix(QMixBlock),
}

/// Per-call state shared by all layers of a forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub mixer: Option<&'a ParamStore>,
}

/// A built layer: hyperparameters, owned parameters and graph links.
#[derive(Clone, Debug)]
pub struct LayerNode {
    pub index: usize,
    /// Relative (`-1`) or absolute source indices.
    pub from: Vec<isize>,
    pub spec: LayerSpec,
    pub layer: Layer,
    pub params: ParamStore,
}

fn positive(op: &'static str, pairs: &[(&str, usize)]) -> Result<()> {
    for (name, v) in pairs {
        if *v == 0 {
            return Err(invalid(op, format!("{name} must be positive")));
        }
    }
    Ok(())
}

/// Builds one layer with parameters drawn from `seed`.
///
/// QMix kinds register their latent size with `mixer`, which must be
/// present and of the same variant.
pub fn build_layer(spec: &LayerSpec, seed: u64, mixer: Option<&mut SharedMixer>) -> Result<LayerNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = match spec {
        &LayerSpec::Conv { c1, c2, k, s } => {
            positive("Conv", &[("c1", c1), ("c2", c2), ("k", k), ("s", s)])?;
            Layer::Conv(ConvBlock::build(&mut store, &mut rng, "conv", c1, c2, k, s))
        }
        &LayerSpec::Conv2d { c1, c2, k, s, bias } => {
            positive("Conv2d", &[("c1", c1), ("c2", c2), ("k", k), ("s", s)])?;
            Layer::Conv2d(PlainConv::build(&mut store, &mut rng, "conv", c1, c2, k, s, bias))
        }
        &LayerSpec::C2f { c1, c2, n, shortcut } => {
            positive("C2f", &[("c1", c1), ("c2", c2), ("n", n)])?;
            if c2 % 2 != 0 {
                return Err(invalid("C2f", format!("output width {c2} must be even")));
            }
            Layer::C2f(C2f::build(&mut store, &mut rng, c1, c2, n, shortcut))
        }
        &LayerSpec::Sppf { c1, c2, k } => {
            positive("SPPF", &[("c1", c1), ("c2", c2), ("k", k)])?;
            if c1 < 2 || k % 2 == 0 {
                return Err(invalid("SPPF", "needs c1 >= 2 and an odd pool kernel"));
            }
            Layer::Sppf(Sppf::build(&mut store, &mut rng, c1, c2, k))
        }
        LayerSpec::Upsample { .. } => Layer::Upsample,
        LayerSpec::Concat { inputs } => {
            if inputs.is_empty() {
                return Err(invalid("Concat", "needs at least one input"));
            }
            Layer::Concat
        }
        LayerSpec::Detect { nc, ch } => {
            if ch.is_empty() || *nc == 0 {
                return Err(invalid("Detect", "needs at least one input scale and one class"));
            }
            Layer::Detect(Detect::build(&mut store, &mut rng, *nc, ch))
        }
        &LayerSpec::QMix {
            c1,
            c2,
            ratio,
            variant,
            spatial_depth,
        } => {
            let mixer = mixer.ok_or_else(|| invalid("QMix", "a shared mixer is required"))?;
            Layer::QMix(QMixBlock::build(
                &mut store,
                &mut rng,
                c1,
                c2,
                ratio,
                variant,
                spatial_depth,
                mixer,
            )?)
        }
    };
    Ok(LayerNode {
        index: 0,
        from: vec![-1],
        spec: spec.clone(),
        layer,
        params: store,
    })
}

impl LayerNode {
    pub fn kind_name(&self) -> &'static str {
        self.spec.kind_name()
    }

    /// Exact number of owned parameter elements. The shared mixer is not
    /// owned by any node.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn channels_out(&self) -> usize {
        self.spec.channels_out()
    }

    /// Expected channel widths of the inputs, in `from` order.
    fn expected_inputs(&self) -> Vec<usize> {
        match &self.spec {
            LayerSpec::Conv { c1, .. }
            | LayerSpec::Conv2d { c1, .. }
            | LayerSpec::C2f { c1, .. }
            | LayerSpec::Sppf { c1, .. }
            | LayerSpec::QMix { c1, .. } => vec![*c1],
            LayerSpec::Upsample { c } => vec![*c],
            LayerSpec::Concat { inputs } => inputs.clone(),
            LayerSpec::Detect { ch, .. } => ch.clone(),
        }
    }

    fn check_inputs(&self, shapes: &[[usize; 3]]) -> Result<()> {
        let want = self.expected_inputs();
        check_dim(self.kind_name(), "input count", want.len(), shapes.len())?;
        for (w, s) in want.iter().zip(shapes) {
            check_dim(self.kind_name(), "input channels", *w, s[0])?;
        }
        if let LayerSpec::Concat { .. } = self.spec {
            let (h, w) = (shapes[0][1], shapes[0][2]);
            for s in shapes {
                check_dim("Concat", "height", h, s[1])?;
                check_dim("Concat", "width", w, s[2])?;
            }
        }
        Ok(())
    }

    /// Output `(C, H, W)` per output, given per-input `(C, H, W)`.
    pub fn out_shapes(&self, inputs: &[[usize; 3]]) -> Result<Vec<[usize; 3]>> {
        self.check_inputs(inputs)?;
        let [_, h, w] = inputs[0];
        let c = self.channels_out();
        Ok(match &self.layer {
            Layer::Conv(b) => {
                let (oh, ow) = b.out_hw(h, w);
                vec![[c, oh, ow]]
            }
            Layer::Conv2d(b) => {
                let (oh, ow) = b.out_hw(h, w);
                vec![[c, oh, ow]]
            }
            Layer::C2f(_) | Layer::Sppf(_) | Layer::QMix(_) | Layer::Concat => vec![[c, h, w]],
            Layer::Upsample => vec![[c, 2 * h, 2 * w]],
            Layer::Detect(_) => inputs.iter().map(|s| [c, s[1], s[2]]).collect(),
        })
    }

    /// FLOPs for a single image with the given input shapes.
    pub fn flops(&self, inputs: &[[usize; 3]]) -> Result<u64> {
        self.check_inputs(inputs)?;
        let [_, h, w] = inputs[0];
        Ok(match &self.layer {
            Layer::Conv(b) => b.flops(h, w),
            Layer::Conv2d(b) => b.flops(h, w),
            Layer::C2f(b) => b.flops(h, w),
            Layer::Sppf(b) => b.flops(h, w),
            Layer::Upsample | Layer::Concat => 0,
            Layer::Detect(d) => d.flops(&inputs.iter().map(|s| (s[1], s[2])).collect::<Vec<_>>()),
            Layer::QMix(q) => q.flops(h, w),
        })
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[Var], ctx: ForwardCtx<'_>) -> Result<Vec<Var>> {
        self.forward_with(tape, &self.params, inputs, ctx)
    }

    /// Forward pass reading parameter values from `store` instead of the
    /// node's own store. `store` must hold blocks with the node's ids.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        ctx: ForwardCtx<'_>,
    ) -> Result<Vec<Var>> {
        let shapes: Vec<[usize; 3]> = inputs
            .iter()
            .map(|&v| {
                let (_, c, h, w) = tape.value(v).dims4(self.kind_name())?;
                Ok([c, h, w])
            })
            .collect::<Result<_>>()?;
        self.check_inputs(&shapes)?;
        let one = |v: Result<Var>| v.map(|v| vec![v]);
        match &self.layer {
            Layer::Conv(b) => one(b.forward(tape, store, inputs[0], ctx.mode)),
            Layer::Conv2d(b) => one(b.forward(tape, store, inputs[0])),
            Layer::C2f(b) => one(b.forward(tape, store, inputs[0], ctx.mode)),
            Layer::Sppf(b) => one(b.forward(tape, store, inputs[0], ctx.mode)),
            Layer::Upsample => one(tape.upsample_nearest_2x(inputs[0])),
            Layer::Concat => one(tape.concat_channels(inputs)),
            Layer::Detect(d) => d.forward(tape, store, inputs, ctx.mode),
            Layer::QMix(q) => {
                let mixer = ctx
                    .mixer
                    .ok_or_else(|| Error::Tape("QMix forward without a shared mixer".into()))?;
                one(q.forward(tape, store, mixer, inputs[0], ctx.mode))
            }
        }
    }
}
