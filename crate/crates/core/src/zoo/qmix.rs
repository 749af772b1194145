//! Sinusoidal channel recalibration and its shared mixing parameters.
//!
//! A [`QMixBlock`] maps `X[B, C, H, W]` to `X ⊙ s` where the per-channel gate
//! is computed from the spatial mean of `X`:
//!
//! ```text
//! g = mean_hw(X)                 [B, C]
//! z = W_compress · g             [B, r]      r = C / R
//! H = sin(z ⊙ w[..r] + θ[..r])   [B, r]
//! s = σ(W_expand · H)            [B, C]
//! Y = X ⊙ s
//! ```
//!
//! `w` and `θ` belong to a single [`SharedMixer`] per model, allocated at
//! [`MIXER_CAPACITY`] and read by prefix, so blocks with different latent
//! sizes overlap on their leading entries and all of them feed gradients into
//! the same storage.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::conv::{he_uniform, ConvBlock};
use super::Mode;

pub const MIXER_CAPACITY: usize = 1024;

/// Design variants of the mixing stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    /// `sin(z ⊙ w + θ)`.
    QMixBlock,
    /// `sin(z ⊙ w)`; no phase vector.
    QMixSin,
    /// `sin(α · (z ⊙ w) + θ)` with one model-wide scalar `α`.
    QMixScaled,
    /// `QMixBlock` gating applied to `X + conv3×3(X)`.
    QMixFull,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::QMixSin,
        VariantKind::QMixScaled,
        VariantKind::QMixFull,
        VariantKind::QMixBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::QMixBlock => "QMixBlock",
            VariantKind::QMixSin => "QMixSin",
            VariantKind::QMixScaled => "QMixScaled",
            VariantKind::QMixFull => "QMixFull",
        }
    }

    pub fn has_theta(self) -> bool {
        self != VariantKind::QMixSin
    }

    pub fn has_alpha(self) -> bool {
        self == VariantKind::QMixScaled
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "qmixblock" | "block" => Ok(VariantKind::QMixBlock),
            "qmixsin" | "sin" => Ok(VariantKind::QMixSin),
            "qmixscaled" | "scaled" => Ok(VariantKind::QMixScaled),
            "qmixfull" | "full" => Ok(VariantKind::QMixFull),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

/// Ids of the mixer blocks a QMix layer reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixerRef {
    pub w: ParamId,
    pub theta: Option<ParamId>,
    pub alpha: Option<ParamId>,
}

/// The single `{w, θ}` pair (plus `α` for the scaled variant) of a model.
#[derive(Clone, Debug)]
pub struct SharedMixer {
    pub variant: VariantKind,
    pub params: ParamStore,
    pub handle: MixerRef,
    /// Largest latent size registered so far; the live prefix.
    pub live: usize,
}

impl SharedMixer {
    /// `w ~ N(0, 1)`, `θ = 0`, `α = 1`.
    pub fn new(variant: VariantKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = params.add("mixer.w", Tensor::randn(&[MIXER_CAPACITY], &mut rng));
        let theta = variant
            .has_theta()
            .then(|| params.add("mixer.theta", Tensor::zeros(&[MIXER_CAPACITY])));
        let alpha = variant
            .has_alpha()
            .then(|| params.add("mixer.alpha", Tensor::full(&[1], 1.0)));
        Self {
            variant,
            params,
            handle: MixerRef { w, theta, alpha },
            live: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        MIXER_CAPACITY
    }

    /// Records a block of latent size `r` reading this mixer.
    pub fn register(&mut self, r: usize) -> Result<()> {
        if r > MIXER_CAPACITY {
            return Err(Error::MixerCapacity {
                latent: r,
                capacity: MIXER_CAPACITY,
            });
        }
        self.live = self.live.max(r);
        Ok(())
    }

    /// Parameters counted toward the model: the live prefix of `w` and `θ`
    /// and the scalar `α` when present.
    pub fn param_count(&self) -> usize {
        let vectors = 1 + usize::from(self.handle.theta.is_some());
        self.live * vectors + usize::from(self.handle.alpha.is_some())
    }

    pub fn freeze_alpha(&mut self) {
        if let Some(a) = self.handle.alpha {
            self.params.get_mut(a).frozen = true;
        }
    }
}

/// Global-context channel gate reading a [`SharedMixer`].
#[derive(Clone, Debug)]
pub struct QMixBlock {
    pub variant: VariantKind,
    /// Input width; differs from `c` only when `proj` is present.
    pub c1: usize,
    pub c: usize,
    pub ratio: usize,
    pub r: usize,
    /// `[r, c]`.
    pub compress: ParamId,
    /// `[c, r]`.
    pub expand: ParamId,
    /// 1×1 width adapter, built when `c1 != c`.
    pub proj: Option<ConvBlock>,
    /// 3×3 branch of the full variant.
    pub spatial: Vec<ConvBlock>,
    pub mixer: MixerRef,
}

impl QMixBlock {
    /// `spatial_depth` is the number of stacked 3×3 blocks in the
    /// [`VariantKind::QMixFull`] branch and is ignored by the other variants.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        c1: usize,
        c: usize,
        ratio: usize,
        variant: VariantKind,
        spatial_depth: usize,
        mixer: &mut SharedMixer,
    ) -> Result<Self> {
        if ratio == 0 || c == 0 || !c.is_multiple_of(ratio) {
            return Err(Error::Divisibility { channels: c, ratio });
        }
        let r = c / ratio;
        if mixer.variant != variant {
            return Err(invalid(
                "qmix",
                format!(
                    "block variant {variant} does not match shared mixer variant {}",
                    mixer.variant
                ),
            ));
        }
        mixer.register(r)?;
        let proj = (c1 != c).then(|| ConvBlock::build(store, rng, "proj", c1, c, 1, 1));
        let compress = store.add("compress.weight", he_uniform(&[r, c], c, rng));
        let expand = store.add("expand.weight", he_uniform(&[c, r], r, rng));
        let spatial = if variant == VariantKind::QMixFull {
            (0..spatial_depth.max(1))
                .map(|i| ConvBlock::build(store, rng, &format!("spatial.{i}"), c, c, 3, 1))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            variant,
            c1,
            c,
            ratio,
            r,
            compress,
            expand,
            proj,
            spatial,
            mixer: mixer.handle,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mixer: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let (_, cin, _, _) = tape.value(x).dims4("qmix")?;
        if cin != self.c1 {
            return Err(Error::Shape {
                op: "qmix",
                dim: "input channels",
                expected: self.c1,
                got: cin,
            });
        }
        let x = match &self.proj {
            Some(p) => p.forward(tape, store, x, mode)?,
            None => x,
        };
        let g = tape.global_avg_pool(x)?;
        let wc = tape.param(store, self.compress);
        let z = tape.linear(g, wc, None)?;
        let w = tape.param_prefix(mixer, self.mixer.w, self.r)?;
        let theta = match self.mixer.theta {
            Some(t) => Some(tape.param_prefix(mixer, t, self.r)?),
            None => None,
        };
        let alpha = self.mixer.alpha.map(|a| tape.param(mixer, a));
        let h = tape.sin_affine(z, w, theta, alpha)?;
        let we = tape.param(store, self.expand);
        let e = tape.linear(h, we, None)?;
        let s = tape.sigmoid(e);
        let base = if self.spatial.is_empty() {
            x
        } else {
            let mut y = x;
            for c in &self.spatial {
                y = c.forward(tape, store, y, mode)?;
            }
            tape.add(x, y)?
        };
        tape.mul_channels(base, s)
    }

    /// Parameters owned by the block, excluding the shared mixer.
    pub fn own_param_count(&self, store: &ParamStore) -> usize {
        let mut ids = vec![self.compress, self.expand];
        if let Some(p) = &self.proj {
            ids.extend(p.param_ids());
        }
        for c in &self.spatial {
            ids.extend(c.param_ids());
        }
        ids.iter().map(|&id| store.get(id).numel()).sum()
    }

    /// FLOPs at input spatial size `h×w`. Only the pooling, the final
    /// rescale and the optional convolutions depend on `h·w`.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (c, r) = (self.c as u64, self.r as u64);
        let hw = (h * w) as u64;
        let mut total = 0;
        if let Some(p) = &self.proj {
            total += p.flops(h, w);
        }
        total += c * hw; // pooling
        total += 2 * c * r; // compress
        let mixing_ops = 2 + u64::from(self.mixer.theta.is_some()) + u64::from(self.mixer.alpha.is_some());
        total += mixing_ops * r;
        total += 2 * r * c; // expand
        total += c; // sigmoid
        if !self.spatial.is_empty() {
            total += self.spatial.iter().map(|s| s.flops(h, w)).sum::<u64>() + c * hw;
        }
        total + c * hw // rescale
    }
}
