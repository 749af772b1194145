#![allow(dead_code, clippy::needless_range_loop)]

use qmix_core::tape::Tape;
use qmix_core::zoo::{ForwardCtx, Layer, LayerNode, Mode, QMixBlock, SharedMixer};
use qmix_core::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

pub fn qmix(node: &LayerNode) -> &QMixBlock {
    match &node.layer {
        Layer::QMix(q) => q,
        other => panic!("not a QMix node: {other:?}"),
    }
}

pub fn run(node: &LayerNode, mixer: Option<&SharedMixer>, xs: &[Tensor], mode: Mode) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let ctx = ForwardCtx {
        mode,
        mixer: mixer.map(|m| &m.params),
    };
    let ys = node.forward(&mut tape, &vars, ctx).unwrap();
    ys.iter().map(|&y| tape.value(y).clone()).collect()
}

pub fn randomize(node: &mut LayerNode, mixer: &mut SharedMixer, rng: &mut ChaCha8Rng) {
    for block in node.params.iter_mut().chain(mixer.params.iter_mut()) {
        let shape = block.shape().to_vec();
        block.value = Tensor::randn(&shape, rng);
    }
}

/// Straight-line loop version of the gate: pool, compress, sinusoid,
/// sigmoid expand, rescale.
pub fn loop_oracle(q: &QMixBlock, node: &LayerNode, mixer: &SharedMixer, x: &Tensor) -> Tensor {
    let (b, c, h, w) = x.dims4("oracle").unwrap();
    let r = q.r;
    let wc = node.params.get(q.compress).value.data();
    let we = node.params.get(q.expand).value.data();
    let mw = mixer.params.get(q.mixer.w).value.data();
    let theta = q.mixer.theta.map(|t| mixer.params.get(t).value.data());
    let alpha = q.mixer.alpha.map_or(1.0, |a| mixer.params.get(a).value.data()[0]);
    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        let mut g = vec![0.0; c];
        for ci in 0..c {
            let mut acc = 0.0;
            for yi in 0..h {
                for xi in 0..w {
                    acc += x.at4(bi, ci, yi, xi);
                }
            }
            g[ci] = acc / (h * w) as Scalar;
        }
        let mut hid = vec![0.0; r];
        for j in 0..r {
            let mut z = 0.0;
            for ci in 0..c {
                z += wc[j * c + ci] * g[ci];
            }
            let phase = theta.map_or(0.0, |t| t[j]);
            hid[j] = (alpha * (z * mw[j]) + phase).sin();
        }
        for ci in 0..c {
            let mut e = 0.0;
            for j in 0..r {
                e += we[ci * r + j] * hid[j];
            }
            let s = 1.0 / (1.0 + (-e).exp());
            for yi in 0..h {
                for xi in 0..w {
                    let i = ((bi * c + ci) * h + yi) * w + xi;
                    out[i] = x.data()[i] * s;
                }
            }
        }
    }
    Tensor::new(&[b, c, h, w], out).unwrap()
}
