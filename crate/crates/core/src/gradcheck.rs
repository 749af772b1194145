//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::zoo::{build_layer, ForwardCtx, LayerSpec, Mode, SharedMixer, VariantKind};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: Scalar,
    /// Coordinates sampled across all checked blocks; every coordinate is
    /// checked when the blocks hold fewer.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_analytic − g_numeric| / max(1, |g_numeric|)`.
    pub max_rel_error: Scalar,
    pub coords_checked: usize,
    pub worst: Option<(ParamId, usize)>,
}

/// Compares tape gradients of `f` against central differences over sampled
/// coordinates of the blocks `ids` in `store`.
///
/// `f` records a forward pass on a fresh tape and returns the scalar loss.
/// It must be deterministic in the store's values.
pub fn finite_diff_check<F>(
    f: F,
    store: &mut ParamStore,
    ids: &[ParamId],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let coords: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.get(id).numel()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if coords.len() <= cfg.samples {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, coords.len(), cfg.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    };
    finite_diff_check_coords(f, store, &chosen, cfg.eps)
}

/// As [`finite_diff_check`] over an explicit coordinate list.
pub fn finite_diff_check_coords<F>(
    mut f: F,
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    eps: Scalar,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |f: &mut F, store: &ParamStore| -> Result<Scalar> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        let v = tape.value(loss).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("gradient-check loss".into()))
        }
    };

    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for &(id, i) in coords {
        let analytic = grads.param(id).and_then(|g| g.get(i).copied()).unwrap_or(0.0);
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + eps;
        let plus = eval(&mut f, store);
        store.get_mut(id).value.data_mut()[i] = orig - eps;
        let minus = eval(&mut f, store);
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * eps);
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((id, i));
        }
    }
    Ok(report)
}

/// Gradient check of one layer kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCheck {
    pub kind: String,
    pub coords_checked: usize,
    pub max_rel_error: Scalar,
}

fn layer_cases() -> Vec<(String, LayerSpec, Vec<[usize; 3]>)> {
    let mut cases = vec![
        (
            "Conv".to_string(),
            LayerSpec::Conv {
                c1: 3,
                c2: 4,
                k: 3,
                s: 2,
            },
            vec![[3, 8, 8]],
        ),
        (
            "Conv2d".into(),
            LayerSpec::Conv2d {
                c1: 3,
                c2: 4,
                k: 3,
                s: 1,
                bias: true,
            },
            vec![[3, 5, 5]],
        ),
        (
            "C2f".into(),
            LayerSpec::C2f {
                c1: 4,
                c2: 4,
                n: 2,
                shortcut: true,
            },
            vec![[4, 6, 6]],
        ),
        ("SPPF".into(), LayerSpec::Sppf { c1: 4, c2: 4, k: 5 }, vec![[4, 6, 6]]),
        ("Upsample".into(), LayerSpec::Upsample { c: 3 }, vec![[3, 5, 5]]),
        (
            "Concat".into(),
            LayerSpec::Concat { inputs: vec![2, 3] },
            vec![[2, 4, 4], [3, 4, 4]],
        ),
        (
            "Detect".into(),
            LayerSpec::Detect { nc: 3, ch: vec![4, 8] },
            vec![[4, 4, 4], [8, 2, 2]],
        ),
    ];
    for v in VariantKind::ALL {
        cases.push((
            v.name().to_string(),
            LayerSpec::QMix {
                c1: 8,
                c2: 8,
                ratio: 4,
                variant: v,
                spatial_depth: 1,
            },
            vec![[8, 4, 4]],
        ));
    }
    cases
}

/// Finite-difference check of every layer kind at small sizes, in
/// normalization training mode, with at least `per_block` sampled
/// coordinates from each parameter block and input (or all of them when
/// fewer). The shared mixer is checked on its live prefix.
pub fn check_layer_kinds(seed: u64, per_block: usize) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (kind, spec, shapes) in layer_cases() {
        let mut mixer = match spec {
            LayerSpec::QMix { variant, .. } => Some(SharedMixer::new(variant, seed)),
            _ => None,
        };
        let node = build_layer(&spec, seed, mixer.as_mut())?;
        let mut store = node.params.clone();
        if let Some(m) = &mixer {
            store.absorb(m.params.clone());
        }
        let live = mixer.as_ref().map(|m| (m.live, m.handle));
        let inputs: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("input.{i}"), Tensor::randn(&[2, s[0], s[1], s[2]], &mut rng)))
            .collect();
        let out_shapes = node.out_shapes(&shapes)?;
        let projs: Vec<Vec<Scalar>> = out_shapes
            .iter()
            .map(|s| Tensor::randn(&[2 * s[0] * s[1] * s[2]], &mut rng).into_data())
            .collect();

        let mut coords = Vec::new();
        for block in store.iter() {
            let mut n = block.numel();
            if let Some((r, h)) = live {
                if block.id == h.w || Some(block.id) == h.theta {
                    n = r;
                }
            }
            let take = n.min(per_block);
            let mut idx = sample(&mut rng, n, take).into_vec();
            idx.sort_unstable();
            coords.extend(idx.into_iter().map(|i| (block.id, i)));
        }
        let report = finite_diff_check_coords(
            |s, tape| {
                let xs: Vec<Var> = inputs.iter().map(|&id| tape.param(s, id)).collect();
                let ctx = ForwardCtx {
                    mode: Mode::Train,
                    mixer: Some(s),
                };
                let ys = node.forward_with(tape, s, &xs, ctx)?;
                let parts = ys
                    .iter()
                    .zip(&projs)
                    .map(|(&y, p)| tape.weighted_sum(y, p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                tape.sum(&parts)
            },
            &mut store,
            &coords,
            1e-5,
        )?;
        out.push(LayerCheck {
            kind,
            coords_checked: report.coords_checked,
            max_rel_error: report.max_rel_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[5], 0.3));
        let report = finite_diff_check(
            |_, tape| {
                let c = tape.constant(Tensor::scalar(2.5));
                tape.sum(&[c])
            },
            &mut store,
            &[w],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.coords_checked, 5);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 1.0));
        let err = finite_diff_check(
            |s, tape| {
                let v = s.get(w).value.data()[0];
                let c = tape.constant(Tensor::scalar(if v > 1.0 { Scalar::NAN } else { v }));
                tape.sum(&[c])
            },
            &mut store,
            &[w],
            GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
