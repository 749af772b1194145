use serde::Serialize;

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::param::{Gradients, ParamBlock, ParamId, ParamStore};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use crate::zoo::{Layer, MixerRef, Mode};

/// Discrepancy over one stretch `[start, end)` of the mixer vectors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRange {
    pub start: usize,
    pub end: usize,
    /// QMix nodes whose latent prefix covers this stretch.
    pub contributors: Vec<usize>,
    pub max_abs_discrepancy_w: Scalar,
    pub max_abs_discrepancy_theta: Option<Scalar>,
    /// Largest gradient magnitude in the stretch, for scale.
    pub max_abs_grad_w: Scalar,
}

/// Shared gradients compared against the sum of per-node private copies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRecord {
    /// `(node index, latent size)` of every QMix node.
    pub nodes: Vec<(usize, usize)>,
    pub ranges: Vec<AuditRange>,
    pub max_abs_discrepancy_alpha: Option<Scalar>,
    pub max_abs_discrepancy: Scalar,
}

impl AuditRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn loss_grads(graph: &ModelGraph, batch: &Tensor) -> Result<Gradients> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let run = graph.forward_tape(&mut tape, x, Mode::Eval, None)?;
    let parts: Vec<_> = run.outputs().iter().map(|&o| tape.mean_square(o)).collect();
    let loss = tape.sum(&parts)?;
    tape.backward(loss)
}

fn padded(grads: &Gradients, id: ParamId, len: usize) -> Vec<Scalar> {
    let mut v = grads.param(id).map(<[Scalar]>::to_vec).unwrap_or_default();
    v.resize(len, 0.0);
    v
}

fn copy_block(src: &ParamBlock) -> ParamBlock {
    let mut b = ParamBlock::new(src.name.clone(), src.value.clone());
    b.frozen = src.frozen;
    b
}

/// Differentiates `Σ mean(outᵢ²)` over the graph outputs once with the
/// shared mixer and once with every QMix node reading a private copy of it,
/// then compares the shared gradient with the sum of the private ones.
pub fn shared_grad_audit(graph: &ModelGraph, batch: &Tensor) -> Result<AuditRecord> {
    let nodes: Vec<(usize, usize)> = graph
        .nodes
        .iter()
        .filter_map(|n| match &n.layer {
            Layer::QMix(q) => Some((n.index, q.r)),
            _ => None,
        })
        .collect();
    let mixer = match &graph.mixer {
        Some(m) if nodes.len() >= 2 => m,
        _ => return Err(Error::Audit(nodes.len())),
    };
    let cap = mixer.capacity();
    let shared = loss_grads(graph, batch)?;

    let mut private = graph.clone();
    let mut store = ParamStore::new();
    let mut handles = Vec::new();
    for (index, _) in &nodes {
        let h = mixer.handle;
        let handle = MixerRef {
            w: store.insert(copy_block(mixer.params.get(h.w))),
            theta: h.theta.map(|t| store.insert(copy_block(mixer.params.get(t)))),
            alpha: h.alpha.map(|a| store.insert(copy_block(mixer.params.get(a)))),
        };
        if let Layer::QMix(q) = &mut private.nodes[*index].layer {
            q.mixer = handle;
        }
        handles.push(handle);
    }
    if let Some(m) = private.mixer.as_mut() {
        m.params = store;
    }
    let split = loss_grads(&private, batch)?;

    let h = mixer.handle;
    let sum_of = |pick: &dyn Fn(&MixerRef) -> Option<ParamId>, len: usize| -> Vec<Scalar> {
        let mut acc = vec![0.0; len];
        for hd in &handles {
            if let Some(id) = pick(hd) {
                for (a, g) in acc.iter_mut().zip(padded(&split, id, len)) {
                    *a += g;
                }
            }
        }
        acc
    };
    let shared_w = padded(&shared, h.w, cap);
    let summed_w = sum_of(&|r| Some(r.w), cap);
    let theta = h.theta.map(|t| (padded(&shared, t, cap), sum_of(&|r| r.theta, cap)));

    let mut bounds: Vec<usize> = nodes.iter().map(|&(_, r)| r).collect();
    bounds.sort_unstable();
    bounds.dedup();
    let max_diff =
        |a: &[Scalar], b: &[Scalar], lo: usize, hi: usize| (lo..hi).map(|i| (a[i] - b[i]).abs()).fold(0.0, Scalar::max);
    let mut ranges = Vec::new();
    let mut start = 0;
    for &end in &bounds {
        ranges.push(AuditRange {
            start,
            end,
            contributors: nodes.iter().filter(|&&(_, r)| r > start).map(|&(i, _)| i).collect(),
            max_abs_discrepancy_w: max_diff(&shared_w, &summed_w, start, end),
            max_abs_discrepancy_theta: theta.as_ref().map(|(s, p)| max_diff(s, p, start, end)),
            max_abs_grad_w: (start..end).map(|i| shared_w[i].abs()).fold(0.0, Scalar::max),
        });
        start = end;
    }
    let max_abs_discrepancy_alpha = h.alpha.map(|a| {
        let s = padded(&shared, a, 1)[0];
        let p = sum_of(&|r| r.alpha, 1)[0];
        (s - p).abs()
    });
    let mut overall = max_diff(&shared_w, &summed_w, 0, cap);
    if let Some((s, p)) = &theta {
        overall = overall.max(max_diff(s, p, 0, cap));
    }
    overall = overall.max(max_abs_discrepancy_alpha.unwrap_or(0.0));
    Ok(AuditRecord {
        nodes,
        ranges,
        max_abs_discrepancy_alpha,
        max_abs_discrepancy: overall,
    })
}
