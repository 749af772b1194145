use serde::Serialize;

use crate::arch::ModelGraph;
use crate::error::{invalid, Result};
use crate::param::ParamStore;

/// Outcome of a magnitude sparsification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityReport {
    pub fraction: f64,
    /// Conv and linear weight elements eligible for zeroing.
    pub prunable: u64,
    pub zeroed: u64,
    pub nonzero_prunable: u64,
    /// Stored parameter count, identical before and after.
    pub total_params: u64,
}

impl SparsityReport {
    pub fn nonzero_fraction(&self) -> f64 {
        if self.prunable == 0 {
            1.0
        } else {
            self.nonzero_prunable as f64 / self.prunable as f64
        }
    }
}

/// Zeroes the `floor(fraction · N)` smallest-magnitude elements among all
/// unfrozen weight matrices and kernels (rank ≥ 2) in `stores`. Ties are
/// broken by position, so the result is deterministic.
pub fn sparsify_stores(stores: &mut [&mut ParamStore], fraction: f64) -> Result<SparsityReport> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid("sparsify", format!("fraction {fraction} is outside [0, 1)")));
    }
    let mut entries: Vec<(f64, usize, usize, usize)> = Vec::new();
    let mut total = 0u64;
    for (s, store) in stores.iter().enumerate() {
        total += store.numel() as u64;
        for (b, block) in store.iter().enumerate() {
            if block.frozen || block.value.rank() < 2 {
                continue;
            }
            for (i, v) in block.value.data().iter().enumerate() {
                entries.push(((*v).abs(), s, b, i));
            }
        }
    }
    let prunable = entries.len() as u64;
    let k = (fraction * entries.len() as f64).floor() as usize;
    if k > 0 {
        entries.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite weights"));
        entries.truncate(k);
        entries.sort_unstable_by_key(|e| (e.1, e.2, e.3));
        for (s, store) in stores.iter_mut().enumerate() {
            let mut mine = entries.iter().filter(|e| e.1 == s).peekable();
            for (b, block) in store.iter_mut().enumerate() {
                let data = block.value.data_mut();
                while let Some(e) = mine.next_if(|e| e.2 == b) {
                    data[e.3] = 0.0;
                }
            }
        }
    }
    let mut nonzero = 0u64;
    for store in stores.iter() {
        for block in store.iter().filter(|b| !b.frozen && b.value.rank() >= 2) {
            nonzero += block.value.data().iter().filter(|v| **v != 0.0).count() as u64;
        }
    }
    Ok(SparsityReport {
        fraction,
        prunable,
        zeroed: k as u64,
        nonzero_prunable: nonzero,
        total_params: total,
    })
}

/// Global unstructured magnitude pruning over every layer of `graph`. The
/// shared mixer vectors, normalization affines and biases are left alone.
pub fn sparsify_unstructured(graph: &ModelGraph, fraction: f64) -> Result<(ModelGraph, SparsityReport)> {
    let mut out = graph.clone();
    let mut stores: Vec<&mut ParamStore> = out.stores_mut().collect();
    let mut report = sparsify_stores(&mut stores, fraction)?;
    report.total_params = out.param_count() as u64;
    Ok((out, report))
}
