use std::collections::BTreeSet;

use serde::Serialize;

use super::graph::{ModelGraph, MIXER_SALT};
use crate::error::{invalid, Error, Result};
use crate::zoo::{build_layer, derive_seed, LayerSpec, SharedMixer, VariantKind};

/// Which C2f nodes to replace and with what.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurgeryPlan {
    pub targets: BTreeSet<usize>,
    pub ratio: usize,
    pub variant: VariantKind,
    /// Lets a target change width through a 1×1 projection ahead of the
    /// gate. Without it a target whose input and output widths differ is
    /// rejected.
    pub allow_projection: bool,
}

impl SurgeryPlan {
    pub const FINAL: [usize; 2] = [6, 8];
    pub const V0: [usize; 5] = [6, 8, 12, 18, 21];

    pub fn new(targets: impl IntoIterator<Item = usize>) -> Self {
        Self {
            targets: targets.into_iter().collect(),
            ratio: 4,
            variant: VariantKind::QMixBlock,
            allow_projection: false,
        }
    }

    /// The two deepest backbone C2f blocks.
    pub fn final_design() -> Self {
        Self::new(Self::FINAL)
    }

    /// Backbone plus neck placement with width projections at the neck.
    pub fn v0() -> Self {
        Self {
            allow_projection: true,
            ..Self::new(Self::V0)
        }
    }

    pub fn with_variant(mut self, variant: VariantKind) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_ratio(mut self, ratio: usize) -> Self {
        self.ratio = ratio;
        self
    }

    /// `final`, `v0`, or comma-separated layer indices.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "final" => Ok(Self::final_design()),
            "v0" => Ok(Self::v0()),
            "" | "none" => Ok(Self::new([])),
            list => {
                let targets = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| invalid("surgery plan", format!("`{}` is not a layer index", t.trim())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::new(targets))
            }
        }
    }
}

/// What a surgery did, kept in the graph's provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SurgeryRecord {
    pub targets: Vec<usize>,
    pub ratio: usize,
    pub variant: VariantKind,
    /// Targets that received a width projection.
    pub projected: Vec<usize>,
}

/// Replaces every target C2f node by a QMix node of the plan's variant,
/// reading one model-wide [`SharedMixer`]. All other nodes, and the from
/// links of the targets, are carried over unchanged.
pub fn apply_surgery(graph: &ModelGraph, plan: &SurgeryPlan) -> Result<ModelGraph> {
    let mut out = graph.clone();
    if plan.targets.is_empty() {
        return Ok(out);
    }
    let seed = graph.provenance.seed;
    let mut mixer = match out.mixer.take() {
        Some(m) if m.variant != plan.variant => {
            return Err(invalid(
                "apply_surgery",
                format!(
                    "graph already uses a {} mixer, plan asks for {}",
                    m.variant, plan.variant
                ),
            ))
        }
        Some(m) => m,
        None => SharedMixer::new(plan.variant, derive_seed(seed, MIXER_SALT)),
    };
    let mut projected = Vec::new();
    for &index in &plan.targets {
        let node = out.nodes.get(index).ok_or_else(|| Error::Surgery {
            index,
            msg: format!("graph has only {} layers", graph.nodes.len()),
        })?;
        let LayerSpec::C2f { c1, c2, n, .. } = node.spec else {
            return Err(Error::Surgery {
                index,
                msg: format!("expected a C2f node, found {}", node.kind_name()),
            });
        };
        if c1 != c2 {
            if !plan.allow_projection {
                return Err(Error::Surgery {
                    index,
                    msg: format!("input width {c1} differs from output width {c2}"),
                });
            }
            projected.push(index);
        }
        let spec = LayerSpec::QMix {
            c1,
            c2,
            ratio: plan.ratio,
            variant: plan.variant,
            spatial_depth: n,
        };
        let mut replacement = build_layer(&spec, derive_seed(seed, index as u64), Some(&mut mixer))?;
        replacement.index = index;
        replacement.from = node.from.clone();
        out.nodes[index] = replacement;
    }
    out.mixer = Some(mixer);
    let mut targets: BTreeSet<usize> = plan.targets.clone();
    if let Some(prev) = &graph.provenance.surgery {
        targets.extend(prev.targets.iter().copied());
        projected.extend(prev.projected.iter().copied());
        projected.sort_unstable();
    }
    out.provenance.surgery = Some(SurgeryRecord {
        targets: targets.into_iter().collect(),
        ratio: plan.ratio,
        variant: plan.variant,
        projected,
    });
    Ok(out)
}
