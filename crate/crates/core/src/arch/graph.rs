use serde::Serialize;
use serde_json::{json, Value};

use super::format::{ArchSpec, ArgValue, ModuleKind, Row};
use super::surgery::SurgeryRecord;
use crate::error::{invalid, Error, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::zoo::{build_layer, derive_seed, ForwardCtx, Layer, LayerNode, LayerSpec, Mode, SharedMixer};

/// Salt that separates the mixer's init stream from every layer index.
pub(crate) const MIXER_SALT: u64 = 0x51A7_ED00_0000_0000;

/// Where a graph came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub preset: Option<String>,
    pub nc: usize,
    pub seed: u64,
    pub surgery: Option<SurgeryRecord>,
}

/// `(input shapes, output shapes)` of one node as `[C, H, W]`.
pub type NodeShapes = (Vec<[usize; 3]>, Vec<[usize; 3]>);

/// An executable, countable network.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub nodes: Vec<LayerNode>,
    pub mixer: Option<SharedMixer>,
    /// Nodes feeding the final Detect head, or the last node when there is
    /// no head.
    pub outputs: Vec<usize>,
    pub provenance: Provenance,
    pub in_channels: usize,
}

/// One node of a graph dump.
#[derive(Clone, Debug, Serialize)]
pub struct NodeDump {
    pub index: usize,
    pub kind: String,
    pub from: Vec<isize>,
    pub args_resolved: Value,
    pub channels_out: usize,
    pub param_count: usize,
}

/// Handles of every node's outputs after a forward pass on a tape.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub nodes: Vec<Vec<Var>>,
}

impl TapeForward {
    /// Outputs of the last node that ran.
    pub fn outputs(&self) -> &[Var] {
        self.nodes.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn node(&self, index: usize) -> Var {
        self.nodes[index][0]
    }
}

fn int_arg(row: &Row, i: usize, default: usize) -> usize {
    row.args
        .get(i)
        .and_then(ArgValue::as_int)
        .map_or(default, |v| v as usize)
}

/// Absolute source indices; `None` is the image.
fn sources(index: usize, from: &[isize]) -> Vec<Option<usize>> {
    from.iter()
        .map(|&f| {
            if f == -1 {
                index.checked_sub(1)
            } else {
                Some(f as usize)
            }
        })
        .collect()
}

fn layer_spec(row: &Row, inputs: &[usize], nc: usize) -> Result<LayerSpec> {
    let c2 = int_arg(row, 0, 0);
    Ok(match row.kind {
        ModuleKind::Conv => LayerSpec::Conv {
            c1: inputs[0],
            c2,
            k: int_arg(row, 1, 1),
            s: int_arg(row, 2, 1),
        },
        ModuleKind::C2f => LayerSpec::C2f {
            c1: inputs[0],
            c2,
            n: row.repeats,
            shortcut: matches!(row.args.get(1), Some(ArgValue::Bool(true))),
        },
        ModuleKind::Sppf => LayerSpec::Sppf {
            c1: inputs[0],
            c2,
            k: int_arg(row, 1, 5),
        },
        ModuleKind::Upsample => LayerSpec::Upsample { c: inputs[0] },
        ModuleKind::Concat => LayerSpec::Concat {
            inputs: inputs.to_vec(),
        },
        ModuleKind::Detect => LayerSpec::Detect {
            nc: match row.args.first() {
                Some(ArgValue::Int(v)) => *v as usize,
                _ => nc,
            },
            ch: inputs.to_vec(),
        },
        ModuleKind::QMix(variant) => LayerSpec::QMix {
            c1: inputs[0],
            c2,
            ratio: int_arg(row, 1, 4),
            variant,
            spatial_depth: row.repeats,
        },
    })
}

/// Builds every row of `spec` with channel widths propagated through the
/// from-links. Layer `i` draws its init from `derive_seed(seed, i)`.
pub fn build_model(spec: &ArchSpec, nc: usize, seed: u64) -> Result<ModelGraph> {
    const IN_CHANNELS: usize = 3;
    let variants: Vec<_> = spec
        .rows
        .iter()
        .filter_map(|r| match r.kind {
            ModuleKind::QMix(v) => Some(v),
            _ => None,
        })
        .collect();
    if variants.windows(2).any(|w| w[0] != w[1]) {
        return Err(invalid("build_model", "all QMix rows must use the same variant"));
    }
    let mut mixer = variants
        .first()
        .map(|&v| SharedMixer::new(v, derive_seed(seed, MIXER_SALT)));

    let mut nodes: Vec<LayerNode> = Vec::with_capacity(spec.rows.len());
    for (index, row) in spec.rows.iter().enumerate() {
        let from = row.from.indices();
        let mut inputs = Vec::new();
        for src in sources(index, &from) {
            match src {
                None => inputs.push(IN_CHANNELS),
                Some(j) => {
                    if let Layer::Detect(_) = nodes[j].layer {
                        return Err(Error::Parse {
                            line: row.line,
                            msg: format!("layer {j} is a Detect head and cannot feed another layer"),
                        });
                    }
                    inputs.push(nodes[j].channels_out());
                }
            }
        }
        let ls = layer_spec(row, &inputs, nc)?;
        let mut node = build_layer(&ls, derive_seed(seed, index as u64), mixer.as_mut())?;
        node.index = index;
        node.from = from;
        nodes.push(node);
    }
    let outputs = match nodes.last() {
        Some(last) if matches!(last.layer, Layer::Detect(_)) => sources(last.index, &last.from)
            .into_iter()
            .map(|s| s.unwrap_or(0))
            .collect(),
        _ => vec![nodes.len() - 1],
    };
    let graph = ModelGraph {
        nodes,
        mixer,
        outputs,
        provenance: Provenance {
            preset: spec.resolved.clone(),
            nc,
            seed,
            surgery: None,
        },
        in_channels: IN_CHANNELS,
    };
    graph.trace(640, 640)?;
    Ok(graph)
}

/// Runs `image` through the graph in evaluation mode and returns the last
/// node's outputs.
pub fn forward_model(graph: &ModelGraph, image: &Tensor) -> Result<Vec<Tensor>> {
    graph.forward(image)
}

impl ModelGraph {
    /// Owned parameters of every node plus the shared mixer's live prefix.
    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(LayerNode::param_count).sum::<usize>()
            + self.mixer.as_ref().map_or(0, SharedMixer::param_count)
    }

    pub fn qmix_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.layer, Layer::QMix(_)))
            .map(|n| n.index)
            .collect()
    }

    /// Every parameter store in the graph, mixer last.
    pub fn stores(&self) -> impl Iterator<Item = &ParamStore> {
        self.nodes
            .iter()
            .map(|n| &n.params)
            .chain(self.mixer.iter().map(|m| &m.params))
    }

    pub fn stores_mut(&mut self) -> impl Iterator<Item = &mut ParamStore> {
        self.nodes
            .iter_mut()
            .map(|n| &mut n.params)
            .chain(self.mixer.iter_mut().map(|m| &mut m.params))
    }

    fn node_sources(&self, index: usize) -> Vec<Option<usize>> {
        sources(index, &self.nodes[index].from)
    }

    /// Per-node `(inputs, outputs)` shapes as `[C, H, W]` for an `h×w` image.
    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<NodeShapes>> {
        let mut out: Vec<NodeShapes> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<[usize; 3]> = self
                .node_sources(node.index)
                .into_iter()
                .map(|s| s.map_or([self.in_channels, h, w], |j| out[j].1[0]))
                .collect();
            if ins.iter().any(|s| s[1] == 0 || s[2] == 0) {
                return Err(invalid(
                    "trace",
                    format!("layer {} receives an empty feature map", node.index),
                ));
            }
            let outs = node.out_shapes(&ins)?;
            out.push((ins, outs));
        }
        Ok(out)
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(invalid(
                "forward_model",
                format!("expected an image batch [B, {}, H, W], got {shape:?}", self.in_channels),
            ));
        }
        if !shape[2].is_multiple_of(32) || !shape[3].is_multiple_of(32) || shape[2] == 0 || shape[3] == 0 {
            return Err(invalid(
                "forward_model",
                format!("image size {}x{} is not a positive multiple of 32", shape[2], shape[3]),
            ));
        }
        Ok(())
    }

    /// Records nodes `0..=stop_at` (all nodes by default) on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, mode: Mode, stop_at: Option<usize>) -> Result<TapeForward> {
        self.check_image(tape.value(x).shape())?;
        let ctx = ForwardCtx {
            mode,
            mixer: self.mixer.as_ref().map(|m| &m.params),
        };
        let last = stop_at.unwrap_or(self.nodes.len() - 1).min(self.nodes.len() - 1);
        let mut vars: Vec<Vec<Var>> = Vec::with_capacity(last + 1);
        for node in &self.nodes[..=last] {
            let ins: Vec<Var> = self
                .node_sources(node.index)
                .into_iter()
                .map(|s| s.map_or(x, |j| vars[j][0]))
                .collect();
            vars.push(node.forward(tape, &ins, ctx)?);
        }
        Ok(TapeForward { nodes: vars })
    }

    /// Evaluation-mode forward pass returning the last node's outputs.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let run = self.forward_tape(&mut tape, x, Mode::Eval, None)?;
        Ok(run.outputs().iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// First output of every node up to and including `stop_at`.
    pub fn activations(&self, image: &Tensor, stop_at: usize) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let run = self.forward_tape(&mut tape, x, Mode::Eval, Some(stop_at))?;
        Ok(run.nodes.iter().map(|v| tape.value(v[0]).clone()).collect())
    }

    pub fn dump(&self) -> Vec<NodeDump> {
        self.nodes
            .iter()
            .map(|n| {
                let args = match serde_json::to_value(&n.spec) {
                    Ok(Value::Object(m)) => m.into_iter().next().map_or(Value::Null, |(_, v)| v),
                    Ok(other) => other,
                    Err(_) => Value::Null,
                };
                NodeDump {
                    index: n.index,
                    kind: n.kind_name().to_string(),
                    from: n.from.clone(),
                    args_resolved: args,
                    channels_out: n.channels_out(),
                    param_count: n.param_count(),
                }
            })
            .collect()
    }

    /// The graph dump document.
    pub fn dump_json(&self) -> Value {
        let mixer = self.mixer.as_ref().map(|m| {
            json!({
                "variant": m.variant.name(),
                "capacity": m.capacity(),
                "live_prefix": m.live,
                "param_count": m.param_count(),
            })
        });
        json!({
            "provenance": self.provenance,
            "total_params": self.param_count(),
            "outputs": self.outputs,
            "shared_mixer": mixer,
            "nodes": self.dump(),
        })
    }
}
