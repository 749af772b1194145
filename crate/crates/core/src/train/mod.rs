//! Desk-scale training harness: synthetic data, AdamW, a classification
//! probe on the stride-32 features, the shared-gradient audit and the
//! ablation runner.

mod ablation;
mod audit;
mod data;
mod optim;

pub use ablation::{render_ablation, run_ablation, AblationEntry, AblationVariant};
pub use audit::{shared_grad_audit, AuditRange, AuditRecord};
pub use data::{gen_synthetic, gen_synthetic_sized, SyntheticTask, MAX_CLASSES, SYNTHETIC_SIZE};
pub use optim::AdamW;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::ModelGraph;
use crate::error::{invalid, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::zoo::{Layer, Mode};

/// Optimizer, schedule and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: Scalar,
    pub lrf: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    pub weight_decay: Scalar,
    pub seed: u64,
    /// Node whose output feeds the probe; defaults to
    /// [`LossProbe::default_tap`].
    pub tap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr0: 1e-3,
            lrf: 1e-5,
            beta1: 0.937,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            seed: 0,
            tap: None,
        }
    }
}

impl TrainConfig {
    /// Linear interpolation from `lr0` at epoch 0 to `lrf` at the last
    /// epoch.
    pub fn lr_at(&self, epoch: usize) -> Scalar {
        if self.epochs <= 1 {
            return self.lr0;
        }
        let t = epoch as Scalar / (self.epochs - 1) as Scalar;
        self.lr0 + (self.lrf - self.lr0) * t
    }

    fn optimizer(&self) -> AdamW {
        AdamW::new(self.beta1, self.beta2, self.eps, self.weight_decay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub lr: Scalar,
    pub mean_loss: Scalar,
}

/// Mean loss before training, then per epoch averaged over its batches
/// (each measured just before that batch's update).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossCurve {
    pub initial: Scalar,
    pub epochs: Vec<EpochStat>,
}

impl LossCurve {
    pub fn final_loss(&self) -> Scalar {
        self.epochs.last().map_or(self.initial, |e| e.mean_loss)
    }

    /// `epoch,lr,mean_loss`, one row per trained epoch.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "lr", "mean_loss"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:e}", e.lr),
                format!("{:.12e}", e.mean_loss),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv()?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Linear classifier on the global average of one node's output, scored
/// by softmax cross-entropy.
#[derive(Clone, Debug)]
pub struct LossProbe {
    pub tap: usize,
    pub classes: usize,
    pub params: ParamStore,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LossProbe {
    /// The deepest node at stride 32 reached before any upsampling.
    pub fn default_tap(graph: &ModelGraph) -> Result<usize> {
        let trace = graph.trace(64, 64)?;
        let mut tap = None;
        for (node, (_, outs)) in graph.nodes.iter().zip(&trace) {
            if matches!(node.layer, Layer::Upsample | Layer::Detect(_)) {
                break;
            }
            if outs[0][1] * 32 == 64 {
                tap = Some(node.index);
            }
        }
        tap.ok_or_else(|| invalid("LossProbe", "graph has no stride-32 node ahead of its neck"))
    }

    pub fn new(graph: &ModelGraph, tap: usize, classes: usize, seed: u64) -> Result<Self> {
        let node = graph
            .nodes
            .get(tap)
            .ok_or_else(|| invalid("LossProbe", format!("tap {tap} is not a layer")))?;
        if matches!(node.layer, Layer::Detect(_)) {
            return Err(invalid("LossProbe", "cannot tap a Detect head"));
        }
        let c = node.channels_out();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let bound = 1.0 / (c as Scalar).sqrt();
        let weight = params.add("probe.weight", Tensor::uniform(&[classes, c], -bound, bound, &mut rng));
        let bias = params.add("probe.bias", Tensor::zeros(&[classes]));
        Ok(Self {
            tap,
            classes,
            params,
            weight,
            bias,
        })
    }

    /// Records the forward pass up to the tap and the probe loss.
    pub fn loss(
        &self,
        graph: &ModelGraph,
        tape: &mut Tape,
        images: Tensor,
        labels: &[usize],
        mode: Mode,
    ) -> Result<Var> {
        let x = tape.constant(images);
        let run = graph.forward_tape(tape, x, mode, Some(self.tap))?;
        let g = tape.global_avg_pool(run.node(self.tap))?;
        let w = tape.param(&self.params, self.weight);
        let b = tape.param(&self.params, self.bias);
        let logits = tape.linear(g, w, Some(b))?;
        tape.cross_entropy(logits, labels)
    }
}

fn batch_starts(n: usize, bs: usize) -> impl Iterator<Item = usize> {
    (0..n).step_by(bs.max(1))
}

/// Sample-weighted mean probe loss over the task without updating anything.
pub fn evaluate(graph: &ModelGraph, probe: &LossProbe, task: &SyntheticTask, batch_size: usize) -> Result<Scalar> {
    let mut total = 0.0;
    for start in batch_starts(task.len(), batch_size) {
        let (x, y) = task.batch(start, batch_size);
        let mut tape = Tape::new();
        let l = probe.loss(graph, &mut tape, x, y, Mode::Train)?;
        total += tape.value(l).data()[0] * y.len() as Scalar;
    }
    Ok(total / task.len() as Scalar)
}

/// Trains `graph` in place with a fresh probe seeded from `config.seed`.
pub fn train(graph: &mut ModelGraph, task: &SyntheticTask, config: &TrainConfig) -> Result<LossCurve> {
    let tap = match config.tap {
        Some(t) => t,
        None => LossProbe::default_tap(graph)?,
    };
    let mut probe = LossProbe::new(graph, tap, task.classes, config.seed)?;
    train_with_probe(graph, &mut probe, task, config)
}

/// Mini-batch AdamW over the graph and probe parameters. Batches are taken
/// in dataset order; normalization uses batch statistics.
pub fn train_with_probe(
    graph: &mut ModelGraph,
    probe: &mut LossProbe,
    task: &SyntheticTask,
    config: &TrainConfig,
) -> Result<LossCurve> {
    if config.batch_size == 0 || task.is_empty() {
        return Err(invalid("train", "batch size and task length must be positive"));
    }
    let initial = evaluate(graph, probe, task, config.batch_size)?;
    if !initial.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut opt = config.optimizer();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut total = 0.0;
        for start in batch_starts(task.len(), config.batch_size) {
            let (x, y) = task.batch(start, config.batch_size);
            let mut tape = Tape::new();
            let l = probe.loss(graph, &mut tape, x, y, Mode::Train)?;
            let value = tape.value(l).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += value * y.len() as Scalar;
            let grads = tape.backward(l)?;
            drop(tape);
            for store in graph.stores_mut().chain(std::iter::once(&mut probe.params)) {
                store.zero_grad();
                store.accumulate(&grads);
            }
            opt.step(graph.stores_mut().chain(std::iter::once(&mut probe.params)), lr);
        }
        epochs.push(EpochStat {
            epoch,
            lr,
            mean_loss: total / task.len() as Scalar,
        });
    }
    Ok(LossCurve { initial, epochs })
}
