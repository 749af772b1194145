use std::fmt::Write as _;

use serde::Serialize;

use super::{train, LossCurve, SyntheticTask, TrainConfig};
use crate::analysis::ReportFormat;
use crate::arch::{apply_surgery, ModelGraph, SurgeryPlan};
use crate::error::{invalid, Result};
use crate::tensor::Scalar;
use crate::zoo::VariantKind;

/// One ablation arm: a block variant, optionally with its scale `α` held
/// at its initial value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AblationVariant {
    pub kind: VariantKind,
    pub freeze_alpha: bool,
}

impl From<VariantKind> for AblationVariant {
    fn from(kind: VariantKind) -> Self {
        Self {
            kind,
            freeze_alpha: false,
        }
    }
}

impl AblationVariant {
    pub fn label(&self) -> String {
        if self.freeze_alpha {
            format!("{} (alpha frozen)", self.kind)
        } else {
            self.kind.to_string()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationEntry {
    pub variant: String,
    pub params: usize,
    pub initial_loss: Scalar,
    pub final_loss: Scalar,
    pub epochs: usize,
    #[serde(skip)]
    pub curve: LossCurve,
}

/// Applies `plan` with each variant to `base`, trains it on `task` and
/// collects the parameter total and losses. Rows follow `variants` order.
pub fn run_ablation(
    base: &ModelGraph,
    plan: &SurgeryPlan,
    variants: &[AblationVariant],
    task: &SyntheticTask,
    config: &TrainConfig,
) -> Result<Vec<AblationEntry>> {
    variants
        .iter()
        .map(|v| {
            if v.freeze_alpha && !v.kind.has_alpha() {
                return Err(invalid("run_ablation", format!("{} has no alpha to freeze", v.kind)));
            }
            let mut graph = apply_surgery(base, &plan.clone().with_variant(v.kind))?;
            if v.freeze_alpha {
                if let Some(m) = graph.mixer.as_mut() {
                    m.freeze_alpha();
                }
            }
            let params = graph.param_count();
            let curve = train(&mut graph, task, config)?;
            Ok(AblationEntry {
                variant: v.label(),
                params,
                initial_loss: curve.initial,
                final_loss: curve.final_loss(),
                epochs: curve.epochs.len(),
                curve,
            })
        })
        .collect()
}

/// Renders ablation rows as a Variant / Params / Initial / Final / Epochs
/// table.
pub fn render_ablation(entries: &[AblationEntry], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&serde_json::json!({ "variants": entries }))? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["variant", "params", "initial_loss", "final_loss", "epochs"])?;
            for e in entries {
                w.write_record([
                    e.variant.clone(),
                    e.params.to_string(),
                    format!("{:.6}", e.initial_loss),
                    format!("{:.6}", e.final_loss),
                    e.epochs.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| invalid("csv", e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        ReportFormat::Markdown => {
            let mut out =
                String::from("| Variant | Params | Initial loss | Final loss | Epochs |\n|---|---:|---:|---:|---:|\n");
            for e in entries {
                let _ = writeln!(
                    out,
                    "| {} | {:.2}M | {:.4} | {:.4} | {} |",
                    e.variant,
                    e.params as f64 / 1e6,
                    e.initial_loss,
                    e.final_loss,
                    e.epochs
                );
            }
            Ok(out)
        }
    }
}
