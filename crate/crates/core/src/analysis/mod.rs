//! Static accounting: per-layer parameter and FLOP reports, reduction
//! summaries, complexity-model checks and unstructured sparsification.
//!
//! Reports keep exact integers. Shares, reductions and GFLOPs are derived
//! from those integers whenever a report is rendered.
//!
//! ```
//! use qmix_core::analysis;
//! use qmix_core::arch::{self, ArchSpec, SurgeryPlan};
//!
//! let spec = arch::resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
//! let base = arch::build_model(&spec, 10, 0).unwrap();
//! let slim = arch::apply_surgery(&base, &SurgeryPlan::final_design()).unwrap();
//!
//! let report = analysis::param_report(&slim).compare_to(&analysis::param_report(&base));
//! let pp = report.comparison.as_ref().unwrap().param_reduction_pct();
//! assert!((pp - 20.47).abs() < 0.01);
//! ```

mod complexity;
mod render;
mod sparsify;

pub use complexity::{verify_complexity_model, ComplexityCheck};
pub use render::{emit_report, render_report, render_table, ReportFormat, TableEntry};
pub use sparsify::{sparsify_stores, sparsify_unstructured, SparsityReport};

use serde::{Deserialize, Serialize};

use crate::arch::ModelGraph;
use crate::error::{invalid, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One line of a report. `index` is `None` for the shared mixer row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: Option<usize>,
    pub kind: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub params: u64,
    pub flops: u64,
    /// Square input side the FLOPs refer to; `None` for parameter-only
    /// reports.
    pub resolution: Option<usize>,
}

impl Totals {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

/// Baseline figures a report is compared against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub baseline_totals: Totals,
    pub totals: Totals,
}

/// `(base − value) / base · 100`.
pub fn reduction_pct(base: u64, value: u64) -> f64 {
    if base == 0 {
        return 0.0;
    }
    (base as f64 - value as f64) / base as f64 * 100.0
}

impl Comparison {
    pub fn param_reduction_pct(&self) -> f64 {
        reduction_pct(self.baseline_totals.params, self.totals.params)
    }

    pub fn flop_reduction_pct(&self) -> f64 {
        reduction_pct(self.baseline_totals.flops, self.totals.flops)
    }

    /// Relative change of the parameter total, in percent.
    pub fn param_delta_pct(&self) -> f64 {
        -self.param_reduction_pct()
    }
}

/// Per-layer accounting of one graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub model: String,
    pub rows: Vec<ReportRow>,
    pub totals: Totals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

impl AnalysisReport {
    fn from_rows(model: String, rows: Vec<ReportRow>, resolution: Option<usize>) -> Self {
        let totals = Totals {
            params: rows.iter().map(|r| r.params).sum(),
            flops: rows.iter().map(|r| r.flops).sum(),
            resolution,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            model,
            rows,
            totals,
            comparison: None,
        }
    }

    /// Percentage of the parameter total held by `row`.
    pub fn param_share(&self, row: &ReportRow) -> f64 {
        if self.totals.params == 0 {
            0.0
        } else {
            row.params as f64 / self.totals.params as f64 * 100.0
        }
    }

    pub fn flop_share(&self, row: &ReportRow) -> f64 {
        if self.totals.flops == 0 {
            0.0
        } else {
            row.flops as f64 / self.totals.flops as f64 * 100.0
        }
    }

    /// Attaches `baseline`'s totals as the comparison block.
    pub fn compare_to(mut self, baseline: &AnalysisReport) -> Self {
        self.comparison = Some(Comparison {
            baseline: baseline.model.clone(),
            baseline_totals: baseline.totals.clone(),
            totals: self.totals.clone(),
        });
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A readable default label such as `yolov8n+qmix[6,8]`.
pub fn model_label(graph: &ModelGraph) -> String {
    let mut label = format!("yolov8{}", graph.provenance.preset.as_deref().unwrap_or(""));
    if let Some(s) = &graph.provenance.surgery {
        let t: Vec<String> = s.targets.iter().map(|t| t.to_string()).collect();
        label.push_str(&format!("+{}[{}]", s.variant.name(), t.join(",")));
    }
    label
}

fn mixer_row(graph: &ModelGraph) -> Option<ReportRow> {
    graph.mixer.as_ref().map(|m| ReportRow {
        index: None,
        kind: "SharedMixer".into(),
        params: m.param_count() as u64,
        flops: 0,
    })
}

/// Exact parameter counts per node, with the shared mixer as its own row.
pub fn param_report(graph: &ModelGraph) -> AnalysisReport {
    let mut rows: Vec<ReportRow> = graph
        .nodes
        .iter()
        .map(|n| ReportRow {
            index: Some(n.index),
            kind: n.kind_name().to_string(),
            params: n.param_count() as u64,
            flops: 0,
        })
        .collect();
    rows.extend(mixer_row(graph));
    AnalysisReport::from_rows(model_label(graph), rows, None)
}

/// Parameters and single-image FLOPs at `img_size × img_size`.
pub fn flop_report(graph: &ModelGraph, img_size: usize) -> Result<AnalysisReport> {
    if img_size == 0 || !img_size.is_multiple_of(32) {
        return Err(invalid(
            "flop_report",
            format!("image size {img_size} is not a positive multiple of 32"),
        ));
    }
    let trace = graph.trace(img_size, img_size)?;
    let mut rows = Vec::with_capacity(graph.nodes.len() + 1);
    for (node, (inputs, _)) in graph.nodes.iter().zip(&trace) {
        rows.push(ReportRow {
            index: Some(node.index),
            kind: node.kind_name().to_string(),
            params: node.param_count() as u64,
            flops: node.flops(inputs)?,
        });
    }
    rows.extend(mixer_row(graph));
    Ok(AnalysisReport::from_rows(model_label(graph), rows, Some(img_size)))
}
