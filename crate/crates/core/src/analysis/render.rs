use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{reduction_pct, AnalysisReport, Totals};
use crate::error::{invalid, Error, Result};

/// Output renderers shared by reports and comparison tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(invalid("format", format!("unknown report format `{other}`"))),
        }
    }
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

#[derive(Serialize)]
struct TotalsView {
    params: u64,
    flops: u64,
    gflops: Option<f64>,
    resolution: Option<usize>,
}

impl From<&Totals> for TotalsView {
    fn from(t: &Totals) -> Self {
        Self {
            params: t.params,
            flops: t.flops,
            gflops: t.resolution.map(|_| t.gflops()),
            resolution: t.resolution,
        }
    }
}

#[derive(Serialize)]
struct RowView<'a> {
    index: Option<usize>,
    kind: &'a str,
    params: u64,
    flops: u64,
    param_share_pct: f64,
    flop_share_pct: f64,
}

#[derive(Serialize)]
struct ComparisonView<'a> {
    baseline: &'a str,
    baseline_totals: TotalsView,
    totals: TotalsView,
    param_delta_pct: f64,
    param_reduction_pct: f64,
    flop_reduction_pct: Option<f64>,
}

#[derive(Serialize)]
struct ReportView<'a> {
    schema_version: u32,
    model: &'a str,
    totals: TotalsView,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<ComparisonView<'a>>,
    rows: Vec<RowView<'a>>,
}

fn json(report: &AnalysisReport) -> Result<String> {
    let view = ReportView {
        schema_version: report.schema_version,
        model: &report.model,
        totals: (&report.totals).into(),
        comparison: report.comparison.as_ref().map(|c| ComparisonView {
            baseline: &c.baseline,
            baseline_totals: (&c.baseline_totals).into(),
            totals: (&c.totals).into(),
            param_delta_pct: c.param_delta_pct(),
            param_reduction_pct: c.param_reduction_pct(),
            flop_reduction_pct: (c.baseline_totals.flops > 0).then(|| c.flop_reduction_pct()),
        }),
        rows: report
            .rows
            .iter()
            .map(|r| RowView {
                index: r.index,
                kind: &r.kind,
                params: r.params,
                flops: r.flops,
                param_share_pct: report.param_share(r),
                flop_share_pct: report.flop_share(r),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&view)? + "\n")
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn csv(report: &AnalysisReport) -> Result<String> {
    let mut rows = vec![vec![
        "index".to_string(),
        "kind".into(),
        "params".into(),
        "flops".into(),
        "param_share_pct".into(),
        "flop_share_pct".into(),
    ]];
    for r in &report.rows {
        rows.push(vec![
            r.index.map(|i| i.to_string()).unwrap_or_default(),
            r.kind.clone(),
            r.params.to_string(),
            r.flops.to_string(),
            format!("{:.4}", report.param_share(r)),
            format!("{:.4}", report.flop_share(r)),
        ]);
    }
    rows.push(vec![
        String::new(),
        "total".into(),
        report.totals.params.to_string(),
        report.totals.flops.to_string(),
        "100.0000".into(),
        if report.totals.flops > 0 { "100.0000" } else { "0.0000" }.into(),
    ]);
    if let Some(c) = &report.comparison {
        rows.push(vec![
            String::new(),
            format!("baseline total ({})", c.baseline),
            c.baseline_totals.params.to_string(),
            c.baseline_totals.flops.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    csv_string(rows)
}

fn gflops_cell(t: &Totals) -> String {
    t.resolution.map_or("-".into(), |_| format!("{:.2}", t.gflops()))
}

fn markdown(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", report.model);
    let _ = writeln!(out, "| Model | Params | Reduction | GFLOPs |");
    let _ = writeln!(out, "|---|---:|---:|---:|");
    match &report.comparison {
        Some(c) => {
            let _ = writeln!(
                out,
                "| {} | {} | - | {} |",
                c.baseline,
                millions(c.baseline_totals.params),
                gflops_cell(&c.baseline_totals)
            );
            let _ = writeln!(
                out,
                "| {} | {} | {:.1}% | {} |",
                report.model,
                millions(report.totals.params),
                c.param_reduction_pct(),
                gflops_cell(&report.totals)
            );
        }
        None => {
            let _ = writeln!(
                out,
                "| {} | {} | - | {} |",
                report.model,
                millions(report.totals.params),
                gflops_cell(&report.totals)
            );
        }
    }
    if let Some(res) = report.totals.resolution {
        let _ = writeln!(out, "\nFLOPs at {res}x{res}, one image.");
    }
    let _ = writeln!(out, "\n| Layer | Kind | Params | Share | FLOPs |");
    let _ = writeln!(out, "|---:|---|---:|---:|---:|");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2}% | {} |",
            r.index.map_or("shared".into(), |i| i.to_string()),
            r.kind,
            r.params,
            report.param_share(r),
            r.flops
        );
    }
    let _ = writeln!(
        out,
        "| | **total** | **{}** | 100.00% | **{}** |",
        report.totals.params, report.totals.flops
    );
    out
}

/// Renders a report in `format`.
pub fn render_report(report: &AnalysisReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => json(report),
        ReportFormat::Csv => csv(report),
        ReportFormat::Markdown => Ok(markdown(report)),
    }
}

/// Renders `report` and writes it to `path`. Nothing is written when
/// rendering fails.
pub fn emit_report(report: &AnalysisReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(report, format)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One model line of a comparison table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableEntry {
    pub model: String,
    pub params: u64,
    pub flops: Option<u64>,
    pub baseline_params: Option<u64>,
    pub baseline_flops: Option<u64>,
}

#[derive(Serialize)]
struct EntryView<'a> {
    model: &'a str,
    params: u64,
    reduction_pct: Option<f64>,
    gflops: Option<f64>,
    flop_reduction_pct: Option<f64>,
}

/// Renders a Model / Params / Reduction / GFLOPs table.
pub fn render_table(entries: &[TableEntry], format: ReportFormat) -> Result<String> {
    let views: Vec<EntryView> = entries
        .iter()
        .map(|e| EntryView {
            model: &e.model,
            params: e.params,
            reduction_pct: e.baseline_params.map(|b| reduction_pct(b, e.params)),
            gflops: e.flops.map(|f| f as f64 / 1e9),
            flop_reduction_pct: e.baseline_flops.zip(e.flops).map(|(b, f)| reduction_pct(b, f)),
        })
        .collect();
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": super::SCHEMA_VERSION,
            "models": views,
        }))? + "\n"),
        ReportFormat::Csv => {
            let mut rows = vec![vec![
                "model".to_string(),
                "params".into(),
                "reduction_pct".into(),
                "gflops".into(),
                "flop_reduction_pct".into(),
            ]];
            for v in &views {
                rows.push(vec![
                    v.model.to_string(),
                    v.params.to_string(),
                    v.reduction_pct.map(|p| format!("{p:.3}")).unwrap_or_default(),
                    v.gflops.map(|g| format!("{g:.3}")).unwrap_or_default(),
                    v.flop_reduction_pct.map(|p| format!("{p:.3}")).unwrap_or_default(),
                ]);
            }
            csv_string(rows)
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| Model | Params | Reduction | GFLOPs |\n|---|---:|---:|---:|\n");
            for v in &views {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    v.model,
                    millions(v.params),
                    v.reduction_pct.map_or("-".into(), |p| format!("{p:.1}%")),
                    v.gflops.map_or("-".into(), |g| format!("{g:.2}"))
                );
            }
            Ok(out)
        }
    }
}
