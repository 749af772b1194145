//! `qmix`: batch front end for parsing, building, modifying, analysing and
//! training the detector graphs.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad file, failed surgery,
//! diverged training, failed check), 2 on a usage error (unknown flag,
//! unknown preset, malformed value).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmix_core::analysis::{flop_report, model_label, render_report, render_table, ReportFormat, TableEntry};
use qmix_core::arch::{self, apply_surgery, parse_arch, ArchSpec, ModelGraph, SurgeryPlan};
use qmix_core::gradcheck::check_layer_kinds;
use qmix_core::train::{gen_synthetic, render_ablation, run_ablation, train, AblationVariant, TrainConfig};
use qmix_core::zoo::VariantKind;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "qmix",
    version,
    about = "Shared sinusoidal channel mixing for YOLOv8-style detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an architecture file and print its canonical form.
    Parse(ParseArgs),
    /// Build a scaled model and dump its graph as JSON.
    Build(ModelArgs),
    /// Apply a surgery plan and dump the modified graph as JSON.
    Surgery(SurgeryArgs),
    /// Parameter and FLOP report, compared against the unmodified model.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient check of every layer kind.
    Gradcheck(GradcheckArgs),
    /// Train on the synthetic task and write the loss curve as CSV.
    Train(TrainArgs),
    /// Train every block variant and tabulate parameters and losses.
    Ablate(AblateArgs),
    /// Baseline and surgery rows for the n and s presets.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Architecture file; the bundled YOLOv8 file when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Apply this scale preset before printing.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "n")]
    preset: String,
    /// Detection classes.
    #[arg(long, default_value_t = 10)]
    nc: usize,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// `final`, `v0`, `none`, or comma-separated layer indices.
    #[arg(long, default_value = "final")]
    plan: String,
    /// Channel reduction ratio of the inserted blocks.
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value = "QMixBlock", value_parser = parse_variant)]
    variant: VariantKind,
}

#[derive(Args, Debug)]
struct SurgeryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Surgery plan; the unmodified model when omitted.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value = "QMixBlock", value_parser = parse_variant)]
    variant: VariantKind,
    /// Square input side for FLOP counting; a multiple of 32.
    #[arg(long, default_value_t = 640)]
    img_size: usize,
    /// `json`, `csv` or `md`.
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates sampled per parameter block and input.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: ReportFormat,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct TaskArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Synthetic samples.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Seed of the synthetic data and the probe.
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    task: TaskArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "final")]
    plan: String,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    /// Comma-separated variants; all four when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<VariantKind>,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    nc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "final")]
    plan: String,
    #[arg(long, default_value_t = 640)]
    img_size: usize,
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: ReportFormat,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|e: qmix_core::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: qmix_core::Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(qmix_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<qmix_core::Error> for CliError {
    fn from(e: qmix_core::Error) -> Self {
        CliError::Domain(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_spec(config: Option<&Path>) -> CliResult<ArchSpec> {
    match config {
        None => Ok(ArchSpec::yolov8()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| qmix_core::Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(parse_arch(&text)?)
        }
    }
}

fn resolve(spec: &ArchSpec, preset: &str) -> CliResult<ArchSpec> {
    if !spec.scales.contains_key(preset) {
        let known: Vec<&str> = spec.scales.keys().map(String::as_str).collect();
        return Err(CliError::Usage(format!(
            "unknown preset `{preset}` (available: {})",
            known.join(", ")
        )));
    }
    Ok(arch::resolve_scaling(spec, preset)?)
}

fn build(args: &ModelArgs) -> CliResult<ModelGraph> {
    let spec = resolve(&load_spec(args.config.as_deref())?, &args.preset)?;
    Ok(arch::build_model(&spec, args.nc, args.seed)?)
}

fn plan_from(text: &str, ratio: usize, variant: VariantKind) -> CliResult<SurgeryPlan> {
    let plan = SurgeryPlan::parse(text).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(plan.with_ratio(ratio).with_variant(variant))
}

fn task_config(task: &TaskArgs) -> TrainConfig {
    TrainConfig {
        epochs: task.epochs,
        batch_size: task.batch_size,
        seed: task.data_seed,
        ..TrainConfig::default()
    }
}

fn json_text(value: &serde_json::Value) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).map_err(qmix_core::Error::from)?;
    Ok(text + "\n")
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, text).map_err(|source| {
            CliError::Domain(qmix_core::Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }),
    }
}

fn gradcheck_table(args: &GradcheckArgs) -> CliResult<(String, bool)> {
    let rows = check_layer_kinds(args.seed, args.samples)?;
    let ok = rows.iter().all(|r| r.max_rel_error < GRADCHECK_TOLERANCE);
    let text = match args.format {
        ReportFormat::Json => json_text(&serde_json::json!({
            "tolerance": GRADCHECK_TOLERANCE,
            "seed": args.seed,
            "kinds": rows,
        }))?,
        ReportFormat::Csv => {
            let mut s = String::from("kind,coords_checked,max_rel_error\n");
            for r in &rows {
                s.push_str(&format!("{},{},{:e}\n", r.kind, r.coords_checked, r.max_rel_error));
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::from("| Kind | Coords | Max rel. error |\n|---|---:|---:|\n");
            for r in &rows {
                s.push_str(&format!(
                    "| {} | {} | {:.3e} |\n",
                    r.kind, r.coords_checked, r.max_rel_error
                ));
            }
            s
        }
    };
    Ok((text, ok))
}

fn compare_rows(args: &CompareArgs) -> CliResult<Vec<TableEntry>> {
    let spec = load_spec(args.config.as_deref())?;
    let plan = plan_from(&args.plan, 4, VariantKind::QMixBlock)?;
    let mut entries = Vec::new();
    for preset in ["n", "s"] {
        let base = arch::build_model(&resolve(&spec, preset)?, args.nc, args.seed)?;
        let modified = apply_surgery(&base, &plan)?;
        let b = flop_report(&base, args.img_size)?.totals;
        let m = flop_report(&modified, args.img_size)?.totals;
        entries.push(TableEntry {
            model: model_label(&base),
            params: b.params,
            flops: Some(b.flops),
            baseline_params: None,
            baseline_flops: None,
        });
        entries.push(TableEntry {
            model: model_label(&modified),
            params: m.params,
            flops: Some(m.flops),
            baseline_params: Some(b.params),
            baseline_flops: Some(b.flops),
        });
    }
    Ok(entries)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Parse(a) => {
            let mut spec = load_spec(a.config.as_deref())?;
            if let Some(p) = &a.preset {
                spec = resolve(&spec, p)?;
            }
            emit(&spec.to_text(), a.output.out.as_deref())
        }
        Command::Build(a) => {
            let graph = build(&a)?;
            emit(&json_text(&graph.dump_json())?, a.output.out.as_deref())
        }
        Command::Surgery(a) => {
            let plan = plan_from(&a.plan.plan, a.plan.ratio, a.plan.variant)?;
            let graph = apply_surgery(&build(&a.model)?, &plan)?;
            emit(&json_text(&graph.dump_json())?, a.model.output.out.as_deref())
        }
        Command::Analyze(a) => {
            let base = build(&a.model)?;
            let base_report = flop_report(&base, a.img_size)?;
            let report = match &a.plan {
                Some(text) => {
                    let plan = plan_from(text, a.ratio, a.variant)?;
                    flop_report(&apply_surgery(&base, &plan)?, a.img_size)?.compare_to(&base_report)
                }
                None => base_report,
            };
            emit(&render_report(&report, a.format)?, a.model.output.out.as_deref())
        }
        Command::Gradcheck(a) => {
            let (text, ok) = gradcheck_table(&a)?;
            if !ok {
                eprint!("{text}");
                return Err(CliError::Domain(qmix_core::Error::NonFinite(format!(
                    "gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}"
                ))));
            }
            emit(&text, a.output.out.as_deref())
        }
        Command::Train(a) => {
            let plan = plan_from(&a.plan.plan, a.plan.ratio, a.plan.variant)?;
            let mut graph = apply_surgery(&build(&a.model)?, &plan)?;
            let task = gen_synthetic(a.task.data_seed, a.task.samples, a.task.classes)?;
            let curve = train(&mut graph, &task, &task_config(&a.task))?;
            emit(&curve.to_csv()?, a.model.output.out.as_deref())
        }
        Command::Ablate(a) => {
            let plan = plan_from(&a.plan, a.ratio, VariantKind::QMixBlock)?;
            let kinds = if a.variants.is_empty() {
                VariantKind::ALL.to_vec()
            } else {
                a.variants.clone()
            };
            let variants: Vec<AblationVariant> = kinds.into_iter().map(Into::into).collect();
            let task = gen_synthetic(a.task.data_seed, a.task.samples, a.task.classes)?;
            let rows = run_ablation(&build(&a.model)?, &plan, &variants, &task, &task_config(&a.task))?;
            emit(&render_ablation(&rows, a.format)?, a.model.output.out.as_deref())
        }
        Command::Compare(a) => {
            let entries = compare_rows(&a)?;
            emit(&render_table(&entries, a.format)?, a.output.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Domain(_) => 1,
            })
        }
    }
}
