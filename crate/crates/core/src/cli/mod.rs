//! Command-line surface: thin plumbing over the library modules plus report
//! rendering. Exit codes: 0 success, 1 validation/screening failure, 2
//! configuration or IO error, 3 transport failure.

pub mod heatmap;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cluster::ClusterParams;
use crate::llmgate::{
    generate_validated, parse_endpoints, Archive, CellRef, GateError, ModelEndpoint, RetryPolicy,
    TransportError, DEFAULT_MAX_REGENERATIONS,
};
use crate::metrics::{AgreementReport, DEFAULT_PERMUTATIONS};
use crate::model::{
    parse_clustering, parse_raw_results, parse_study_config, screen_study, serialize_clustering,
    serialize_raw_results, summarize_study, Provenance, StudyConfig,
};
use crate::pipeline::{
    self, evaluate_cell, load_completed_cells, load_run_plan, prepare_ground_truth, write_run_outputs,
    CellRecord, GroundTruth, PipelineError, SyntheticOutput,
};
use crate::prompts::{render, PromptVariant};
use crate::seed;
use crate::simmatrix::{parse_matrix, serialize_matrix};
use crate::validate::{
    extract_payload, validate_clustering_output, validate_matrix_output, validate_raw_output,
    ValidationReport,
};

#[derive(Debug)]
enum CliError {
    Validation(String),
    Config(String),
    Transport(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Transport(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Config(m) | CliError::Transport(m) => m,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        match e {
            PipelineError::Screening(_) => CliError::Validation(e.to_string()),
            PipelineError::Manifest(_) | PipelineError::Io(_) => CliError::Config(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> CliError {
        match e {
            TransportError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Transport(e.to_string()),
        }
    }
}

fn config_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "cardsort",
    version,
    about = "Simulate open card sorts with LLMs and score them against real participant results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a prompt variant, collect validated LLM outputs, archive attempts
    Simulate(SimulateArgs),
    /// Score a synthetic output against real results at the matching stage
    Compare(CompareArgs),
    /// Render similarity-matrix heatmaps and a summary table
    Report(ReportArgs),
    /// Validate an LLM output file standalone
    Validate(ValidateArgs),
    /// Check a results file against the study inclusion criteria
    Screen(ScreenArgs),
    /// Execute a full run manifest (variants × endpoints × trials)
    Run(RunArgs),
}

fn parse_variant(s: &str) -> Result<PromptVariant, String> {
    s.parse::<PromptVariant>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config TOML
    #[arg(long)]
    study: PathBuf,
    /// Endpoints TOML ([[endpoint]] tables)
    #[arg(long)]
    endpoints: PathBuf,
    /// Prompt variant: p1|p2|p3|p4
    #[arg(long, value_parser = parse_variant)]
    variant: PromptVariant,
    /// Endpoint name from the endpoints file
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (archives under <out>/archive)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_REGENERATIONS)]
    max_regenerations: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Study config TOML
    #[arg(long)]
    study: PathBuf,
    /// Real participant results CSV (respondent,category,card)
    #[arg(long)]
    real: PathBuf,
    /// Synthetic output file to score
    #[arg(long)]
    synthetic: PathBuf,
    /// Stage of the synthetic file: raw|matrix|clustering
    #[arg(long)]
    format: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    /// Write the structured comparison record (JSON) here
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Study config TOML
    #[arg(long)]
    study: PathBuf,
    /// Similarity matrix CSV files, one heatmap panel each
    #[arg(long, num_args = 1.., required = true)]
    matrices: Vec<PathBuf>,
    /// Clustering CSV that fixes the card order, or "none" for config order
    #[arg(long)]
    order_by: Option<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Agreement CSV files (header + rows) merged into the summary table
    #[arg(long, num_args = 0..)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Study config TOML
    #[arg(long)]
    study: PathBuf,
    /// Expected shape: raw|matrix|clustering
    #[arg(long)]
    format: String,
    /// LLM output file (payload is extracted from fenced blocks if present)
    input: PathBuf,
}

#[derive(Args)]
struct ScreenArgs {
    /// Study config TOML
    #[arg(long)]
    study: PathBuf,
    /// Real participant results CSV
    results: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run manifest TOML
    manifest: PathBuf,
    /// Output directory (overrides the manifest's `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse completed cells already present in the output directory
    #[arg(long)]
    resume: bool,
}

/// Entry point returning the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cardsort: error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Report(args) => cmd_report(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Screen(args) => cmd_screen(args),
        Command::Run(args) => cmd_run(args),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| config_err(&parent.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| config_err(&path.display().to_string(), e))
}

fn load_study(path: &Path) -> Result<StudyConfig, CliError> {
    parse_study_config(&read(path)?).map_err(|e| config_err("study config", e))
}

fn load_endpoint(path: &Path, name: &str) -> Result<ModelEndpoint, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let endpoints = parse_endpoints(&read(path)?, base).map_err(CliError::from)?;
    endpoints
        .into_iter()
        .find(|ep| ep.name == name)
        .ok_or_else(|| CliError::Config(format!("no endpoint named `{name}` in {}", path.display())))
}

fn print_report_issues(report: &ValidationReport) {
    for issue in &report.errors {
        match issue.location {
            Some(line) => println!("ERROR {} [row {line}]: {}", issue.code, issue.detail),
            None => println!("ERROR {}: {}", issue.code, issue.detail),
        }
    }
    for issue in &report.warnings {
        match issue.location {
            Some(line) => println!("WARNING {} [row {line}]: {}", issue.code, issue.detail),
            None => println!("WARNING {}: {}", issue.code, issue.detail),
        }
    }
    for note in &report.notes {
        println!("NOTE: {note}");
    }
    for (before, after) in &report.normalizations_applied {
        println!("NORMALIZED: `{before}` -> `{after}`");
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let study = load_study(&args.study)?;
    let endpoint = load_endpoint(&args.endpoints, &args.model)?;
    if matches!(args.variant, PromptVariant::P1 | PromptVariant::P2)
        && !endpoint.supports_large_output
    {
        return Err(CliError::Config(format!(
            "endpoint `{}` is not flagged supports_large_output; {} asks the model for a full {} \
             and needs that capability",
            endpoint.name,
            args.variant.tag(),
            if args.variant == PromptVariant::P1 { "raw results table" } else { "similarity matrix" },
        )));
    }
    if args.trials < 1 {
        return Err(CliError::Config("--trials must be at least 1".to_string()));
    }
    let mut transport = endpoint.open_transport().map_err(CliError::from)?;
    let prompt = render(&study, args.variant);
    let archive = Archive::new(args.out.join("archive"));
    fs::create_dir_all(&args.out).map_err(|e| config_err(&args.out.display().to_string(), e))?;
    let policy = RetryPolicy::default();

    for trial_index in 1..=args.trials {
        let cell = CellRef {
            study_id: study.study_id.clone(),
            variant: args.variant,
            model_id: endpoint.model_id.clone(),
            trial_index,
        };
        let serialized: Result<(String, ValidationReport, usize), GateError> = match args.variant {
            PromptVariant::P1 => generate_validated(
                transport.as_mut(),
                &prompt,
                &cell,
                |payload| {
                    let (mut results, report) = validate_raw_output(payload, &study);
                    results.provenance = Provenance::Simulated {
                        variant: args.variant,
                        model_id: endpoint.model_id.clone(),
                        trial_index,
                    };
                    (results, report)
                },
                args.max_regenerations,
                &policy,
                Some(&archive),
            )
            .map(|v| (serialize_raw_results(&v.value), v.report, v.records.len())),
            PromptVariant::P2 => generate_validated(
                transport.as_mut(),
                &prompt,
                &cell,
                |payload| validate_matrix_output(payload, &study),
                args.max_regenerations,
                &policy,
                Some(&archive),
            )
            .map(|v| (serialize_matrix(&v.value, &study), v.report, v.records.len())),
            PromptVariant::P3 | PromptVariant::P4 => generate_validated(
                transport.as_mut(),
                &prompt,
                &cell,
                |payload| validate_clustering_output(payload, &study),
                args.max_regenerations,
                &policy,
                Some(&archive),
            )
            .map(|v| (serialize_clustering(&v.value, &study), v.report, v.records.len())),
        };
        match serialized {
            Ok((text, report, attempts)) => {
                let path = args.out.join(format!("{}.csv", pipeline::file_stem(&cell)));
                write(&path, &text)?;
                let warnings = report.warnings.len();
                println!(
                    "trial {trial_index}: pass after {attempts} attempt(s), {warnings} warning(s) -> {}",
                    path.display()
                );
            }
            Err(GateError::Exhausted { attempts, summary, .. }) => {
                return Err(CliError::Validation(format!(
                    "trial {trial_index}: validation not passed after {attempts} attempts; codes per attempt: {summary}"
                )));
            }
            Err(GateError::Transport(e)) => return Err(CliError::from(e)),
            Err(GateError::Archive(e)) => return Err(CliError::Config(e)),
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareRecord {
    study_id: String,
    format: String,
    ground_k: usize,
    ground_no_knee: bool,
    synthetic_k: usize,
    agreement: AgreementReport,
    validation_warnings: Vec<String>,
}

fn stage_variant(format: &str) -> Result<PromptVariant, CliError> {
    match format {
        "raw" => Ok(PromptVariant::P1),
        "matrix" => Ok(PromptVariant::P2),
        "clustering" => Ok(PromptVariant::P3),
        other => Err(CliError::Config(format!(
            "unknown --format `{other}`, expected raw|matrix|clustering"
        ))),
    }
}

fn ground_from_real(
    study: &StudyConfig,
    real_path: &Path,
    seed_master: u64,
) -> Result<GroundTruth, CliError> {
    let real_text = read(real_path)?;
    let real = parse_raw_results(&real_text, study).map_err(|e| config_err("real results", e))?;
    // Comparison is a measurement, not an inclusion decision: screening is
    // the screen/run commands' concern, so it is waived here.
    prepare_ground_truth(
        &real,
        seed::derive(seed_master, &["ground", &study.study_id]),
        &ClusterParams::default(),
        true,
    )
    .map_err(CliError::from)
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let study = load_study(&args.study)?;
    let variant = stage_variant(&args.format)?;
    let ground = ground_from_real(&study, &args.real, args.seed)?;

    let payload = extract_payload(&read(&args.synthetic)?);
    let (output, report) = match variant {
        PromptVariant::P1 => {
            let (results, report) = validate_raw_output(&payload, &study);
            (SyntheticOutput::Raw(results), report)
        }
        PromptVariant::P2 => {
            let (matrix, report) = validate_matrix_output(&payload, &study);
            (SyntheticOutput::Matrix(matrix), report)
        }
        PromptVariant::P3 | PromptVariant::P4 => {
            let (clustering, report) = validate_clustering_output(&payload, &study);
            (SyntheticOutput::Clustering(clustering), report)
        }
    };
    if !report.pass() {
        print_report_issues(&report);
        let codes: Vec<String> = report.errors.iter().map(|i| i.code.to_string()).collect();
        return Err(CliError::Validation(format!(
            "synthetic output failed validation: {}",
            codes.join(", ")
        )));
    }

    let cell = evaluate_cell(
        &study,
        variant,
        "compare",
        1,
        &output,
        &ground,
        seed::derive(args.seed, &["compare"]),
        args.permutations,
        &ClusterParams::default(),
    )
    .map_err(CliError::from)?;

    println!("{}", AgreementReport::CSV_HEADER);
    println!("{}", cell.agreement.csv_row());
    if let Some(record_path) = &args.record {
        let record = CompareRecord {
            study_id: study.study_id.clone(),
            format: args.format.clone(),
            ground_k: ground.clustering.k,
            ground_no_knee: ground.audit.no_knee,
            synthetic_k: cell.synthetic_k,
            agreement: cell.agreement.clone(),
            validation_warnings: report.warnings.iter().map(|w| w.code.to_string()).collect(),
        };
        let json = serde_json::to_string_pretty(&record)
            .map_err(|e| CliError::Config(e.to_string()))?;
        write(record_path, &(json + "\n"))?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let study = load_study(&args.study)?;
    let mut matrices = Vec::new();
    for path in &args.matrices {
        let matrix = parse_matrix(&read(path)?, &study)
            .map_err(|e| config_err(&path.display().to_string(), e))?;
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        matrices.push((title, matrix));
    }

    let order_clustering = match args.order_by.as_deref() {
        None | Some("none") => None,
        Some(path) => {
            let path = Path::new(path);
            let clustering = parse_clustering(&read(path)?, &study)
                .map_err(|e| config_err(&path.display().to_string(), e))?;
            Some(clustering)
        }
    };
    let order = match &order_clustering {
        Some(clustering) => heatmap::clustering_order(clustering),
        None => study.card_ids(),
    };

    let panels: Vec<heatmap::Heatmap> = matrices
        .iter()
        .map(|(title, matrix)| heatmap::Heatmap { title, matrix })
        .collect();
    let svg = heatmap::render(&panels, &order, &study).map_err(|e| CliError::Config(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| config_err(&args.out.display().to_string(), e))?;
    write(&args.out.join("report.svg"), &svg)?;

    let mut summary = String::from("item,value\n");
    summary.push_str(&format!("study,{}\n", study.study_id));
    summary.push_str(&format!("cards,{}\n", study.n_cards()));
    for (title, _) in &matrices {
        summary.push_str(&format!("matrix,{title}\n"));
    }
    if let Some(clustering) = &order_clustering {
        summary.push_str(&format!("order_categories,{}\n", clustering.n_categories()));
    }
    write(&args.out.join("summary.csv"), &summary)?;

    if !args.reports.is_empty() {
        let mut merged = format!("source,{}\n", AgreementReport::CSV_HEADER);
        for path in &args.reports {
            let text = read(path)?;
            let mut lines = text.lines();
            let Some(header) = lines.next() else {
                return Err(CliError::Config(format!("{}: empty report", path.display())));
            };
            if !header.ends_with(AgreementReport::CSV_HEADER) {
                return Err(CliError::Config(format!(
                    "{}: header does not end with `{}`",
                    path.display(),
                    AgreementReport::CSV_HEADER
                )));
            }
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for line in lines.filter(|l| !l.is_empty()) {
                merged.push_str(&format!("{stem},{line}\n"));
            }
        }
        write(&args.out.join("metrics.csv"), &merged)?;
    }
    println!("wrote {}", args.out.join("report.svg").display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let study = load_study(&args.study)?;
    let payload = extract_payload(&read(&args.input)?);
    let report = match args.format.as_str() {
        "raw" => validate_raw_output(&payload, &study).1,
        "matrix" => validate_matrix_output(&payload, &study).1,
        "clustering" => validate_clustering_output(&payload, &study).1,
        other => {
            return Err(CliError::Config(format!(
                "unknown --format `{other}`, expected raw|matrix|clustering"
            )));
        }
    };
    print_report_issues(&report);
    if report.pass() {
        println!("validation: PASS ({} warning(s))", report.warnings.len());
        Ok(())
    } else {
        println!(
            "validation: FAIL ({} error(s), {} warning(s))",
            report.errors.len(),
            report.warnings.len()
        );
        Err(CliError::Validation(format!(
            "{} failed validation: {}",
            args.input.display(),
            report
                .errors
                .iter()
                .map(|i| i.code.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

fn cmd_screen(args: ScreenArgs) -> Result<(), CliError> {
    let study = load_study(&args.study)?;
    let results = parse_raw_results(&read(&args.results)?, &study)
        .map_err(|e| config_err("results", e))?;
    let verdict = screen_study(&results);
    if let Ok(summary) = summarize_study(&results) {
        println!("cards: {}", summary.card_count);
        println!("complete participants: {}", summary.complete_participants);
        println!("mean categories: {} (sd {})", summary.mean_categories, summary.sd_categories);
    }
    for violation in &verdict.violations {
        println!("violation: {violation}");
    }
    if verdict.pass {
        println!("screening: PASS");
        Ok(())
    } else {
        println!("screening: FAIL");
        Err(CliError::Validation(format!(
            "study fails screening ({} violation(s))",
            verdict.violations.len()
        )))
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let loaded = load_run_plan(&args.manifest).map_err(CliError::from)?;
    let out = args
        .out
        .or(loaded.out)
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out` in the manifest".to_string()))?;
    let mut options = loaded.options;
    options.archive = Some(Archive::new(out.join("archive")));
    if args.resume {
        options.completed = load_completed_cells(&out);
        if !options.completed.is_empty() {
            println!("resuming: {} completed cell(s) reused", options.completed.len());
        }
    }
    let outcome = pipeline::run(&loaded.plan, &options).map_err(CliError::from)?;
    println!(
        "ground truth: K={} ({} complete sorts{})",
        outcome.ground.clustering.k,
        outcome.ground.complete_sorts,
        if outcome.ground.audit.no_knee { ", no knee" } else { "" }
    );
    for record in &outcome.cells {
        match record {
            CellRecord::Completed(cell) => println!(
                "{} {} trial {}: completed (attempts {}, nmi {}, ari {}, edit {})",
                cell.variant.tag(),
                cell.model_id,
                cell.trial_index,
                cell.attempts,
                cell.agreement.nmi,
                cell.agreement.ari,
                cell.agreement.edit_distance
            ),
            CellRecord::Failed(failed) => println!(
                "{} {} trial {}: FAILED ({})",
                failed.variant.tag(),
                failed.model_id,
                failed.trial_index,
                failed.reason
            ),
        }
    }
    for row in &outcome.variability {
        println!(
            "variability {} {}: trials {}, sd_nmi {}, sd_ari {}, sd_edit {}, sd_mantel_r {}",
            row.variant.tag(),
            row.model_id,
            row.trials,
            row.sd_nmi,
            row.sd_ari,
            row.sd_edit_distance,
            row.sd_mantel_r.map(|v| v.to_string()).unwrap_or_else(|| "-".to_string())
        );
    }
    write_run_outputs(&outcome, &loaded.plan, &out).map_err(CliError::from)?;
    println!("wrote results to {}", out.display());
    Ok(())
}
