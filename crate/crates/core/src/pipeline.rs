//! End-to-end orchestration: render prompts, collect validated LLM outputs,
//! enter the evaluation pipeline at the stage matching each variant, score
//! every (variant, model, trial) cell against the ground truth, and
//! aggregate the spread across repeated trials.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{cluster_cards, ClusterAudit, ClusterError, ClusterParams, LabeledClustering};
use crate::csvio;
use crate::llmgate::{
    generate_validated, parse_endpoints, Archive, CellRef, GateError, ModelEndpoint, RetryPolicy,
    Transport, ValidationOutcome, DEFAULT_MAX_REGENERATIONS,
};
use crate::metrics::{self, AgreementReport, MetricsError, DEFAULT_PERMUTATIONS};
use crate::model::{
    self, filter_complete, parse_raw_results, parse_study_config, screen_study,
    serialize_clustering, Clustering, ModelError, Provenance, ScreeningViolation, StudyConfig,
    StudyResults,
};
use crate::prompts::{render, PromptVariant};
use crate::seed;
use crate::simmatrix::{
    build_similarity, clustering_to_matrix, complement, serialize_matrix, DistanceMatrix,
    MatrixError, SimilarityMatrix,
};
use crate::validate::{
    validate_clustering_output, validate_matrix_output, validate_raw_output, ValidationReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("study fails screening: {}", join_violations(.0))]
    Screening(Vec<ScreeningViolation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{variant:?} output must enter the pipeline as {expected}, got {got}")]
    EntryMismatch { variant: PromptVariant, expected: &'static str, got: &'static str },
    #[error("trials_per_cell must be at least 1")]
    NoTrials,
    #[error("run plan needs at least one variant and one endpoint")]
    EmptyPlan,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(String),
}

fn join_violations(violations: &[ScreeningViolation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

fn io_err(context: &str, e: std::io::Error) -> PipelineError {
    PipelineError::Io(format!("{context}: {e}"))
}

/// Full description of one simulation-and-evaluation run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub study: StudyConfig,
    pub ground_truth: StudyResults,
    pub variants: Vec<PromptVariant>,
    pub endpoints: Vec<ModelEndpoint>,
    pub trials_per_cell: usize,
    pub master_seed: u64,
}

/// Everything derived once per study from the real results; reused across
/// all cells so the ground path never shares seeds with synthetic paths.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub clustering: LabeledClustering,
    pub audit: ClusterAudit,
    pub similarity: SimilarityMatrix,
    pub distance: DistanceMatrix,
    pub complete_sorts: usize,
}

/// Screen (unless waived) → keep complete sorts → similarity → complement →
/// cluster.
pub fn prepare_ground_truth(
    results: &StudyResults,
    master_seed: u64,
    params: &ClusterParams,
    waive_screening: bool,
) -> Result<GroundTruth, PipelineError> {
    let verdict = screen_study(results);
    if !verdict.pass && !waive_screening {
        return Err(PipelineError::Screening(verdict.violations));
    }
    let complete = filter_complete(results)?;
    let similarity = build_similarity(&complete)?;
    let distance = complement(&similarity);
    let outcome = cluster_cards(&distance, master_seed, params)?;
    Ok(GroundTruth {
        clustering: outcome.labeled,
        audit: outcome.audit,
        similarity,
        distance,
        complete_sorts: complete.sorts.len(),
    })
}

/// The reference partition a study's synthetic outputs are scored against.
pub fn ground_truth_clustering(
    results: &StudyResults,
    master_seed: u64,
) -> Result<LabeledClustering, PipelineError> {
    prepare_ground_truth(results, master_seed, &ClusterParams::default(), false)
        .map(|g| g.clustering)
}

/// A validated synthetic output in the shape its prompt variant requests;
/// decides where the cell enters the evaluation pipeline.
#[derive(Debug, Clone)]
pub enum SyntheticOutput {
    Raw(StudyResults),
    Matrix(SimilarityMatrix),
    Clustering(Clustering),
}

impl SyntheticOutput {
    fn kind(&self) -> &'static str {
        match self {
            SyntheticOutput::Raw(_) => "raw results",
            SyntheticOutput::Matrix(_) => "similarity matrix",
            SyntheticOutput::Clustering(_) => "clustering",
        }
    }
}

fn expected_kind(variant: PromptVariant) -> &'static str {
    match variant {
        PromptVariant::P1 => "raw results",
        PromptVariant::P2 => "similarity matrix",
        PromptVariant::P3 | PromptVariant::P4 => "clustering",
    }
}

/// Evaluation of one (variant, model, trial) cell against the ground truth.
/// Category counts in `agreement` put the ground truth first (`a`) and the
/// synthetic clustering second (`b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub study_id: String,
    pub variant: PromptVariant,
    pub model_id: String,
    pub trial_index: usize,
    pub synthetic: Clustering,
    pub synthetic_k: usize,
    /// K-selection audit for the variants that cluster (P1/P2); P3/P4 hand
    /// over a partition directly.
    pub cluster_audit: Option<ClusterAudit>,
    pub agreement: AgreementReport,
    /// Attempts consumed by the generation gate (1 = first try passed).
    pub attempts: usize,
    /// Warning codes from the passing validation report.
    pub validation_warnings: Vec<String>,
}

/// Scores a validated synthetic output against the ground truth. P1 raw
/// results are filtered, turned into a similarity matrix, and clustered;
/// P2 matrices are clustered; P3/P4 clusterings are compared directly. The
/// Mantel test always runs between the complemented synthetic matrix (the
/// reverse sparse matrix for P3/P4) and the complemented real matrix; a
/// constant matrix leaves r undefined rather than failing the cell.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    config: &StudyConfig,
    variant: PromptVariant,
    model_id: &str,
    trial_index: usize,
    output: &SyntheticOutput,
    ground: &GroundTruth,
    cell_seed: u64,
    mantel_permutations: usize,
    params: &ClusterParams,
) -> Result<CellResult, PipelineError> {
    let (synthetic, synthetic_k, cluster_audit, similarity) = match (variant, output) {
        (PromptVariant::P1, SyntheticOutput::Raw(results)) => {
            let complete = filter_complete(results)?;
            let similarity = build_similarity(&complete)?;
            let outcome = cluster_cards(
                &complement(&similarity),
                seed::derive(cell_seed, &["synthetic"]),
                params,
            )?;
            (outcome.labeled.clustering, outcome.labeled.k, Some(outcome.audit), similarity)
        }
        (PromptVariant::P2, SyntheticOutput::Matrix(similarity)) => {
            let outcome = cluster_cards(
                &complement(similarity),
                seed::derive(cell_seed, &["synthetic"]),
                params,
            )?;
            (outcome.labeled.clustering, outcome.labeled.k, Some(outcome.audit), similarity.clone())
        }
        (PromptVariant::P3 | PromptVariant::P4, SyntheticOutput::Clustering(clustering)) => {
            let similarity = clustering_to_matrix(clustering, &config.card_ids())?;
            (clustering.clone(), clustering.n_categories(), None, similarity)
        }
        (variant, output) => {
            return Err(PipelineError::EntryMismatch {
                variant,
                expected: expected_kind(variant),
                got: output.kind(),
            });
        }
    };

    let mut agreement =
        AgreementReport::compare(&ground.clustering.clustering, &synthetic)?;
    match metrics::mantel(
        &complement(&similarity),
        &ground.distance,
        mantel_permutations,
        seed::derive(cell_seed, &["mantel"]),
    ) {
        Ok(result) => agreement = agreement.with_mantel(result),
        Err(MetricsError::ZeroVariance) => {}
        Err(e) => return Err(e.into()),
    }

    Ok(CellResult {
        study_id: config.study_id.clone(),
        variant,
        model_id: model_id.to_string(),
        trial_index,
        synthetic,
        synthetic_k,
        cluster_audit,
        agreement,
        attempts: 1,
        validation_warnings: Vec::new(),
    })
}

/// A cell that could not produce a scored result; kept in the run output
/// so failures are visible, never silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub study_id: String,
    pub variant: PromptVariant,
    pub model_id: String,
    pub trial_index: usize,
    pub reason: String,
    pub attempts: usize,
    /// Failure-level validation codes seen across attempts (deduplicated,
    /// sorted), when the failure was validation exhaustion.
    pub error_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellRecord {
    Completed(CellResult),
    Failed(FailedCell),
}

impl CellRecord {
    pub fn completed(&self) -> Option<&CellResult> {
        match self {
            CellRecord::Completed(cell) => Some(cell),
            CellRecord::Failed(_) => None,
        }
    }
}

/// Spread of the agreement metrics across one cell group's repeated
/// trials: the sample standard deviation over that group's completed
/// trials. `sd_mantel_r` is present only when every trial produced an r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityRow {
    pub variant: PromptVariant,
    pub model_id: String,
    pub trials: usize,
    pub sd_nmi: f64,
    pub sd_ari: f64,
    pub sd_edit_distance: f64,
    pub sd_mantel_r: Option<f64>,
}

/// Groups completed cells by (variant, model) and reports the standard
/// deviation of each metric across trials. Groups with fewer than 2
/// completed trials are skipped; failed cells never enter a denominator.
pub fn variability_summary(cells: &[CellRecord]) -> Vec<VariabilityRow> {
    let mut groups: BTreeMap<(PromptVariant, String), Vec<&CellResult>> = BTreeMap::new();
    for cell in cells.iter().filter_map(CellRecord::completed) {
        groups.entry((cell.variant, cell.model_id.clone())).or_default().push(cell);
    }
    let mut rows = Vec::new();
    for ((variant, model_id), group) in groups {
        if group.len() < 2 {
            continue;
        }
        let sd = |values: Vec<f64>| model::sample_sd(&values);
        let rs: Vec<f64> = group.iter().filter_map(|c| c.agreement.mantel_r).collect();
        rows.push(VariabilityRow {
            variant,
            model_id,
            trials: group.len(),
            sd_nmi: sd(group.iter().map(|c| c.agreement.nmi).collect()),
            sd_ari: sd(group.iter().map(|c| c.agreement.ari).collect()),
            sd_edit_distance: sd(group.iter().map(|c| c.agreement.edit_distance as f64).collect()),
            sd_mantel_r: (rs.len() == group.len()).then(|| sd(rs)),
        });
    }
    rows
}

/// Knobs of a run that are not part of the plan itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub params: ClusterParams,
    pub mantel_permutations: usize,
    pub max_regenerations: usize,
    pub retry: RetryPolicy,
    pub waive_screening: bool,
    /// Where raw attempts are archived; None skips archiving.
    pub archive: Option<Archive>,
    /// Cells already evaluated (resume support); matching cells are reused
    /// without touching the endpoint.
    pub completed: Vec<CellResult>,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions {
            params: ClusterParams::default(),
            mantel_permutations: DEFAULT_PERMUTATIONS,
            max_regenerations: DEFAULT_MAX_REGENERATIONS,
            retry: RetryPolicy::default(),
            waive_screening: false,
            archive: None,
            completed: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub ground: GroundTruth,
    pub cells: Vec<CellRecord>,
    pub variability: Vec<VariabilityRow>,
}

/// Executes every (variant × endpoint × trial) cell in plan order. One
/// transport per endpoint is opened lazily and shared across its cells, so
/// canned mock responses are consumed in cell order. Per-cell failures are
/// recorded, not fatal; the ground truth is computed exactly once.
pub fn run(plan: &RunPlan, options: &RunOptions) -> Result<RunOutcome, PipelineError> {
    if plan.trials_per_cell < 1 {
        return Err(PipelineError::NoTrials);
    }
    if plan.variants.is_empty() || plan.endpoints.is_empty() {
        return Err(PipelineError::EmptyPlan);
    }
    let study_id = plan.study.study_id.as_str();
    let ground = prepare_ground_truth(
        &plan.ground_truth,
        seed::derive(plan.master_seed, &["ground", study_id]),
        &options.params,
        options.waive_screening,
    )?;

    let mut transports: Vec<Option<Result<Box<dyn Transport>, String>>> =
        plan.endpoints.iter().map(|_| None).collect();
    let mut cells = Vec::new();
    for &variant in &plan.variants {
        for (index, endpoint) in plan.endpoints.iter().enumerate() {
            for trial_index in 1..=plan.trials_per_cell {
                if let Some(done) = options.completed.iter().find(|c| {
                    c.variant == variant
                        && c.model_id == endpoint.model_id
                        && c.trial_index == trial_index
                }) {
                    cells.push(CellRecord::Completed(done.clone()));
                    continue;
                }
                let transport = transports[index]
                    .get_or_insert_with(|| endpoint.open_transport().map_err(|e| e.to_string()));
                cells.push(execute_cell(plan, &ground, variant, endpoint, transport, trial_index, options));
            }
        }
    }

    let variability = variability_summary(&cells);
    Ok(RunOutcome { ground, cells, variability })
}

fn execute_cell(
    plan: &RunPlan,
    ground: &GroundTruth,
    variant: PromptVariant,
    endpoint: &ModelEndpoint,
    transport: &mut Result<Box<dyn Transport>, String>,
    trial_index: usize,
    options: &RunOptions,
) -> CellRecord {
    let study_id = plan.study.study_id.clone();
    let fail = |reason: String, attempts: usize, error_codes: Vec<String>| {
        CellRecord::Failed(FailedCell {
            study_id: study_id.clone(),
            variant,
            model_id: endpoint.model_id.clone(),
            trial_index,
            reason,
            attempts,
            error_codes,
        })
    };

    if matches!(variant, PromptVariant::P1 | PromptVariant::P2) && !endpoint.supports_large_output
    {
        return fail(
            format!(
                "endpoint `{}` is not flagged supports_large_output, which {} outputs require",
                endpoint.name,
                variant.tag()
            ),
            0,
            Vec::new(),
        );
    }
    let transport = match transport {
        Ok(t) => t.as_mut(),
        Err(e) => return fail(format!("transport: {e}"), 0, Vec::new()),
    };

    let prompt = render(&plan.study, variant);
    let cell = CellRef {
        study_id: study_id.clone(),
        variant,
        model_id: endpoint.model_id.clone(),
        trial_index,
    };
    let cell_seed = seed::derive(
        plan.master_seed,
        &[&study_id, variant.tag(), &endpoint.model_id, &trial_index.to_string()],
    );

    let mut gate = |validator: &dyn Fn(&str) -> (SyntheticOutput, ValidationReport)| {
        generate_validated(
            transport,
            &prompt,
            &cell,
            validator,
            options.max_regenerations,
            &options.retry,
            options.archive.as_ref(),
        )
    };
    let validated = match variant {
        PromptVariant::P1 => gate(&|payload| {
            let (mut results, report) = validate_raw_output(payload, &plan.study);
            results.provenance = Provenance::Simulated {
                variant,
                model_id: endpoint.model_id.clone(),
                trial_index,
            };
            (SyntheticOutput::Raw(results), report)
        }),
        PromptVariant::P2 => gate(&|payload| {
            let (matrix, report) = validate_matrix_output(payload, &plan.study);
            (SyntheticOutput::Matrix(matrix), report)
        }),
        PromptVariant::P3 | PromptVariant::P4 => gate(&|payload| {
            let (clustering, report) = validate_clustering_output(payload, &plan.study);
            (SyntheticOutput::Clustering(clustering), report)
        }),
    };

    let validated = match validated {
        Ok(v) => v,
        Err(GateError::Exhausted { attempts, summary, records }) => {
            let mut codes: Vec<String> = records
                .iter()
                .flat_map(|r| match &r.validation_outcome {
                    ValidationOutcome::Pass => Vec::new(),
                    ValidationOutcome::Fail { codes } => codes.clone(),
                })
                .collect();
            codes.sort();
            codes.dedup();
            return fail(
                format!("validation not passed after {attempts} attempts: {summary}"),
                attempts,
                codes,
            );
        }
        Err(e) => return fail(e.to_string(), 0, Vec::new()),
    };

    match evaluate_cell(
        &plan.study,
        variant,
        &endpoint.model_id,
        trial_index,
        &validated.value,
        ground,
        cell_seed,
        options.mantel_permutations,
        &options.params,
    ) {
        Ok(mut cell) => {
            cell.attempts = validated.records.len();
            cell.validation_warnings =
                validated.report.warnings.iter().map(|w| w.code.to_string()).collect();
            CellRecord::Completed(cell)
        }
        Err(e) => fail(e.to_string(), validated.records.len(), Vec::new()),
    }
}

fn default_mantel_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

fn default_max_regenerations() -> usize {
    DEFAULT_MAX_REGENERATIONS
}

fn default_dimensions() -> usize {
    ClusterParams::default().dimensions
}

fn default_k_max() -> usize {
    ClusterParams::default().k_max_cap
}

fn default_restarts() -> usize {
    ClusterParams::default().restarts
}

/// On-disk run manifest. Paths are resolved relative to the manifest file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    study: PathBuf,
    ground_truth: PathBuf,
    endpoints: PathBuf,
    variants: Vec<String>,
    /// Endpoint names to run; empty or omitted = every endpoint in the file.
    #[serde(default)]
    models: Vec<String>,
    trials_per_cell: usize,
    master_seed: u64,
    #[serde(default = "default_mantel_permutations")]
    mantel_permutations: usize,
    #[serde(default = "default_max_regenerations")]
    max_regenerations: usize,
    #[serde(default)]
    waive_screening: bool,
    #[serde(default = "default_dimensions")]
    dimensions: usize,
    #[serde(default = "default_k_max")]
    k_max: usize,
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct LoadedRun {
    pub plan: RunPlan,
    pub options: RunOptions,
    /// Output directory from the manifest, if any; callers may override.
    pub out: Option<PathBuf>,
}

/// Reads a run manifest and everything it references.
pub fn load_run_plan(manifest_path: &Path) -> Result<LoadedRun, PipelineError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| io_err(&manifest_path.display().to_string(), e))?;
    let doc: ManifestDoc =
        toml::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let study_path = resolve(&doc.study);
    let study_text =
        fs::read_to_string(&study_path).map_err(|e| io_err(&study_path.display().to_string(), e))?;
    let study = parse_study_config(&study_text)
        .map_err(|e| PipelineError::Manifest(format!("study config: {e}")))?;

    let ground_path = resolve(&doc.ground_truth);
    let ground_text = fs::read_to_string(&ground_path)
        .map_err(|e| io_err(&ground_path.display().to_string(), e))?;
    let ground_truth = parse_raw_results(&ground_text, &study)
        .map_err(|e| PipelineError::Manifest(format!("ground truth: {e}")))?;

    let endpoints_path = resolve(&doc.endpoints);
    let endpoints_text = fs::read_to_string(&endpoints_path)
        .map_err(|e| io_err(&endpoints_path.display().to_string(), e))?;
    let endpoints_dir = endpoints_path.parent().unwrap_or(Path::new("."));
    let all_endpoints = parse_endpoints(&endpoints_text, endpoints_dir)
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let endpoints = if doc.models.is_empty() {
        all_endpoints
    } else {
        doc.models
            .iter()
            .map(|name| {
                all_endpoints
                    .iter()
                    .find(|ep| &ep.name == name)
                    .cloned()
                    .ok_or_else(|| {
                        PipelineError::Manifest(format!("unknown endpoint name `{name}`"))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    let variants = doc
        .variants
        .iter()
        .map(|v| {
            v.parse::<PromptVariant>()
                .map_err(|e| PipelineError::Manifest(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let plan = RunPlan {
        study,
        ground_truth,
        variants,
        endpoints,
        trials_per_cell: doc.trials_per_cell,
        master_seed: doc.master_seed,
    };
    let options = RunOptions {
        params: ClusterParams {
            dimensions: doc.dimensions,
            k_min: 2,
            k_max_cap: doc.k_max,
            restarts: doc.restarts,
        },
        mantel_permutations: doc.mantel_permutations,
        max_regenerations: doc.max_regenerations,
        ..RunOptions::default()
    };
    let options = RunOptions { waive_screening: doc.waive_screening, ..options };
    Ok(LoadedRun { plan, options, out: doc.out.map(|p| resolve(&p)) })
}

pub(crate) fn file_stem(cell: &CellRef) -> String {
    let clean: String = cell
        .model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '-' })
        .collect();
    format!("{}-{}-trial-{}", cell.variant.tag(), clean, cell.trial_index)
}

fn record_ref(record: &CellRecord) -> CellRef {
    let (study_id, variant, model_id, trial_index) = match record {
        CellRecord::Completed(c) => (&c.study_id, c.variant, &c.model_id, c.trial_index),
        CellRecord::Failed(f) => (&f.study_id, f.variant, &f.model_id, f.trial_index),
    };
    CellRef { study_id: study_id.clone(), variant, model_id: model_id.clone(), trial_index }
}

fn float_field(v: f64) -> String {
    v.to_string()
}

/// Writes the results directory: ground-truth artifacts, one JSON report
/// and (for completed cells) one clustering CSV per cell, a flat per-cell
/// table, and the variability summary.
pub fn write_run_outputs(
    outcome: &RunOutcome,
    plan: &RunPlan,
    dir: &Path,
) -> Result<(), PipelineError> {
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| io_err(&cells_dir.display().to_string(), e))?;
    let write = |path: PathBuf, contents: String| -> Result<(), PipelineError> {
        fs::write(&path, contents).map_err(|e| io_err(&path.display().to_string(), e))
    };

    write(
        dir.join("ground-truth-clustering.csv"),
        serialize_clustering(&outcome.ground.clustering.clustering, &plan.study),
    )?;
    write(
        dir.join("ground-truth-similarity.csv"),
        serialize_matrix(&outcome.ground.similarity, &plan.study),
    )?;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "study,variant,model,trial,status,attempts,synthetic_k,{},detail",
        AgreementReport::CSV_HEADER
    );
    for record in &outcome.cells {
        let cell_ref = record_ref(record);
        let stem = file_stem(&cell_ref);
        let json = serde_json::to_string_pretty(record)
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        write(cells_dir.join(format!("{stem}.json")), json + "\n")?;
        match record {
            CellRecord::Completed(cell) => {
                write(
                    cells_dir.join(format!("{stem}-clustering.csv")),
                    serialize_clustering(&cell.synthetic, &plan.study),
                )?;
                let _ = writeln!(
                    table,
                    "{},{},{},{},completed,{},{},{},{}",
                    csvio::escape_field(&cell.study_id),
                    cell.variant.tag(),
                    csvio::escape_field(&cell.model_id),
                    cell.trial_index,
                    cell.attempts,
                    cell.synthetic_k,
                    cell.agreement.csv_row(),
                    csvio::escape_field(&cell.validation_warnings.join("+")),
                );
            }
            CellRecord::Failed(failed) => {
                let _ = writeln!(
                    table,
                    "{},{},{},{},failed,{},,,,,,,,,{}",
                    csvio::escape_field(&failed.study_id),
                    failed.variant.tag(),
                    csvio::escape_field(&failed.model_id),
                    failed.trial_index,
                    failed.attempts,
                    csvio::escape_field(&failed.reason),
                );
            }
        }
    }
    write(dir.join("cells.csv"), table)?;

    let mut summary = String::from("variant,model,trials,sd_nmi,sd_ari,sd_edit_distance,sd_mantel_r\n");
    for row in &outcome.variability {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            row.variant.tag(),
            csvio::escape_field(&row.model_id),
            row.trials,
            float_field(row.sd_nmi),
            float_field(row.sd_ari),
            float_field(row.sd_edit_distance),
            row.sd_mantel_r.map(float_field).unwrap_or_default(),
        );
    }
    write(dir.join("variability.csv"), summary)?;
    Ok(())
}

/// Reads back previously written per-cell JSON reports for resume; files
/// that do not parse are ignored (they will be re-run).
pub fn load_completed_cells(dir: &Path) -> Vec<CellResult> {
    let cells_dir = dir.join("cells");
    let Ok(entries) = fs::read_dir(&cells_dir) else {
        return Vec::new();
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .filter_map(|p| fs::read_to_string(p).ok())
        .filter_map(|text| serde_json::from_str::<CellRecord>(&text).ok())
        .filter_map(|record| match record {
            CellRecord::Completed(cell) => Some(cell),
            CellRecord::Failed(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CardId, ParticipantSort, SortRow};
    use std::io::Write as _;

    const LABELS: [&str; 12] = [
        "apple", "banana", "cherry", "date", "engine", "flywheel", "gearbox", "hubcap", "lily",
        "moss", "nettle", "oak",
    ];
    const GROUPS: [&[usize]; 3] = [&[0, 1, 2, 3], &[4, 5, 6, 7], &[8, 9, 10, 11]];

    fn study_config(participants: usize) -> StudyConfig {
        StudyConfig::new(
            "planted".to_string(),
            LABELS.iter().map(|s| s.to_string()).collect(),
            participants,
            None,
            None,
            None,
            None,
        )
        .unwrap()
    }

    fn planted_results(participants: usize) -> StudyResults {
        let config = study_config(participants);
        let sorts = (0..participants)
            .map(|p| ParticipantSort {
                respondent_id: format!("r{p}"),
                rows: GROUPS
                    .iter()
                    .enumerate()
                    .flat_map(|(g, members)| {
                        members.iter().map(move |&m| SortRow {
                            category: format!("group-{g}"),
                            card: CardId(m),
                        })
                    })
                    .collect(),
                complete: true,
            })
            .collect();
        StudyResults { config, sorts, provenance: Provenance::Real }
    }

    fn planted_clustering() -> Clustering {
        Clustering::from_parts(
            GROUPS
                .iter()
                .enumerate()
                .map(|(g, members)| {
                    (format!("group-{g}"), members.iter().map(|&m| CardId(m)).collect())
                })
                .collect(),
        )
    }

    fn clustering_csv(clustering: &Clustering, config: &StudyConfig) -> String {
        serialize_clustering(clustering, config)
    }

    fn quick_options() -> RunOptions {
        RunOptions { mantel_permutations: 99, ..RunOptions::default() }
    }

    fn mock_endpoint(name: &str, responses: Vec<PathBuf>) -> ModelEndpoint {
        ModelEndpoint {
            name: name.to_string(),
            provider: "mock".to_string(),
            model_id: format!("{name}-model"),
            base_url: String::new(),
            credentials_env: None,
            temperature: None,
            supports_large_output: false,
            mock_responses: responses,
            timeout_seconds: 120,
        }
    }

    fn write_response(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn planted_ground_truth_recovers_partition() {
        let results = planted_results(12);
        let labeled = ground_truth_clustering(&results, 7).unwrap();
        assert_eq!(labeled.k, 3);
        let nmi = metrics::nmi(&labeled.clustering, &planted_clustering()).unwrap();
        assert!((nmi - 1.0).abs() < 1e-12, "nmi {nmi}");
    }

    #[test]
    fn screening_failure_without_waiver_lists_criteria() {
        let results = planted_results(4);
        let err = ground_truth_clustering(&results, 7).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("complete participants"), "{message}");
        let ground = prepare_ground_truth(&results, 7, &ClusterParams::default(), true).unwrap();
        assert_eq!(ground.clustering.k, 3);
        assert_eq!(ground.complete_sorts, 4);
    }

    #[test]
    fn evaluate_cell_scores_p3_identity_perfectly() {
        let results = planted_results(12);
        let ground = prepare_ground_truth(&results, 7, &ClusterParams::default(), false).unwrap();
        let output = SyntheticOutput::Clustering(planted_clustering());
        let cell = evaluate_cell(
            &results.config,
            PromptVariant::P3,
            "m",
            1,
            &output,
            &ground,
            99,
            99,
            &ClusterParams::default(),
        )
        .unwrap();
        assert_eq!(cell.agreement.nmi, 1.0);
        assert_eq!(cell.agreement.ari, 1.0);
        assert_eq!(cell.agreement.edit_distance, 0);
        assert_eq!(cell.synthetic_k, 3);
        assert!(cell.cluster_audit.is_none());
        let r = cell.agreement.mantel_r.unwrap();
        assert!((r - 1.0).abs() < 1e-12, "mantel r {r}");
        assert!(cell.agreement.mantel_p.unwrap() < 0.05);
    }

    #[test]
    fn evaluate_cell_p2_identical_matrix_gives_r_one() {
        let results = planted_results(12);
        let ground = prepare_ground_truth(&results, 7, &ClusterParams::default(), false).unwrap();
        let output = SyntheticOutput::Matrix(ground.similarity.clone());
        let cell = evaluate_cell(
            &results.config,
            PromptVariant::P2,
            "m",
            1,
            &output,
            &ground,
            1234,
            99,
            &ClusterParams::default(),
        )
        .unwrap();
        let audit = cell.cluster_audit.as_ref().unwrap();
        assert_eq!(audit.selected_k, 3);
        assert_eq!(cell.agreement.nmi, 1.0);
        assert!((cell.agreement.mantel_r.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_cell_p1_raw_path_recovers_planted() {
        let results = planted_results(12);
        let ground = prepare_ground_truth(&results, 7, &ClusterParams::default(), false).unwrap();
        let mut synthetic = planted_results(12);
        synthetic.provenance = Provenance::Simulated {
            variant: PromptVariant::P1,
            model_id: "m".to_string(),
            trial_index: 1,
        };
        let cell = evaluate_cell(
            &results.config,
            PromptVariant::P1,
            "m",
            1,
            &SyntheticOutput::Raw(synthetic),
            &ground,
            5,
            99,
            &ClusterParams::default(),
        )
        .unwrap();
        assert_eq!(cell.agreement.nmi, 1.0);
        assert!(cell.cluster_audit.is_some());
        assert!((cell.agreement.mantel_r.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_cell_rejects_stage_mismatch() {
        let results = planted_results(12);
        let ground = prepare_ground_truth(&results, 7, &ClusterParams::default(), false).unwrap();
        let err = evaluate_cell(
            &results.config,
            PromptVariant::P1,
            "m",
            1,
            &SyntheticOutput::Clustering(planted_clustering()),
            &ground,
            5,
            99,
            &ClusterParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::EntryMismatch { .. }));
        assert!(err.to_string().contains("raw results"));
    }

    #[test]
    fn four_identical_mock_trials_have_zero_spread() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let canned = clustering_csv(&planted_clustering(), &results.config);
        let response = write_response(dir.path(), "p3.csv", &canned);
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", vec![response])],
            trials_per_cell: 4,
            master_seed: 11,
        };
        let outcome = run(&plan, &quick_options()).unwrap();
        assert_eq!(outcome.cells.len(), 4);
        let cells: Vec<&CellResult> =
            outcome.cells.iter().map(|c| c.completed().expect("completed")).collect();
        assert!(cells.iter().all(|c| {
            c.synthetic == cells[0].synthetic
                && c.agreement.nmi == cells[0].agreement.nmi
                && c.agreement.ari == cells[0].agreement.ari
                && c.agreement.edit_distance == cells[0].agreement.edit_distance
                && c.agreement.mantel_r == cells[0].agreement.mantel_r
        }));
        assert_eq!(outcome.variability.len(), 1);
        let row = &outcome.variability[0];
        assert_eq!(row.trials, 4);
        assert_eq!(row.sd_nmi, 0.0);
        assert_eq!(row.sd_ari, 0.0);
        assert_eq!(row.sd_edit_distance, 0.0);
        assert_eq!(row.sd_mantel_r, Some(0.0));
    }

    #[test]
    fn distinct_trials_match_hand_computed_sd() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        // Four canned responses, response t moving the first t cards of
        // group 0 into group 1.
        let mut responses = Vec::new();
        for t in 0..4usize {
            let mut categories: Vec<(String, Vec<CardId>)> = vec![
                ("group-0".into(), GROUPS[0][t..].iter().map(|&m| CardId(m)).collect()),
                ("group-1".into(), Vec::new()),
                ("group-2".into(), GROUPS[2].iter().map(|&m| CardId(m)).collect()),
            ];
            let mut g1: Vec<CardId> = GROUPS[0][..t].iter().map(|&m| CardId(m)).collect();
            g1.extend(GROUPS[1].iter().map(|&m| CardId(m)));
            categories[1].1 = g1;
            let csv = clustering_csv(&Clustering::from_parts(categories), &results.config);
            responses.push(write_response(dir.path(), &format!("t{t}.csv"), &csv));
        }
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", responses)],
            trials_per_cell: 4,
            master_seed: 11,
        };
        let outcome = run(&plan, &quick_options()).unwrap();
        let nmis: Vec<f64> = outcome
            .cells
            .iter()
            .map(|c| c.completed().expect("completed").agreement.nmi)
            .collect();
        assert!(nmis.windows(2).any(|w| w[0] != w[1]), "trials should differ: {nmis:?}");
        let mean = nmis.iter().sum::<f64>() / 4.0;
        let hand_sd =
            (nmis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let row = &outcome.variability[0];
        assert!((row.sd_nmi - hand_sd).abs() < 1e-12);
        assert!(row.sd_nmi > 0.0);
    }

    #[test]
    fn endpoint_failure_is_isolated_to_its_cells() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let canned = clustering_csv(&planted_clustering(), &results.config);
        let response = write_response(dir.path(), "p3.csv", &canned);
        let broken = ModelEndpoint {
            credentials_env: Some("CARDSORT_PIPELINE_UNSET_VAR".to_string()),
            base_url: "http://127.0.0.1:9".to_string(),
            provider: "openai".to_string(),
            ..mock_endpoint("broken", Vec::new())
        };
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", vec![response]), broken],
            trials_per_cell: 2,
            master_seed: 11,
        };
        let outcome = run(&plan, &quick_options()).unwrap();
        assert_eq!(outcome.cells.len(), 4);
        let failed: Vec<&FailedCell> = outcome
            .cells
            .iter()
            .filter_map(|c| match c {
                CellRecord::Failed(f) => Some(f),
                CellRecord::Completed(_) => None,
            })
            .collect();
        assert_eq!(failed.len(), 2);
        assert!(failed.iter().all(|f| f.model_id == "broken-model"));
        assert!(failed[0].reason.contains("CARDSORT_PIPELINE_UNSET_VAR"), "{}", failed[0].reason);
        assert_eq!(outcome.variability.len(), 1);
        assert_eq!(outcome.variability[0].model_id, "canned-model");
    }

    #[test]
    fn p1_requires_large_output_capability() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let response = write_response(dir.path(), "noop.txt", "irrelevant");
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P1],
            endpoints: vec![mock_endpoint("canned", vec![response])],
            trials_per_cell: 1,
            master_seed: 11,
        };
        let outcome = run(&plan, &quick_options()).unwrap();
        match &outcome.cells[0] {
            CellRecord::Failed(f) => {
                assert!(f.reason.contains("supports_large_output"), "{}", f.reason)
            }
            CellRecord::Completed(_) => panic!("cell should be refused"),
        }
    }

    #[test]
    fn exhausted_validation_records_codes() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        // Omits every card of group 2.
        let partial = Clustering::from_parts(vec![
            ("group-0".into(), GROUPS[0].iter().map(|&m| CardId(m)).collect()),
            ("group-1".into(), GROUPS[1].iter().map(|&m| CardId(m)).collect()),
        ]);
        let csv = clustering_csv(&partial, &results.config);
        let response = write_response(dir.path(), "bad.csv", &csv);
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", vec![response])],
            trials_per_cell: 1,
            master_seed: 11,
        };
        let options = RunOptions { max_regenerations: 2, ..quick_options() };
        let outcome = run(&plan, &options).unwrap();
        match &outcome.cells[0] {
            CellRecord::Failed(f) => {
                assert_eq!(f.attempts, 3);
                assert_eq!(f.error_codes, vec!["OMITTED_CARDS".to_string()]);
            }
            CellRecord::Completed(_) => panic!("cell should fail validation"),
        }
        assert!(outcome.variability.is_empty());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let canned = clustering_csv(&planted_clustering(), &results.config);
        let response = write_response(dir.path(), "p3.csv", &canned);
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3, PromptVariant::P4],
            endpoints: vec![mock_endpoint("canned", vec![response])],
            trials_per_cell: 2,
            master_seed: 42,
        };
        let first = run(&plan, &quick_options()).unwrap();
        let second = run(&plan, &quick_options()).unwrap();
        let json = |outcome: &RunOutcome| serde_json::to_string(&outcome.cells).unwrap();
        assert_eq!(json(&first), json(&second));
        assert_eq!(first.variability, second.variability);
    }

    #[test]
    fn resume_reuses_completed_cells_without_a_transport() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let canned = clustering_csv(&planted_clustering(), &results.config);
        let response = write_response(dir.path(), "p3.csv", &canned);
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", vec![response.clone()])],
            trials_per_cell: 2,
            master_seed: 42,
        };
        let first = run(&plan, &quick_options()).unwrap();
        let completed: Vec<CellResult> =
            first.cells.iter().filter_map(|c| c.completed().cloned()).collect();
        // A missing canned-response file breaks the transport; resumed cells
        // must not need one.
        fs::remove_file(&response).unwrap();
        let options = RunOptions { completed, ..quick_options() };
        let resumed = run(&plan, &options).unwrap();
        assert!(resumed.cells.iter().all(|c| c.completed().is_some()));
        assert_eq!(
            serde_json::to_string(&resumed.cells).unwrap(),
            serde_json::to_string(&first.cells).unwrap()
        );
    }

    #[test]
    fn manifest_loads_referenced_files() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let study_toml = format!(
            "study_id = \"planted\"\ncards = [{}]\nnumber_of_participants = 12\n",
            LABELS.iter().map(|l| format!("\"{l}\"")).collect::<Vec<_>>().join(", ")
        );
        fs::write(dir.path().join("study.toml"), study_toml).unwrap();
        fs::write(
            dir.path().join("real.csv"),
            crate::model::serialize_raw_results(&results),
        )
        .unwrap();
        let canned = clustering_csv(&planted_clustering(), &results.config);
        write_response(dir.path(), "p3.csv", &canned);
        fs::write(
            dir.path().join("endpoints.toml"),
            "[[endpoint]]\nname = \"canned\"\nprovider = \"mock\"\nmodel_id = \"canned-model\"\nmock_responses = [\"p3.csv\"]\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("run.toml"),
            "study = \"study.toml\"\nground_truth = \"real.csv\"\nendpoints = \"endpoints.toml\"\nvariants = [\"p3\"]\nmodels = [\"canned\"]\ntrials_per_cell = 2\nmaster_seed = 9\nmantel_permutations = 99\nout = \"results\"\n",
        )
        .unwrap();

        let loaded = load_run_plan(&dir.path().join("run.toml")).unwrap();
        assert_eq!(loaded.plan.variants, vec![PromptVariant::P3]);
        assert_eq!(loaded.plan.trials_per_cell, 2);
        assert_eq!(loaded.plan.endpoints.len(), 1);
        assert_eq!(loaded.options.mantel_permutations, 99);
        assert_eq!(loaded.out.as_deref(), Some(dir.path().join("results").as_path()));
        let outcome = run(&loaded.plan, &loaded.options).unwrap();
        assert_eq!(outcome.cells.len(), 2);
        assert!(outcome.cells.iter().all(|c| c.completed().is_some()));
    }

    #[test]
    fn manifest_rejects_unknown_model_names() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("study.toml"), "study_id = \"s\"\ncards = [\"a\", \"b\"]\nnumber_of_participants = 1\n").unwrap();
        fs::write(dir.path().join("real.csv"), "respondent,category,card\n").unwrap();
        fs::write(
            dir.path().join("endpoints.toml"),
            "[[endpoint]]\nname = \"canned\"\nprovider = \"mock\"\nmodel_id = \"m\"\nmock_responses = [\"study.toml\"]\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("run.toml"),
            "study = \"study.toml\"\nground_truth = \"real.csv\"\nendpoints = \"endpoints.toml\"\nvariants = [\"p3\"]\nmodels = [\"other\"]\ntrials_per_cell = 1\nmaster_seed = 1\n",
        )
        .unwrap();
        let err = load_run_plan(&dir.path().join("run.toml")).unwrap_err();
        assert!(err.to_string().contains("unknown endpoint name `other`"));
    }

    #[test]
    fn run_outputs_written_to_results_directory() {
        let dir = tempfile::tempdir().unwrap();
        let results = planted_results(12);
        let canned = clustering_csv(&planted_clustering(), &results.config);
        let response = write_response(dir.path(), "p3.csv", &canned);
        let plan = RunPlan {
            study: results.config.clone(),
            ground_truth: results.clone(),
            variants: vec![PromptVariant::P3],
            endpoints: vec![mock_endpoint("canned", vec![response])],
            trials_per_cell: 2,
            master_seed: 42,
        };
        let outcome = run(&plan, &quick_options()).unwrap();
        let out = dir.path().join("results");
        write_run_outputs(&outcome, &plan, &out).unwrap();

        let cells_csv = fs::read_to_string(out.join("cells.csv")).unwrap();
        assert_eq!(cells_csv.lines().count(), 3);
        assert!(cells_csv.lines().nth(1).unwrap().contains(",completed,"));
        let variability = fs::read_to_string(out.join("variability.csv")).unwrap();
        assert_eq!(variability.lines().count(), 2);
        assert!(out.join("ground-truth-clustering.csv").exists());
        assert!(out.join("ground-truth-similarity.csv").exists());
        assert!(out.join("cells").join("p3-canned-model-trial-1.json").exists());
        assert!(out.join("cells").join("p3-canned-model-trial-1-clustering.csv").exists());

        let reloaded = load_completed_cells(&out);
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded[0].agreement.nmi, 1.0);
    }
}
