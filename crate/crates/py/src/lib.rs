//! Python bindings for the cardsort core: study configs, raw results,
//! similarity/distance matrices, clustering with automatic K selection,
//! agreement metrics, prompt rendering, and LLM-output validation.
//!
//! Card identity crosses the boundary as plain `usize` indices into the
//! config's card list; Percent values cross as `f64` (with canonical
//! string rendering available where exactness matters).

use std::collections::BTreeMap;
use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cardsort::cluster::{self, ClusterParams};
use cardsort::metrics::{self, AgreementReport, MantelResult};
use cardsort::model::{
    filter_complete, parse_clustering, parse_raw_results, parse_study_config, screen_study,
    serialize_clustering, serialize_raw_results, CardId, Clustering, Provenance, StudyConfig,
    StudyResults,
};
use cardsort::pipeline;
use cardsort::prompts::{self, PromptVariant};
use cardsort::simmatrix::{
    build_similarity, complement, parse_matrix, serialize_distance_matrix, serialize_matrix,
    DistanceMatrix, SimilarityMatrix,
};
use cardsort::validate::{
    self, validate_clustering_output, validate_matrix_output, validate_raw_output,
    ValidationReport,
};

fn val_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn card_ids(indices: Vec<usize>) -> Vec<CardId> {
    indices.into_iter().map(CardId).collect()
}

fn indices(cards: &[CardId]) -> Vec<usize> {
    cards.iter().map(|c| c.0).collect()
}

fn variant_from(tag: &str) -> PyResult<PromptVariant> {
    PromptVariant::from_str(tag).map_err(val_err)
}

/// An open card-sorting study: id, card labels, participant count, and
/// optional context shown to participants.
#[pyclass(name = "StudyConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyStudyConfig(StudyConfig);

#[pymethods]
impl PyStudyConfig {
    #[new]
    #[pyo3(signature = (study_id, cards, number_of_participants, *, welcome_message=None, instructions=None, demographics=None, language_tag=None))]
    fn new(
        study_id: String,
        cards: Vec<String>,
        number_of_participants: usize,
        welcome_message: Option<String>,
        instructions: Option<String>,
        demographics: Option<String>,
        language_tag: Option<String>,
    ) -> PyResult<PyStudyConfig> {
        StudyConfig::new(
            study_id,
            cards,
            number_of_participants,
            welcome_message,
            instructions,
            demographics,
            language_tag,
        )
        .map(PyStudyConfig)
        .map_err(val_err)
    }

    /// Parses the TOML study-config format.
    #[staticmethod]
    fn from_toml(source: &str) -> PyResult<PyStudyConfig> {
        parse_study_config(source).map(PyStudyConfig).map_err(val_err)
    }

    #[getter]
    fn study_id(&self) -> String {
        self.0.study_id.clone()
    }

    #[getter]
    fn cards(&self) -> Vec<String> {
        self.0.cards.iter().map(|c| c.label.clone()).collect()
    }

    #[getter]
    fn number_of_participants(&self) -> usize {
        self.0.number_of_participants
    }

    #[getter]
    fn welcome_message(&self) -> Option<String> {
        self.0.welcome_message.clone()
    }

    #[getter]
    fn instructions(&self) -> Option<String> {
        self.0.instructions.clone()
    }

    #[getter]
    fn demographics(&self) -> Option<String> {
        self.0.demographics.clone()
    }

    #[getter]
    fn language_tag(&self) -> String {
        self.0.language_tag.clone()
    }

    fn n_cards(&self) -> usize {
        self.0.n_cards()
    }

    fn label(&self, card: usize) -> PyResult<String> {
        if card >= self.0.n_cards() {
            return Err(val_err(format!("card index {card} out of range")));
        }
        Ok(self.0.label(CardId(card)).to_string())
    }

    fn __repr__(&self) -> String {
        format!(
            "StudyConfig(study_id={:?}, n_cards={}, number_of_participants={})",
            self.0.study_id,
            self.0.n_cards(),
            self.0.number_of_participants
        )
    }
}

/// Participant sorts for one study, parsed from or serializable to the
/// raw `respondent,category,card` CSV format.
#[pyclass(name = "StudyResults", skip_from_py_object)]
#[derive(Clone)]
struct PyStudyResults(StudyResults);

#[pymethods]
impl PyStudyResults {
    /// Strict parse of trusted raw results CSV.
    #[staticmethod]
    fn from_csv(csv: &str, config: PyRef<PyStudyConfig>) -> PyResult<PyStudyResults> {
        parse_raw_results(csv, &config.0).map(PyStudyResults).map_err(val_err)
    }

    #[getter]
    fn config(&self) -> PyStudyConfig {
        PyStudyConfig(self.0.config.clone())
    }

    #[getter]
    fn n_sorts(&self) -> usize {
        self.0.sorts.len()
    }

    /// Sorts as (respondent_id, complete, [(category, card_index), ...]).
    #[getter]
    fn sorts(&self) -> Vec<(String, bool, Vec<(String, usize)>)> {
        self.0
            .sorts
            .iter()
            .map(|s| {
                let rows = s.rows.iter().map(|r| (r.category.clone(), r.card.0)).collect();
                (s.respondent_id.clone(), s.complete, rows)
            })
            .collect()
    }

    #[getter]
    fn provenance(&self) -> String {
        match &self.0.provenance {
            Provenance::Real => "real".to_string(),
            Provenance::Simulated { variant, model_id, trial_index } => {
                format!("simulated:{variant}:{model_id}:{trial_index}")
            }
        }
    }

    fn to_csv(&self) -> String {
        serialize_raw_results(&self.0)
    }

    /// Keeps only participants whose sort covers every card exactly once.
    fn filter_complete(&self) -> PyResult<PyStudyResults> {
        filter_complete(&self.0).map(PyStudyResults).map_err(val_err)
    }

    /// Inclusion screening; returns (pass, [violation, ...]).
    fn screen(&self) -> (bool, Vec<String>) {
        let verdict = screen_study(&self.0);
        (verdict.pass, verdict.violations.iter().map(|v| v.to_string()).collect())
    }

    fn __repr__(&self) -> String {
        format!("StudyResults(study_id={:?}, n_sorts={})", self.0.config.study_id, self.0.sorts.len())
    }
}

/// A partition of the study's cards into named categories.
#[pyclass(name = "Clustering", skip_from_py_object)]
#[derive(Clone)]
struct PyClustering(Clustering);

#[pymethods]
impl PyClustering {
    /// Builds from [(category_name, [card_index, ...]), ...] and checks
    /// the partition invariants against the config's card set.
    #[new]
    fn new(
        categories: Vec<(String, Vec<usize>)>,
        config: PyRef<PyStudyConfig>,
    ) -> PyResult<PyClustering> {
        let categories =
            categories.into_iter().map(|(name, cards)| (name, card_ids(cards))).collect();
        Clustering::new(categories, &config.0).map(PyClustering).map_err(val_err)
    }

    /// Strict parse of a `category,card` clustering CSV.
    #[staticmethod]
    fn from_csv(csv: &str, config: PyRef<PyStudyConfig>) -> PyResult<PyClustering> {
        parse_clustering(csv, &config.0).map(PyClustering).map_err(val_err)
    }

    #[getter]
    fn categories(&self) -> Vec<(String, Vec<usize>)> {
        self.0
            .categories
            .iter()
            .map(|(name, cards)| (name.clone(), indices(cards)))
            .collect()
    }

    #[getter]
    fn n_categories(&self) -> usize {
        self.0.n_categories()
    }

    /// Category index per card id; cards absent from the clustering
    /// (possible only in unchecked diagnostic output) map to None.
    fn assignments(&self, n_cards: usize) -> Vec<Option<usize>> {
        self.0
            .assignment_vec(n_cards)
            .into_iter()
            .map(|k| if k == usize::MAX { None } else { Some(k) })
            .collect()
    }

    fn to_csv(&self, config: PyRef<PyStudyConfig>) -> String {
        serialize_clustering(&self.0, &config.0)
    }

    fn __repr__(&self) -> String {
        format!("Clustering(n_categories={})", self.0.n_categories())
    }
}

/// Pairwise co-occurrence percentages over the study's cards.
#[pyclass(name = "SimilarityMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PySimilarityMatrix(SimilarityMatrix);

#[pymethods]
impl PySimilarityMatrix {
    /// Strict parse of a labeled matrix CSV.
    #[staticmethod]
    fn from_csv(csv: &str, config: PyRef<PyStudyConfig>) -> PyResult<PySimilarityMatrix> {
        parse_matrix(csv, &config.0).map(PySimilarityMatrix).map_err(val_err)
    }

    #[getter]
    fn cards(&self) -> Vec<usize> {
        indices(&self.0.cards)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values.iter().map(|row| row.iter().map(|p| p.to_f64()).collect()).collect()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        self.check(i, j)?;
        Ok(self.0.get(i, j).to_f64())
    }

    /// Canonical two-decimal percent rendering of one cell.
    fn get_str(&self, i: usize, j: usize) -> PyResult<String> {
        self.check(i, j)?;
        Ok(self.0.get(i, j).to_string())
    }

    fn to_csv(&self, config: PyRef<PyStudyConfig>) -> String {
        serialize_matrix(&self.0, &config.0)
    }

    fn __repr__(&self) -> String {
        format!("SimilarityMatrix(n={})", self.0.n())
    }
}

impl PySimilarityMatrix {
    fn check(&self, i: usize, j: usize) -> PyResult<()> {
        let n = self.0.n();
        if i >= n || j >= n {
            return Err(val_err(format!("index ({i}, {j}) out of range for n={n}")));
        }
        Ok(())
    }
}

/// Complement of a similarity matrix (100 − s), in percent.
#[pyclass(name = "DistanceMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PyDistanceMatrix(DistanceMatrix);

#[pymethods]
impl PyDistanceMatrix {
    #[getter]
    fn cards(&self) -> Vec<usize> {
        indices(&self.0.cards)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.to_f64()
    }

    fn to_csv(&self, config: PyRef<PyStudyConfig>) -> String {
        serialize_distance_matrix(&self.0, &config.0)
    }

    fn __repr__(&self) -> String {
        format!("DistanceMatrix(n={})", self.0.n())
    }
}

/// Result of MDS + K-means with automatic K selection on a distance
/// matrix: the chosen clustering plus the selection audit trail.
#[pyclass(name = "ClusterResult", skip_from_py_object)]
#[derive(Clone)]
struct PyClusterResult {
    #[pyo3(get)]
    k: usize,
    #[pyo3(get)]
    wcss_at_k: f64,
    #[pyo3(get)]
    no_knee: bool,
    #[pyo3(get)]
    curvature_sign: i8,
    #[pyo3(get)]
    curve_ks: Vec<usize>,
    #[pyo3(get)]
    curve_wcss: Vec<f64>,
    clustering: Clustering,
}

#[pymethods]
impl PyClusterResult {
    #[getter]
    fn clustering(&self) -> PyClustering {
        PyClustering(self.clustering.clone())
    }

    fn __repr__(&self) -> String {
        format!("ClusterResult(k={}, no_knee={})", self.k, self.no_knee)
    }
}

/// Everything derived from the real participant results: screening and
/// completeness filtering, the similarity/distance matrices, and the
/// reference clustering.
#[pyclass(name = "GroundTruth", skip_from_py_object)]
#[derive(Clone)]
struct PyGroundTruth {
    #[pyo3(get)]
    k: usize,
    #[pyo3(get)]
    wcss_at_k: f64,
    #[pyo3(get)]
    no_knee: bool,
    #[pyo3(get)]
    curvature_sign: i8,
    #[pyo3(get)]
    complete_sorts: usize,
    clustering: Clustering,
    similarity: SimilarityMatrix,
    distance: DistanceMatrix,
}

#[pymethods]
impl PyGroundTruth {
    #[getter]
    fn clustering(&self) -> PyClustering {
        PyClustering(self.clustering.clone())
    }

    #[getter]
    fn similarity(&self) -> PySimilarityMatrix {
        PySimilarityMatrix(self.similarity.clone())
    }

    #[getter]
    fn distance(&self) -> PyDistanceMatrix {
        PyDistanceMatrix(self.distance.clone())
    }

    fn __repr__(&self) -> String {
        format!("GroundTruth(k={}, complete_sorts={})", self.k, self.complete_sorts)
    }
}

/// Mantel permutation test result.
#[pyclass(name = "MantelResult", skip_from_py_object)]
#[derive(Clone)]
struct PyMantelResult {
    #[pyo3(get)]
    r: f64,
    #[pyo3(get)]
    p: f64,
    #[pyo3(get)]
    permutations: usize,
}

#[pymethods]
impl PyMantelResult {
    fn __repr__(&self) -> String {
        format!("MantelResult(r={}, p={}, permutations={})", self.r, self.p, self.permutations)
    }
}

impl From<MantelResult> for PyMantelResult {
    fn from(m: MantelResult) -> PyMantelResult {
        PyMantelResult { r: m.r, p: m.p, permutations: m.permutations }
    }
}

/// Agreement between two clusterings: NMI, ARI, edit distance, category
/// counts, and optionally a Mantel test between their matrices.
#[pyclass(name = "AgreementReport", skip_from_py_object)]
#[derive(Clone)]
struct PyAgreementReport(AgreementReport);

#[pymethods]
impl PyAgreementReport {
    #[getter]
    fn nmi(&self) -> f64 {
        self.0.nmi
    }

    #[getter]
    fn ari(&self) -> f64 {
        self.0.ari
    }

    #[getter]
    fn edit_distance(&self) -> usize {
        self.0.edit_distance
    }

    #[getter]
    fn n_categories_a(&self) -> usize {
        self.0.n_categories_a
    }

    #[getter]
    fn n_categories_b(&self) -> usize {
        self.0.n_categories_b
    }

    #[getter]
    fn mantel_r(&self) -> Option<f64> {
        self.0.mantel_r
    }

    #[getter]
    fn mantel_p(&self) -> Option<f64> {
        self.0.mantel_p
    }

    #[staticmethod]
    fn csv_header() -> String {
        AgreementReport::CSV_HEADER.to_string()
    }

    fn csv_row(&self) -> String {
        self.0.csv_row()
    }

    fn __repr__(&self) -> String {
        format!(
            "AgreementReport(nmi={}, ari={}, edit_distance={})",
            self.0.nmi, self.0.ari, self.0.edit_distance
        )
    }
}

/// Knee of a WCSS-vs-K curve.
#[pyclass(name = "KneeResult", skip_from_py_object)]
#[derive(Clone)]
struct PyKneeResult {
    #[pyo3(get)]
    k: usize,
    #[pyo3(get)]
    no_knee: bool,
    #[pyo3(get)]
    curvature_sign: i8,
    #[pyo3(get)]
    max_abs_curvature: f64,
}

#[pymethods]
impl PyKneeResult {
    fn __repr__(&self) -> String {
        format!("KneeResult(k={}, no_knee={})", self.k, self.no_knee)
    }
}

/// Validation outcome for one LLM response: error/warning issues, notes,
/// and the label normalizations that were applied.
#[pyclass(name = "ValidationReport", skip_from_py_object)]
#[derive(Clone)]
struct PyValidationReport(ValidationReport);

#[pymethods]
impl PyValidationReport {
    /// True when no failure-level issues were recorded.
    #[getter]
    fn ok(&self) -> bool {
        self.0.pass()
    }

    #[getter]
    fn error_codes(&self) -> Vec<String> {
        self.0.error_codes().iter().map(|c| c.to_string()).collect()
    }

    /// Failure issues as (code, detail, line).
    #[getter]
    fn errors(&self) -> Vec<(String, String, Option<usize>)> {
        self.0.errors.iter().map(|i| (i.code.to_string(), i.detail.clone(), i.location)).collect()
    }

    /// Warning issues as (code, detail, line).
    #[getter]
    fn warnings(&self) -> Vec<(String, String, Option<usize>)> {
        self.0
            .warnings
            .iter()
            .map(|i| (i.code.to_string(), i.detail.clone(), i.location))
            .collect()
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.0.notes.clone()
    }

    /// Label normalizations applied, as (output_label, config_label).
    #[getter]
    fn normalizations_applied(&self) -> Vec<(String, String)> {
        self.0.normalizations_applied.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "ValidationReport(ok={}, errors={}, warnings={})",
            self.0.pass(),
            self.0.errors.len(),
            self.0.warnings.len()
        )
    }
}

/// A prompt rendered from a study config.
#[pyclass(name = "RenderedPrompt", skip_from_py_object)]
#[derive(Clone)]
struct PyRenderedPrompt {
    #[pyo3(get)]
    variant: String,
    #[pyo3(get)]
    text: String,
    #[pyo3(get)]
    placeholders_filled: BTreeMap<String, String>,
    #[pyo3(get)]
    template_checksum: String,
    #[pyo3(get)]
    checksum: String,
}

#[pymethods]
impl PyRenderedPrompt {
    fn __repr__(&self) -> String {
        format!("RenderedPrompt(variant={:?}, checksum={:?})", self.variant, self.checksum)
    }
}

/// Co-occurrence similarity over the complete sorts in `results`.
#[pyfunction(name = "build_similarity")]
fn py_build_similarity(results: PyRef<PyStudyResults>) -> PyResult<PySimilarityMatrix> {
    build_similarity(&results.0).map(PySimilarityMatrix).map_err(val_err)
}

/// Distance = 100 − similarity, exact in percent space.
#[pyfunction(name = "complement")]
fn py_complement(matrix: PyRef<PySimilarityMatrix>) -> PyDistanceMatrix {
    PyDistanceMatrix(complement(&matrix.0))
}

/// The 0/100 similarity matrix induced by a single clustering.
#[pyfunction(name = "clustering_to_matrix")]
fn py_clustering_to_matrix(
    clustering: PyRef<PyClustering>,
    config: PyRef<PyStudyConfig>,
) -> PyResult<PySimilarityMatrix> {
    cardsort::simmatrix::clustering_to_matrix(&clustering.0, &config.0.card_ids())
        .map(PySimilarityMatrix)
        .map_err(val_err)
}

/// Classical MDS embedding of a distance matrix into `d` dimensions;
/// returns one coordinate row per card.
#[pyfunction(name = "mds_embed")]
fn py_mds_embed(dist: PyRef<PyDistanceMatrix>, d: usize) -> PyResult<Vec<Vec<f64>>> {
    cluster::mds_embed(&dist.0, d).map(|e| e.coords).map_err(val_err)
}

/// MDS embedding + seeded K-means over K = k_min..=min(k_max_cap, n−1),
/// selecting K at the WCSS curve's knee.
#[pyfunction(name = "cluster_cards")]
#[pyo3(signature = (dist, master_seed, *, dimensions=2, k_min=2, k_max_cap=15, restarts=10))]
fn py_cluster_cards(
    dist: PyRef<PyDistanceMatrix>,
    master_seed: u64,
    dimensions: usize,
    k_min: usize,
    k_max_cap: usize,
    restarts: usize,
) -> PyResult<PyClusterResult> {
    let params = ClusterParams { dimensions, k_min, k_max_cap, restarts };
    let outcome = cluster::cluster_cards(&dist.0, master_seed, &params).map_err(val_err)?;
    Ok(PyClusterResult {
        k: outcome.labeled.k,
        wcss_at_k: outcome.labeled.wcss_at_k,
        no_knee: outcome.audit.no_knee,
        curvature_sign: outcome.audit.curvature_sign,
        curve_ks: outcome.audit.curve.ks.clone(),
        curve_wcss: outcome.audit.curve.wcss.clone(),
        clustering: outcome.labeled.clustering,
    })
}

/// Screen (unless waived) → complete sorts → similarity → complement →
/// cluster; the full ground-truth pipeline over real results.
#[pyfunction(name = "prepare_ground_truth")]
#[pyo3(signature = (results, master_seed, *, waive_screening=false, dimensions=2, k_min=2, k_max_cap=15, restarts=10))]
fn py_prepare_ground_truth(
    results: PyRef<PyStudyResults>,
    master_seed: u64,
    waive_screening: bool,
    dimensions: usize,
    k_min: usize,
    k_max_cap: usize,
    restarts: usize,
) -> PyResult<PyGroundTruth> {
    let params = ClusterParams { dimensions, k_min, k_max_cap, restarts };
    let gt = pipeline::prepare_ground_truth(&results.0, master_seed, &params, waive_screening)
        .map_err(val_err)?;
    Ok(PyGroundTruth {
        k: gt.clustering.k,
        wcss_at_k: gt.clustering.wcss_at_k,
        no_knee: gt.audit.no_knee,
        curvature_sign: gt.audit.curvature_sign,
        complete_sorts: gt.complete_sorts,
        clustering: gt.clustering.clustering,
        similarity: gt.similarity,
        distance: gt.distance,
    })
}

/// Knee of a WCSS curve given as parallel `ks` and `wcss` lists.
#[pyfunction(name = "knee_point")]
fn py_knee_point(ks: Vec<usize>, wcss: Vec<f64>) -> PyResult<PyKneeResult> {
    let r = cluster::knee::knee_point(&ks, &wcss).map_err(val_err)?;
    Ok(PyKneeResult {
        k: r.k,
        no_knee: r.no_knee,
        curvature_sign: r.curvature_sign,
        max_abs_curvature: r.max_abs_curvature,
    })
}

/// Normalized mutual information between two partitions of one card set.
#[pyfunction(name = "nmi")]
fn py_nmi(a: PyRef<PyClustering>, b: PyRef<PyClustering>) -> PyResult<f64> {
    metrics::nmi(&a.0, &b.0).map_err(val_err)
}

/// Adjusted Rand index between two partitions of one card set.
#[pyfunction(name = "ari")]
fn py_ari(a: PyRef<PyClustering>, b: PyRef<PyClustering>) -> PyResult<f64> {
    metrics::ari(&a.0, &b.0).map_err(val_err)
}

/// Minimum number of single-card moves turning partition `a` into `b`.
#[pyfunction(name = "edit_distance")]
fn py_edit_distance(a: PyRef<PyClustering>, b: PyRef<PyClustering>) -> PyResult<usize> {
    metrics::edit_distance(&a.0, &b.0).map_err(val_err)
}

/// Mantel permutation test between two distance matrices on the same
/// card axis.
#[pyfunction(name = "mantel")]
#[pyo3(signature = (d1, d2, *, permutations=9999, master_seed=0))]
fn py_mantel(
    d1: PyRef<PyDistanceMatrix>,
    d2: PyRef<PyDistanceMatrix>,
    permutations: usize,
    master_seed: u64,
) -> PyResult<PyMantelResult> {
    metrics::mantel(&d1.0, &d2.0, permutations, master_seed)
        .map(PyMantelResult::from)
        .map_err(val_err)
}

/// Full agreement report between two clusterings; when both distance
/// matrices are given, a Mantel test is attached.
#[pyfunction(name = "agreement")]
#[pyo3(signature = (a, b, *, d1=None, d2=None, permutations=9999, master_seed=0))]
fn py_agreement(
    a: PyRef<PyClustering>,
    b: PyRef<PyClustering>,
    d1: Option<PyRef<PyDistanceMatrix>>,
    d2: Option<PyRef<PyDistanceMatrix>>,
    permutations: usize,
    master_seed: u64,
) -> PyResult<PyAgreementReport> {
    let report = AgreementReport::compare(&a.0, &b.0).map_err(val_err)?;
    let report = match (d1, d2) {
        (Some(d1), Some(d2)) => {
            let m = metrics::mantel(&d1.0, &d2.0, permutations, master_seed)
                .map_err(val_err)?;
            report.with_mantel(m)
        }
        (None, None) => report,
        _ => return Err(val_err("provide both d1 and d2, or neither")),
    };
    Ok(PyAgreementReport(report))
}

/// The raw template text of a prompt variant ("p1".."p4").
#[pyfunction(name = "template_text")]
fn py_template_text(variant: &str) -> PyResult<String> {
    Ok(prompts::template_text(variant_from(variant)?))
}

/// Renders a prompt variant ("p1".."p4") from a study config.
#[pyfunction(name = "render_prompt")]
fn py_render_prompt(config: PyRef<PyStudyConfig>, variant: &str) -> PyResult<PyRenderedPrompt> {
    let rendered = prompts::render(&config.0, variant_from(variant)?);
    Ok(PyRenderedPrompt {
        variant: rendered.variant.tag().to_string(),
        checksum: rendered.checksum(),
        text: rendered.text,
        placeholders_filled: rendered.placeholders_filled.into_iter().collect(),
        template_checksum: rendered.template_checksum,
    })
}

/// Canonical form of a card label (trim, collapse whitespace, straighten
/// typographic punctuation).
#[pyfunction(name = "canonicalize_label")]
fn py_canonicalize_label(label: &str) -> String {
    validate::canonicalize_label(label)
}

/// The CSV payload of a raw LLM response: the last fenced code block
/// holding comma-bearing lines, or the whole response when none exists.
#[pyfunction(name = "extract_payload")]
fn py_extract_payload(response: &str) -> String {
    validate::extract_payload(response)
}

/// Tolerant validation of an LLM clustering response (P3/P4 shape);
/// extracts the CSV payload, then returns the best-effort clustering
/// and the validation report.
#[pyfunction(name = "validate_clustering_output")]
fn py_validate_clustering_output(
    response: &str,
    config: PyRef<PyStudyConfig>,
) -> (PyClustering, PyValidationReport) {
    let payload = validate::extract_payload(response);
    let (clustering, report) = validate_clustering_output(&payload, &config.0);
    (PyClustering(clustering), PyValidationReport(report))
}

/// Tolerant validation of an LLM raw-results response (P1 shape).
#[pyfunction(name = "validate_raw_output")]
fn py_validate_raw_output(
    response: &str,
    config: PyRef<PyStudyConfig>,
) -> (PyStudyResults, PyValidationReport) {
    let payload = validate::extract_payload(response);
    let (results, report) = validate_raw_output(&payload, &config.0);
    (PyStudyResults(results), PyValidationReport(report))
}

/// Tolerant validation of an LLM similarity-matrix response (P2 shape).
#[pyfunction(name = "validate_matrix_output")]
fn py_validate_matrix_output(
    response: &str,
    config: PyRef<PyStudyConfig>,
) -> (PySimilarityMatrix, PyValidationReport) {
    let payload = validate::extract_payload(response);
    let (matrix, report) = validate_matrix_output(&payload, &config.0);
    (PySimilarityMatrix(matrix), PyValidationReport(report))
}

#[pymodule]
fn cardsort_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStudyConfig>()?;
    m.add_class::<PyStudyResults>()?;
    m.add_class::<PyClustering>()?;
    m.add_class::<PySimilarityMatrix>()?;
    m.add_class::<PyDistanceMatrix>()?;
    m.add_class::<PyClusterResult>()?;
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PyMantelResult>()?;
    m.add_class::<PyAgreementReport>()?;
    m.add_class::<PyKneeResult>()?;
    m.add_class::<PyValidationReport>()?;
    m.add_class::<PyRenderedPrompt>()?;
    m.add_function(wrap_pyfunction!(py_build_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(py_complement, m)?)?;
    m.add_function(wrap_pyfunction!(py_clustering_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(py_mds_embed, m)?)?;
    m.add_function(wrap_pyfunction!(py_cluster_cards, m)?)?;
    m.add_function(wrap_pyfunction!(py_prepare_ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(py_knee_point, m)?)?;
    m.add_function(wrap_pyfunction!(py_nmi, m)?)?;
    m.add_function(wrap_pyfunction!(py_ari, m)?)?;
    m.add_function(wrap_pyfunction!(py_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(py_mantel, m)?)?;
    m.add_function(wrap_pyfunction!(py_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(py_template_text, m)?)?;
    m.add_function(wrap_pyfunction!(py_render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(py_canonicalize_label, m)?)?;
    m.add_function(wrap_pyfunction!(py_extract_payload, m)?)?;
    m.add_function(wrap_pyfunction!(py_validate_clustering_output, m)?)?;
    m.add_function(wrap_pyfunction!(py_validate_raw_output, m)?)?;
    m.add_function(wrap_pyfunction!(py_validate_matrix_output, m)?)?;
    Ok(())
}
