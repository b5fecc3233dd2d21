//! Verification and normalization of LLM outputs: the error taxonomy,
//! label canonicalization and matching, payload extraction, and the
//! per-format validators. Integrity violations are failures (and trigger
//! regeneration); stylistic issues — extra whitespace, label
//! modifications that still matched — are warnings.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::csvio::{self, CsvError, Record};
use crate::model::{CardId, Clustering, ParticipantSort, Provenance, SortRow, StudyConfig, StudyResults};
use crate::percent::Percent;
use crate::simmatrix::SimilarityMatrix;

/// Output error codes; the first nine map one-to-one onto the observed
/// problem classes 1–9 (label-modification subtypes fold into
/// `LabelModified` details).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    OmittedCards,
    DuplicateCards,
    Overcategorization,
    Undercategorization,
    AsymmetricMatrix,
    OutputMissing,
    LabelModified,
    HallucinatedCard,
    MalformedCsv,
    ExtraWhitespace,
    UnnamedCategory,
    InvalidMatrixValue,
}

impl ErrorCode {
    /// Stable machine-readable string form.
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::OmittedCards => "OMITTED_CARDS",
            ErrorCode::DuplicateCards => "DUPLICATE_CARDS",
            ErrorCode::Overcategorization => "OVERCATEGORIZATION",
            ErrorCode::Undercategorization => "UNDERCATEGORIZATION",
            ErrorCode::AsymmetricMatrix => "ASYMMETRIC_MATRIX",
            ErrorCode::OutputMissing => "OUTPUT_MISSING",
            ErrorCode::LabelModified => "LABEL_MODIFIED",
            ErrorCode::HallucinatedCard => "HALLUCINATED_CARD",
            ErrorCode::MalformedCsv => "MALFORMED_CSV",
            ErrorCode::ExtraWhitespace => "EXTRA_WHITESPACE",
            ErrorCode::UnnamedCategory => "UNNAMED_CATEGORY",
            ErrorCode::InvalidMatrixValue => "INVALID_MATRIX_VALUE",
        }
    }

    /// Warnings never fail validation; everything else does.
    pub fn is_warning(&self) -> bool {
        matches!(self, ErrorCode::ExtraWhitespace | ErrorCode::LabelModified)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: ErrorCode,
    pub detail: String,
    /// 1-based line in the validated payload, when attributable.
    pub location: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Failure-level issues; validation fails iff this is non-empty.
    pub errors: Vec<ValidationIssue>,
    /// Warning-level issues (extra whitespace, matched label changes).
    pub warnings: Vec<ValidationIssue>,
    /// Uncoded observations, e.g. a monolithic raw simulation.
    pub notes: Vec<String>,
    /// Card label normalizations applied (before → after).
    pub normalizations_applied: Vec<(String, String)>,
}

impl ValidationReport {
    fn new() -> ValidationReport {
        ValidationReport {
            errors: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
            normalizations_applied: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error_codes(&self) -> Vec<ErrorCode> {
        self.errors.iter().map(|i| i.code).collect()
    }

    fn push(&mut self, code: ErrorCode, detail: impl Into<String>, location: Option<usize>) {
        let issue = ValidationIssue { code, detail: detail.into(), location };
        if code.is_warning() {
            self.warnings.push(issue);
        } else {
            self.errors.push(issue);
        }
    }
}

/// Canonical form of a card label: ends trimmed, internal whitespace runs
/// collapsed to single spaces, typographic apostrophes/quotes/dashes
/// mapped to their straight equivalents. Case and punctuation are
/// preserved. Idempotent.
pub fn canonicalize_label(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    let mut pending_space = false;
    for c in label.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            '\u{2013}' | '\u{2014}' => '-',
            other => other,
        });
    }
    out
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Maximum character edit distance for an unambiguous fuzzy label match.
pub const FUZZY_BUDGET: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelNormalization {
    pub output_label: String,
    pub config_label: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatch {
    /// Resolved output label → card id. No two labels map to one card.
    pub resolved: HashMap<String, CardId>,
    pub normalizations: Vec<LabelNormalization>,
    /// Labels matching no card after all passes (hallucination candidates).
    pub unmatched: Vec<String>,
    /// Labels whose fuzzy match was ambiguous; never auto-resolved.
    pub ambiguous: Vec<String>,
}

fn strip_punctuation(s: &str) -> String {
    s.chars().filter(|c| !c.is_ascii_punctuation()).collect()
}

fn classify_modification(output: &str, config_label: &str) -> String {
    if canonicalize_label(output) == canonicalize_label(config_label) {
        let ws_only = output.chars().filter(|c| !c.is_whitespace()).eq(config_label.chars().filter(|c| !c.is_whitespace()));
        if ws_only {
            return "Extra spaces in card labels are removed".to_string();
        }
        return "Special characters are replaced".to_string();
    }
    let co = canonicalize_label(output);
    let cc = canonicalize_label(config_label);
    if strip_punctuation(&cc) == co || canonicalize_label(&strip_punctuation(&cc)) == co {
        return "Punctuation is removed".to_string();
    }
    format!("Card label modified (edit distance {})", levenshtein(&co, &cc))
}

/// Resolves output labels to card ids in three passes — exact,
/// canonicalized, then unique fuzzy (edit distance ≤ 2 on canonical
/// forms against remaining cards). Each pass consumes its matches, so no
/// two output labels resolve to the same card.
pub fn match_labels(output_labels: &[String], config: &StudyConfig) -> LabelMatch {
    let mut resolved: HashMap<String, CardId> = HashMap::new();
    let mut normalizations = Vec::new();
    let mut taken: HashSet<CardId> = HashSet::new();
    let mut remaining: Vec<&String> = Vec::new();

    // Pass 1: exact byte equality.
    let exact: HashMap<&str, CardId> = config.cards.iter().map(|c| (c.label.as_str(), c.id)).collect();
    for label in output_labels {
        if resolved.contains_key(label) {
            continue;
        }
        match exact.get(label.as_str()) {
            Some(&id) if !taken.contains(&id) => {
                resolved.insert(label.clone(), id);
                taken.insert(id);
            }
            _ => remaining.push(label),
        }
    }

    // Pass 2: canonicalized equality.
    let canonical = config.canonical_index();
    let mut still_remaining: Vec<&String> = Vec::new();
    for label in remaining {
        match canonical.get(&canonicalize_label(label)) {
            Some(&id) if !taken.contains(&id) => {
                resolved.insert(label.clone(), id);
                taken.insert(id);
                normalizations.push(LabelNormalization {
                    output_label: label.clone(),
                    config_label: config.label(id).to_string(),
                    detail: classify_modification(label, config.label(id)),
                });
            }
            _ => still_remaining.push(label),
        }
    }

    // Pass 3: unique fuzzy match against cards not yet consumed.
    let mut unmatched = Vec::new();
    let mut ambiguous = Vec::new();
    for label in still_remaining {
        let canon = canonicalize_label(label);
        let candidates: Vec<CardId> = config
            .cards
            .iter()
            .filter(|c| !taken.contains(&c.id))
            .filter(|c| levenshtein(&canon, &canonicalize_label(&c.label)) <= FUZZY_BUDGET)
            .map(|c| c.id)
            .collect();
        match candidates.as_slice() {
            [id] => {
                resolved.insert(label.clone(), *id);
                taken.insert(*id);
                normalizations.push(LabelNormalization {
                    output_label: label.clone(),
                    config_label: config.label(*id).to_string(),
                    detail: classify_modification(label, config.label(*id)),
                });
            }
            [] => unmatched.push(label.clone()),
            _ => ambiguous.push(label.clone()),
        }
    }

    LabelMatch { resolved, normalizations, unmatched, ambiguous }
}

/// Extracts the CSV payload from a raw LLM response: the last well-formed
/// fenced code block whose content includes a comma-bearing line. When no
/// such block exists the entire response is the payload, so an output
/// that was never printed surfaces as a validation error instead of a
/// parse crash.
pub fn extract_payload(response: &str) -> String {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(content), true) => {
                blocks.push(content.join("\n"));
                current = None;
            }
            (Some(content), false) => content.push(line),
            (None, false) => {}
        }
    }
    blocks
        .into_iter()
        .rev()
        .find(|b| b.lines().any(|l| l.contains(',')))
        .unwrap_or_else(|| response.to_string())
}

/// Parses CSV, attempting a single quote-balance repair (one appended
/// closing quote) before giving up. Returns the records and whether the
/// repair was needed.
fn parse_with_repair(text: &str) -> Result<(Vec<Record>, bool), CsvError> {
    match csvio::parse(text) {
        Ok(records) => Ok((records, false)),
        Err(CsvError::UnclosedQuote { .. }) => {
            let mut repaired = text.to_string();
            repaired.push('"');
            csvio::parse(&repaired).map(|records| (records, true))
        }
        Err(e) => Err(e),
    }
}

/// Shared row-reading step: parse (with repair), strip blank-line noise
/// (noting `EXTRA_WHITESPACE`), locate the expected header. Returns the
/// data records, or `None` after recording the appropriate failure.
fn read_rows(csv: &str, header: &[&str], report: &mut ValidationReport) -> Option<Vec<Record>> {
    if !csv.lines().any(|l| l.contains(',')) {
        report.push(
            ErrorCode::OutputMissing,
            "no CSV payload found in the output",
            None,
        );
        return None;
    }
    let (records, repaired) = match parse_with_repair(csv) {
        Ok(ok) => ok,
        Err(e) => {
            let line = match e {
                CsvError::UnclosedQuote { line }
                | CsvError::BareQuote { line }
                | CsvError::TrailingGarbage { line }
                | CsvError::BareCarriageReturn { line } => line,
            };
            report.push(ErrorCode::MalformedCsv, e.to_string(), Some(line));
            return None;
        }
    };
    if repaired {
        report.push(
            ErrorCode::ExtraWhitespace,
            "unbalanced quote repaired at end of payload",
            None,
        );
    }
    let mut data = Vec::new();
    let mut header_seen = false;
    for rec in records {
        if rec.fields.iter().all(|f| f.trim().is_empty()) {
            report.push(ErrorCode::ExtraWhitespace, "blank line removed", Some(rec.line));
            continue;
        }
        if !header_seen {
            let trimmed: Vec<&str> = rec.fields.iter().map(|f| f.trim()).collect();
            if trimmed == header {
                header_seen = true;
                if rec.fields.iter().any(|f| f != f.trim()) {
                    report.push(ErrorCode::ExtraWhitespace, "whitespace around header fields", Some(rec.line));
                }
                continue;
            }
            report.push(
                ErrorCode::OutputMissing,
                format!("expected `{}` header before data rows", header.join(",")),
                Some(rec.line),
            );
            return None;
        }
        data.push(rec);
    }
    if !header_seen {
        report.push(
            ErrorCode::OutputMissing,
            format!("expected `{}` header not found", header.join(",")),
            None,
        );
        return None;
    }
    Some(data)
}

/// Trims a field, noting surrounding whitespace as `EXTRA_WHITESPACE`.
fn take_field(raw: &str, line: usize, report: &mut ValidationReport) -> String {
    let trimmed = raw.trim();
    if trimmed != raw {
        report.push(ErrorCode::ExtraWhitespace, format!("whitespace around `{trimmed}`"), Some(line));
    }
    trimmed.to_string()
}

struct PartitionScan {
    /// (category name, card, line) triples in row order.
    rows: Vec<(String, CardId, usize)>,
}

/// Validates one partition's worth of (category, card-label) rows: label
/// resolution, duplicates, hallucinations, omissions, category naming,
/// and the over/under-categorization rules. `location_prefix` scopes the
/// details when scanning one respondent of a raw simulation.
fn scan_partition(
    rows: &[(String, String, usize)],
    config: &StudyConfig,
    location_prefix: &str,
    report: &mut ValidationReport,
) -> PartitionScan {
    let prefix = |detail: String| {
        if location_prefix.is_empty() {
            detail
        } else {
            format!("{location_prefix}: {detail}")
        }
    };

    // Resolve distinct labels in first-appearance order.
    let mut distinct: Vec<String> = Vec::new();
    let mut seen_labels: HashSet<&str> = HashSet::new();
    for (_, label, _) in rows {
        if seen_labels.insert(label.as_str()) {
            distinct.push(label.clone());
        }
    }
    let matched = match_labels(&distinct, config);
    for norm in &matched.normalizations {
        report.push(
            ErrorCode::LabelModified,
            prefix(format!("`{}` → `{}`: {}", norm.output_label, norm.config_label, norm.detail)),
            None,
        );
        report
            .normalizations_applied
            .push((norm.output_label.clone(), norm.config_label.clone()));
    }
    for label in &matched.unmatched {
        let line = rows.iter().find(|(_, l, _)| l == label).map(|(_, _, n)| *n);
        report.push(
            ErrorCode::HallucinatedCard,
            prefix(format!("`{label}` matches no study card")),
            line,
        );
    }
    for label in &matched.ambiguous {
        let line = rows.iter().find(|(_, l, _)| l == label).map(|(_, _, n)| *n);
        report.push(
            ErrorCode::HallucinatedCard,
            prefix(format!("`{label}` is ambiguous between multiple study cards; not auto-resolved")),
            line,
        );
    }

    // Walk rows: duplicates and unnamed categories.
    let mut assigned: HashMap<CardId, String> = HashMap::new();
    let mut duplicates: Vec<(String, usize)> = Vec::new();
    let mut scanned: Vec<(String, CardId, usize)> = Vec::new();
    let mut unnamed_reported = false;
    for (category, label, line) in rows {
        let name_canon = canonicalize_label(category);
        if (name_canon.is_empty() || name_canon.eq_ignore_ascii_case("unnamed category")) && !unnamed_reported {
            report.push(
                ErrorCode::UnnamedCategory,
                prefix(format!("category `{category}` is not named")),
                Some(*line),
            );
            unnamed_reported = true;
        }
        if let Some(&card) = matched.resolved.get(label) {
            if let Some(first_cat) = assigned.get(&card) {
                duplicates.push((
                    format!("`{}` already sorted into `{first_cat}`", config.label(card)),
                    *line,
                ));
            } else {
                assigned.insert(card, category.clone());
                scanned.push((category.clone(), card, *line));
            }
        }
    }
    for (detail, line) in duplicates {
        report.push(ErrorCode::DuplicateCards, prefix(detail), Some(line));
    }

    // Omissions.
    let missing: Vec<&str> = config
        .cards
        .iter()
        .filter(|c| !assigned.contains_key(&c.id))
        .map(|c| c.label.as_str())
        .collect();
    if !missing.is_empty() {
        report.push(
            ErrorCode::OmittedCards,
            prefix(format!("missing {} card(s): {}", missing.len(), missing.join(", "))),
            None,
        );
    }

    // Category structure over non-empty categories.
    let mut category_sizes: HashMap<&str, usize> = HashMap::new();
    for (category, _, _) in &scanned {
        *category_sizes.entry(category.as_str()).or_default() += 1;
    }
    let k = category_sizes.len();
    let n = config.n_cards();
    if k < 2 && !scanned.is_empty() {
        report.push(
            ErrorCode::Undercategorization,
            prefix("all cards grouped into a single category".to_string()),
            None,
        );
    }
    if k >= 2 {
        let singletons = category_sizes.values().filter(|&&s| s == 1).count();
        if singletons * 10 >= k * 9 && 2 * k > n {
            report.push(
                ErrorCode::Overcategorization,
                prefix(format!("{singletons} of {k} categories are singletons")),
                None,
            );
        }
    }

    PartitionScan { rows: scanned }
}

fn partial_clustering(scan: &PartitionScan) -> Clustering {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<CardId>> = HashMap::new();
    for (category, card, _) in &scan.rows {
        if !groups.contains_key(category) {
            order.push(category.clone());
        }
        groups.entry(category.clone()).or_default().push(*card);
    }
    Clustering::from_parts(
        order
            .into_iter()
            .map(|name| {
                let cards = groups.remove(&name).unwrap_or_default();
                (name, cards)
            })
            .collect(),
    )
}

/// Validates a clustering payload (`categoryName,cardName`). A partial
/// clustering is always returned for diagnostics, even on failure.
pub fn validate_clustering_output(csv: &str, config: &StudyConfig) -> (Clustering, ValidationReport) {
    let mut report = ValidationReport::new();
    let Some(records) = read_rows(csv, &["categoryName", "cardName"], &mut report) else {
        return (Clustering::from_parts(Vec::new()), report);
    };
    let mut rows: Vec<(String, String, usize)> = Vec::new();
    let mut malformed = false;
    for rec in &records {
        if rec.fields.len() != 2 {
            report.push(
                ErrorCode::MalformedCsv,
                format!("expected 2 fields, got {}", rec.fields.len()),
                Some(rec.line),
            );
            malformed = true;
            continue;
        }
        let category = take_field(&rec.fields[0], rec.line, &mut report);
        let label = take_field(&rec.fields[1], rec.line, &mut report);
        rows.push((category, label, rec.line));
    }
    if malformed {
        // Rows were lost; completeness cannot be judged fairly.
        let scan = scan_rows_without_integrity(&rows, config, &mut report);
        return (partial_clustering(&scan), report);
    }
    let scan = scan_partition(&rows, config, "", &mut report);
    (partial_clustering(&scan), report)
}

/// Row collection when the CSV was structurally damaged: resolve what is
/// resolvable for diagnostics without judging completeness.
fn scan_rows_without_integrity(
    rows: &[(String, String, usize)],
    config: &StudyConfig,
    report: &mut ValidationReport,
) -> PartitionScan {
    let mut distinct: Vec<String> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (_, label, _) in rows {
        if seen.insert(label.as_str()) {
            distinct.push(label.clone());
        }
    }
    let matched = match_labels(&distinct, config);
    for norm in &matched.normalizations {
        report
            .normalizations_applied
            .push((norm.output_label.clone(), norm.config_label.clone()));
    }
    let mut assigned: HashSet<CardId> = HashSet::new();
    let mut out = Vec::new();
    for (category, label, line) in rows {
        if let Some(&card) = matched.resolved.get(label) {
            if assigned.insert(card) {
                out.push((category.clone(), card, *line));
            }
        }
    }
    PartitionScan { rows: out }
}

/// Validates a raw-results payload (`respondent,category,card`): the
/// partition checks apply to every simulated respondent. A respondent
/// count differing from the study's is a warning detail, not a failure;
/// byte-identical respondents are noted as a monolith.
pub fn validate_raw_output(csv: &str, config: &StudyConfig) -> (StudyResults, ValidationReport) {
    let mut report = ValidationReport::new();
    let empty = StudyResults { config: config.clone(), sorts: Vec::new(), provenance: Provenance::Real };
    let Some(records) = read_rows(csv, &["respondent", "category", "card"], &mut report) else {
        return (empty, report);
    };

    let mut order: Vec<String> = Vec::new();
    let mut by_respondent: HashMap<String, Vec<(String, String, usize)>> = HashMap::new();
    let mut malformed = false;
    for rec in &records {
        if rec.fields.len() != 3 {
            report.push(
                ErrorCode::MalformedCsv,
                format!("expected 3 fields, got {}", rec.fields.len()),
                Some(rec.line),
            );
            malformed = true;
            continue;
        }
        let respondent = take_field(&rec.fields[0], rec.line, &mut report);
        let category = take_field(&rec.fields[1], rec.line, &mut report);
        let label = take_field(&rec.fields[2], rec.line, &mut report);
        if !by_respondent.contains_key(&respondent) {
            order.push(respondent.clone());
        }
        by_respondent.entry(respondent).or_default().push((category, label, rec.line));
    }

    let mut sorts: Vec<ParticipantSort> = Vec::new();
    let n_cards = config.n_cards();
    for respondent in &order {
        let rows = &by_respondent[respondent];
        let scan = if malformed {
            scan_rows_without_integrity(rows, config, &mut report)
        } else {
            scan_partition(rows, config, &format!("respondent {respondent}"), &mut report)
        };
        let assigned: HashSet<CardId> = scan.rows.iter().map(|(_, c, _)| *c).collect();
        sorts.push(ParticipantSort {
            respondent_id: respondent.clone(),
            rows: scan
                .rows
                .into_iter()
                .map(|(category, card, _)| SortRow { category, card })
                .collect(),
            complete: assigned.len() == n_cards,
        });
    }

    if !sorts.is_empty() && sorts.len() != config.number_of_participants {
        report.notes.push(format!(
            "respondent count {} differs from the study's {}",
            sorts.len(),
            config.number_of_participants
        ));
    }
    if sorts.len() >= 2 {
        let first = &sorts[0].rows;
        if sorts.iter().skip(1).all(|s| &s.rows == first) {
            report
                .notes
                .push("MONOLITH: all respondents returned byte-identical partitions".to_string());
        }
    }

    (StudyResults { config: config.clone(), sorts, provenance: Provenance::Real }, report)
}

/// Validates a similarity-matrix payload: labeled axes covering every
/// card exactly once, exact symmetry, zero diagonal, and values that are
/// plausible participant fractions (within 0.5 of a multiple of
/// 100/number_of_participants).
pub fn validate_matrix_output(csv: &str, config: &StudyConfig) -> (SimilarityMatrix, ValidationReport) {
    let mut report = ValidationReport::new();
    let n = config.n_cards();
    let zero = SimilarityMatrix {
        cards: config.card_ids(),
        values: vec![vec![Percent::ZERO; n]; n],
    };

    if !csv.lines().any(|l| l.contains(',')) {
        report.push(ErrorCode::OutputMissing, "no CSV payload found in the output", None);
        return (zero, report);
    }
    let (records, repaired) = match parse_with_repair(csv) {
        Ok(ok) => ok,
        Err(e) => {
            report.push(ErrorCode::MalformedCsv, e.to_string(), None);
            return (zero, report);
        }
    };
    if repaired {
        report.push(ErrorCode::ExtraWhitespace, "unbalanced quote repaired at end of payload", None);
    }
    let mut rows: Vec<Record> = Vec::new();
    for rec in records {
        if rec.fields.iter().all(|f| f.trim().is_empty()) {
            report.push(ErrorCode::ExtraWhitespace, "blank line removed", Some(rec.line));
            continue;
        }
        rows.push(rec);
    }
    let Some(header) = rows.first() else {
        report.push(ErrorCode::OutputMissing, "matrix has no header row", None);
        return (zero, report);
    };
    if header.fields.first().map(|f| !f.trim().is_empty()).unwrap_or(true) {
        report.push(
            ErrorCode::OutputMissing,
            "matrix header must start with an empty corner cell",
            Some(header.line),
        );
        return (zero, report);
    }

    // Resolve the column axis.
    let mut axis_labels: Vec<String> = Vec::new();
    for f in &header.fields[1..] {
        axis_labels.push(take_field(f, header.line, &mut report));
    }
    let matched = match_labels(&axis_labels, config);
    for norm in &matched.normalizations {
        report.push(
            ErrorCode::LabelModified,
            format!("`{}` → `{}`: {}", norm.output_label, norm.config_label, norm.detail),
            Some(header.line),
        );
        report
            .normalizations_applied
            .push((norm.output_label.clone(), norm.config_label.clone()));
    }
    for label in matched.unmatched.iter().chain(&matched.ambiguous) {
        report.push(
            ErrorCode::HallucinatedCard,
            format!("axis label `{label}` matches no study card"),
            Some(header.line),
        );
    }
    let mut axis: Vec<Option<CardId>> = Vec::new();
    let mut seen_axis: HashSet<CardId> = HashSet::new();
    for label in &axis_labels {
        match matched.resolved.get(label) {
            Some(&id) if !seen_axis.contains(&id) => {
                seen_axis.insert(id);
                axis.push(Some(id));
            }
            Some(&id) => {
                report.push(
                    ErrorCode::DuplicateCards,
                    format!("axis repeats card `{}`", config.label(id)),
                    Some(header.line),
                );
                axis.push(None);
            }
            None => axis.push(None),
        }
    }
    let missing: Vec<&str> = config
        .cards
        .iter()
        .filter(|c| !seen_axis.contains(&c.id))
        .map(|c| c.label.as_str())
        .collect();
    if !missing.is_empty() {
        report.push(
            ErrorCode::OmittedCards,
            format!("axis missing {} card(s): {}", missing.len(), missing.join(", ")),
            Some(header.line),
        );
    }

    // Read the body in axis positions.
    let width = axis.len();
    let mut body: Vec<Vec<Option<Percent>>> = vec![vec![None; width]; width];
    let step_tolerance = num_rational::Ratio::new(1i64, 2);
    for (i, rec) in rows[1..].iter().enumerate() {
        if i >= width {
            report.push(ErrorCode::MalformedCsv, "more matrix rows than axis columns", Some(rec.line));
            break;
        }
        if rec.fields.len() != width + 1 {
            report.push(
                ErrorCode::MalformedCsv,
                format!("expected {} fields, got {}", width + 1, rec.fields.len()),
                Some(rec.line),
            );
            continue;
        }
        let row_label = take_field(&rec.fields[0], rec.line, &mut report);
        if matched.resolved.get(&row_label).copied() != axis[i] {
            report.push(
                ErrorCode::AsymmetricMatrix,
                format!("row {} label `{row_label}` does not mirror the column axis", i + 1),
                Some(rec.line),
            );
        }
        for (j, raw) in rec.fields[1..].iter().enumerate() {
            let field = take_field(raw, rec.line, &mut report);
            match field.parse::<Percent>() {
                Ok(value) => {
                    if i == j && !value.is_zero() {
                        report.push(
                            ErrorCode::InvalidMatrixValue,
                            format!("diagonal entry ({}, {}) must be 0, got {value}", i + 1, j + 1),
                            Some(rec.line),
                        );
                    } else if value.deviation_from_fraction(config.number_of_participants) > step_tolerance {
                        report.push(
                            ErrorCode::InvalidMatrixValue,
                            format!(
                                "{value} is not within 0.5 of a multiple of 100/{}",
                                config.number_of_participants
                            ),
                            Some(rec.line),
                        );
                    }
                    body[i][j] = Some(value);
                }
                Err(e) => {
                    report.push(ErrorCode::InvalidMatrixValue, e.to_string(), Some(rec.line));
                }
            }
        }
    }
    if rows.len() - 1 < width {
        report.push(
            ErrorCode::MalformedCsv,
            format!("matrix has {} data rows for {} columns", rows.len() - 1, width),
            None,
        );
    }

    // Exact symmetry check on parsed values.
    let mut asymmetric: Vec<(usize, usize)> = Vec::new();
    for i in 0..width {
        for j in (i + 1)..width {
            if let (Some(a), Some(b)) = (body[i][j], body[j][i]) {
                if a != b {
                    asymmetric.push((i, j));
                }
            }
        }
    }
    if !asymmetric.is_empty() {
        let (i, j) = asymmetric[0];
        report.push(
            ErrorCode::AsymmetricMatrix,
            format!("{} asymmetric pair(s), first at ({}, {})", asymmetric.len(), i + 1, j + 1),
            None,
        );
    }

    // Assemble the diagnostic matrix over the study axis (config order),
    // symmetrized by the upper triangle so a usable matrix always returns.
    let mut values = vec![vec![Percent::ZERO; n]; n];
    for i in 0..width {
        for j in 0..width {
            if let (Some(ci), Some(cj), Some(v)) = (axis[i], axis[j], body[i][j]) {
                if ci != cj {
                    values[ci.0][cj.0] = v;
                }
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            values[j][i] = values[i][j];
        }
    }
    (SimilarityMatrix { cards: config.card_ids(), values }, report)
}
