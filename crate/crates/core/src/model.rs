//! Domain types: study configuration, raw participant sorts, clusterings,
//! plus study screening and the raw-results / clustering CSV formats.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, CsvError};
use crate::prompts::PromptVariant;
use crate::validate::canonicalize_label;

/// Internally assigned card index; labels are display properties that LLM
/// outputs may perturb, so all internal logic is id-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CardId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub id: CardId,
    pub label: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Toml(String),
    #[error("card {index} has an empty label")]
    EmptyCardLabel { index: usize },
    #[error("cards {first} and {second} share the canonicalized label `{canonical}`")]
    DuplicateCard { first: usize, second: usize, canonical: String },
    #[error("a study needs at least 2 cards, got {0}")]
    TooFewCards(usize),
    #[error("number_of_participants must be at least 1")]
    ZeroParticipants,
    #[error("study_id must be non-empty")]
    EmptyStudyId,
}

/// One open card-sorting study: the cards plus the contextual fields that
/// fill the prompt-template placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub cards: Vec<Card>,
    pub number_of_participants: usize,
    pub welcome_message: Option<String>,
    pub instructions: Option<String>,
    pub demographics: Option<String>,
    pub language_tag: String,
}

#[derive(Deserialize)]
struct StudyConfigDoc {
    study_id: String,
    cards: Vec<String>,
    number_of_participants: usize,
    welcome_message: Option<String>,
    instructions: Option<String>,
    demographics: Option<String>,
    language_tag: Option<String>,
}

impl StudyConfig {
    pub fn new(
        study_id: String,
        labels: Vec<String>,
        number_of_participants: usize,
        welcome_message: Option<String>,
        instructions: Option<String>,
        demographics: Option<String>,
        language_tag: Option<String>,
    ) -> Result<StudyConfig, ConfigError> {
        if study_id.trim().is_empty() {
            return Err(ConfigError::EmptyStudyId);
        }
        if labels.len() < 2 {
            return Err(ConfigError::TooFewCards(labels.len()));
        }
        if number_of_participants == 0 {
            return Err(ConfigError::ZeroParticipants);
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut cards = Vec::with_capacity(labels.len());
        for (index, label) in labels.into_iter().enumerate() {
            let canonical = canonicalize_label(&label);
            if canonical.is_empty() {
                return Err(ConfigError::EmptyCardLabel { index });
            }
            if let Some(&first) = seen.get(&canonical) {
                return Err(ConfigError::DuplicateCard { first, second: index, canonical });
            }
            seen.insert(canonical, index);
            cards.push(Card { id: CardId(index), label });
        }
        Ok(StudyConfig {
            study_id,
            cards,
            number_of_participants,
            welcome_message,
            instructions,
            demographics,
            language_tag: language_tag.unwrap_or_else(|| "en".to_string()),
        })
    }

    pub fn n_cards(&self) -> usize {
        self.cards.len()
    }

    pub fn card_ids(&self) -> Vec<CardId> {
        self.cards.iter().map(|c| c.id).collect()
    }

    pub fn label(&self, id: CardId) -> &str {
        &self.cards[id.0].label
    }

    /// Canonicalized label → card id, for exact-canonical resolution.
    pub fn canonical_index(&self) -> HashMap<String, CardId> {
        self.cards
            .iter()
            .map(|c| (canonicalize_label(&c.label), c.id))
            .collect()
    }
}

/// Parses a study configuration from its TOML schema: `study_id`, `cards`
/// (list of labels), `number_of_participants`, plus optional
/// `welcome_message`, `instructions`, `demographics`, `language_tag`.
pub fn parse_study_config(source: &str) -> Result<StudyConfig, ConfigError> {
    let doc: StudyConfigDoc = toml::from_str(source).map_err(|e| ConfigError::Toml(e.to_string()))?;
    StudyConfig::new(
        doc.study_id,
        doc.cards,
        doc.number_of_participants,
        doc.welcome_message,
        doc.instructions,
        doc.demographics,
        doc.language_tag,
    )
}

/// One raw-results row: a card placed into a named category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortRow {
    pub category: String,
    pub card: CardId,
}

/// One respondent's sort, in original row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSort {
    pub respondent_id: String,
    pub rows: Vec<SortRow>,
    pub complete: bool,
}

impl ParticipantSort {
    /// Groups rows into (category, cards) preserving first-appearance
    /// order of categories and row order of cards.
    pub fn partition(&self) -> Vec<(String, Vec<CardId>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<&str, Vec<CardId>> = HashMap::new();
        for row in &self.rows {
            if !groups.contains_key(row.category.as_str()) {
                order.push(row.category.clone());
            }
            groups.entry(row.category.as_str()).or_default().push(row.card);
        }
        order
            .into_iter()
            .map(|name| {
                let cards = groups.remove(name.as_str()).unwrap_or_default();
                (name, cards)
            })
            .collect()
    }

    pub fn n_categories(&self) -> usize {
        self.rows.iter().map(|r| r.category.as_str()).collect::<HashSet<_>>().len()
    }
}

/// Where a result set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Simulated { variant: PromptVariant, model_id: String, trial_index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyResults {
    pub config: StudyConfig,
    pub sorts: Vec<ParticipantSort>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum RawParseError {
    #[error("{0}")]
    Csv(#[from] CsvError),
    #[error("line {line}: expected header `respondent,category,card`")]
    Header { line: usize },
    #[error("line {line}: expected 3 fields, got {got}")]
    WrongArity { line: usize, got: usize },
    #[error("line {line}: unknown card label `{label}`")]
    UnknownCard { line: usize, label: String },
    #[error("line {line}: respondent {respondent} assigned `{label}` more than once")]
    DuplicateAssignment { line: usize, respondent: String, label: String },
    #[error("results are empty")]
    Empty,
}

/// Parses raw results (`respondent,category,card`), resolving card labels
/// by exact canonicalized match and grouping rows by respondent. This
/// strict parser serves trusted data; LLM output goes through the
/// tolerant validation path instead.
pub fn parse_raw_results(csv: &str, config: &StudyConfig) -> Result<StudyResults, RawParseError> {
    let records = csvio::parse(csv)?;
    let mut iter = records.into_iter();
    let header = iter.next().ok_or(RawParseError::Empty)?;
    if header.fields != ["respondent", "category", "card"] {
        return Err(RawParseError::Header { line: header.line });
    }
    let index = config.canonical_index();
    let mut order: Vec<String> = Vec::new();
    let mut sorts: HashMap<String, (Vec<SortRow>, HashSet<CardId>)> = HashMap::new();
    for rec in iter {
        if rec.fields.len() != 3 {
            return Err(RawParseError::WrongArity { line: rec.line, got: rec.fields.len() });
        }
        let (respondent, category, label) = (&rec.fields[0], &rec.fields[1], &rec.fields[2]);
        let card = *index
            .get(&canonicalize_label(label))
            .ok_or_else(|| RawParseError::UnknownCard { line: rec.line, label: label.clone() })?;
        let entry = sorts.entry(respondent.clone()).or_insert_with(|| {
            order.push(respondent.clone());
            (Vec::new(), HashSet::new())
        });
        if !entry.1.insert(card) {
            return Err(RawParseError::DuplicateAssignment {
                line: rec.line,
                respondent: respondent.clone(),
                label: label.clone(),
            });
        }
        entry.0.push(SortRow { category: category.clone(), card });
    }
    let n_cards = config.n_cards();
    let sorts = order
        .into_iter()
        .map(|respondent_id| {
            let (rows, assigned) = sorts.remove(&respondent_id).expect("respondent recorded");
            let complete = assigned.len() == n_cards;
            ParticipantSort { respondent_id, rows, complete }
        })
        .collect();
    Ok(StudyResults { config: config.clone(), sorts, provenance: Provenance::Real })
}

/// Serializes raw results canonically; parse ∘ serialize is the identity.
pub fn serialize_raw_results(results: &StudyResults) -> String {
    let mut rows = vec![vec!["respondent".to_string(), "category".to_string(), "card".to_string()]];
    for sort in &results.sorts {
        for row in &sort.rows {
            rows.push(vec![
                sort.respondent_id.clone(),
                row.category.clone(),
                results.config.label(row.card).to_string(),
            ]);
        }
    }
    csvio::write(&rows)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no complete sorts remain")]
    NoCompleteSorts,
}

/// Keeps only complete sorts (every card assigned), preserving order.
pub fn filter_complete(results: &StudyResults) -> Result<StudyResults, ModelError> {
    let sorts: Vec<ParticipantSort> = results.sorts.iter().filter(|s| s.complete).cloned().collect();
    if sorts.is_empty() {
        return Err(ModelError::NoCompleteSorts);
    }
    Ok(StudyResults { config: results.config.clone(), sorts, provenance: results.provenance.clone() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScreeningViolation {
    TooFewParticipants { complete: usize, required: usize },
    TooFewUniqueCards { count: usize, required: usize },
    DuplicateCards { canonical: String },
}

impl fmt::Display for ScreeningViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScreeningViolation::TooFewParticipants { complete, required } => {
                write!(f, "at least {required} complete participants required, found {complete}")
            }
            ScreeningViolation::TooFewUniqueCards { count, required } => {
                write!(f, "at least {required} unique cards required, found {count}")
            }
            ScreeningViolation::DuplicateCards { canonical } => {
                write!(f, "duplicate card label `{canonical}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub pass: bool,
    pub violations: Vec<ScreeningViolation>,
}

/// Inclusion criteria: ≥ 10 complete participants, ≥ 10 unique cards, no
/// duplicate card labels. All violations are reported, not just the first.
pub fn screen_study(results: &StudyResults) -> ScreeningVerdict {
    let mut violations = Vec::new();
    let complete = results.sorts.iter().filter(|s| s.complete).count();
    if complete < 10 {
        violations.push(ScreeningViolation::TooFewParticipants { complete, required: 10 });
    }
    let mut unique: HashSet<String> = HashSet::new();
    for card in &results.config.cards {
        let canonical = canonicalize_label(&card.label);
        if !unique.insert(canonical.clone()) {
            violations.push(ScreeningViolation::DuplicateCards { canonical });
        }
    }
    if unique.len() < 10 {
        violations.push(ScreeningViolation::TooFewUniqueCards { count: unique.len(), required: 10 });
    }
    ScreeningVerdict { pass: violations.is_empty(), violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub card_count: usize,
    pub complete_participants: usize,
    pub mean_categories: f64,
    pub sd_categories: f64,
}

/// Descriptive statistics over complete sorts only. The SD is the sample
/// standard deviation (n − 1), 0 for a single observation.
pub fn summarize_study(results: &StudyResults) -> Result<StudySummary, ModelError> {
    let counts: Vec<f64> = results
        .sorts
        .iter()
        .filter(|s| s.complete)
        .map(|s| s.n_categories() as f64)
        .collect();
    if counts.is_empty() {
        return Err(ModelError::NoCompleteSorts);
    }
    Ok(StudySummary {
        card_count: results.config.n_cards(),
        complete_participants: counts.len(),
        mean_categories: mean(&counts),
        sd_categories: sample_sd(&counts),
    })
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// A single partition of all cards into named categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub categories: Vec<(String, Vec<CardId>)>,
}

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("category {index} has an empty name")]
    UnnamedCategory { index: usize },
    #[error("fewer than 2 non-empty categories")]
    TooFewCategories,
    #[error("card `{label}` appears in more than one category")]
    DuplicateCard { label: String },
    #[error("card `{label}` is missing from the clustering")]
    MissingCard { label: String },
}

impl Clustering {
    /// Builds a clustering and checks its invariants against the study's
    /// card set: disjoint categories covering every card, ≥ 2 non-empty
    /// named categories.
    pub fn new(
        categories: Vec<(String, Vec<CardId>)>,
        config: &StudyConfig,
    ) -> Result<Clustering, ClusteringError> {
        let clustering = Clustering::from_parts(categories);
        for (index, (name, _)) in clustering.categories.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(ClusteringError::UnnamedCategory { index });
            }
        }
        if clustering.categories.iter().filter(|(_, cards)| !cards.is_empty()).count() < 2 {
            return Err(ClusteringError::TooFewCategories);
        }
        let mut seen = HashSet::new();
        for (_, cards) in &clustering.categories {
            for &card in cards {
                if !seen.insert(card) {
                    return Err(ClusteringError::DuplicateCard { label: config.label(card).to_string() });
                }
            }
        }
        for card in &config.cards {
            if !seen.contains(&card.id) {
                return Err(ClusteringError::MissingCard { label: card.label.clone() });
            }
        }
        Ok(clustering)
    }

    /// Builds a clustering without checking invariants. Used for partial
    /// diagnostic output from failed validations.
    pub fn from_parts(categories: Vec<(String, Vec<CardId>)>) -> Clustering {
        Clustering { categories }
    }

    pub fn n_categories(&self) -> usize {
        self.categories.iter().filter(|(_, cards)| !cards.is_empty()).count()
    }

    pub fn cards(&self) -> Vec<CardId> {
        self.categories.iter().flat_map(|(_, cards)| cards.iter().copied()).collect()
    }

    /// Category index per card, indexed by card id. Cards missing from the
    /// clustering (possible only in unchecked partial results) map to
    /// `usize::MAX`.
    pub fn assignment_vec(&self, n_cards: usize) -> Vec<usize> {
        let mut assign = vec![usize::MAX; n_cards];
        for (k, (_, cards)) in self.categories.iter().enumerate() {
            for &card in cards {
                if card.0 < n_cards {
                    assign[card.0] = k;
                }
            }
        }
        assign
    }
}

#[derive(Debug, Error)]
pub enum ClusteringParseError {
    #[error("{0}")]
    Csv(#[from] CsvError),
    #[error("line {line}: expected header `categoryName,cardName`")]
    Header { line: usize },
    #[error("line {line}: expected 2 fields, got {got}")]
    WrongArity { line: usize, got: usize },
    #[error("line {line}: unknown card label `{label}`")]
    UnknownCard { line: usize, label: String },
    #[error("line {line}: card `{label}` already assigned")]
    DuplicateCard { line: usize, label: String },
    #[error("clustering file is empty")]
    Empty,
}

/// Parses a clustering CSV (`categoryName,cardName`) strictly: exact
/// canonical label matches, no duplicates. Categories keep first-appearance
/// order; cards keep row order.
pub fn parse_clustering(csv: &str, config: &StudyConfig) -> Result<Clustering, ClusteringParseError> {
    let records = csvio::parse(csv)?;
    let mut iter = records.into_iter();
    let header = iter.next().ok_or(ClusteringParseError::Empty)?;
    if header.fields != ["categoryName", "cardName"] {
        return Err(ClusteringParseError::Header { line: header.line });
    }
    let index = config.canonical_index();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<CardId>> = HashMap::new();
    let mut seen: HashSet<CardId> = HashSet::new();
    for rec in iter {
        if rec.fields.len() != 2 {
            return Err(ClusteringParseError::WrongArity { line: rec.line, got: rec.fields.len() });
        }
        let (category, label) = (&rec.fields[0], &rec.fields[1]);
        let card = *index
            .get(&canonicalize_label(label))
            .ok_or_else(|| ClusteringParseError::UnknownCard { line: rec.line, label: label.clone() })?;
        if !seen.insert(card) {
            return Err(ClusteringParseError::DuplicateCard { line: rec.line, label: label.clone() });
        }
        if !groups.contains_key(category) {
            order.push(category.clone());
        }
        groups.entry(category.clone()).or_default().push(card);
    }
    let categories = order
        .into_iter()
        .map(|name| {
            let cards = groups.remove(&name).unwrap_or_default();
            (name, cards)
        })
        .collect();
    Ok(Clustering::from_parts(categories))
}

/// Serializes a clustering canonically (`categoryName,cardName`).
pub fn serialize_clustering(clustering: &Clustering, config: &StudyConfig) -> String {
    let mut rows = vec![vec!["categoryName".to_string(), "cardName".to_string()]];
    for (name, cards) in &clustering.categories {
        for &card in cards {
            rows.push(vec![name.clone(), config.label(card).to_string()]);
        }
    }
    csvio::write(&rows)
}
