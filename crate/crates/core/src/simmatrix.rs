//! Card×card similarity matrices (co-categorization percentages) and their
//! complements. Values are exact rationals; symmetry checks and the
//! complement involution are therefore exact, and the CSV rendering
//! round-trips byte-identically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, CsvError};
use crate::model::{CardId, Clustering, StudyConfig, StudyResults};
use crate::percent::Percent;
use crate::validate::canonicalize_label;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("matrix is not square: {rows} rows × {cols} columns")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("diagonal entry ({i}, {i}) is not zero")]
    NonZeroDiagonal { i: usize },
    #[error("clustering does not cover the requested card set")]
    CardSetMismatch,
    #[error("no complete sorts to aggregate")]
    NoCompleteSorts,
}

/// Symmetric card×card matrix of co-categorization percentages with a
/// zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub cards: Vec<CardId>,
    pub values: Vec<Vec<Percent>>,
}

/// Dissimilarity matrix (100 − similarity off-diagonal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub cards: Vec<CardId>,
    pub values: Vec<Vec<Percent>>,
}

fn check_square_symmetric_zero_diag(values: &[Vec<Percent>]) -> Result<(), MatrixError> {
    let n = values.len();
    for (i, row) in values.iter().enumerate() {
        if row.len() != n {
            return Err(MatrixError::NotSquare { rows: n, cols: row.len() });
        }
        if !values[i][i].is_zero() {
            return Err(MatrixError::NonZeroDiagonal { i });
        }
        for j in 0..i {
            if values[i][j] != values[j][i] {
                return Err(MatrixError::NotSymmetric { i, j });
            }
        }
    }
    Ok(())
}

impl SimilarityMatrix {
    pub fn new(cards: Vec<CardId>, values: Vec<Vec<Percent>>) -> Result<SimilarityMatrix, MatrixError> {
        assert_eq!(cards.len(), values.len(), "axis and value sizes must agree");
        check_square_symmetric_zero_diag(&values)?;
        Ok(SimilarityMatrix { cards, values })
    }

    pub fn n(&self) -> usize {
        self.cards.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Percent {
        self.values[i][j]
    }
}

impl DistanceMatrix {
    pub fn new(cards: Vec<CardId>, values: Vec<Vec<Percent>>) -> Result<DistanceMatrix, MatrixError> {
        assert_eq!(cards.len(), values.len(), "axis and value sizes must agree");
        check_square_symmetric_zero_diag(&values)?;
        Ok(DistanceMatrix { cards, values })
    }

    pub fn n(&self) -> usize {
        self.cards.len()
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|row| row.iter().map(Percent::to_f64).collect()).collect()
    }
}

/// Builds the similarity matrix over complete sorts:
/// values[i][j] = 100 × (sorts placing i and j together) / (sorts).
/// Axis order is the study's card order.
pub fn build_similarity(results: &StudyResults) -> Result<SimilarityMatrix, MatrixError> {
    let complete: Vec<_> = results.sorts.iter().filter(|s| s.complete).collect();
    if complete.is_empty() {
        return Err(MatrixError::NoCompleteSorts);
    }
    let n = results.config.n_cards();
    let total = complete.len();
    let mut together = vec![vec![0usize; n]; n];
    for sort in &complete {
        // Category index per card for this sort.
        let mut cat = vec![usize::MAX; n];
        for (c, (_, cards)) in sort.partition().into_iter().enumerate() {
            for card in cards {
                cat[card.0] = c;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if cat[i] != usize::MAX && cat[i] == cat[j] {
                    together[i][j] += 1;
                }
            }
        }
    }
    let values: Vec<Vec<Percent>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Percent::ZERO
                    } else {
                        let count = if i < j { together[i][j] } else { together[j][i] };
                        Percent::from_count(count, total)
                    }
                })
                .collect()
        })
        .collect();
    SimilarityMatrix::new(results.config.card_ids(), values)
}

/// Reverse-constructed matrix from a single clustering: 100 when two cards
/// share a category, 0 otherwise (inherently sparse).
pub fn clustering_to_matrix(
    clustering: &Clustering,
    cards: &[CardId],
) -> Result<SimilarityMatrix, MatrixError> {
    let n = cards.len();
    let max_id = cards.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
    let mut cat = vec![usize::MAX; max_id];
    let mut covered = 0usize;
    for (c, (_, members)) in clustering.categories.iter().enumerate() {
        for card in members {
            if card.0 >= max_id || cat[card.0] != usize::MAX {
                return Err(MatrixError::CardSetMismatch);
            }
            cat[card.0] = c;
            covered += 1;
        }
    }
    if covered != n || cards.iter().any(|c| cat[c.0] == usize::MAX) {
        return Err(MatrixError::CardSetMismatch);
    }
    let values: Vec<Vec<Percent>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i != j && cat[cards[i].0] == cat[cards[j].0] {
                        Percent::HUNDRED
                    } else {
                        Percent::ZERO
                    }
                })
                .collect()
        })
        .collect();
    SimilarityMatrix::new(cards.to_vec(), values)
}

/// Complement: off-diagonal d = 100 − s, diagonal stays 0.
pub fn complement(matrix: &SimilarityMatrix) -> DistanceMatrix {
    let n = matrix.n();
    let values: Vec<Vec<Percent>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Percent::ZERO } else { matrix.values[i][j].complement() })
                .collect()
        })
        .collect();
    DistanceMatrix { cards: matrix.cards.clone(), values }
}

#[derive(Debug, Error)]
pub enum MatrixParseError {
    #[error("{0}")]
    Csv(#[from] CsvError),
    #[error("matrix file is empty")]
    Empty,
    #[error("line {line}: header must start with an empty cell")]
    HeaderCorner { line: usize },
    #[error("line {line}: unknown card label `{label}`")]
    UnknownCard { line: usize, label: String },
    #[error("line {line}: duplicate card label `{label}`")]
    DuplicateCard { line: usize, label: String },
    #[error("axis does not cover every study card exactly once")]
    AxisMismatch,
    #[error("line {line}: row label `{label}` does not match the column order")]
    RowOrder { line: usize, label: String },
    #[error("line {line}: expected {expected} fields, got {got}")]
    WrongArity { line: usize, expected: usize, got: usize },
    #[error("line {line}: invalid percentage `{value}`")]
    BadValue { line: usize, value: String },
    #[error("{0}")]
    Structure(#[from] MatrixError),
}

/// Parses a labeled matrix CSV: first row and column carry card labels,
/// body is symmetric with a zero diagonal. Strict variant for trusted
/// files; LLM output goes through the tolerant validation path.
pub fn parse_matrix(csv: &str, config: &StudyConfig) -> Result<SimilarityMatrix, MatrixParseError> {
    let records = csvio::parse(csv)?;
    let mut iter = records.into_iter();
    let header = iter.next().ok_or(MatrixParseError::Empty)?;
    if header.fields.first().map(String::as_str) != Some("") {
        return Err(MatrixParseError::HeaderCorner { line: header.line });
    }
    let index = config.canonical_index();
    let mut cards: Vec<CardId> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for label in &header.fields[1..] {
        let id = *index
            .get(&canonicalize_label(label))
            .ok_or_else(|| MatrixParseError::UnknownCard { line: header.line, label: label.clone() })?;
        if !seen.insert(id) {
            return Err(MatrixParseError::DuplicateCard { line: header.line, label: label.clone() });
        }
        cards.push(id);
    }
    if cards.len() != config.n_cards() {
        return Err(MatrixParseError::AxisMismatch);
    }
    let n = cards.len();
    let mut values: Vec<Vec<Percent>> = Vec::with_capacity(n);
    for (i, rec) in iter.enumerate() {
        if rec.fields.len() != n + 1 {
            return Err(MatrixParseError::WrongArity { line: rec.line, expected: n + 1, got: rec.fields.len() });
        }
        let row_label = &rec.fields[0];
        let row_id = *index
            .get(&canonicalize_label(row_label))
            .ok_or_else(|| MatrixParseError::UnknownCard { line: rec.line, label: row_label.clone() })?;
        if i >= n || row_id != cards[i] {
            return Err(MatrixParseError::RowOrder { line: rec.line, label: row_label.clone() });
        }
        let mut row = Vec::with_capacity(n);
        for field in &rec.fields[1..] {
            let value: Percent = field
                .parse()
                .map_err(|_| MatrixParseError::BadValue { line: rec.line, value: field.clone() })?;
            row.push(value);
        }
        values.push(row);
    }
    if values.len() != n {
        return Err(MatrixParseError::AxisMismatch);
    }
    Ok(SimilarityMatrix::new(cards, values)?)
}

/// Serializes a matrix canonically; parse ∘ serialize is byte-identical.
pub fn serialize_matrix(matrix: &SimilarityMatrix, config: &StudyConfig) -> String {
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(matrix.n() + 1);
    let mut header = vec![String::new()];
    header.extend(matrix.cards.iter().map(|&c| config.label(c).to_string()));
    rows.push(header);
    for (i, &card) in matrix.cards.iter().enumerate() {
        let mut row = vec![config.label(card).to_string()];
        row.extend(matrix.values[i].iter().map(Percent::to_string));
        rows.push(row);
    }
    csvio::write(&rows)
}

/// Serializes a distance matrix with the same layout.
pub fn serialize_distance_matrix(matrix: &DistanceMatrix, config: &StudyConfig) -> String {
    let view = SimilarityMatrix { cards: matrix.cards.clone(), values: matrix.values.clone() };
    serialize_matrix(&view, config)
}
