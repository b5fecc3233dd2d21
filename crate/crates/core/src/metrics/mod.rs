//! Agreement metrics between two clusterings (NMI, ARI, edit distance,
//! category counts) and between two distance matrices (Mantel test).

mod assignment;
mod mantel;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CardId, Clustering};

pub use mantel::{mantel, MantelResult, DEFAULT_PERMUTATIONS, MIN_PERMUTATIONS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("clusterings partition different card sets")]
    CardSetMismatch,
    #[error("distance matrices have different card axes")]
    AxisMismatch,
    #[error("a Mantel test needs at least 4 cards, got {0}")]
    TooFewCards(usize),
    #[error("a Mantel test needs at least {MIN_PERMUTATIONS} permutations, got {0}")]
    TooFewPermutations(usize),
    #[error("upper triangle is constant; Mantel r is undefined")]
    ZeroVariance,
}

/// Co-membership counts between the non-empty categories of two
/// clusterings over the same card set: the shared substrate for NMI,
/// ARI, and edit distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn build(a: &Clustering, b: &Clustering) -> Result<ContingencyTable, MetricsError> {
        let index_of = |c: &Clustering| {
            let mut map: HashMap<CardId, usize> = HashMap::new();
            let mut rows = 0usize;
            for (_, cards) in &c.categories {
                if cards.is_empty() {
                    continue;
                }
                for &card in cards {
                    map.insert(card, rows);
                }
                rows += 1;
            }
            (map, rows)
        };
        let (map_a, rows) = index_of(a);
        let (map_b, cols) = index_of(b);
        if map_a.len() != map_b.len() || map_a.keys().any(|c| !map_b.contains_key(c)) {
            return Err(MetricsError::CardSetMismatch);
        }
        let mut counts = vec![vec![0usize; cols]; rows];
        for (card, &i) in &map_a {
            counts[i][map_b[card]] += 1;
        }
        let row_sums: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<usize> =
            (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable { counts, row_sums, col_sums, n: map_a.len() })
    }
}

fn entropy(marginals: &[usize], n: usize) -> f64 {
    let n = n as f64;
    marginals
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| {
            let p = m as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization:
/// I(A;B) / ((H(A)+H(B))/2), natural-log entropies. Two zero-entropy
/// partitions are identical → 1.0; exactly one → 0.0.
pub fn nmi(a: &Clustering, b: &Clustering) -> Result<f64, MetricsError> {
    let t = ContingencyTable::build(a, b)?;
    let h_a = entropy(&t.row_sums, t.n);
    let h_b = entropy(&t.col_sums, t.n);
    if h_a == 0.0 && h_b == 0.0 {
        return Ok(1.0);
    }
    if h_a == 0.0 || h_b == 0.0 {
        return Ok(0.0);
    }
    let n = t.n as f64;
    let mut information = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                information +=
                    c / n * ((n * c) / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((information / ((h_a + h_b) / 2.0)).clamp(0.0, 1.0))
}

fn comb2(x: usize) -> i64 {
    let x = x as i64;
    x * (x - 1) / 2
}

/// Same partition structure (category names irrelevant).
fn same_partition(a: &Clustering, b: &Clustering) -> bool {
    let canonical = |c: &Clustering| {
        let mut groups: Vec<Vec<CardId>> = c
            .categories
            .iter()
            .filter(|(_, cards)| !cards.is_empty())
            .map(|(_, cards)| {
                let mut sorted = cards.clone();
                sorted.sort_unstable();
                sorted
            })
            .collect();
        groups.sort();
        groups
    };
    canonical(a) == canonical(b)
}

/// Adjusted Rand index via pair counts. In the degenerate case where the
/// maximum index equals its chance expectation (both partitions trivial),
/// returns 1.0 for identical partitions and 0.0 otherwise.
pub fn ari(a: &Clustering, b: &Clustering) -> Result<f64, MetricsError> {
    let t = ContingencyTable::build(a, b)?;
    let index: i64 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: i64 = t.row_sums.iter().map(|&m| comb2(m)).sum();
    let sum_b: i64 = t.col_sums.iter().map(|&m| comb2(m)).sum();
    let total = comb2(t.n);
    if total == 0 {
        return Ok(1.0);
    }
    let expected = sum_a as f64 * sum_b as f64 / total as f64;
    let max_index = (sum_a + sum_b) as f64 / 2.0;
    if (max_index - expected).abs() < 1e-12 {
        return Ok(if same_partition(a, b) { 1.0 } else { 0.0 });
    }
    Ok((index as f64 - expected) / (max_index - expected))
}

/// Minimum number of card moves transforming one sort into the other:
/// n minus a maximum-weight matching of category intersections (the
/// smaller side implicitly padded with empty categories).
pub fn edit_distance(a: &Clustering, b: &Clustering) -> Result<usize, MetricsError> {
    let t = ContingencyTable::build(a, b)?;
    let k = t.counts.len().max(t.col_sums.len());
    if k == 0 {
        return Ok(0);
    }
    let mut w = vec![vec![0i64; k]; k];
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            w[i][j] = c as i64;
        }
    }
    let (matched, _) = assignment::max_weight(&w);
    Ok(t.n - matched as usize)
}

/// Non-empty category counts of both clusterings and their signed
/// difference |A| − |B|.
pub fn compare_category_counts(a: &Clustering, b: &Clustering) -> (usize, usize, i64) {
    let count = |c: &Clustering| c.categories.iter().filter(|(_, cards)| !cards.is_empty()).count();
    let ka = count(a);
    let kb = count(b);
    (ka, kb, ka as i64 - kb as i64)
}

/// Agreement between two result sets, flat-serializable for cross-run
/// aggregation. Mantel fields are absent when no matrix-level comparison
/// was performed (or r was undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub nmi: f64,
    pub ari: f64,
    pub edit_distance: usize,
    pub n_categories_a: usize,
    pub n_categories_b: usize,
    pub mantel_r: Option<f64>,
    pub mantel_p: Option<f64>,
}

impl AgreementReport {
    pub const CSV_HEADER: &'static str =
        "nmi,ari,edit_distance,n_categories_a,n_categories_b,mantel_r,mantel_p";

    /// Clustering-level agreement; Mantel fields left empty.
    pub fn compare(a: &Clustering, b: &Clustering) -> Result<AgreementReport, MetricsError> {
        let (n_categories_a, n_categories_b, _) = compare_category_counts(a, b);
        Ok(AgreementReport {
            nmi: nmi(a, b)?,
            ari: ari(a, b)?,
            edit_distance: edit_distance(a, b)?,
            n_categories_a,
            n_categories_b,
            mantel_r: None,
            mantel_p: None,
        })
    }

    pub fn with_mantel(mut self, result: MantelResult) -> AgreementReport {
        self.mantel_r = Some(result.r);
        self.mantel_p = Some(result.p);
        self
    }

    /// Fixed-order CSV row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.nmi,
            self.ari,
            self.edit_distance,
            self.n_categories_a,
            self.n_categories_b,
            opt(self.mantel_r),
            opt(self.mantel_p),
        )
    }
}
