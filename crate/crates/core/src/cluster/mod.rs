//! Clustering stage of the evaluation pipeline: embed cards from a
//! distance matrix (classical MDS), scan K with K-means, select K at the
//! knee of the WCSS curve, and emit a labeled clustering.

pub mod kmeans;
pub mod knee;
pub mod mds;
pub mod spline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CardId, Clustering};
use crate::seed;
use crate::simmatrix::DistanceMatrix;

pub use kmeans::KmeansFit;
pub use knee::{KneeError, KneeResult};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("embedding dimensionality {d} out of range for {n} cards")]
    DimensionOutOfRange { d: usize, n: usize },
    #[error("k = {k} out of range for {n} cards")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid k range [{k_min}, {k_max}] for {n} cards")]
    BadKRange { k_min: usize, k_max: usize, n: usize },
    #[error("clustering needs at least 4 cards, got {0}")]
    TooFewCards(usize),
    #[error("{0}")]
    Knee(#[from] KneeError),
}

/// Cards embedded in d-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub cards: Vec<CardId>,
    pub coords: Vec<Vec<f64>>,
    pub d: usize,
}

/// WCSS as a function of K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcssCurve {
    pub ks: Vec<usize>,
    pub wcss: Vec<f64>,
}

/// A clustering with synthetic names cluster-1…cluster-K.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClustering {
    pub clustering: Clustering,
    pub k: usize,
    pub wcss_at_k: f64,
}

/// Tunable knobs of the clustering stage; defaults follow the pipeline's
/// documented choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub dimensions: usize,
    pub k_min: usize,
    pub k_max_cap: usize,
    pub restarts: usize,
}

impl Default for ClusterParams {
    fn default() -> ClusterParams {
        ClusterParams { dimensions: 2, k_min: 2, k_max_cap: 15, restarts: 10 }
    }
}

/// Audit trail of an automatic K selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAudit {
    pub selected_k: usize,
    pub no_knee: bool,
    pub curvature_sign: i8,
    pub curve: WcssCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub labeled: LabeledClustering,
    pub audit: ClusterAudit,
}

/// Classical MDS embedding of a distance matrix into `d` dimensions.
pub fn mds_embed(dist: &DistanceMatrix, d: usize) -> Result<Embedding, ClusterError> {
    let n = dist.n();
    if d < 1 || d > n.saturating_sub(1) {
        return Err(ClusterError::DimensionOutOfRange { d, n });
    }
    let coords = mds::embed(&dist.to_f64(), d);
    Ok(Embedding { cards: dist.cards.clone(), coords, d })
}

/// Raw K-means fit (assignments + WCSS); allows k = 1 for curve scans.
pub fn kmeans_fit(
    embedding: &Embedding,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KmeansFit, ClusterError> {
    let n = embedding.cards.len();
    if k < 1 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    Ok(kmeans::fit(&embedding.coords, k, restarts, seed))
}

/// K-means as a labeled clustering (cluster-1…cluster-K, every cluster
/// non-empty). Requires k ≥ 2 so the result is a valid clustering.
pub fn kmeans_clustering(
    embedding: &Embedding,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<LabeledClustering, ClusterError> {
    let n = embedding.cards.len();
    if k < 2 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    let fit = kmeans::fit(&embedding.coords, k, restarts, seed);
    Ok(label_fit(embedding, &fit))
}

fn label_fit(embedding: &Embedding, fit: &KmeansFit) -> LabeledClustering {
    let mut categories: Vec<(String, Vec<CardId>)> =
        (0..fit.k).map(|c| (format!("cluster-{}", c + 1), Vec::new())).collect();
    for (i, &assignment) in fit.assignments.iter().enumerate() {
        categories[assignment].1.push(embedding.cards[i]);
    }
    LabeledClustering {
        clustering: Clustering::from_parts(categories),
        k: fit.k,
        wcss_at_k: fit.wcss,
    }
}

/// One K-means evaluation per K in [k_min, k_max], per-K seeds derived
/// from the master seed. WCSS is non-increasing in K for the optimum, so
/// any K whose value exceeds its predecessor's is retried with extra
/// restarts before being accepted.
pub fn wcss_curve(
    embedding: &Embedding,
    k_min: usize,
    k_max: usize,
    restarts: usize,
    master_seed: u64,
) -> Result<WcssCurve, ClusterError> {
    let n = embedding.cards.len();
    if k_min < 1 || k_min >= k_max || k_max > n {
        return Err(ClusterError::BadKRange { k_min, k_max, n });
    }
    let mut ks = Vec::with_capacity(k_max - k_min + 1);
    let mut wcss = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let k_str = k.to_string();
        let mut best = kmeans::fit(
            &embedding.coords,
            k,
            restarts,
            seed::derive(master_seed, &["wcss", &k_str]),
        )
        .wcss;
        let mut attempt = 0;
        while let Some(&prev) = wcss.last() {
            if best <= prev + 1e-9 || attempt >= 3 {
                break;
            }
            attempt += 1;
            let retry = kmeans::fit(
                &embedding.coords,
                k,
                restarts * 2_usize.pow(attempt),
                seed::derive(master_seed, &["wcss-retry", &k_str, &attempt.to_string()]),
            );
            best = best.min(retry.wcss);
        }
        ks.push(k);
        wcss.push(best);
    }
    // Snap numerically-perfect fits to exact zero so eigensolver dust
    // (~1e-28 on coincident points) cannot masquerade as a WCSS drop.
    let total = total_variance(&embedding.coords);
    for w in &mut wcss {
        if *w <= total * 1e-12 {
            *w = 0.0;
        }
    }
    Ok(WcssCurve { ks, wcss })
}

/// Sum of squared distances to the global centroid (WCSS at K = 1).
fn total_variance(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mut centroid = vec![0.0; d];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= points.len() as f64;
    }
    points
        .iter()
        .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Knee selection over a WCSS curve (see [`knee::knee_point`]).
pub fn knee_point(curve: &WcssCurve) -> Result<KneeResult, ClusterError> {
    Ok(knee::knee_point(&curve.ks, &curve.wcss)?)
}

/// Full clustering stage: MDS → WCSS curve over the configured K range →
/// knee selection → K-means at the selected K. The audit carries the
/// curve and the no-knee flag so degenerate inputs are visible, not
/// silently clustered.
pub fn cluster_cards(
    dist: &DistanceMatrix,
    master_seed: u64,
    params: &ClusterParams,
) -> Result<ClusterOutcome, ClusterError> {
    let n = dist.n();
    if n < 4 {
        return Err(ClusterError::TooFewCards(n));
    }
    let d = params.dimensions.min(n - 1);
    let embedding = mds_embed(dist, d)?;
    let k_max = params.k_max_cap.min(n - 1);
    let curve = wcss_curve(&embedding, params.k_min, k_max, params.restarts, master_seed)?;
    let knee = knee_point(&curve)?;
    let fit = kmeans::fit(
        &embedding.coords,
        knee.k,
        params.restarts,
        seed::derive(master_seed, &["final", &knee.k.to_string()]),
    );
    Ok(ClusterOutcome {
        labeled: label_fit(&embedding, &fit),
        audit: ClusterAudit {
            selected_k: knee.k,
            no_knee: knee.no_knee,
            curvature_sign: knee.curvature_sign,
            curve,
        },
    })
}
