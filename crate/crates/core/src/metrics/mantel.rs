//! Mantel permutation test between two distance matrices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::simmatrix::DistanceMatrix;

use super::MetricsError;

pub const DEFAULT_PERMUTATIONS: usize = 9999;
pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub r: f64,
    pub p: f64,
    pub permutations: usize,
}

/// Pearson correlation over the upper triangles (i < j), with a
/// two-sided permutation p-value: one matrix's rows and columns are
/// jointly permuted `permutations` times and
/// p = (#{|r_perm| ≥ |r_obs|} + 1) / (permutations + 1).
/// Per-permutation RNG seeds derive from the master seed by counter, so
/// the result does not depend on evaluation order.
pub fn mantel(
    d1: &DistanceMatrix,
    d2: &DistanceMatrix,
    permutations: usize,
    master_seed: u64,
) -> Result<MantelResult, MetricsError> {
    if d1.cards != d2.cards {
        return Err(MetricsError::AxisMismatch);
    }
    let n = d1.n();
    if n < 4 {
        return Err(MetricsError::TooFewCards(n));
    }
    if permutations < MIN_PERMUTATIONS {
        return Err(MetricsError::TooFewPermutations(permutations));
    }
    // Exact rational variance check: a constant triangle has no defined r.
    for m in [d1, d2] {
        let first = m.values[0][1];
        if (0..n).all(|i| ((i + 1)..n).all(|j| m.values[i][j] == first)) {
            return Err(MetricsError::ZeroVariance);
        }
    }

    let x = upper_triangle(d1);
    let y_full = d2.to_f64();
    let identity: Vec<usize> = (0..n).collect();
    let y: Vec<f64> = triangle_of(&y_full, &identity);
    let r_obs = pearson(&x, &y);

    let mut hits = 0usize;
    let mut perm = identity.clone();
    for p_index in 0..permutations {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(master_seed, &["perm", &p_index.to_string()]));
        perm.copy_from_slice(&identity);
        perm.shuffle(&mut rng);
        let y_perm = triangle_of(&y_full, &perm);
        let r_perm = pearson(&x, &y_perm);
        if r_perm.abs() >= r_obs.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok(MantelResult {
        r: r_obs,
        p: (hits + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

fn upper_triangle(m: &DistanceMatrix) -> Vec<f64> {
    let n = m.n();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(m.values[i][j].to_f64());
        }
    }
    out
}

/// Upper triangle of `values` under the row/column relabeling `perm`.
fn triangle_of(values: &[Vec<f64>], perm: &[usize]) -> Vec<f64> {
    let n = perm.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(values[perm[i]][perm[j]]);
        }
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // One sqrt over the product keeps r at exactly ±1 for (anti-)identical
    // inputs: sxy == sxx == syy bit-for-bit, and sqrt(fl(a·a)) == a.
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CardId;
    use crate::percent::Percent;
    use rand::{Rng, SeedableRng};

    fn random_distance(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![vec![Percent::ZERO; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = Percent::from_count(rng.random_range(0..=20), 20);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        DistanceMatrix::new((0..n).map(CardId).collect(), values).unwrap()
    }

    #[test]
    fn self_correlation_is_perfect() {
        let d = random_distance(10, 7);
        let result = mantel(&d, &d, 99, 11).unwrap();
        assert!((result.r - 1.0).abs() < 1e-12);
        assert!((result.p - 1.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn anti_structure_is_perfectly_anticorrelated() {
        let d = random_distance(8, 3);
        let n = d.n();
        let mut values = vec![vec![Percent::ZERO; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i][j] = d.values[i][j].complement();
                }
            }
        }
        let anti = DistanceMatrix::new(d.cards.clone(), values).unwrap();
        let result = mantel(&d, &anti, 99, 5).unwrap();
        assert!((result.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn r_is_invariant_under_joint_axis_reordering() {
        let d1 = random_distance(9, 21);
        let d2 = random_distance(9, 22);
        let base = mantel(&d1, &d2, 99, 1).unwrap();
        let perm = [3usize, 1, 4, 0, 8, 6, 2, 7, 5];
        let reorder = |m: &DistanceMatrix| {
            let n = m.n();
            let mut values = vec![vec![Percent::ZERO; n]; n];
            for i in 0..n {
                for j in 0..n {
                    values[i][j] = m.values[perm[i]][perm[j]];
                }
            }
            DistanceMatrix::new(m.cards.clone(), values).unwrap()
        };
        let moved = mantel(&reorder(&d1), &reorder(&d2), 99, 1).unwrap();
        assert!((base.r - moved.r).abs() < 1e-12);
    }

    #[test]
    fn constant_triangle_is_zero_variance() {
        let n = 5;
        let mut values = vec![vec![Percent::ZERO; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i][j] = Percent::HUNDRED;
                }
            }
        }
        let flat = DistanceMatrix::new((0..n).map(CardId).collect(), values).unwrap();
        let other = random_distance(n, 2);
        assert_eq!(mantel(&flat, &other, 99, 1), Err(MetricsError::ZeroVariance));
        assert_eq!(mantel(&other, &flat, 99, 1), Err(MetricsError::ZeroVariance));
    }

    #[test]
    fn preconditions_are_enforced() {
        let d = random_distance(3, 1);
        assert_eq!(mantel(&d, &d, 99, 1), Err(MetricsError::TooFewCards(3)));
        let d = random_distance(5, 1);
        assert_eq!(mantel(&d, &d, 50, 1), Err(MetricsError::TooFewPermutations(50)));
        let mut other = random_distance(5, 2);
        other.cards.reverse();
        assert_eq!(mantel(&d, &other, 99, 1), Err(MetricsError::AxisMismatch));
    }

    #[test]
    fn null_p_values_are_not_inflated() {
        // Independent matrices should rarely produce small p-values.
        let mut low = 0;
        let trials = 200;
        for trial in 0..trials {
            let d1 = random_distance(8, 1000 + trial);
            let d2 = random_distance(8, 2000 + trial);
            let result = mantel(&d1, &d2, 99, trial).unwrap();
            if result.p <= 0.05 {
                low += 1;
            }
        }
        // ~5% expected; allow ample head-room against seed luck.
        assert!(low <= trials / 10, "{low} of {trials} null trials had p <= 0.05");
    }
}
