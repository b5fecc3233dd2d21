//! Lloyd's K-means with probabilistic farthest-point (k-means++) seeding
//! and a documented empty-cluster repair rule. Deterministic given seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAX_ITERATIONS: usize = 300;
const RELATIVE_WCSS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    pub assignments: Vec<usize>,
    pub wcss: f64,
    pub k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center index; ties go to the lowest center index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// k-means++: each next center is drawn with probability proportional to
/// the squared distance to the nearest already-chosen center.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                cumulative += w;
                if cumulative > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with a center; any choice works.
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centers.last().expect("just pushed"));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KmeansFit {
    let n = points.len();
    let dim = points[0].len();
    let mut centers = seed_centers(points, k, rng);
    let mut assignments = vec![0usize; n];
    let mut prev_wcss = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest(p, &centers);
        }

        // Empty-cluster repair: reseed each empty cluster at the point
        // farthest from its assigned center, taken from a cluster that can
        // spare a point.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut donor: Option<usize> = None;
            let mut donor_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if sizes[assignments[i]] < 2 {
                    continue;
                }
                let d = sq_dist(p, &centers[assignments[i]]);
                if d > donor_d {
                    donor_d = d;
                    donor = Some(i);
                }
            }
            if let Some(i) = donor {
                sizes[assignments[i]] -= 1;
                assignments[i] = empty;
                sizes[empty] += 1;
            }
        }

        for (c, center) in centers.iter_mut().enumerate() {
            if sizes[c] == 0 {
                continue; // unreachable when k ≤ n, kept for safety
            }
            center.iter_mut().for_each(|v| *v = 0.0);
            for (i, p) in points.iter().enumerate() {
                if assignments[i] == c {
                    for d in 0..dim {
                        center[d] += p[d];
                    }
                }
            }
            center.iter_mut().for_each(|v| *v /= sizes[c] as f64);
        }

        let wcss: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centers[a]))
            .sum();
        if prev_wcss.is_finite() {
            let scale = prev_wcss.max(f64::MIN_POSITIVE);
            if (prev_wcss - wcss).abs() / scale < RELATIVE_WCSS_TOLERANCE {
                prev_wcss = wcss;
                break;
            }
        }
        prev_wcss = wcss;
    }

    KmeansFit { assignments, wcss: prev_wcss, k }
}

/// Best of `restarts` independent runs by WCSS; ties keep the earlier run.
pub fn fit(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> KmeansFit {
    assert!(k >= 1 && k <= points.len(), "k out of range");
    assert!(restarts >= 1, "at least one restart required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KmeansFit> = None;
    for _ in 0..restarts {
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    best.expect("restarts >= 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: (f64, f64), offsets: &[(f64, f64)]) -> Vec<Vec<f64>> {
        offsets.iter().map(|(dx, dy)| vec![center.0 + dx, center.1 + dy]).collect()
    }

    #[test]
    fn k_equals_n_gives_zero_wcss() {
        let points = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
        let fit = fit(&points, 3, 10, 1);
        assert_eq!(fit.wcss, 0.0);
        let mut seen = fit.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn k_equals_one_gives_total_deviation() {
        let points = vec![vec![0.0], vec![2.0], vec![4.0]];
        let fit = fit(&points, 1, 5, 1);
        // Centroid 2.0; squared deviations 4 + 0 + 4.
        assert!((fit.wcss - 8.0).abs() < 1e-12);
        assert!(fit.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn separated_blobs_recovered_for_all_seeds() {
        let offsets = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1), (-0.1, -0.1)];
        let mut points = blob((0.0, 0.0), &offsets);
        points.extend(blob((50.0, 50.0), &offsets));
        for seed in 0..20 {
            let fit = fit(&points, 2, 10, seed);
            let first = fit.assignments[0];
            assert!(fit.assignments[..4].iter().all(|&a| a == first));
            assert!(fit.assignments[4..].iter().all(|&a| a != first));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let points: Vec<Vec<f64>> = (0..12).map(|i| vec![(i * 7 % 5) as f64, (i * 3 % 7) as f64]).collect();
        assert_eq!(fit(&points, 3, 10, 42), fit(&points, 3, 10, 42));
    }

    #[test]
    fn identical_points_do_not_loop_or_panic() {
        let points = vec![vec![1.0, 1.0]; 6];
        let fit = fit(&points, 3, 4, 9);
        assert_eq!(fit.wcss, 0.0);
    }
}
