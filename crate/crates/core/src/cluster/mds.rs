//! Classical (Torgerson) multidimensional scaling via double centering.

use nalgebra::{DMatrix, SymmetricEigen};

/// Embeds an `n×n` symmetric distance matrix into `d` dimensions.
///
/// B = −½·J·D²·J with J = I − 11ᵀ/n; coordinates are the top-`d`
/// eigenvectors of B scaled by √eigenvalue. Axes whose eigenvalue is not
/// positive are zero-filled. The per-axis sign is fixed so the
/// largest-magnitude coordinate on each axis is positive, making the
/// embedding fully deterministic.
pub fn embed(dist: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let n = dist.len();
    assert!(d >= 1 && (n <= 1 || d <= n - 1), "dimension out of range");
    if n == 0 {
        return Vec::new();
    }
    let sq = DMatrix::from_fn(n, n, |i, j| {
        let v = dist[i][j];
        v * v
    });
    // Double centering: b[i][j] = −½ (sq[i][j] − row_mean − col_mean + grand_mean).
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| sq.column(j).sum() / n as f64).collect();
    let grand_mean = sq.sum() / (n * n) as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - col_mean[j] + grand_mean));

    let eigen = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let mut coords = vec![vec![0.0; d]; n];
    for (axis, &e) in order.iter().take(d).enumerate() {
        let lambda = eigen.eigenvalues[e];
        if lambda <= 0.0 {
            continue; // zero-filled axis
        }
        let scale = lambda.sqrt();
        let col = eigen.eigenvectors.column(e);
        // Sign convention: the entry with the largest magnitude is positive.
        let mut anchor = 0usize;
        for i in 1..n {
            if col[i].abs() > col[anchor].abs() {
                anchor = i;
            }
        }
        let sign = if col[anchor] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][axis] = sign * scale * col[i];
        }
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise(coords: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = coords.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        coords[i]
                            .iter()
                            .zip(&coords[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn zero_distances_embed_at_origin() {
        let coords = embed(&vec![vec![0.0; 4]; 4], 2);
        for row in coords {
            assert!(row.iter().all(|c| c.abs() < 1e-9));
        }
    }

    #[test]
    fn two_points_recover_their_distance() {
        let dist = vec![vec![0.0, 100.0], vec![100.0, 0.0]];
        let coords = embed(&dist, 1);
        assert!(((coords[0][0] - coords[1][0]).abs() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn euclidean_configuration_is_recovered() {
        // Points constructed in the plane; their distance matrix must embed
        // back with identical pairwise distances.
        let pts: [(f64, f64); 5] = [(0.0, 0.0), (3.0, 0.0), (0.0, 4.0), (7.0, 2.0), (-1.0, -5.0)];
        let n = pts.len();
        let dist: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let dx = pts[i].0 - pts[j].0;
                        let dy = pts[i].1 - pts[j].1;
                        (dx * dx + dy * dy).sqrt()
                    })
                    .collect()
            })
            .collect();
        let coords = embed(&dist, 2);
        let rec = pairwise(&coords);
        for i in 0..n {
            for j in 0..n {
                assert!((rec[i][j] - dist[i][j]).abs() < 1e-6, "pair {i},{j}");
            }
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let dist = vec![
            vec![0.0, 10.0, 60.0],
            vec![10.0, 0.0, 50.0],
            vec![60.0, 50.0, 0.0],
        ];
        let a = embed(&dist, 2);
        let b = embed(&dist, 2);
        assert_eq!(a, b);
        let max0 = a.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
        let min0 = a.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
        assert!(max0.abs() >= min0.abs());
    }

    #[test]
    fn degenerate_planted_blobs_stay_separated_in_2d() {
        // 20 cards in 5 unanimous categories: within-category distance 0,
        // across 100. The positive eigenvalue is 4-fold degenerate, so the
        // 2-d projection must still keep all five groups at distinct
        // locations for downstream clustering to recover them.
        let n = 20;
        let cat = |i: usize| i / 4;
        let dist: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if cat(i) == cat(j) { 0.0 } else { 100.0 }).collect())
            .collect();
        let coords = embed(&dist, 2);
        let mut centers: Vec<(f64, f64)> = Vec::new();
        for c in 0..5 {
            let base = &coords[c * 4];
            for m in 1..4 {
                let p = &coords[c * 4 + m];
                assert!(
                    (p[0] - base[0]).abs() < 1e-6 && (p[1] - base[1]).abs() < 1e-6,
                    "blob {c} not coincident"
                );
            }
            centers.push((base[0], base[1]));
        }
        eprintln!("blob centers in 2d: {centers:?}");
        for a in 0..5 {
            for b in (a + 1)..5 {
                let d = ((centers[a].0 - centers[b].0).powi(2) + (centers[a].1 - centers[b].1).powi(2)).sqrt();
                assert!(d > 1.0, "blobs {a} and {b} collapsed: {centers:?}");
            }
        }
    }
}
