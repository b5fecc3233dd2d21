//! Maximum-weight bipartite assignment (Hungarian method with
//! potentials, O(k³)) for the category-matching step of edit distance.

/// Maximum-weight perfect assignment on a square, non-negative matrix.
/// Returns the total matched weight and the column assigned to each row.
pub fn max_weight(w: &[Vec<i64>]) -> (i64, Vec<usize>) {
    let k = w.len();
    if k == 0 {
        return (0, Vec::new());
    }
    debug_assert!(w.iter().all(|row| row.len() == k));
    let max_entry = w.iter().flatten().copied().max().unwrap_or(0);
    let cost: Vec<Vec<i64>> = w
        .iter()
        .map(|row| row.iter().map(|&x| max_entry - x).collect())
        .collect();
    let row_to_col = min_cost(&cost);
    let total = row_to_col.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
    (total, row_to_col)
}

/// Minimum-cost perfect assignment on a square matrix via the classic
/// potentials formulation (1-indexed internally). Returns row → column.
fn min_cost(a: &[Vec<i64>]) -> Vec<usize> {
    let k = a.len();
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut matched_row = vec![0usize; k + 1]; // matched_row[j] = row in column j
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; k];
    for j in 1..=k {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    row_to_col
}
