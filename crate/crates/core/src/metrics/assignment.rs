//! Hungarian algorithm for the linear assignment problem.
//!
//! Dense O(n^3) shortest-augmenting-path formulation with row/column
//! potentials, over integer weights.

/// Maximum-weight perfect matching on a square matrix.
///
/// Returns `(row_to_col, total_weight)`.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let n = weights.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    assert!(
        weights.iter().all(|r| r.len() == n),
        "weight matrix must be square"
    );
    let top = weights.iter().flatten().copied().max().unwrap_or(0);
    let costs: Vec<Vec<i64>> = weights
        .iter()
        .map(|row| row.iter().map(|&w| top - w).collect())
        .collect();
    let row_to_col = min_cost_assignment(&costs);
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(r, &c)| weights[r][c])
        .sum();
    (row_to_col, total)
}

/// Minimum-cost perfect matching on a square matrix; returns `row_to_col`.
pub fn min_cost_assignment(costs: &[Vec<i64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = i64::MAX / 4;
    // 1-based; index 0 is the virtual start column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}
