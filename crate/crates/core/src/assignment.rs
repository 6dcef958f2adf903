//! Exact linear assignment (Hungarian algorithm with potentials).

use ndarray::{Array2, ArrayView2};

/// Minimum-cost assignment of rows to distinct columns.
///
/// Returns `assignment[row] = Some(col)`. When there are more rows than
/// columns, `cols` rows are matched and the rest get `None`.
pub fn min_cost_assignment(cost: ArrayView2<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let by_col = hungarian(cost.t());
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            out[r] = Some(c);
        }
        return out;
    }
    hungarian(cost).into_iter().map(Some).collect()
}

/// Maximum-weight assignment, same conventions as [`min_cost_assignment`].
pub fn max_weight_assignment(weight: ArrayView2<f64>) -> Vec<Option<usize>> {
    let neg: Array2<f64> = weight.mapv(|w| -w);
    min_cost_assignment(neg.view())
}

/// O(n^2 m) shortest augmenting path for `n <= m`; every row is matched.
fn hungarian(cost: ArrayView2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based, index 0 is a virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out = vec![0; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            out[matched_row[j] - 1] = j - 1;
        }
    }
    out
}
