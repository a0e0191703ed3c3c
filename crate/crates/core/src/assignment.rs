//! Dense linear assignment (Hungarian algorithm with potentials), O(n³).

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Minimum-cost assignment on a square cost matrix.
/// Returns `assign` with `assign[row] = column`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j] = row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Permutation maximizing `trace(score · P)`, i.e. `Σ_j score[j, σ(j)]`.
///
/// Returned as `σ` with `σ[j]` the column of `score` assigned to row `j`.
/// Maximization is reduced to minimization of `max(score) − score`.
pub fn solve_assignment(score: &DMatrix<f64>) -> Result<Vec<usize>> {
    if !score.is_square() {
        return invalid(format!("assignment scores must be square, got {:?}", score.shape()));
    }
    if score.iter().any(|x| !x.is_finite()) {
        return invalid("assignment scores contain non-finite entries");
    }
    if score.is_empty() {
        return Ok(Vec::new());
    }
    let max = score.max();
    let cost = score.map(|s| max - s);
    Ok(min_cost_assignment(&cost))
}

/// `Σ_j score[j, σ(j)]`, summed in row order.
pub fn assignment_value(score: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(j, &c)| score[(j, c)]).sum()
}

/// Permutation matrix `P` with `P[σ(j), j] = 1`, so that `M P` reorders the
/// columns of `M` as `M[:, σ(j)]`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut m = DMatrix::zeros(n, n);
    for (j, &s) in perm.iter().enumerate() {
        m[(s, j)] = 1.0;
    }
    m
}
