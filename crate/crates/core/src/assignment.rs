//! Linear assignment between local speakers and centroids.
//!
//! `constrained_assign` finds the minimum-cost injective mapping from the
//! rows (local speakers) of a distance matrix to its columns (centroids).
//! When there are more rows than columns, the leftover rows are returned
//! unmatched (they become new speakers). Ties are resolved toward the
//! lexicographically smallest mapping, with "unmatched" ordered after any
//! column index, so results are reproducible across platforms.

/// Relative tolerance when comparing alternative assignment costs.
const COST_TOL: f64 = 1e-9;

/// Dense O(n^3) Hungarian solver on a square cost matrix.
/// Returns the matched column for each row.
fn hungarian_square(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
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
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum cost of matching the given rows to distinct columns of `dm`
/// (all rows matched when enough columns exist, otherwise `cols.len()` of
/// them; dummy slots cost zero). Cost is accumulated in row order.
fn min_completion_cost(dm: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len().max(cols.len());
    let mut cost = vec![vec![0.0; n]; n];
    for (ri, &r) in rows.iter().enumerate() {
        for (ci, &c) in cols.iter().enumerate() {
            cost[ri][ci] = dm[r][c];
        }
    }
    let matched = hungarian_square(&cost);
    let mut total = 0.0;
    for (ri, _) in rows.iter().enumerate() {
        if matched[ri] < cols.len() {
            total += cost[ri][matched[ri]];
        }
    }
    total
}

/// Closest-centroid mapping, possibly many-to-one. Ties break toward the
/// lowest column index. Used only for the ablation/demo path.
pub fn naive_assign(dm: &[Vec<f64>]) -> Vec<usize> {
    dm.iter()
        .map(|row| {
            let mut best = 0usize;
            for (j, &d) in row.iter().enumerate() {
                if d < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Minimum-cost injective mapping; `None` marks a row left without a
/// column (new speaker). Among cost-minimizing mappings, returns the
/// lexicographically smallest (columns ascending, `None` last).
pub fn constrained_assign(dm: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = dm.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = dm[0].len();
    if cols == 0 {
        return vec![None; rows];
    }

    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let optimal = min_completion_cost(dm, &all_rows, &all_cols);
    let tol = COST_TOL * (1.0 + optimal.abs());

    let unmatched_quota = rows.saturating_sub(cols);
    let mut mapping: Vec<Option<usize>> = Vec::with_capacity(rows);
    let mut available: Vec<usize> = all_cols;
    let mut unmatched_used = 0usize;
    let mut prefix_cost = 0.0f64;

    for r in 0..rows {
        let remaining: Vec<usize> = ((r + 1)..rows).collect();
        let mut chosen: Option<Option<usize>> = None;
        for (ai, &c) in available.iter().enumerate() {
            let mut rest = available.clone();
            rest.remove(ai);
            let total =
                prefix_cost + dm[r][c] + min_completion_cost(dm, &remaining, &rest);
            if total <= optimal + tol {
                chosen = Some(Some(c));
                break;
            }
        }
        if chosen.is_none() && unmatched_used < unmatched_quota {
            // leaving this row unmatched must still reach the optimum
            let total = prefix_cost + min_completion_cost(dm, &remaining, &available);
            if total <= optimal + tol {
                chosen = Some(None);
            }
        }
        let pick = chosen.expect("assignment refinement lost the optimum");
        match pick {
            Some(c) => {
                prefix_cost += dm[r][c];
                available.retain(|&x| x != c);
            }
            None => unmatched_used += 1,
        }
        mapping.push(pick);
    }
    mapping
}

/// Total cost of a mapping over `dm`, accumulated in row order.
pub fn mapping_cost(dm: &[Vec<f64>], mapping: &[Option<usize>]) -> f64 {
    mapping
        .iter()
        .enumerate()
        .filter_map(|(r, m)| m.map(|c| dm[r][c]))
        .sum()
}
