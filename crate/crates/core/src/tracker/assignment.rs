//! Optimal bipartite assignment (Hungarian / Kuhn–Munkres with potentials).

/// Minimum-cost assignment of every row of a rectangular cost matrix with
/// `rows <= cols`. Returns the column chosen for each row.
fn hungarian_rows(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let m = cols;
    debug_assert!(n <= m);
    // 1-based potentials and matching, column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
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
            for j in 0..=m {
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
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum-total-score matching on a rectangular score matrix; every entry of
/// the smaller side is matched. Returns `(row, col)` pairs sorted by row.
pub fn max_weight_matching(score: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = score.len();
    let cols = score.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows <= cols {
        let cost: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|s| -s).collect()).collect();
        hungarian_rows(&cost, cols).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| -score[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> =
            hungarian_rows(&cost, rows).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        pairs
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Maximum-total-affinity assignment of tracks (rows) to detections
/// (columns). Solved as a Hungarian problem on `1 − affinity`; pairs whose
/// affinity falls below `min_affinity` are returned as unmatched.
pub fn assign(affinity: &[Vec<f64>], n_detections: usize, min_affinity: f64) -> Assignment {
    let n_tracks = affinity.len();
    let mut out = Assignment::default();
    let mut track_used = vec![false; n_tracks];
    let mut det_used = vec![false; n_detections];
    if n_detections > 0 {
        // 1 − a is an affine map of a, so maximizing affinity is the same problem.
        for (t, d) in max_weight_matching(affinity) {
            if affinity[t][d] >= min_affinity {
                out.matches.push((t, d));
                track_used[t] = true;
                det_used[d] = true;
            }
        }
    }
    out.unmatched_tracks = (0..n_tracks).filter(|&t| !track_used[t]).collect();
    out.unmatched_detections = (0..n_detections).filter(|&d| !det_used[d]).collect();
    out
}
