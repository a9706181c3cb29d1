//! Minimum-cost rectangular assignment (Kuhn-Munkres with potentials).

/// Optimal assignment of every row to a distinct column.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Row potentials.
    pub u: Vec<f64>,
    /// Column potentials; `c[i][j] - u[i] - v[j] >= 0` at the optimum.
    pub v: Vec<f64>,
    pub total: f64,
}

impl Assignment {
    pub fn reduced_cost(&self, cost: &[Vec<f64>], row: usize, col: usize) -> f64 {
        cost[row][col] - self.u[row] - self.v[col]
    }
}

/// Solves `min sum cost[i][row_to_col[i]]` for `rows <= cols`.
///
/// Runs in `O(rows^2 * cols)`. Panics when the matrix has more rows than
/// columns or is ragged.
pub fn solve(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    assert!(n <= m, "assignment needs rows <= cols ({n} > {m})");
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");

    // 1-based: index 0 is the virtual source row/column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    for j in 1..=m {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Assignment {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn small_square() {
        let c = vec![
            vec![4.0, 3.0, 5.0],
            vec![3.0, 5.0, 9.0],
            vec![4.0, 1.0, 4.0],
        ];
        let a = solve(&c);
        assert_eq!(a.total, 9.0);
        assert_eq!(a.row_to_col, vec![2, 0, 1]);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let c = vec![vec![7.0, 2.0, 9.0, 4.0], vec![3.0, 8.0, 1.0, 6.0]];
        let a = solve(&c);
        assert_eq!(a.total, brute(&c));
        assert_eq!(a.total, 3.0);
    }

    #[test]
    fn duals_are_feasible_and_tight() {
        let c = vec![
            vec![0.2, 0.9, 0.5],
            vec![0.4, 0.1, 0.8],
        ];
        let a = solve(&c);
        for i in 0..2 {
            for j in 0..3 {
                assert!(a.reduced_cost(&c, i, j) > -1e-12);
            }
            assert!(a.reduced_cost(&c, i, a.row_to_col[i]).abs() < 1e-12);
        }
        assert!(a.v.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn empty_matrix() {
        let a = solve(&[]);
        assert!(a.row_to_col.is_empty());
        assert_eq!(a.total, 0.0);
    }
}
