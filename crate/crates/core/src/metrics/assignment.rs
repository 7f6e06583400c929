//! Minimum-cost perfect matching on square cost matrices.

use crate::error::{Error, Result};

// Shortest-augmenting-path Hungarian with potentials, O(n^3). Returns the
// column assigned to each row.
fn hungarian_base(cost: &[f64], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

fn total_cost(cost: &[f64], n: usize, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum()
}

/// Minimum-cost perfect matching of a square `rows x cols` cost matrix
/// (row-major). Among all optimal matchings, returns the lexicographically
/// smallest assignment vector `row -> col`.
pub fn hungarian_solve(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows != cols {
        return Err(Error::ShapeMismatch {
            op: "hungarian_solve",
            detail: format!("matrix must be square (pad first), got {rows}x{cols}"),
        });
    }
    if cost.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            op: "hungarian_solve",
            detail: format!("expected {} entries, got {}", rows * cols, cost.len()),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("costs must be finite".into()));
    }
    let n = rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let optimum = total_cost(cost, n, &hungarian_base(cost, n));
    let tol = 1e-9 * (1.0 + optimum.abs());

    // Fix rows greedily to the smallest column that still admits an optimal
    // completion; ties in total cost therefore resolve to the
    // lexicographically smallest assignment.
    let mut assignment = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    let mut fixed = 0.0;
    for i in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|&j| !col_used[j]).collect();
        for &j in &free_cols {
            let candidate = fixed + cost[i * n + j];
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let rest = if i + 1 < n {
                let m = n - i - 1;
                let mut sub = vec![0.0; m * m];
                for (ri, row) in (i + 1..n).enumerate() {
                    for (ci, &col) in rest_cols.iter().enumerate() {
                        sub[ri * m + ci] = cost[row * n + col];
                    }
                }
                total_cost(&sub, m, &hungarian_base(&sub, m))
            } else {
                0.0
            };
            if candidate + rest <= optimum + tol {
                assignment[i] = j;
                col_used[j] = true;
                fixed += cost[i * n + j];
                break;
            }
        }
        debug_assert_ne!(assignment[i], usize::MAX);
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Exhaustive oracle: minimal total cost, lexicographically smallest among
    // ties.
    pub(crate) fn brute_force(cost: &[f64], n: usize) -> Vec<usize> {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![Vec::new()];
            }
            let mut out = Vec::new();
            for rest in permutations(n - 1) {
                for pos in 0..n {
                    let mut p = rest.clone();
                    p.insert(pos, n - 1);
                    out.push(p);
                }
            }
            out
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(n) {
            let c = total_cost(cost, n, &perm);
            best = match best {
                None => Some((c, perm)),
                Some((bc, bp)) => {
                    let tol = 1e-9 * (1.0 + bc.abs());
                    if c < bc - tol {
                        Some((c, perm))
                    } else if (c - bc).abs() <= tol && perm < bp {
                        Some((c.min(bc), perm))
                    } else {
                        Some((bc, bp))
                    }
                }
            };
        }
        best.unwrap().1
    }

    #[test]
    fn two_by_two() {
        let assignment = hungarian_solve(&[1.0, 2.0, 3.0, 1.0], 2, 2).unwrap();
        assert_eq!(assignment, vec![0, 1]);
    }

    #[test]
    fn zero_diagonal_forces_identity() {
        let n = 5;
        let mut cost = vec![100.0; n * n];
        for i in 0..n {
            cost[i * n + i] = 0.0;
        }
        assert_eq!(hungarian_solve(&cost, n, n).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn non_square_rejected() {
        assert!(hungarian_solve(&[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn uniform_costs_pick_lexicographic_identity() {
        let cost = vec![1.0; 16];
        assert_eq!(hungarian_solve(&cost, 4, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // Two optimal assignments: [1,0] and [0,1] both cost 2.
        let cost = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(hungarian_solve(&cost, 2, 2).unwrap(), vec![0, 1]);
        // Structured tie where identity is not optimal for the first row.
        let cost = vec![
            5.0, 1.0, 1.0, //
            1.0, 5.0, 1.0, //
            1.0, 1.0, 5.0,
        ];
        let got = hungarian_solve(&cost, 3, 3).unwrap();
        assert_eq!(got, brute_force(&cost, 3));
    }

    #[test]
    fn matches_brute_force_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..60 {
            let n = rng.gen_range(1..6);
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let fast = hungarian_solve(&cost, n, n).unwrap();
            let slow = brute_force(&cost, n);
            assert_eq!(fast, slow, "n={n} cost={cost:?}");
        }
    }

    #[test]
    fn integer_ties_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..60 {
            let n = rng.gen_range(2..6);
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0..3) as f64).collect();
            let fast = hungarian_solve(&cost, n, n).unwrap();
            let slow = brute_force(&cost, n);
            assert_eq!(fast, slow, "n={n} cost={cost:?}");
        }
    }
}
