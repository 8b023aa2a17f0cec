//! Minimum-cost assignment of rows to distinct columns.

use num_traits::Float;

use crate::error::{Error, Result};

/// An assignment of every row to a distinct column.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    /// `columns[r]` is the column assigned to row `r`.
    pub columns: Vec<usize>,
    pub total: T,
}

fn check<T: Float>(cost: &[Vec<T>]) -> Result<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Err(Error::Empty("assignment needs at least one row"));
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("cost matrix", "ragged rows"));
    }
    if cols < rows {
        return Err(Error::invalid("cost matrix", format!("{rows} rows but only {cols} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    Ok((rows, cols))
}

/// Shortest-augmenting-path Hungarian algorithm, `O(rows^2 cols)`.
pub fn hungarian<T: Float>(cost: &[Vec<T>]) -> Result<Assignment<T>> {
    let (n, m) = check(cost)?;
    // 1-based potentials and matching, column 0 is a sentinel
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![T::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = T::infinity();
            let mut j1 = 0;
            for j in 1..=m {
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
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] = u[row_of[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut columns = vec![0; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            columns[row_of[j] - 1] = j - 1;
        }
    }
    let total = columns
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (r, &c)| acc + cost[r][c]);
    Ok(Assignment { columns, total })
}

/// Exhaustive search over all injections of rows into columns.
///
/// Ties are broken towards the lexicographically smallest column vector.
pub fn brute_force<T: Float>(cost: &[Vec<T>]) -> Result<Assignment<T>> {
    let (n, m) = check(cost)?;
    let mut best: Option<Assignment<T>> = None;
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; m];
    fn recurse<T: Float>(
        cost: &[Vec<T>],
        current: &mut Vec<usize>,
        used: &mut [bool],
        acc: T,
        best: &mut Option<Assignment<T>>,
    ) {
        let r = current.len();
        if r == cost.len() {
            if best.as_ref().is_none_or(|b| acc < b.total) {
                *best = Some(Assignment {
                    columns: current.clone(),
                    total: acc,
                });
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                current.push(c);
                recurse(cost, current, used, acc + cost[r][c], best);
                current.pop();
                used[c] = false;
            }
        }
    }
    recurse(cost, &mut current, &mut used, T::zero(), &mut best);
    Ok(best.expect("at least one injection exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use rand::Rng;

    #[test]
    fn identity_is_free() {
        let c = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.columns, vec![0, 1, 2]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn swapped_pair() {
        let c = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        assert_eq!(hungarian(&c).unwrap().columns, vec![1, 0]);
    }

    #[test]
    fn rectangular_and_errors() {
        let c = vec![vec![5.0, 1.0, 3.0], vec![2.0, 9.0, 0.5]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.columns, vec![1, 2]);
        assert!(hungarian::<f64>(&[]).is_err());
        assert!(hungarian(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn agrees_with_brute_force() {
        let mut s = rng_stream(11, "assign");
        for trial in 0..200 {
            let n = 1 + trial % 6;
            let m = n + (trial / 6) % 3;
            let c: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| s.random::<f64>()).collect()).collect();
            let h = hungarian(&c).unwrap();
            let b = brute_force(&c).unwrap();
            assert!((h.total - b.total).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn generic_over_f32() {
        let c = vec![vec![0.9f32, 0.1], vec![0.2, 0.8]];
        assert_eq!(hungarian(&c).unwrap().columns, vec![1, 0]);
    }
}
