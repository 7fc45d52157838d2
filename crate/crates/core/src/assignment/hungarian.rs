use crate::scalar::Scalar;
use crate::tensor::Matrix;

use super::AssignmentResult;

/// Optimal one-to-one assignment over a finite, possibly rectangular matrix.
///
/// `min(rows, cols)` pairs are always produced. With `maximize` the sum of
/// selected entries is maximized, otherwise minimized. O(n^2 m) shortest
/// augmenting path with dual potentials.
pub fn hungarian<T: Scalar>(r: &Matrix<T>, maximize: bool) -> AssignmentResult<T> {
    let (rows, cols) = r.shape();
    if rows == 0 || cols == 0 {
        return AssignmentResult::empty(cols);
    }
    let sign = if maximize { -T::one() } else { T::one() };

    let mut matches = vec![None; cols];
    if rows <= cols {
        let cost: Vec<T> = r.as_slice().iter().map(|&v| v * sign).collect();
        for (i, j) in solve(&cost, rows, cols).into_iter().enumerate() {
            matches[j] = Some(i);
        }
    } else {
        let t = r.transpose();
        let cost: Vec<T> = t.as_slice().iter().map(|&v| v * sign).collect();
        for (j, i) in solve(&cost, cols, rows).into_iter().enumerate() {
            matches[j] = Some(i);
        }
    }
    AssignmentResult::from_matches(r, matches)
}

/// Minimum-cost assignment of each of `n` rows to a distinct one of `m >= n`
/// columns; returns the column of every row. `cost` is row-major `n x m`.
fn solve<T: Scalar>(cost: &[T], n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m && cost.len() == n * m);
    let inf = T::infinity();
    // 1-based with slot 0 as the virtual source column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_to = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        min_to.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);

        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * m..i0 * m];
            let ui0 = u[i0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    min_to[j] = min_to[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    col_of
}
