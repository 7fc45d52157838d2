//! Instance-to-tracklet assignment from a raw score map `r`.
//!
//! Rows are instances at the current frame, columns are tracklets. The
//! cross-softmax multiplies the column- and row-normalized maps, which pushes
//! every entry that is not simultaneously dominant in its row and its column
//! towards zero; the surviving peaks can be read off with a per-column argmax
//! instead of a combinatorial solver.

mod bench;
mod hungarian;

pub use bench::{bench_assignment, trial_matrix, BenchOptions, BenchReport, BenchRow, Method, Precision, CSV_HEADER};
pub use hungarian::hungarian;

use crate::error::{Error, Result};
use crate::scalar::{lane_max, lane_sum, Scalar};
use crate::tensor::{softmax_cols, softmax_rows, Matrix};

/// Default threshold for keeping a column's argmax.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.3;

/// Pairwise instance/tracklet affinities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T>(Matrix<T>);

impl<T: Scalar> AffinityMatrix<T> {
    /// Wraps a matrix without checking the value range. Used for hand-built
    /// affinities in tests and by callers that already hold one.
    pub fn from_matrix(m: Matrix<T>) -> Self {
        AffinityMatrix(m)
    }

    pub fn empty() -> Self {
        AffinityMatrix(Matrix::zeros(0, 0))
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.0[(row, col)]
    }
}

/// A matching expressed per column: `matches[j]` is the row assigned to
/// column `j`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    pub matches: Vec<Option<usize>>,
    pub is_one_to_one: bool,
    /// Sum of the matrix entries at the selected pairs.
    pub objective: T,
}

impl<T: Scalar> AssignmentResult<T> {
    pub fn from_matches(m: &Matrix<T>, matches: Vec<Option<usize>>) -> Self {
        let objective = matches
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|i| m[(i, j)]))
            .fold(T::zero(), |acc, v| acc + v);
        let is_one_to_one = is_injective(&matches, m.rows());
        AssignmentResult {
            matches,
            is_one_to_one,
            objective,
        }
    }

    pub fn empty(cols: usize) -> Self {
        AssignmentResult {
            matches: vec![None; cols],
            is_one_to_one: true,
            objective: T::zero(),
        }
    }

    pub fn matched_count(&self) -> usize {
        self.matches.iter().filter(|m| m.is_some()).count()
    }

    /// `(row, col)` pairs in column order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.matches.iter().enumerate().filter_map(|(j, r)| r.map(|i| (i, j)))
    }
}

/// True when no row index is claimed by two columns.
pub fn is_injective(matches: &[Option<usize>], rows: usize) -> bool {
    let mut seen = vec![false; rows];
    for &i in matches.iter().flatten() {
        if i >= rows || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Largest distance below the global maximum at which a row or column
/// maximum still allows the single-exp evaluation: squaring `exp(-range)`
/// cannot underflow.
fn single_exp_range<T: Scalar>() -> T {
    -T::min_positive_value().ln() / T::of(4.0)
}

fn two_pass<T: Scalar>(r: &Matrix<T>) -> Result<AffinityMatrix<T>> {
    Ok(AffinityMatrix(softmax_cols(r)?.hadamard(&softmax_rows(r)?)?))
}

/// The global maximum of `r`, or `None` when some row maximum lies too far
/// below it for a single shared exp. Errors on a fully masked row.
fn shared_shift<T: Scalar>(r: &Matrix<T>) -> Result<Option<T>> {
    let neg_inf = T::neg_infinity();
    let row_max: Vec<T> = (0..r.rows()).map(|i| lane_max(r.row(i))).collect();
    if let Some(i) = row_max.iter().position(|&m| m == neg_inf) {
        return Err(Error::FullyMasked { axis: "row", index: i });
    }
    let global = row_max.iter().copied().fold(neg_inf, T::max);
    let range = single_exp_range::<T>();
    Ok(if row_max.iter().any(|&m| m < global - range) {
        None
    } else {
        Some(global)
    })
}

/// `A = softmax_cols(r) ⊙ softmax_rows(r)`.
///
/// `-inf` entries mask a pair and come out as exact zeros. A row or column
/// with nothing but masked entries is an error.
pub fn cross_softmax<T: Scalar>(r: &Matrix<T>) -> Result<AffinityMatrix<T>> {
    let (rows, cols) = r.shape();
    if r.is_empty() {
        return Ok(AffinityMatrix(r.clone()));
    }
    let Some(global) = shared_shift(r)? else {
        return two_pass(r);
    };
    let range = single_exp_range::<T>();

    // One exp per entry: both softmaxes share exp(r - global max). Each row
    // is finished while it is still in cache.
    let mut data = Vec::with_capacity(rows * cols);
    let mut row_inv = vec![T::zero(); rows];
    let mut col_sum = vec![T::zero(); cols];
    for (i, inv) in row_inv.iter_mut().enumerate() {
        data.extend(r.row(i).iter().map(|&v| v - global));
        let row = &mut data[i * cols..];
        T::exp_in_place(row);
        *inv = lane_sum(row).recip();
        for (s, &v) in col_sum.iter_mut().zip(row.iter()) {
            *s = *s + v;
        }
    }
    let mut e = Matrix::from_vec(rows, cols, data)?;
    // a column far below the global maximum (or fully masked) has a sum too
    // small to square safely; the two-pass form handles it, or reports it
    let col_floor = (-range).exp();
    if col_sum.iter().any(|&s| !(s >= col_floor)) {
        return two_pass(r);
    }
    let col_inv: Vec<T> = col_sum.iter().map(|&s| s.recip()).collect();
    for (i, &ri) in row_inv.iter().enumerate() {
        for (v, &ci) in e.row_mut(i).iter_mut().zip(&col_inv) {
            *v = (*v * ri) * (*v * ci);
        }
    }
    Ok(AffinityMatrix(e))
}

/// Max-fusion baseline: elementwise `max(softmax_cols(r), softmax_rows(r))`.
pub fn dan_fuse<T: Scalar>(r: &Matrix<T>) -> Result<Matrix<T>> {
    if r.is_empty() {
        return Ok(r.clone());
    }
    softmax_cols(r)?.zip_with(&softmax_rows(r)?, "dan_fuse", T::max)
}

/// Row index of each column's maximum; earliest row wins ties. `None` only
/// when there are no rows.
pub fn column_argmax<T: Scalar>(m: &Matrix<T>) -> Vec<Option<(usize, T)>> {
    if m.rows() == 0 {
        return vec![None; m.cols()];
    }
    // Running maxima as plain arrays so the row sweep is branch-free. The row
    // index rides along in `T` itself (same lane width, so the sweep
    // vectorizes) whenever every index is exactly representable.
    let mut best = vec![T::neg_infinity(); m.cols()];
    if (m.rows() as f64) < 1.0 / T::epsilon().as_f64() {
        let mut idx = vec![T::zero(); m.cols()];
        for i in 0..m.rows() {
            let it = T::of(i as f64);
            for ((b, k), &v) in best.iter_mut().zip(idx.iter_mut()).zip(m.row(i)) {
                let take = v > *b;
                *b = if take { v } else { *b };
                *k = if take { it } else { *k };
            }
        }
        return idx
            .into_iter()
            .zip(best)
            .map(|(k, b)| Some((k.as_f64() as usize, b)))
            .collect();
    }
    let mut idx = vec![0usize; m.cols()];
    for i in 0..m.rows() {
        for ((b, k), &v) in best.iter_mut().zip(idx.iter_mut()).zip(m.row(i)) {
            let take = v > *b;
            *b = if take { v } else { *b };
            *k = if take { i } else { *k };
        }
    }
    idx.into_iter().zip(best).map(|(k, b)| Some((k, b))).collect()
}

/// Per-column argmax kept only above `threshold`, before any conflict
/// resolution. Two columns may still name the same row.
pub fn match_candidates<T: Scalar>(a: &AffinityMatrix<T>, threshold: T) -> Vec<Option<(usize, T)>> {
    column_argmax(&a.0)
        .into_iter()
        .map(|c| c.filter(|&(_, v)| v > threshold))
        .collect()
}

/// `match_candidates(&cross_softmax(r)?, threshold)` without building `A`.
///
/// Within a column the factor `1 / colsum` is shared, so the argmax of `A`
/// is the argmax of `e^2 / rowsum`, which is tracked during the single exp
/// sweep. Only one row of scratch is live at a time. Returned values equal
/// the corresponding entries of `A`; a column whose two best entries differ
/// by rounding alone may pick the other row.
pub fn cross_softmax_candidates<T: Scalar>(r: &Matrix<T>, threshold: T) -> Result<Vec<Option<(usize, T)>>> {
    let (rows, cols) = r.shape();
    if rows == 0 || cols == 0 {
        return Ok(vec![None; cols]);
    }
    let unfused = || Ok(match_candidates(&two_pass(r)?, threshold));
    if (rows as f64) >= 1.0 / T::epsilon().as_f64() {
        return unfused();
    }
    let Some(global) = shared_shift(r)? else {
        return unfused();
    };

    let mut buf = vec![T::zero(); cols];
    let mut row_inv = vec![T::zero(); rows];
    let mut col_sum = vec![T::zero(); cols];
    let mut best_key = vec![T::neg_infinity(); cols];
    let mut best_e = vec![T::zero(); cols];
    let mut best_row = vec![T::zero(); cols];
    for (i, inv) in row_inv.iter_mut().enumerate() {
        for (b, &v) in buf.iter_mut().zip(r.row(i)) {
            *b = v - global;
        }
        T::exp_in_place(&mut buf);
        *inv = lane_sum(&buf).recip();
        let ri = *inv;
        let it = T::of(i as f64);
        for ((((s, k), be), br), &v) in col_sum
            .iter_mut()
            .zip(best_key.iter_mut())
            .zip(best_e.iter_mut())
            .zip(best_row.iter_mut())
            .zip(&buf)
        {
            *s = *s + v;
            let key = (v * ri) * v;
            let take = key > *k;
            *k = if take { key } else { *k };
            *be = if take { v } else { *be };
            *br = if take { it } else { *br };
        }
    }
    let col_floor = (-single_exp_range::<T>()).exp();
    if col_sum.iter().any(|&s| !(s >= col_floor)) {
        return unfused();
    }
    Ok(col_sum
        .iter()
        .zip(best_e.iter().zip(&best_row))
        .map(|(&s, (&e, &br))| {
            let i = br.as_f64() as usize;
            let a = (e * row_inv[i]) * (e * s.recip());
            (a > threshold).then_some((i, a))
        })
        .collect())
}

/// Reads a one-to-one matching out of an affinity matrix: argmax per column,
/// thresholding, then greedy resolution of rows claimed twice (the higher
/// affinity keeps the row, the other column goes unmatched).
pub fn extract_matching<T: Scalar>(a: &AffinityMatrix<T>, threshold: T) -> AssignmentResult<T> {
    let candidates = match_candidates(a, threshold);
    let mut order: Vec<(usize, usize, T)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(j, c)| c.map(|(i, v)| (j, i, v)))
        .collect();
    order.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap().then(x.0.cmp(&y.0)));

    let mut taken = vec![false; a.rows()];
    let mut matches = vec![None; a.cols()];
    for (j, i, _) in order {
        if !taken[i] {
            taken[i] = true;
            matches[j] = Some(i);
        }
    }
    AssignmentResult::from_matches(&a.0, matches)
}

/// Reverse-mode gradient of [`cross_softmax`]: given `dL/dA`, returns `dL/dr`.
///
/// With `C = softmax_cols(r)` and `R = softmax_rows(r)`:
/// `dr = C ⊙ (dC - colsum(dC ⊙ C)) + R ⊙ (dR - rowsum(dR ⊙ R))`,
/// where `dC = dA ⊙ R` and `dR = dA ⊙ C`.
pub fn cross_softmax_grad<T: Scalar>(r: &Matrix<T>, d_a: &Matrix<T>) -> Result<Matrix<T>> {
    if r.shape() != d_a.shape() {
        return Err(Error::shape(
            "cross_softmax_grad",
            &[r.rows(), r.cols()],
            &[d_a.rows(), d_a.cols()],
        ));
    }
    if r.is_empty() {
        return Ok(r.clone());
    }
    let c = softmax_cols(r)?;
    let rs = softmax_rows(r)?;
    let (rows, cols) = r.shape();

    let mut col_dot = vec![T::zero(); cols];
    let mut row_dot = vec![T::zero(); rows];
    for i in 0..rows {
        for j in 0..cols {
            let g = d_a[(i, j)];
            let (cij, rij) = (c[(i, j)], rs[(i, j)]);
            col_dot[j] = col_dot[j] + g * rij * cij;
            row_dot[i] = row_dot[i] + g * cij * rij;
        }
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let g = d_a[(i, j)];
        let (cij, rij) = (c[(i, j)], rs[(i, j)]);
        cij * (g * rij - col_dot[j]) + rij * (g * cij - row_dot[i])
    }))
}
