//! Single-head cross-attention between the current frame's instances and the
//! previous frame's tracklets.
//!
//! Dense maps are `D x H x W` token grids. The forward pass positionally
//! encodes both frames, projects to query/key/value, gathers one token per box
//! center, scores every (instance, tracklet) pair with a small 1x1-conv
//! network, turns the scores into an affinity matrix with the cross-softmax,
//! and writes the attended values back into the current map as a residual.

mod weights;

pub use weights::{default_hidden, PipelineWeights, WeightFile};

use crate::assignment::{cross_softmax, AffinityMatrix};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Matrix, Tensor3};

pub const DEFAULT_MAX_INSTANCES: usize = 300;

/// Dense `D x H x W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMap<T> {
    data: Tensor3<T>,
}

impl<T: Scalar> TokenMap<T> {
    pub fn new(data: Tensor3<T>) -> Result<Self> {
        let [d, h, w] = data.dims();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::shape("TokenMap::new", &[1, 1, 1], &[d, h, w]));
        }
        Ok(TokenMap { data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        TokenMap {
            data: Tensor3::zeros(channels, height, width),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor3<T> {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c, y, x)]
    }

    /// Channel vector at grid cell `(x, y)`.
    pub fn vector_at(&self, x: usize, y: usize) -> Vec<T> {
        (0..self.channels()).map(|c| self.data[(c, y, x)]).collect()
    }

    fn add_at(&mut self, x: usize, y: usize, v: &[T]) {
        for (c, &val) in v.iter().enumerate() {
            let cell = &mut self.data[(c, y, x)];
            *cell = *cell + val;
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.data.dims() == other.data.dims()
    }
}

/// Tokens gathered at box centers: one `D`-row per instance plus the grid
/// cell it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet<T> {
    pub rows: Matrix<T>,
    pub positions: Vec<(usize, usize)>,
}

impl<T: Scalar> TokenSet<T> {
    pub fn new(rows: Matrix<T>, positions: Vec<(usize, usize)>) -> Result<Self> {
        if rows.rows() != positions.len() {
            return Err(Error::shape("TokenSet::new", &[rows.rows()], &[positions.len()]));
        }
        Ok(TokenSet { rows, positions })
    }

    pub fn empty(dim: usize) -> Self {
        TokenSet {
            rows: Matrix::zeros(0, dim),
            positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }
}

/// How box centers map onto the token grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    /// Pixels per grid cell.
    pub stride: f64,
    pub max_instances: usize,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            stride: 1.0,
            max_instances: DEFAULT_MAX_INSTANCES,
        }
    }
}

/// Round-half-up of `v`, clamped to `[0, len - 1]`.
fn snap(v: f64, len: usize) -> usize {
    let cell = (v + 0.5).floor();
    if cell <= 0.0 || !cell.is_finite() {
        0
    } else {
        (cell as usize).min(len.saturating_sub(1))
    }
}

/// Grid cell `(x, y)` of a box center on a `width x height` grid.
pub fn grid_cell(b: &BBox, stride: f64, width: usize, height: usize) -> (usize, usize) {
    (snap(b.cx / stride, width), snap(b.cy / stride, height))
}

/// Fixed 2-D sinusoidal encoding of cell `(x, y)`. The first `dim / 2`
/// channels encode `x`, the rest `y`; within each half, channel pairs
/// `(sin, cos)` share the frequency `10000^(-2k / half)`.
pub fn positional_encoding<T: Scalar>(dim: usize, x: usize, y: usize) -> Result<Vec<T>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::OddChannels(dim));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for pos in [x, y] {
        for c in 0..half {
            let k = (c / 2) as f64;
            let freq = 10000f64.powf(-2.0 * k / half as f64);
            let angle = pos as f64 * freq;
            out.push(T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Ok(out)
}

/// Adds the positional encoding to every cell.
pub fn positional_encode<T: Scalar>(m: &TokenMap<T>) -> Result<TokenMap<T>> {
    let mut out = m.clone();
    for y in 0..m.height() {
        for x in 0..m.width() {
            let pe = positional_encoding::<T>(m.channels(), x, y)?;
            out.add_at(x, y, &pe);
        }
    }
    Ok(out)
}

/// Multiplies every cell's channel vector by `w` (`x · w`).
fn project_map<T: Scalar>(m: &TokenMap<T>, w: &Matrix<T>) -> Result<TokenMap<T>> {
    let d = m.channels();
    if w.shape() != (d, d) {
        return Err(Error::shape("project", &[d, d], &[w.rows(), w.cols()]));
    }
    let mut out = TokenMap::zeros(d, m.height(), m.width());
    for y in 0..m.height() {
        for x in 0..m.width() {
            let v = m.vector_at(x, y);
            for c_out in 0..d {
                let mut acc = T::zero();
                for (c_in, &val) in v.iter().enumerate() {
                    acc = acc + val * w[(c_in, c_out)];
                }
                out.data[(c_out, y, x)] = acc;
            }
        }
    }
    Ok(out)
}

/// Query from the encoded current map, key from the encoded previous map,
/// value from the previous map *without* positional encoding.
pub fn project_qkv<T: Scalar>(
    x_plus_t: &TokenMap<T>,
    x_plus_prev: &TokenMap<T>,
    x_prev: &TokenMap<T>,
    w: &PipelineWeights<T>,
) -> Result<(TokenMap<T>, TokenMap<T>, TokenMap<T>)> {
    for other in [x_plus_prev, x_prev] {
        if !x_plus_t.same_shape(other) {
            return Err(Error::shape("project_qkv", &x_plus_t.data.dims(), &other.data.dims()));
        }
    }
    Ok((
        project_map(x_plus_t, &w.w_q)?,
        project_map(x_plus_prev, &w.w_k)?,
        project_map(x_prev, &w.w_v)?,
    ))
}

/// Gathers the token at each box center. Several boxes may share a cell; each
/// still gets its own row.
pub fn clip_features<T: Scalar>(m: &TokenMap<T>, boxes: &[BBox], params: &ClipParams) -> Result<TokenSet<T>> {
    if boxes.len() > params.max_instances {
        return Err(Error::InstanceCap {
            count: boxes.len(),
            cap: params.max_instances,
        });
    }
    let d = m.channels();
    let mut rows = Matrix::zeros(boxes.len(), d);
    let mut positions = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let (x, y) = grid_cell(b, params.stride, m.width(), m.height());
        for c in 0..d {
            rows[(i, c)] = m.get(c, y, x);
        }
        positions.push((x, y));
    }
    Ok(TokenSet { rows, positions })
}

/// All `(query, key)` pairs: `out[i, j, :] = q[i, :] ⊙ k[j, :]`.
pub fn extend_pairwise<T: Scalar>(q: &TokenSet<T>, k: &TokenSet<T>) -> Result<Tensor3<T>> {
    if q.dim() != k.dim() {
        return Err(Error::shape("extend_pairwise", &[q.dim()], &[k.dim()]));
    }
    let d = q.dim();
    let mut out = Tensor3::zeros(q.len(), k.len(), d);
    let data = out.as_mut_slice();
    for i in 0..q.len() {
        let qi = q.rows.row(i);
        for j in 0..k.len() {
            let kj = k.rows.row(j);
            let base = (i * k.len() + j) * d;
            for c in 0..d {
                data[base + c] = qi[c] * kj[c];
            }
        }
    }
    Ok(out)
}

/// Pairwise scorer: 1x1 conv, inference batch norm, ReLU, 1x1 conv to one
/// channel.
pub fn micro_cnn<T: Scalar>(merged: &Tensor3<T>, w: &PipelineWeights<T>) -> Result<Matrix<T>> {
    let [nq, nk, d] = merged.dims();
    if d != w.dim || w.conv1.shape() != (d, w.hidden) {
        return Err(Error::shape("micro_cnn", &[w.dim], &[d]));
    }
    if let Some(channel) = w.bn_var.iter().position(|&v| !(v > T::zero())) {
        return Err(Error::BatchNormVariance { channel });
    }
    let h = w.hidden;
    // fold batch norm into a per-channel affine map
    let bn_gain: Vec<T> = (0..h).map(|c| w.bn_scale[c] / w.bn_var[c].sqrt()).collect();
    let bn_bias: Vec<T> = (0..h).map(|c| w.bn_shift[c] - w.bn_mean[c] * bn_gain[c]).collect();

    let mut r = Matrix::zeros(nq, nk);
    let mut hidden = vec![T::zero(); h];
    for i in 0..nq {
        for j in 0..nk {
            hidden.copy_from_slice(&w.conv1_bias);
            for (dch, &m) in merged.fiber(i, j).iter().enumerate() {
                if m == T::zero() {
                    continue;
                }
                for (hv, &wv) in hidden.iter_mut().zip(w.conv1.row(dch)) {
                    *hv = *hv + m * wv;
                }
            }
            let mut score = w.conv2_bias;
            for c in 0..h {
                let act = (hidden[c] * bn_gain[c] + bn_bias[c]).max(T::zero());
                score = score + act * w.conv2[(c, 0)];
            }
            r[(i, j)] = score;
        }
    }
    Ok(r)
}

/// Affinity-weighted values, `F = A · v` (`N_t x D`).
pub fn attention_refine<T: Scalar>(a: &AffinityMatrix<T>, v: &TokenSet<T>) -> Result<Matrix<T>> {
    if a.cols() != v.len() {
        return Err(Error::shape(
            "attention_refine",
            &[a.rows(), a.cols()],
            &[v.len(), v.dim()],
        ));
    }
    if a.rows() == 0 {
        return Ok(Matrix::zeros(0, v.dim()));
    }
    matmul(a.matrix(), &v.rows)
}

/// `x'_t = scatter(F · W_p) + x_t`; rows sharing a cell add up.
pub fn scatter_residual<T: Scalar>(
    f: &Matrix<T>,
    positions: &[(usize, usize)],
    w: &PipelineWeights<T>,
    x_t: &TokenMap<T>,
) -> Result<TokenMap<T>> {
    if f.rows() != positions.len() {
        return Err(Error::shape("scatter_residual", &[f.rows()], &[positions.len()]));
    }
    let mut out = x_t.clone();
    if f.rows() == 0 {
        return Ok(out);
    }
    if f.cols() != x_t.channels() {
        return Err(Error::shape("scatter_residual", &[x_t.channels()], &[f.cols()]));
    }
    let g = matmul(f, &w.w_p)?;
    for (i, &(x, y)) in positions.iter().enumerate() {
        if x >= x_t.width() || y >= x_t.height() {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: x_t.width(),
                height: x_t.height(),
            });
        }
        out.add_at(x, y, g.row(i));
    }
    Ok(out)
}

fn check_mask<T: Scalar>(mask: Option<&Matrix<T>>, rows: usize, cols: usize) -> Result<()> {
    match mask {
        Some(m) if m.shape() != (rows, cols) => Err(Error::shape("mask", &[rows, cols], &[m.rows(), m.cols()])),
        _ => Ok(()),
    }
}

/// Scores projected query/key tokens, masks, and normalizes into affinities;
/// also returns the attended values `F`.
fn associate<T: Scalar>(
    q: &TokenSet<T>,
    k: &TokenSet<T>,
    v: &TokenSet<T>,
    w: &PipelineWeights<T>,
    mask: Option<&Matrix<T>>,
) -> Result<(AffinityMatrix<T>, Matrix<T>)> {
    check_mask(mask, q.len(), k.len())?;
    if q.is_empty() || k.is_empty() {
        return Ok((
            AffinityMatrix::from_matrix(Matrix::zeros(q.len(), k.len())),
            Matrix::zeros(q.len(), v.dim()),
        ));
    }
    let mut r = micro_cnn(&extend_pairwise(q, k)?, w)?;
    if let Some(m) = mask {
        r = r.add(m)?;
    }
    let a = cross_softmax(&r)?;
    let f = attention_refine(&a, v)?;
    Ok((a, f))
}

/// Full dense forward pass. Returns the affinity between `boxes_t` (rows) and
/// `boxes_prev` (columns) and the refined current map.
///
/// `mask`, when given, is `N_t x N_prev` with entries `0` or `-inf`.
pub fn forward<T: Scalar>(
    x_t: &TokenMap<T>,
    x_prev: &TokenMap<T>,
    boxes_t: &[BBox],
    boxes_prev: &[BBox],
    w: &PipelineWeights<T>,
    mask: Option<&Matrix<T>>,
    params: &ClipParams,
) -> Result<(AffinityMatrix<T>, TokenMap<T>)> {
    if x_t.channels() != w.dim {
        return Err(Error::shape("forward", &[w.dim], &[x_t.channels()]));
    }
    let x_plus_t = positional_encode(x_t)?;
    let x_plus_prev = positional_encode(x_prev)?;
    let (q, k, v) = project_qkv(&x_plus_t, &x_plus_prev, x_prev, w)?;
    let q = clip_features(&q, boxes_t, params)?;
    let k = clip_features(&k, boxes_prev, params)?;
    let v = clip_features(&v, boxes_prev, params)?;
    let (a, f) = associate(&q, &k, &v, w, mask)?;
    let refined = scatter_residual(&f, &q.positions, w, x_t)?;
    Ok((a, refined))
}

/// Result of [`forward_tokens`].
#[derive(Debug, Clone)]
pub struct TokenAssociation<T> {
    pub affinity: AffinityMatrix<T>,
    /// Refined token per query row: `x + (F · W_p)` at that row.
    pub refined: Matrix<T>,
}

/// Sparse forward pass over already-gathered tokens.
///
/// Gathering commutes with the per-cell positional encoding and projections,
/// so this equals the dense [`forward`] whenever query positions are
/// distinct, without materializing the grid. Tokens are raw (not encoded);
/// their `positions` drive the encoding.
pub fn forward_tokens<T: Scalar>(
    queries: &TokenSet<T>,
    keys: &TokenSet<T>,
    w: &PipelineWeights<T>,
    mask: Option<&Matrix<T>>,
) -> Result<TokenAssociation<T>> {
    let d = w.dim;
    if queries.dim() != d || keys.dim() != d {
        return Err(Error::shape("forward_tokens", &[d, d], &[queries.dim(), keys.dim()]));
    }
    let encode = |set: &TokenSet<T>| -> Result<Matrix<T>> {
        let mut m = set.rows.clone();
        for (i, &(x, y)) in set.positions.iter().enumerate() {
            let pe = positional_encoding::<T>(d, x, y)?;
            for (v, p) in m.row_mut(i).iter_mut().zip(pe) {
                *v = *v + p;
            }
        }
        Ok(m)
    };
    let q = TokenSet::new(matmul(&encode(queries)?, &w.w_q)?, queries.positions.clone())?;
    let k = TokenSet::new(matmul(&encode(keys)?, &w.w_k)?, keys.positions.clone())?;
    let v = TokenSet::new(matmul(&keys.rows, &w.w_v)?, keys.positions.clone())?;
    let (affinity, f) = associate(&q, &k, &v, w, mask)?;
    let refined = if f.rows() == 0 {
        queries.rows.clone()
    } else {
        queries.rows.add(&matmul(&f, &w.w_p)?)?
    };
    Ok(TokenAssociation { affinity, refined })
}
