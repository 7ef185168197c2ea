//! Dense real-matrix numerics used throughout the collaboration pipeline.
//!
//! Everything here is a pure function of its inputs except [`RandomSource`],
//! which is single-owner mutable state. The SVD itself is delegated to
//! `nalgebra`; the pseudo-inverse, PCA and ridge solvers are built on top of
//! it with explicit rank and intercept policies.

use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major logical dense matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Relative cutoff below which singular values are treated as zero by
/// [`pseudo_inverse`].
pub const PINV_RCOND: f64 = 1e-12;

/// Ridge penalty used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 1.0;

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Build a matrix from nested rows. All rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidShape("ragged rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Flatten in row-major order.
pub fn to_row_major(a: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        out.extend(a.row(i).iter().copied());
    }
    out
}

/// Stack matrices vertically. Fails when the column counts differ.
pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
    let Some(first) = blocks.first() else {
        return Ok(Matrix::zeros(0, 0));
    };
    let cols = first.ncols();
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::InvalidShape("vstack: column counts differ".into()));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        out.rows_mut(offset, b.nrows()).copy_from(b);
        offset += b.nrows();
    }
    Ok(out)
}

/// Concatenate matrices column-wise. Fails when the row counts differ.
pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
    let Some(first) = blocks.first() else {
        return Ok(Matrix::zeros(0, 0));
    };
    let rows = first.nrows();
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::InvalidShape("hstack: row counts differ".into()));
    }
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        out.columns_mut(offset, b.ncols()).copy_from(b);
        offset += b.ncols();
    }
    Ok(out)
}

/// Select rows by index, in the given order.
pub fn select_rows(a: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), a.ncols());
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from(&a.row(i));
    }
    out
}

/// Serializable matrix: `{rows, cols, data}` with `data` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixRecord {
    fn from(a: &Matrix) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: to_row_major(a),
        }
    }
}

impl TryFrom<MatrixRecord> for Matrix {
    type Error = Error;

    fn try_from(rec: MatrixRecord) -> Result<Self> {
        if rec.rows.checked_mul(rec.cols) != Some(rec.data.len()) {
            return Err(Error::InvalidShape(format!(
                "matrix record declares {}×{} but carries {} values",
                rec.rows,
                rec.cols,
                rec.data.len()
            )));
        }
        let a = Matrix::from_row_slice(rec.rows, rec.cols, &rec.data);
        ensure_finite(&a, "matrix record")?;
        Ok(a)
    }
}

/// Thin SVD `A = U diag(σ) Vᵀ` with `σ` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let s = DVector::from_column_slice(&self.singular_values);
        &self.u * Matrix::from_diagonal(&s) * self.v.transpose()
    }

    /// Number of singular values above `rcond · σ_max`.
    pub fn numerical_rank(&self, rcond: f64) -> usize {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        if max == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rcond * max)
            .count()
    }
}

pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    ensure_finite(a, "svd input")?;
    let (n, m) = a.shape();
    let k = n.min(m);
    if k == 0 {
        return Ok(SvdFactors {
            u: Matrix::zeros(n, 0),
            singular_values: Vec::new(),
            v: Matrix::zeros(m, 0),
        });
    }
    // nalgebra's SVD loses accuracy on rank-deficient input; faer's does not.
    let dec = faer::Mat::<f64>::from_fn(n, m, |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|_| Error::InvalidInput("svd failed to converge".into()))?;
    let (u, v, s) = (dec.U(), dec.V(), dec.S().column_vector());

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u_sorted = Matrix::from_fn(n, k, |i, j| u[(i, order[j])]);
    let v_sorted = Matrix::from_fn(m, k, |i, j| v[(i, order[j])]);
    let values = order.iter().map(|&j| s[j].max(0.0)).collect();
    Ok(SvdFactors {
        u: u_sorted,
        singular_values: values,
        v: v_sorted,
    })
}

/// Best rank-`k` approximation in Frobenius norm.
pub fn truncated_svd(a: &Matrix, k: usize) -> Result<Matrix> {
    let max = a.nrows().min(a.ncols());
    if k < 1 || k > max {
        return Err(Error::InvalidRank { rank: k, min: 1, max });
    }
    let f = svd(a)?;
    let s = DVector::from_column_slice(&f.singular_values[..k]);
    Ok(f.u.columns(0, k) * Matrix::from_diagonal(&s) * f.v.columns(0, k).transpose())
}

/// Moore–Penrose pseudo-inverse with the [`PINV_RCOND`] rank cutoff.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix> {
    let f = svd(a)?;
    let max = f.singular_values.first().copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in f.singular_values.iter().enumerate() {
        if s > PINV_RCOND * max && s > 0.0 {
            out += f.v.column(i) * f.u.column(i).transpose() / s;
        }
    }
    Ok(out)
}

pub fn column_means(x: &Matrix) -> RowDVector<f64> {
    let n = x.nrows().max(1) as f64;
    RowDVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtract `mean` from every row.
pub fn center_rows(x: &Matrix, mean: &RowDVector<f64>) -> Result<Matrix> {
    if x.ncols() != mean.len() {
        return Err(Error::InvalidShape(format!(
            "centering: matrix has {} columns, mean has {}",
            x.ncols(),
            mean.len()
        )));
    }
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean;
    }
    Ok(out)
}

/// Principal axes of a data matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: RowDVector<f64>,
    /// `m × k`, orthonormal columns ordered by explained variance.
    pub basis: Matrix,
}

impl Pca {
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        Ok(center_rows(x, &self.mean)? * &self.basis)
    }
}

pub fn pca(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, m) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let max = (n - 1).min(m);
    if k < 1 || k > max {
        return Err(Error::InvalidRank { rank: k, min: 1, max });
    }
    let mean = column_means(x);
    let centered = center_rows(x, &mean)?;
    let f = svd(&centered)?;

    // V has min(n, m) columns; when n < m the trailing directions are not
    // needed because k ≤ n - 1.
    let mut basis = f.v.columns(0, k).into_owned();
    // Sign convention: largest-magnitude loading of each axis is positive.
    for mut col in basis.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Ok(Pca { mean, basis })
}

/// Linear model `Y ≈ [X, 1] · W` with an unregularized intercept in the last
/// row of `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Matrix,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows().saturating_sub(1)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        ridge_predict(self, x)
    }
}

fn augment(x: &Matrix) -> Matrix {
    x.clone().insert_column(x.ncols(), 1.0)
}

pub fn ridge_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<RidgeModel> {
    if x.nrows() != y.nrows() {
        return Err(Error::InvalidShape(format!(
            "ridge: X has {} rows, Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge lambda {lambda} must be ≥ 0")));
    }
    ensure_finite(x, "ridge X")?;
    ensure_finite(y, "ridge Y")?;

    let xa = augment(x);
    let m = x.ncols();
    let mut gram = xa.transpose() * &xa;
    for i in 0..m {
        gram[(i, i)] += lambda;
    }
    let rhs = xa.transpose() * y;

    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("normal equations are not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lambda == 0.0 && (lo / hi).powi(2) < f64::EPSILON * (m + 1) as f64) {
        return Err(Error::SingularSystem(
            "augmented design is numerically rank deficient".into(),
        ));
    }
    let weights = chol.solve(&rhs);
    ensure_finite(&weights, "ridge weights")?;
    Ok(RidgeModel { weights, lambda })
}

pub fn ridge_predict(model: &RidgeModel, x: &Matrix) -> Result<Matrix> {
    if x.ncols() + 1 != model.weights.nrows() {
        return Err(Error::InvalidShape(format!(
            "ridge predict: input has {} columns, model expects {}",
            x.ncols(),
            model.input_dim()
        )));
    }
    let m = x.ncols();
    let mut out = x * model.weights.rows(0, m);
    let intercept = model.weights.row(m);
    for mut row in out.row_iter_mut() {
        row += &intercept;
    }
    Ok(out)
}

/// Mix a base seed with a stream index. Distinct indices give distinct,
/// reproducible seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

enum SourceState {
    Seeded { seed: u64, rng: ChaCha12Rng },
    Entropy(StdRng),
}

/// Randomness either reproducible from a seed or drawn from OS entropy.
///
/// Entropy-mode sources cannot be cloned, serialized or inspected, so a
/// stream drawn from one cannot be regenerated later.
pub struct RandomSource {
    state: SourceState,
}

impl RandomSource {
    pub fn seeded(seed: u64) -> Self {
        Self {
            state: SourceState::Seeded {
                seed,
                rng: ChaCha12Rng::seed_from_u64(seed),
            },
        }
    }

    pub fn entropy() -> Self {
        Self {
            state: SourceState::Entropy(StdRng::from_os_rng()),
        }
    }

    /// Seeded when `seed` is present, entropy otherwise.
    pub fn from_option(seed: Option<u64>) -> Self {
        seed.map_or_else(Self::entropy, Self::seeded)
    }

    pub fn is_seeded(&self) -> bool {
        matches!(self.state, SourceState::Seeded { .. })
    }

    /// Independent sub-stream. Seeded sources derive a new seed from their
    /// original seed (not their current position); entropy sources yield a
    /// fresh entropy source.
    pub fn fork(&self, stream: u64) -> Self {
        match &self.state {
            SourceState::Seeded { seed, .. } => Self::seeded(derive_seed(*seed, stream)),
            SourceState::Entropy(_) => Self::entropy(),
        }
    }
}

impl fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.state {
            SourceState::Seeded { seed, .. } => write!(f, "RandomSource::Seeded({seed})"),
            SourceState::Entropy(_) => f.write_str("RandomSource::Entropy"),
        }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        match &mut self.state {
            SourceState::Seeded { rng, .. } => rng.next_u32(),
            SourceState::Entropy(rng) => rng.next_u32(),
        }
    }

    fn next_u64(&mut self) -> u64 {
        match &mut self.state {
            SourceState::Seeded { rng, .. } => rng.next_u64(),
            SourceState::Entropy(rng) => rng.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        match &mut self.state {
            SourceState::Seeded { rng, .. } => rng.fill_bytes(dst),
            SourceState::Entropy(rng) => rng.fill_bytes(dst),
        }
    }
}

pub fn random_gaussian(rows: usize, cols: usize, src: &mut RandomSource) -> Matrix {
    // Filled row by row so the stream order matches the logical layout.
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = src.sample(StandardNormal);
        }
    }
    out
}

pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, src: &mut RandomSource) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = src.random_range(lo..=hi);
        }
    }
    out
}

/// A bijection on row indices: output row `k` is input row `order[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
        }
        Ok(Self { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (k, &i) in self.order.iter().enumerate() {
            inv[i] = k;
        }
        Self { order: inv }
    }

    pub fn apply_rows(&self, a: &Matrix) -> Result<Matrix> {
        if a.nrows() != self.order.len() {
            return Err(Error::InvalidShape(format!(
                "permutation of {} rows applied to {} rows",
                self.order.len(),
                a.nrows()
            )));
        }
        Ok(select_rows(a, &self.order))
    }
}

pub fn random_permutation(n: usize, src: &mut RandomSource) -> Permutation {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(src);
    Permutation { order }
}
