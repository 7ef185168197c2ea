//! Shareable anchor data built from perturbed low-rank approximations of
//! each party's rows.
//!
//! Every party runs [`local_anchor`] on its own data; the pooled results are
//! resized to exactly `r` rows by [`assemble_anchor`]. With a shared seed all
//! parties obtain the same anchor matrix.

use std::path::Path;

use rand::Rng;

use crate::dataio::{read_matrix_csv, write_matrix_csv};
use crate::error::{Error, Result};
use crate::matrixkit::{random_permutation, random_uniform, truncated_svd, vstack, Matrix, RandomSource};

/// Anchor rows used when none is configured.
pub const DEFAULT_ANCHOR_ROWS: usize = 2000;
/// Perturbation amplitude used when none is configured.
pub const DEFAULT_DELTA: f64 = 0.05;

/// `⌈min(n_i, m) / 2⌉`.
pub fn default_anchor_rank(rows: usize, cols: usize) -> usize {
    rows.min(cols).div_ceil(2).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    /// Row `row` of the pooled local anchors, contributed by `party`.
    Party { party: usize, row: usize },
    /// Convex combination of two pooled rows.
    Augmented { parents: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub x_anc: Matrix,
    pub delta: Option<f64>,
    pub provenance: Vec<RowOrigin>,
}

impl AnchorSet {
    pub fn r(&self) -> usize {
        self.x_anc.nrows()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path, &self.x_anc)
    }

    /// Imported anchors carry no provenance.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            x_anc: read_matrix_csv(path)?,
            delta: None,
            provenance: Vec::new(),
        })
    }
}

/// Rank-`rank` truncated SVD of `x` plus `delta · E`, `E` uniform on `[-1, 1]`.
pub fn local_anchor(x: &Matrix, rank: usize, delta: f64, src: &mut RandomSource) -> Result<Matrix> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("delta {delta} must be ≥ 0")));
    }
    let low_rank = truncated_svd(x, rank)?;
    if delta == 0.0 {
        return Ok(low_rank);
    }
    let noise = random_uniform(x.nrows(), x.ncols(), -1.0, 1.0, src);
    Ok(low_rank + noise * delta)
}

/// Resize the pooled local anchors to exactly `r` rows: a uniform random
/// subset when the pool is large enough, otherwise the full pool followed by
/// convex combinations of two distinct random pool rows.
pub fn assemble_anchor(locals: &[Matrix], r: usize, src: &mut RandomSource) -> Result<AnchorSet> {
    let pool = vstack(&locals.iter().collect::<Vec<_>>())?;
    let n_pool = pool.nrows();
    if n_pool < 2 {
        return Err(Error::InsufficientData(format!(
            "anchor pool has {n_pool} rows; at least 2 are required"
        )));
    }
    if r == 0 {
        return Err(Error::InvalidInput("anchor size r must be ≥ 1".into()));
    }

    let mut origin = Vec::with_capacity(n_pool);
    for (party, block) in locals.iter().enumerate() {
        origin.extend((0..block.nrows()).map(|row| RowOrigin::Party { party, row }));
    }

    if r <= n_pool {
        let pick = random_permutation(n_pool, src);
        let idx = &pick.as_slice()[..r];
        let x_anc = crate::matrixkit::select_rows(&pool, idx);
        return Ok(AnchorSet {
            x_anc,
            delta: None,
            provenance: idx.iter().map(|&i| origin[i]).collect(),
        });
    }

    let mut x_anc = Matrix::zeros(r, pool.ncols());
    x_anc.rows_mut(0, n_pool).copy_from(&pool);
    let mut provenance = origin;
    for k in n_pool..r {
        let a = src.random_range(0..n_pool);
        let mut b = src.random_range(0..n_pool - 1);
        if b >= a {
            b += 1;
        }
        let w: f64 = src.random_range(0.0..=1.0);
        let row = pool.row(a) * w + pool.row(b) * (1.0 - w);
        x_anc.row_mut(k).copy_from(&row);
        provenance.push(RowOrigin::Augmented { parents: (a, b) });
    }
    Ok(AnchorSet {
        x_anc,
        delta: None,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixkit::{random_gaussian, svd};

    #[test]
    fn full_rank_without_noise_is_identity() {
        let x = random_gaussian(6, 4, &mut RandomSource::seeded(1));
        let a = local_anchor(&x, 4, 0.0, &mut RandomSource::seeded(2)).unwrap();
        assert!((&a - &x).norm() <= 1e-10);
    }

    #[test]
    fn perturbation_is_bounded_by_delta() {
        let x = random_gaussian(10, 5, &mut RandomSource::seeded(3));
        let base = truncated_svd(&x, 2).unwrap();
        let a = local_anchor(&x, 2, 0.05, &mut RandomSource::seeded(4)).unwrap();
        assert!((&a - &base).amax() <= 0.05 + 1e-15);
        assert!((&a - &base).amax() > 0.0);
    }

    #[test]
    fn rank_one_residual_equals_second_singular_value() {
        let mut x = Matrix::zeros(3, 2);
        x[(0, 0)] = 3.0;
        x[(1, 1)] = 1.0;
        x[(2, 0)] = 0.5;
        let sv = svd(&x).unwrap().singular_values;
        let a = local_anchor(&x, 1, 0.0, &mut RandomSource::seeded(5)).unwrap();
        assert!(((&x - &a).norm() - sv[1]).abs() <= 1e-8);
    }

    #[test]
    fn rank_out_of_range() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            local_anchor(&x, 3, 0.1, &mut RandomSource::seeded(6)),
            Err(Error::InvalidRank { .. })
        ));
    }

    #[test]
    fn default_rank_is_half() {
        assert_eq!(default_anchor_rank(10, 4), 2);
        assert_eq!(default_anchor_rank(10, 13), 5);
        assert_eq!(default_anchor_rank(1, 1), 1);
    }

    fn sorted_rows(a: &Matrix) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = a
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows
    }

    #[test]
    fn pool_sized_anchor_is_a_reordering() {
        let a = random_gaussian(4, 3, &mut RandomSource::seeded(7));
        let b = random_gaussian(5, 3, &mut RandomSource::seeded(8));
        let set = assemble_anchor(&[a.clone(), b.clone()], 9, &mut RandomSource::seeded(9)).unwrap();
        assert_eq!(sorted_rows(&set.x_anc), sorted_rows(&vstack(&[&a, &b]).unwrap()));
    }

    #[test]
    fn subsample_and_augment_sizes() {
        let a = random_gaussian(6, 3, &mut RandomSource::seeded(10));
        let small = assemble_anchor(std::slice::from_ref(&a), 4, &mut RandomSource::seeded(11)).unwrap();
        assert_eq!(small.x_anc.shape(), (4, 3));
        let big = assemble_anchor(std::slice::from_ref(&a), 2000, &mut RandomSource::seeded(11)).unwrap();
        assert_eq!(big.x_anc.shape(), (2000, 3));
        assert_eq!(big.provenance.len(), 2000);
    }

    #[test]
    fn augmented_rows_stay_in_parent_envelope() {
        let pool = random_gaussian(8, 4, &mut RandomSource::seeded(12));
        let set = assemble_anchor(std::slice::from_ref(&pool), 200, &mut RandomSource::seeded(13)).unwrap();
        for (k, origin) in set.provenance.iter().enumerate() {
            if let RowOrigin::Augmented { parents: (a, b) } = *origin {
                assert_ne!(a, b);
                for j in 0..4 {
                    let lo = pool[(a, j)].min(pool[(b, j)]);
                    let hi = pool[(a, j)].max(pool[(b, j)]);
                    let v = set.x_anc[(k, j)];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn seeded_assembly_repeats() {
        let pool = random_gaussian(5, 2, &mut RandomSource::seeded(14));
        let a = assemble_anchor(std::slice::from_ref(&pool), 50, &mut RandomSource::seeded(15)).unwrap();
        let b = assemble_anchor(&[pool], 50, &mut RandomSource::seeded(15)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool() {
        assert!(matches!(
            assemble_anchor(&[Matrix::zeros(1, 3)], 10, &mut RandomSource::seeded(16)),
            Err(Error::InsufficientData(_))
        ));
        assert!(assemble_anchor(&[], 10, &mut RandomSource::seeded(16)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let pool = random_gaussian(5, 3, &mut RandomSource::seeded(17));
        let set = assemble_anchor(&[pool], 7, &mut RandomSource::seeded(18)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchor.csv");
        set.write_csv(&path).unwrap();
        assert_eq!(AnchorSet::read_csv(&path).unwrap().x_anc, set.x_anc);
    }
}
