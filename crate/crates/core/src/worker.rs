//! Party-side logic.
//!
//! A party builds a private row-wise reduction map, applies it to its own
//! rows and to the shared anchor, permutes its rows and labels, and uploads
//! the result as an [`IntermediateShare`]. For the randomized map the map and
//! the permutation are consumed by [`encode_share`] and zeroed on drop; the
//! party later predicts with a [`LocalDistilledModel`] fitted on the anchor
//! predictions returned by the master.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::RowDVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixkit::{
    center_rows, pca, random_gaussian, random_permutation, ridge_fit, svd, Matrix, MatrixRecord,
    RandomSource, RidgeModel,
};

/// Mixing matrices with a larger 2-norm condition number are redrawn.
pub const MAX_MIXING_CONDITION: f64 = 1e8;
const MAX_MIXING_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// PCA projection, kept by the party for prediction.
    NaivePca,
    /// PCA projection times a random nonsingular m̃ × m̃ matrix.
    ProposedRandomized,
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::NaivePca => "naive_pca",
            MapKind::ProposedRandomized => "proposed_randomized",
        })
    }
}

/// Whether `make_map` insists on a strict reduction `m̃ < m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReductionPolicy {
    #[default]
    Strict,
    /// Also accept `m̃ = m`. Only meaningful for equivalence checks against
    /// centralized training; such a map is invertible and offers no privacy.
    AllowFullRank,
}

/// Row-wise map `x ↦ (x − mean) · projection`.
///
/// Neither `Clone` nor serializable, and its buffers are zeroed when it is
/// dropped.
pub struct WorkerMap {
    kind: MapKind,
    mean: RowDVector<f64>,
    projection: Matrix,
    seeded: bool,
}

impl fmt::Debug for WorkerMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerMap")
            .field("kind", &self.kind)
            .field("m", &self.input_dim())
            .field("m_tilde", &self.m_tilde())
            .finish_non_exhaustive()
    }
}

impl Drop for WorkerMap {
    fn drop(&mut self) {
        self.projection.fill(0.0);
        self.mean.fill(0.0);
        std::hint::black_box(&self.projection);
        std::hint::black_box(&self.mean);
    }
}

impl WorkerMap {
    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn m_tilde(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(center_rows(x, &self.mean)? * &self.projection)
    }

    /// Opaque copy that can only be applied, available when the map was
    /// drawn from a seeded source (and could therefore be regenerated
    /// anyway). Entropy-drawn maps return `None`.
    pub fn sealed_replay(&self) -> Option<SealedReplay> {
        self.seeded.then(|| SealedReplay {
            mean: self.mean.clone(),
            projection: self.projection.clone(),
        })
    }
}

/// Apply-only replay of a seeded [`WorkerMap`], for verification.
pub struct SealedReplay {
    mean: RowDVector<f64>,
    projection: Matrix,
}

impl fmt::Debug for SealedReplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealedReplay(..)")
    }
}

impl SealedReplay {
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(center_rows(x, &self.mean)? * &self.projection)
    }
}

pub fn make_map(x: &Matrix, m_tilde: usize, kind: MapKind, src: &mut RandomSource) -> Result<WorkerMap> {
    make_map_with(x, m_tilde, kind, ReductionPolicy::Strict, src)
}

pub fn make_map_with(
    x: &Matrix,
    m_tilde: usize,
    kind: MapKind,
    policy: ReductionPolicy,
    src: &mut RandomSource,
) -> Result<WorkerMap> {
    let m = x.ncols();
    let too_wide = match policy {
        ReductionPolicy::Strict => m_tilde >= m,
        ReductionPolicy::AllowFullRank => m_tilde > m,
    };
    if too_wide || m_tilde == 0 {
        return Err(Error::Dimensionality { m_tilde, m });
    }
    let p = pca(x, m_tilde)?;
    let projection = match kind {
        MapKind::NaivePca => p.basis,
        MapKind::ProposedRandomized => &p.basis * mixing_matrix(m_tilde, src)?,
    };
    Ok(WorkerMap {
        kind,
        mean: p.mean,
        projection,
        seeded: src.is_seeded(),
    })
}

fn mixing_matrix(k: usize, src: &mut RandomSource) -> Result<Matrix> {
    for _ in 0..MAX_MIXING_DRAWS {
        let e = random_gaussian(k, k, src);
        let sv = svd(&e)?.singular_values;
        let (hi, lo) = (sv[0], sv[k - 1]);
        if lo > 0.0 && hi / lo <= MAX_MIXING_CONDITION {
            return Ok(e);
        }
    }
    Err(Error::SingularSystem(
        "could not draw a well-conditioned mixing matrix".into(),
    ))
}

/// What a party uploads to the master.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateShare {
    pub party_id: usize,
    /// Mapped, row-permuted training rows (n_i × m̃).
    pub x_tilde: Matrix,
    /// Mapped anchor rows, unpermuted (r × m̃).
    pub x_tilde_anc: Matrix,
    /// Labels under the same row permutation as `x_tilde` (n_i × ℓ).
    pub y_prime: Matrix,
}

impl IntermediateShare {
    pub fn m_tilde(&self) -> usize {
        self.x_tilde.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_tilde.nrows() != self.y_prime.nrows() {
            return Err(Error::InvalidShape(format!(
                "share {}: {} mapped rows but {} label rows",
                self.party_id,
                self.x_tilde.nrows(),
                self.y_prime.nrows()
            )));
        }
        if self.x_tilde.ncols() != self.x_tilde_anc.ncols() {
            return Err(Error::InvalidShape(format!(
                "share {}: mapped rows have {} columns, mapped anchor has {}",
                self.party_id,
                self.x_tilde.ncols(),
                self.x_tilde_anc.ncols()
            )));
        }
        Ok(())
    }

    pub fn to_record(&self) -> ShareRecord {
        ShareRecord {
            party_id: self.party_id,
            m_tilde: self.m_tilde(),
            x_tilde: (&self.x_tilde).into(),
            x_tilde_anc: (&self.x_tilde_anc).into(),
            y_prime: (&self.y_prime).into(),
        }
    }

    /// Write the share as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_record())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rec: ShareRecord = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidInput(format!("share file: {e}")))?;
        rec.try_into()
    }
}

/// Export layout of an [`IntermediateShare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRecord {
    pub party_id: usize,
    pub m_tilde: usize,
    pub x_tilde: MatrixRecord,
    pub x_tilde_anc: MatrixRecord,
    pub y_prime: MatrixRecord,
}

impl TryFrom<ShareRecord> for IntermediateShare {
    type Error = Error;

    fn try_from(rec: ShareRecord) -> Result<Self> {
        let share = IntermediateShare {
            party_id: rec.party_id,
            x_tilde: rec.x_tilde.try_into()?,
            x_tilde_anc: rec.x_tilde_anc.try_into()?,
            y_prime: rec.y_prime.try_into()?,
        };
        share.validate()?;
        if share.m_tilde() != rec.m_tilde {
            return Err(Error::InvalidShape(format!(
                "share declares m_tilde {} but carries {} columns",
                rec.m_tilde,
                share.m_tilde()
            )));
        }
        Ok(share)
    }
}

fn check_inputs(map: &WorkerMap, x: &Matrix, y: &Matrix, x_anc: &Matrix) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::InvalidShape(format!(
            "{} data rows but {} label rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() != map.input_dim() || x_anc.ncols() != map.input_dim() {
        return Err(Error::InvalidShape(format!(
            "map expects {} columns; data has {}, anchor has {}",
            map.input_dim(),
            x.ncols(),
            x_anc.ncols()
        )));
    }
    Ok(())
}

fn build_share(
    party_id: usize,
    map: &WorkerMap,
    x: &Matrix,
    y: &Matrix,
    x_anc: &Matrix,
    permute: bool,
    src: &mut RandomSource,
) -> Result<IntermediateShare> {
    check_inputs(map, x, y, x_anc)?;
    let mapped = map.apply(x)?;
    let x_tilde_anc = map.apply(x_anc)?;
    let (x_tilde, y_prime) = if permute {
        let p = random_permutation(x.nrows(), src);
        (p.apply_rows(&mapped)?, p.apply_rows(y)?)
    } else {
        (mapped, y.clone())
    };
    Ok(IntermediateShare {
        party_id,
        x_tilde,
        x_tilde_anc,
        y_prime,
    })
}

/// Encode and upload-ready share; the map and the permutation do not
/// survive this call.
pub fn encode_share(
    party_id: usize,
    map: WorkerMap,
    x: &Matrix,
    y: &Matrix,
    x_anc: &Matrix,
    permute: bool,
    src: &mut RandomSource,
) -> Result<IntermediateShare> {
    build_share(party_id, &map, x, y, x_anc, permute, src)
}

/// Share for the conventional protocol, where the party keeps its map to
/// transform test rows later.
pub fn encode_share_retaining(
    party_id: usize,
    map: &WorkerMap,
    x: &Matrix,
    y: &Matrix,
    x_anc: &Matrix,
    permute: bool,
    src: &mut RandomSource,
) -> Result<IntermediateShare> {
    build_share(party_id, map, x, y, x_anc, permute, src)
}

/// Party-local model from raw features to the master's anchor predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDistilledModel {
    pub party_id: usize,
    pub model: RidgeModel,
}

impl LocalDistilledModel {
    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }
}

pub fn fit_local_model(party_id: usize, x_anc: &Matrix, y_anc: &Matrix, lambda: f64) -> Result<LocalDistilledModel> {
    Ok(LocalDistilledModel {
        party_id,
        model: ridge_fit(x_anc, y_anc, lambda)?,
    })
}

pub fn predict_local(model: &LocalDistilledModel, x_test: &Matrix) -> Result<Matrix> {
    model.model.predict(x_test)
}
