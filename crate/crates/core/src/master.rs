//! Master-side fusion of the parties' shares.
//!
//! The mapped anchor blocks are concatenated column-wise and reduced with a
//! rank-m̂ SVD; each party's alignment map is `G_i = pinv(block_i) · U · C`.
//! Aligned training rows from all parties are then analyzed as one dataset.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixkit::{hstack, pseudo_inverse, ridge_fit, svd, vstack, Matrix, RidgeModel, PINV_RCOND};
use crate::worker::IntermediateShare;

/// Right factor applied after projecting onto the shared left singular
/// vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    #[default]
    Identity,
    Sigma,
}

impl fmt::Display for CMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CMode::Identity => "identity",
            CMode::Sigma => "sigma",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CollabMaps {
    /// One `m̃_i × m̂` map per party, in share order.
    pub g: Vec<Matrix>,
    pub m_hat: usize,
    pub c_mode: CMode,
    /// Leading singular values of the concatenated anchor blocks.
    pub singular_values: Vec<f64>,
    /// Rank-deficiency notes, one per affected party.
    pub warnings: Vec<String>,
}

impl CollabMaps {
    pub fn parties(&self) -> usize {
        self.g.len()
    }

    /// `x_tilde · G_party`.
    pub fn align(&self, party: usize, x_tilde: &Matrix) -> Result<Matrix> {
        let g = self
            .g
            .get(party)
            .ok_or_else(|| Error::InvalidInput(format!("no collaboration map for party {party}")))?;
        if x_tilde.ncols() != g.nrows() {
            return Err(Error::InvalidShape(format!(
                "party {party}: representation has {} columns, map expects {}",
                x_tilde.ncols(),
                g.nrows()
            )));
        }
        Ok(x_tilde * g)
    }
}

pub fn compute_collab_maps(anchor_blocks: &[Matrix], m_hat: usize, c_mode: CMode) -> Result<CollabMaps> {
    let Some(first) = anchor_blocks.first() else {
        return Err(Error::InvalidInput("no anchor blocks".into()));
    };
    let r = first.nrows();
    if anchor_blocks.iter().any(|b| b.nrows() != r) {
        return Err(Error::InvalidShape("anchor blocks differ in row count".into()));
    }
    let total: usize = anchor_blocks.iter().map(|b| b.ncols()).sum();
    if m_hat < 1 || m_hat > total {
        return Err(Error::InvalidRank {
            rank: m_hat,
            min: 1,
            max: total,
        });
    }
    if r < m_hat {
        return Err(Error::InsufficientAnchor { rows: r, needed: m_hat });
    }

    let stacked = hstack(&anchor_blocks.iter().collect::<Vec<_>>())?;
    let f = svd(&stacked)?;
    let u = f.u.columns(0, m_hat).into_owned();
    let sv = f.singular_values[..m_hat].to_vec();
    let target = match c_mode {
        CMode::Identity => u,
        CMode::Sigma => u * Matrix::from_diagonal(&DVector::from_column_slice(&sv)),
    };

    let mut g = Vec::with_capacity(anchor_blocks.len());
    let mut warnings = Vec::new();
    for (i, block) in anchor_blocks.iter().enumerate() {
        let rank = svd(block)?.numerical_rank(PINV_RCOND);
        if rank < block.ncols() {
            warnings.push(format!(
                "party {i}: anchor block has numerical rank {rank} < {}",
                block.ncols()
            ));
        }
        g.push(pseudo_inverse(block)? * &target);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CollabMaps {
        g,
        m_hat,
        c_mode,
        singular_values: sv,
        warnings,
    })
}

/// Stack `X̃'_i · G_i` and `Y'_i` in party order.
pub fn assemble_collab(shares: &[IntermediateShare], maps: &CollabMaps) -> Result<(Matrix, Matrix)> {
    if shares.len() != maps.parties() {
        return Err(Error::InvalidShape(format!(
            "{} shares but {} collaboration maps",
            shares.len(),
            maps.parties()
        )));
    }
    let mut aligned = Vec::with_capacity(shares.len());
    for (i, share) in shares.iter().enumerate() {
        share.validate()?;
        aligned.push(maps.align(i, &share.x_tilde)?);
    }
    let labels: Vec<&Matrix> = shares.iter().map(|s| &s.y_prime).collect();
    let x_hat = vstack(&aligned.iter().collect::<Vec<_>>())?;
    let y_prime = vstack(&labels)?;
    Ok((x_hat, y_prime))
}

#[derive(Debug, Clone)]
pub struct CollabModel {
    pub maps: CollabMaps,
    pub h: RidgeModel,
}

impl CollabModel {
    /// `h(x_tilde · G_party)`: prediction through the collaboration space.
    pub fn predict_mapped(&self, party: usize, x_tilde: &Matrix) -> Result<Matrix> {
        self.h.predict(&self.maps.align(party, x_tilde)?)
    }
}

pub fn fit_collab_model(x_hat: &Matrix, y_prime: &Matrix, lambda: f64, maps: CollabMaps) -> Result<CollabModel> {
    if x_hat.ncols() != maps.m_hat {
        return Err(Error::InvalidShape(format!(
            "collaboration representation has {} columns, m̂ = {}",
            x_hat.ncols(),
            maps.m_hat
        )));
    }
    Ok(CollabModel {
        h: ridge_fit(x_hat, y_prime, lambda)?,
        maps,
    })
}

/// `Y_i^anc = h(X̃_i^anc · G_i)` for every party.
pub fn predict_anchor(model: &CollabModel, shares: &[IntermediateShare]) -> Result<Vec<Matrix>> {
    if shares.len() != model.maps.parties() {
        return Err(Error::InvalidShape(format!(
            "{} shares but {} collaboration maps",
            shares.len(),
            model.maps.parties()
        )));
    }
    shares
        .iter()
        .enumerate()
        .map(|(i, s)| model.predict_mapped(i, &s.x_tilde_anc))
        .collect()
}
