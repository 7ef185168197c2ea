//! Identifiability checks: correlation between raw features and a shared
//! representation, record-linkage attacks against shares, and distinctness of
//! independently drawn maps.
//!
//! The auditor holds the ground-truth row correspondence and uses it only to
//! score attacks, never to run them.

use std::fmt::{self, Write as _};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixkit::{pseudo_inverse, Matrix, RandomSource};
use crate::worker::{SealedReplay, WorkerMap};

/// Attack accuracy above which a share counts as readily identifiable.
pub const IDENTIFIABLE_ACCURACY: f64 = 0.5;
/// Correlation at or above which a representation counts as readily
/// identifiable.
pub const IDENTIFIABLE_CORRELATION: f64 = 0.95;
/// Descriptive correlation level, reported but not used for the verdict.
pub const SOFT_CORRELATION: f64 = 0.4;

/// Pearson correlation of every column of `x` with every column of `rep`
/// (`m × m̃`) and the largest absolute entry. Zero-variance columns correlate
/// 0 with everything.
pub fn correlation_audit(x: &Matrix, rep: &Matrix) -> Result<(f64, Matrix)> {
    if x.nrows() != rep.nrows() {
        return Err(Error::InvalidShape(format!(
            "{} raw rows but {} representation rows",
            x.nrows(),
            rep.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.nrows(),
        });
    }
    let xs = standardized_columns(x);
    let rs = standardized_columns(rep);
    let mut corr = Matrix::zeros(x.ncols(), rep.ncols());
    for (i, a) in xs.iter().enumerate() {
        for (j, b) in rs.iter().enumerate() {
            corr[(i, j)] = match (a, b) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0),
                _ => 0.0,
            };
        }
    }
    let max = corr.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((max, corr))
}

/// Columns centered and scaled to unit norm; `None` for constant columns.
fn standardized_columns(a: &Matrix) -> Vec<Option<Vec<f64>>> {
    a.column_iter()
        .map(|c| {
            let mean = c.mean();
            let v: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = c.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(f64::MIN_POSITIVE);
            (norm > 1e-12 * scale * (v.len() as f64).sqrt()).then(|| v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStrategy {
    /// Collate the k-th shared row with the k-th raw row.
    RowIndex,
    /// Map the raw rows with a held map and match nearest neighbours.
    KnownMapNn,
    /// Fit a linear map on disclosed true pairs and match the rest.
    LearnedMapNn,
}

impl AttackStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackStrategy::RowIndex => "row_index",
            AttackStrategy::KnownMapNn => "known_map_nn",
            AttackStrategy::LearnedMapNn => "learned_map_nn",
        }
    }
}

impl fmt::Display for AttackStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AttackStrategy::RowIndex, AttackStrategy::KnownMapNn, AttackStrategy::LearnedMapNn]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown attack strategy `{s}`")))
    }
}

/// A map the attacker holds.
#[derive(Clone, Copy)]
pub enum HeldMap<'a> {
    Map(&'a WorkerMap),
    Replay(&'a SealedReplay),
}

impl HeldMap<'_> {
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            HeldMap::Map(m) => m.apply(x),
            HeldMap::Replay(r) => r.apply(x),
        }
    }
}

/// What the attacker has besides the share itself.
#[derive(Clone, Copy, Default)]
pub struct AttackerKnowledge<'a> {
    pub map: Option<HeldMap<'a>>,
    /// Fraction of true pairs disclosed to the attacker, in `[0, 1]`.
    pub disclosed_fraction: Option<f64>,
}

/// Fraction of shared rows collated with the right raw row.
///
/// `truth[k]` is the raw row behind shared row `k`; it is used for scoring
/// and, for [`AttackStrategy::LearnedMapNn`], to reveal the disclosed pairs.
/// `src` breaks ties and drives guessing when the attacker has nothing to
/// learn from.
pub fn linkage_attack(
    x: &Matrix,
    shared: &Matrix,
    truth: &[usize],
    strategy: AttackStrategy,
    knowledge: &AttackerKnowledge<'_>,
    src: &mut RandomSource,
) -> Result<f64> {
    let n = x.nrows();
    if shared.nrows() != n || truth.len() != n {
        return Err(Error::InvalidShape(format!(
            "{} raw rows, {} shared rows, {} truth entries",
            n,
            shared.nrows(),
            truth.len()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let score = |guess: &[usize], rows: &[usize]| {
        let hits = rows.iter().filter(|&&k| guess[k] == truth[k]).count();
        hits as f64 / rows.len() as f64
    };
    let all: Vec<usize> = (0..n).collect();

    match strategy {
        AttackStrategy::RowIndex => Ok(score(&all, &all)),
        AttackStrategy::KnownMapNn => {
            let map = knowledge
                .map
                .ok_or_else(|| Error::MissingCapability("known_map_nn needs the party's map".into()))?;
            let images = map.apply(x)?;
            if images.ncols() != shared.ncols() {
                return Err(Error::InvalidShape("held map does not match the share width".into()));
            }
            let guess = nearest_rows(shared, &images, &all, src);
            Ok(score(&guess, &all))
        }
        AttackStrategy::LearnedMapNn => {
            let fraction = knowledge
                .disclosed_fraction
                .ok_or_else(|| Error::MissingCapability("learned_map_nn needs disclosed pairs".into()))?;
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InvalidInput(format!("disclosed fraction {fraction} outside [0, 1]")));
            }
            let disclosed = ((fraction * n as f64).round() as usize).min(n);
            if disclosed == n {
                return Err(Error::InvalidInput("no undisclosed rows left to attack".into()));
            }
            let mut order = all.clone();
            order.shuffle(src);
            let (known, hidden) = order.split_at(disclosed);
            let used: Vec<usize> = known.iter().map(|&k| truth[k]).collect();
            let candidates: Vec<usize> = all.iter().copied().filter(|j| !used.contains(j)).collect();

            let guess = if known.is_empty() {
                // Nothing to learn from: a uniformly random collation.
                let mut pool = candidates.clone();
                pool.shuffle(src);
                let mut g = vec![usize::MAX; n];
                for (&k, &j) in hidden.iter().zip(&pool) {
                    g[k] = j;
                }
                g
            } else {
                let raw_known = crate::matrixkit::select_rows(&with_ones(x), &used);
                let rep_known = crate::matrixkit::select_rows(shared, known);
                let w = pseudo_inverse(&raw_known)? * rep_known;
                let images = with_ones(x) * w;
                nearest_rows(shared, &images, &candidates, src)
            };
            Ok(score(&guess, hidden))
        }
    }
}

fn with_ones(x: &Matrix) -> Matrix {
    x.clone().insert_column(x.ncols(), 1.0)
}

/// For every row of `shared`, the candidate row of `images` closest to it,
/// ties broken at random.
fn nearest_rows(shared: &Matrix, images: &Matrix, candidates: &[usize], src: &mut RandomSource) -> Vec<usize> {
    shared
        .row_iter()
        .map(|row| {
            let dist: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&j| (j, (images.row(j) - row).norm_squared()))
                .collect();
            let best = dist.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * best.max(1e-300);
            let tied: Vec<usize> = dist.iter().filter(|d| d.1 <= best + tol).map(|d| d.0).collect();
            *tied.choose(src).expect("at least one candidate")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distinctness {
    /// Smallest relative Frobenius distance between two representations.
    pub min_relative_distance: f64,
    /// Largest |correlation| between same-index columns of two
    /// representations.
    pub max_column_correlation: f64,
}

/// `‖A − B‖_F / max(‖A‖_F, ‖B‖_F)`; zero when both are zero.
pub fn relative_distance(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Build `trials` maps from `factory`, apply each to `x`, and compare every
/// pair of representations.
pub fn reconstruction_distinctness<F>(x: &Matrix, trials: usize, mut factory: F) -> Result<Distinctness>
where
    F: FnMut(usize) -> Result<WorkerMap>,
{
    if trials < 2 {
        return Err(Error::InvalidInput("at least two maps are needed".into()));
    }
    let reps = (0..trials)
        .map(|t| factory(t).and_then(|map| map.apply(x)))
        .collect::<Result<Vec<_>>>()?;
    let mut min_dist = f64::INFINITY;
    let mut max_corr = 0.0f64;
    for i in 0..trials {
        for j in i + 1..trials {
            let (a, b) = (&reps[i], &reps[j]);
            if a.shape() != b.shape() {
                return Err(Error::InvalidShape("maps disagree on the output width".into()));
            }
            min_dist = min_dist.min(relative_distance(a, b));
            let (_, corr) = correlation_audit(a, b)?;
            for k in 0..corr.nrows() {
                max_corr = max_corr.max(corr[(k, k)].abs());
            }
        }
    }
    Ok(Distinctness {
        min_relative_distance: min_dist,
        max_column_correlation: max_corr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ReadilyIdentifiable,
    NonReadilyIdentifiable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::ReadilyIdentifiable => "readily_identifiable",
            Verdict::NonReadilyIdentifiable => "non_readily_identifiable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub max_abs_correlation: f64,
    pub correlation_matrix: Matrix,
    pub linkage_accuracy: Vec<(AttackStrategy, f64)>,
    pub chance_level: f64,
    pub reconstruction_distance: Option<f64>,
    pub verdict: Verdict,
    /// Which rules fired, in words.
    pub trace: Vec<String>,
}

impl AuditReport {
    pub fn new(
        max_abs_correlation: f64,
        correlation_matrix: Matrix,
        linkage_accuracy: Vec<(AttackStrategy, f64)>,
        rows: usize,
        reconstruction_distance: Option<f64>,
    ) -> Self {
        let mut trace = Vec::new();
        for (strategy, acc) in &linkage_accuracy {
            if *acc > IDENTIFIABLE_ACCURACY {
                trace.push(format!("{strategy} accuracy {acc:.3} > {IDENTIFIABLE_ACCURACY}"));
            }
        }
        if max_abs_correlation >= IDENTIFIABLE_CORRELATION {
            trace.push(format!(
                "max |correlation| {max_abs_correlation:.3} >= {IDENTIFIABLE_CORRELATION}"
            ));
        }
        let verdict = if trace.is_empty() {
            Verdict::NonReadilyIdentifiable
        } else {
            Verdict::ReadilyIdentifiable
        };
        if verdict == Verdict::NonReadilyIdentifiable {
            trace.push("no attack above threshold and no near-copy column".into());
        }
        if max_abs_correlation < SOFT_CORRELATION {
            trace.push(format!("max |correlation| below the soft level {SOFT_CORRELATION}"));
        }
        Self {
            max_abs_correlation,
            correlation_matrix,
            linkage_accuracy,
            chance_level: 1.0 / rows.max(1) as f64,
            reconstruction_distance,
            verdict,
            trace,
        }
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "verdict = {}", self.verdict);
        let _ = writeln!(out, "max_abs_correlation = {:.6}", self.max_abs_correlation);
        let _ = writeln!(out, "chance_level = {:.6}", self.chance_level);
        for (s, a) in &self.linkage_accuracy {
            let _ = writeln!(out, "linkage_accuracy.{s} = {a:.6}");
        }
        if let Some(d) = self.reconstruction_distance {
            let _ = writeln!(out, "reconstruction_distance = {d:.6}");
        }
        for t in &self.trace {
            let _ = writeln!(out, "trace = {t}");
        }
        out
    }
}

/// Correlation audit plus the row-index attack, for a representation whose
/// rows are aligned with `x`.
pub fn audit_aligned(x: &Matrix, rep: &Matrix) -> Result<AuditReport> {
    let (max, corr) = correlation_audit(x, rep)?;
    let truth: Vec<usize> = (0..x.nrows()).collect();
    let acc = linkage_attack(
        x,
        rep,
        &truth,
        AttackStrategy::RowIndex,
        &AttackerKnowledge::default(),
        &mut RandomSource::seeded(0),
    )?;
    Ok(AuditReport::new(max, corr, vec![(AttackStrategy::RowIndex, acc)], x.nrows(), None))
}
