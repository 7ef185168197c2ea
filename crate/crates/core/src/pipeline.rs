//! End-to-end runs of the four analysis modes and the multi-trial harness.
//!
//! The per-role steps of the collaboration protocol live in [`steps`] so the
//! in-process runner and the networked runtime execute the same code with
//! the same random streams.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::anchor::{DEFAULT_ANCHOR_ROWS, DEFAULT_DELTA};
use crate::dataio::{horizontal_split, positive_column, LabeledDataset};
use crate::error::{Error, Result};
use crate::master::CMode;
use crate::matrixkit::{derive_seed, ridge_fit, vstack, Matrix, RandomSource, DEFAULT_LAMBDA};
use crate::worker::{MapKind, ReductionPolicy};

/// Trials used when none is configured.
pub const DEFAULT_TRIALS: usize = 20;
/// Attempts at drawing a split whose test set holds both classes.
const MAX_SPLIT_DRAWS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Local,
    Centralized,
    DcNaive,
    DcProposed,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Local, Mode::Centralized, Mode::DcNaive, Mode::DcProposed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Local => "local",
            Mode::Centralized => "centralized",
            Mode::DcNaive => "dc_naive",
            Mode::DcProposed => "dc_proposed",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Mode::Local => "Local",
            Mode::Centralized => "Centralized",
            Mode::DcNaive => "DC-naive",
            Mode::DcProposed => "DC-proposed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown mode `{s}`")))
    }
}

/// Parse a comma-separated mode list.
pub fn parse_modes(list: &str) -> Result<Vec<Mode>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Mode::from_str)
        .collect()
}

/// Seeds for the three independent streams of a run. `None` means OS
/// entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    /// The one seed shared by all parties: local anchor perturbations and
    /// anchor assembly.
    #[serde(default)]
    pub anchor_seed: Option<u64>,
    #[serde(default)]
    pub split_seed: Option<u64>,
    /// Party-private maps and permutations.
    #[serde(default)]
    pub trial_seed: Option<u64>,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            anchor_seed: Some(derive_seed(seed, 0xA)),
            split_seed: Some(derive_seed(seed, 0xB)),
            trial_seed: Some(derive_seed(seed, 0xC)),
        }
    }

    /// Seeds for trial `index`: each present seed XOR-folded with the index.
    pub fn for_trial(&self, index: usize) -> Self {
        let fold = |s: Option<u64>| s.map(|s| derive_seed(s, index as u64));
        Self {
            anchor_seed: fold(self.anchor_seed),
            split_seed: fold(self.split_seed),
            trial_seed: fold(self.trial_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Reduced width per party; `min(m, n_i) − 1` when unset.
    pub m_tilde: Option<usize>,
    /// Collaboration width; the smallest party width when unset.
    pub m_hat: Option<usize>,
    pub c_mode: CMode,
    pub lambda_collab: f64,
    /// Penalty for the local, centralized and distilled models.
    pub lambda_local: f64,
    pub r: usize,
    pub delta: f64,
    /// Truncation rank for local anchors; `⌈min(n_i, m)/2⌉` when unset.
    pub anchor_rank: Option<usize>,
    pub permute: bool,
    #[serde(flatten)]
    pub seeds: Seeds,
    pub party_sizes: Vec<usize>,
    pub test_size: usize,
    /// Accept `m̃ = m`. Only for equivalence checks.
    pub allow_full_rank: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::DcProposed,
            m_tilde: None,
            m_hat: None,
            c_mode: CMode::Identity,
            lambda_collab: DEFAULT_LAMBDA,
            lambda_local: DEFAULT_LAMBDA,
            r: DEFAULT_ANCHOR_ROWS,
            delta: DEFAULT_DELTA,
            anchor_rank: None,
            permute: true,
            seeds: Seeds::default(),
            party_sizes: vec![10; 4],
            test_size: 20,
            allow_full_rank: false,
        }
    }
}

impl RunConfig {
    /// Reduced width for a party holding `n` rows of `m` features.
    pub fn m_tilde_for(&self, m: usize, n: usize) -> usize {
        self.m_tilde.unwrap_or_else(|| m.min(n).saturating_sub(1).max(1))
    }

    /// Collaboration width given the parties' reduced widths.
    pub fn m_hat_for(&self, widths: &[usize]) -> usize {
        self.m_hat
            .unwrap_or_else(|| widths.iter().copied().min().unwrap_or(0))
    }

    pub fn reduction_policy(&self) -> ReductionPolicy {
        if self.allow_full_rank {
            ReductionPolicy::AllowFullRank
        } else {
            ReductionPolicy::Strict
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if self.party_sizes.is_empty() {
            return bad("at least one party is required".into());
        }
        if let Some(&n) = self.party_sizes.iter().find(|&&n| n < 2) {
            return bad(format!("party size {n} is below 2"));
        }
        if let Some(m_tilde) = self.m_tilde {
            let limit_ok = if self.allow_full_rank { m_tilde <= m } else { m_tilde < m };
            if m_tilde == 0 || !limit_ok {
                return bad(format!("m_tilde = {m_tilde} is not a reduction of m = {m}"));
            }
        }
        if m < 2 && !self.allow_full_rank {
            return bad("at least two features are needed to reduce".into());
        }
        if self.m_hat == Some(0) {
            return bad("m_hat must be ≥ 1".into());
        }
        if self.r == 0 {
            return bad("r must be ≥ 1".into());
        }
        if self.test_size < 2 {
            return bad("test_size must be ≥ 2".into());
        }
        for (name, v) in [("lambda_collab", self.lambda_collab), ("lambda_local", self.lambda_local), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite value ≥ 0"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Configuration(format!("config file: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Party datasets plus the shared test set of one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub parties: Vec<LabeledDataset>,
    pub test: LabeledDataset,
}

/// Split `data` into the configured parties and a test set drawn from the
/// remaining rows. Splits whose test set holds a single class are redrawn
/// from the next split stream.
pub fn prepare_trial(config: &RunConfig, data: &LabeledDataset) -> Result<TrialData> {
    config.validate(data.num_features())?;
    let needed: usize = config.party_sizes.iter().sum::<usize>() + config.test_size;
    if needed > data.len() {
        return Err(Error::Configuration(format!(
            "{needed} rows needed (parties + test) but the dataset has {}",
            data.len()
        )));
    }
    let base = RandomSource::from_option(config.seeds.split_seed);
    for attempt in 0..MAX_SPLIT_DRAWS {
        let mut src = base.fork(attempt);
        let part = horizontal_split(data, &config.party_sizes, &mut src)?;
        let test = data.subset(&part.holdout[..config.test_size]);
        let labels = test.positive_labels();
        if labels.iter().any(|&b| b) && labels.iter().any(|&b| !b) {
            return Ok(TrialData {
                parties: part.parties,
                test,
            });
        }
    }
    Err(Error::Configuration(
        "could not draw a test set containing both classes".into(),
    ))
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub mode: Mode,
    /// Test-set predictions, one matrix per party.
    pub predictions: Vec<Matrix>,
    pub auc: Vec<f64>,
    /// Anchor predictions returned to each party (proposed mode only).
    pub anchor_predictions: Vec<Matrix>,
    pub wall_time: Duration,
}

impl PredictionResult {
    pub fn mean_auc(&self) -> f64 {
        self.auc.iter().sum::<f64>() / self.auc.len().max(1) as f64
    }
}

/// Split, then run the configured mode.
pub fn run(config: &RunConfig, data: &LabeledDataset) -> Result<PredictionResult> {
    let trial = prepare_trial(config, data)?;
    run_trial(config, &trial)
}

pub fn run_trial(config: &RunConfig, trial: &TrialData) -> Result<PredictionResult> {
    let start = Instant::now();
    let m = trial.test.num_features();
    config.validate(m)?;
    if trial.parties.iter().any(|p| p.num_features() != m) {
        return Err(Error::Configuration("parties disagree on the feature count".into()));
    }
    let x_test = &trial.test.x;

    let mut anchor_predictions = Vec::new();
    let predictions = match config.mode {
        Mode::Local => trial
            .parties
            .iter()
            .map(|p| ridge_fit(&p.x, &p.y, config.lambda_local)?.predict(x_test))
            .collect::<Result<Vec<_>>>()?,
        Mode::Centralized => {
            let xs: Vec<&Matrix> = trial.parties.iter().map(|p| &p.x).collect();
            let ys: Vec<&Matrix> = trial.parties.iter().map(|p| &p.y).collect();
            let model = ridge_fit(&vstack(&xs)?, &vstack(&ys)?, config.lambda_local)?;
            let pred = model.predict(x_test)?;
            vec![pred; trial.parties.len()]
        }
        Mode::DcNaive => steps::run_naive(config, trial)?,
        Mode::DcProposed => {
            let out = steps::run_proposed(config, trial)?;
            anchor_predictions = out.anchor_predictions;
            out.predictions
        }
    };

    let labels = trial.test.positive_labels();
    let col = positive_column(trial.test.y.ncols());
    let auc = predictions
        .iter()
        .map(|p| {
            let scores: Vec<f64> = p.column(col).iter().copied().collect();
            auc(&scores, &labels)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PredictionResult {
        mode: config.mode,
        predictions,
        auc,
        anchor_predictions,
        wall_time: start.elapsed(),
    })
}

/// Per-role steps of the collaboration protocol.
pub mod steps {
    use super::*;
    use crate::anchor::{assemble_anchor, default_anchor_rank, local_anchor, AnchorSet};
    use crate::master::{assemble_collab, compute_collab_maps, fit_collab_model, predict_anchor, CollabModel};
    use crate::worker::{
        encode_share, encode_share_retaining, fit_local_model, make_map_with, predict_local, IntermediateShare,
        LocalDistilledModel, WorkerMap,
    };

    /// Stream index of the anchor assembly within the anchor seed.
    const ASSEMBLY_STREAM: u64 = 0;

    pub fn anchor_rank(config: &RunConfig, x: &Matrix) -> usize {
        let cap = x.nrows().min(x.ncols());
        config
            .anchor_rank
            .unwrap_or_else(|| default_anchor_rank(x.nrows(), x.ncols()))
            .min(cap)
    }

    /// Party `party`'s contribution to the anchor pool.
    pub fn local_anchor_part(config: &RunConfig, party: usize, x: &Matrix, anchor_seed: u64) -> Result<Matrix> {
        let mut src = RandomSource::seeded(anchor_seed).fork(1 + party as u64);
        local_anchor(x, anchor_rank(config, x), config.delta, &mut src)
    }

    pub fn assemble(config: &RunConfig, locals: &[Matrix], anchor_seed: u64) -> Result<AnchorSet> {
        let mut src = RandomSource::seeded(anchor_seed).fork(ASSEMBLY_STREAM);
        let mut set = assemble_anchor(locals, config.r, &mut src)?;
        set.delta = Some(config.delta);
        Ok(set)
    }

    /// Sources for party `party`'s map and permutation. They are separate
    /// streams so toggling the permutation leaves the map unchanged.
    pub fn secret_sources(config: &RunConfig, party: usize) -> (RandomSource, RandomSource) {
        let base = RandomSource::from_option(config.seeds.trial_seed);
        (base.fork(2 * party as u64), base.fork(2 * party as u64 + 1))
    }

    pub fn make_party_map(config: &RunConfig, party: usize, x: &Matrix, kind: MapKind) -> Result<(WorkerMap, RandomSource)> {
        let (mut map_src, perm_src) = secret_sources(config, party);
        let map = make_map_with(x, config.m_tilde_for(x.ncols(), x.nrows()), kind, config.reduction_policy(), &mut map_src)?;
        Ok((map, perm_src))
    }

    /// Build, apply and discard the randomized map of one party.
    pub fn proposed_share(config: &RunConfig, party: usize, data: &LabeledDataset, x_anc: &Matrix) -> Result<IntermediateShare> {
        let (map, mut perm_src) = make_party_map(config, party, &data.x, MapKind::ProposedRandomized)?;
        encode_share(party, map, &data.x, &data.y, x_anc, config.permute, &mut perm_src)
    }

    pub fn fuse(config: &RunConfig, shares: &[IntermediateShare]) -> Result<CollabModel> {
        let blocks: Vec<Matrix> = shares.iter().map(|s| s.x_tilde_anc.clone()).collect();
        let widths: Vec<usize> = blocks.iter().map(|b| b.ncols()).collect();
        let maps = compute_collab_maps(&blocks, config.m_hat_for(&widths), config.c_mode)?;
        let (x_hat, y_prime) = assemble_collab(shares, &maps)?;
        fit_collab_model(&x_hat, &y_prime, config.lambda_collab, maps)
    }

    /// Master side after all shares arrived: anchor predictions per party.
    pub fn master_round(config: &RunConfig, shares: &[IntermediateShare]) -> Result<Vec<Matrix>> {
        let model = fuse(config, shares)?;
        predict_anchor(&model, shares)
    }

    pub fn distill(config: &RunConfig, party: usize, x_anc: &Matrix, y_anc: &Matrix) -> Result<LocalDistilledModel> {
        fit_local_model(party, x_anc, y_anc, config.lambda_local)
    }

    fn resolve_anchor_seed(config: &RunConfig) -> u64 {
        config
            .seeds
            .anchor_seed
            .unwrap_or_else(|| RandomSource::entropy().next_u64())
    }

    fn shared_anchor(config: &RunConfig, trial: &TrialData) -> Result<AnchorSet> {
        let seed = resolve_anchor_seed(config);
        let locals = trial
            .parties
            .iter()
            .enumerate()
            .map(|(i, p)| local_anchor_part(config, i, &p.x, seed))
            .collect::<Result<Vec<_>>>()?;
        assemble(config, &locals, seed)
    }

    pub fn run_naive(config: &RunConfig, trial: &TrialData) -> Result<Vec<Matrix>> {
        let anchor = shared_anchor(config, trial)?;
        let mut maps = Vec::with_capacity(trial.parties.len());
        let mut shares = Vec::with_capacity(trial.parties.len());
        for (i, p) in trial.parties.iter().enumerate() {
            let (map, mut perm_src) = make_party_map(config, i, &p.x, MapKind::NaivePca)?;
            shares.push(encode_share_retaining(i, &map, &p.x, &p.y, &anchor.x_anc, config.permute, &mut perm_src)?);
            maps.push(map);
        }
        let model = fuse(config, &shares)?;
        maps.iter()
            .enumerate()
            .map(|(i, map)| model.predict_mapped(i, &map.apply(&trial.test.x)?))
            .collect()
    }

    pub struct ProposedOutcome {
        pub predictions: Vec<Matrix>,
        pub anchor_predictions: Vec<Matrix>,
        pub models: Vec<LocalDistilledModel>,
        pub anchor: AnchorSet,
    }

    pub fn run_proposed(config: &RunConfig, trial: &TrialData) -> Result<ProposedOutcome> {
        let anchor = shared_anchor(config, trial)?;
        let shares = trial
            .parties
            .iter()
            .enumerate()
            .map(|(i, p)| proposed_share(config, i, p, &anchor.x_anc))
            .collect::<Result<Vec<_>>>()?;
        let anchor_predictions = master_round(config, &shares)?;
        drop(shares);
        let models = anchor_predictions
            .iter()
            .enumerate()
            .map(|(i, y_anc)| distill(config, i, &anchor.x_anc, y_anc))
            .collect::<Result<Vec<_>>>()?;
        let predictions = models
            .iter()
            .map(|t| predict_local(t, &trial.test.x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProposedOutcome {
            predictions,
            anchor_predictions,
            models,
            anchor,
        })
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let positives = labels.iter().filter(|&&b| b).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks over tie groups, 1-based; sums of half-integers are exact.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub mean_auc: f64,
    pub stderr: f64,
    /// Mean-over-parties AUC of each trial.
    pub per_trial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub dataset: String,
    pub trials: usize,
    pub summaries: Vec<ModeSummary>,
    pub config: RunConfig,
}

impl ExperimentReport {
    pub fn summary(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summaries.iter().find(|s| s.mode == mode)
    }

    /// `mode,dataset,trials,mean_auc,stderr`, one line per mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,dataset,trials,mean_auc,stderr\n");
        for s in &self.summaries {
            let _ = writeln!(out, "{},{},{},{:.6},{:.6}", s.mode, self.dataset, self.trials, s.mean_auc, s.stderr);
        }
        out
    }

    /// One row per dataset, one `mean ± se` column per mode.
    pub fn to_table(&self) -> String {
        format_table(std::slice::from_ref(self))
    }
}

/// Plain-text table over several reports that share a mode list.
pub fn format_table(reports: &[ExperimentReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let modes: Vec<Mode> = first.summaries.iter().map(|s| s.mode).collect();
    let mut out = format!("{:<12}", "Dataset");
    for m in &modes {
        let _ = write!(out, " {:>13}", m.title());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<12}", r.dataset);
        for m in &modes {
            let cell = r
                .summary(*m)
                .map_or_else(|| "-".to_string(), |s| format!("{:.2} ± {:.2}", s.mean_auc, s.stderr));
            let _ = write!(out, " {cell:>13}");
        }
        out.push('\n');
    }
    out
}

/// Mean and standard error (sample standard deviation over √n; zero for a
/// single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Run `trials` paired trials: within a trial every mode sees the same
/// parties, test rows and anchor seed.
pub fn experiment(
    config: &RunConfig,
    data: &LabeledDataset,
    dataset: &str,
    trials: usize,
    modes: &[Mode],
) -> Result<ExperimentReport> {
    experiment_with_jobs(config, data, dataset, trials, modes, 1)
}

pub fn experiment_with_jobs(
    config: &RunConfig,
    data: &LabeledDataset,
    dataset: &str,
    trials: usize,
    modes: &[Mode],
    jobs: usize,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::Configuration("trials must be ≥ 1".into()));
    }
    if modes.is_empty() {
        return Err(Error::Configuration("no modes selected".into()));
    }
    config.validate(data.num_features())?;

    let one_trial = |t: usize| -> Result<Vec<f64>> {
        let mut cfg = config.clone();
        cfg.seeds = config.seeds.for_trial(t);
        if cfg.seeds.anchor_seed.is_none() {
            cfg.seeds.anchor_seed = Some(RandomSource::entropy().next_u64());
        }
        let trial = prepare_trial(&cfg, data)?;
        modes
            .iter()
            .map(|&mode| {
                cfg.mode = mode;
                Ok(run_trial(&cfg, &trial)?.mean_auc())
            })
            .collect()
    };

    let per_trial: Vec<Vec<f64>> = if jobs <= 1 {
        (0..trials).map(one_trial).collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Configuration(e.to_string()))?;
        pool.install(|| (0..trials).into_par_iter().map(one_trial).collect::<Result<_>>())?
    };

    let summaries = modes
        .iter()
        .enumerate()
        .map(|(k, &mode)| {
            let values: Vec<f64> = per_trial.iter().map(|row| row[k]).collect();
            let (mean_auc, stderr) = mean_and_stderr(&values);
            ModeSummary {
                mode,
                mean_auc,
                stderr,
                per_trial: values,
            }
        })
        .collect();
    Ok(ExperimentReport {
        dataset: dataset.to_string(),
        trials,
        summaries,
        config: config.clone(),
    })
}

/// Repeat the experiment for 1..=`max_parties` parties of `party_size` rows.
pub fn party_sweep(
    config: &RunConfig,
    data: &LabeledDataset,
    dataset: &str,
    max_parties: usize,
    party_size: usize,
    trials: usize,
    modes: &[Mode],
    jobs: usize,
) -> Result<Vec<(usize, ExperimentReport)>> {
    (1..=max_parties)
        .map(|c| {
            let mut cfg = config.clone();
            cfg.party_sizes = vec![party_size; c];
            experiment_with_jobs(&cfg, data, dataset, trials, modes, jobs).map(|r| (c, r))
        })
        .collect()
}

/// `parties,mode,mean_auc,stderr` rows for plotting AUC against party count.
pub fn sweep_csv(sweep: &[(usize, ExperimentReport)]) -> String {
    let mut out = String::from("parties,mode,mean_auc,stderr\n");
    for (c, report) in sweep {
        for s in &report.summaries {
            let _ = writeln!(out, "{c},{},{:.6},{:.6}", s.mode, s.mean_auc, s.stderr);
        }
    }
    out
}
