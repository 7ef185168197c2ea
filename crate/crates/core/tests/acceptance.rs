//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{hospital, networked_session};
use datacollab::audit::{linkage_attack, reconstruction_distinctness, AttackStrategy, AttackerKnowledge};
use datacollab::dataio::{binary_labels, load_csv, FeatureSchema, LabeledDataset};
use datacollab::master::{compute_collab_maps, CMode};
use datacollab::matrixkit::{
    pseudo_inverse, random_gaussian, random_permutation, ridge_fit, svd, truncated_svd, Matrix, RandomSource,
};
use datacollab::netproto::{Kind, NetOptions};
use datacollab::pipeline::{
    auc, experiment_with_jobs, party_sweep, prepare_trial, run_trial, steps, Mode, RunConfig, Seeds,
};
use datacollab::worker::{encode_share, encode_share_retaining, make_map, MapKind};

/// Seed shared by every seeded criterion.
const SEED: u64 = 2024;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let within = limit.is_none_or(|l| took <= l);
    let timing = match limit {
        Some(l) => format!("{:.2} s (limit {} s)", took.as_secs_f64(), l.as_secs()),
        None => format!("{:.2} s", took.as_secs_f64()),
    };
    match out {
        Outcome::Pass(d) if within => Outcome::Pass(format!("{d}; {timing}")),
        Outcome::Pass(d) | Outcome::Fail(d) => Outcome::Fail(format!("{d}; {timing}")),
        Outcome::Skip(d) => Outcome::Skip(d),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

fn linear_dataset(n: usize, m: usize, seed: u64) -> LabeledDataset {
    let mut src = RandomSource::seeded(seed);
    let x = random_gaussian(n, m, &mut src);
    let w = random_gaussian(m, 1, &mut src);
    let noise = random_gaussian(n, 1, &mut src);
    let score = &x * w + noise * 0.5;
    let labels: Vec<bool> = score.iter().map(|&s| s > 0.0).collect();
    let names: Vec<String> = (0..m).map(|j| format!("f{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    LabeledDataset::new(x, binary_labels(&labels), FeatureSchema::new(&refs, "y").unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let data = linear_dataset(40, 6, SEED);
    let cfg = RunConfig {
        mode: Mode::DcNaive,
        m_tilde: Some(6),
        c_mode: CMode::Sigma,
        allow_full_rank: true,
        lambda_collab: 1.0,
        lambda_local: 1.0,
        party_sizes: vec![30],
        test_size: 10,
        seeds: Seeds::all(SEED),
        ..RunConfig::default()
    };
    let trial = prepare_trial(&cfg, &data).unwrap();
    let dc = run_trial(&cfg, &trial).unwrap();
    let central = run_trial(&RunConfig { mode: Mode::Centralized, ..cfg }, &trial).unwrap();
    let diff = max_abs(&dc.predictions[0], &central.predictions[0]);
    verdict(diff <= 1e-8, format!("max |dc_naive − centralized| = {diff:.2e} (tol 1e-8)"))
}

fn criterion_2() -> Outcome {
    let mut src = RandomSource::seeded(SEED);
    let a = random_gaussian(100, 5, &mut src);
    let blocks: Vec<Matrix> = (0..3).map(|_| &a * random_gaussian(5, 5, &mut src)).collect();
    let maps = compute_collab_maps(&blocks, 5, CMode::Identity).unwrap();
    let images: Vec<Matrix> = blocks.iter().zip(&maps.g).map(|(b, g)| b * g).collect();
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            worst = worst.max((&images[i] - &images[j]).norm());
        }
    }
    verdict(worst <= 1e-8, format!("max cross-party ‖X̃ᵢGᵢ − X̃ⱼGⱼ‖_F = {worst:.2e} (tol 1e-8)"))
}

fn criterion_3() -> Outcome {
    let data = hospital(200, SEED);
    let with = RunConfig {
        mode: Mode::DcProposed,
        r: 500,
        seeds: Seeds::all(SEED),
        ..RunConfig::default()
    };
    let without = RunConfig { permute: false, ..with.clone() };
    let trial = prepare_trial(&with, &data).unwrap();

    // The same f′ is drawn in both runs: compare sealed replays.
    let mut same_map = true;
    for (i, p) in trial.parties.iter().enumerate() {
        let (a, _) = steps::make_party_map(&with, i, &p.x, MapKind::ProposedRandomized).unwrap();
        let (b, _) = steps::make_party_map(&without, i, &p.x, MapKind::ProposedRandomized).unwrap();
        let (ra, rb) = (a.sealed_replay().unwrap(), b.sealed_replay().unwrap());
        same_map &= ra.apply(&p.x).unwrap() == rb.apply(&p.x).unwrap();
    }
    let a = steps::run_proposed(&with, &trial).unwrap();
    let b = steps::run_proposed(&without, &trial).unwrap();
    let diff = a
        .predictions
        .iter()
        .zip(&b.predictions)
        .map(|(p, q)| max_abs(p, q))
        .fold(0.0, f64::max);
    verdict(
        same_map && diff <= 1e-9,
        format!("f′ identical: {same_map}; max prediction change from P = {diff:.2e} (tol 1e-9)"),
    )
}

fn criterion_4() -> Outcome {
    let trials = 200;
    let n = 10;
    let y = Matrix::zeros(n, 1);
    let none = AttackerKnowledge::default();
    let (mut permuted, mut plain) = (0.0, 0.0);
    for t in 0..trials {
        let x = random_gaussian(n, 4, &mut RandomSource::seeded(SEED + t));
        let perm_seed = SEED ^ (t << 32);
        let map = make_map(&x, 3, MapKind::ProposedRandomized, &mut RandomSource::entropy()).unwrap();
        let share = encode_share(0, map, &x, &y, &x, true, &mut RandomSource::seeded(perm_seed)).unwrap();
        let truth = random_permutation(n, &mut RandomSource::seeded(perm_seed)).as_slice().to_vec();
        let mut src = RandomSource::seeded(t);
        permuted += linkage_attack(&x, &share.x_tilde, &truth, AttackStrategy::RowIndex, &none, &mut src).unwrap();

        let naive = make_map(&x, 3, MapKind::NaivePca, &mut RandomSource::seeded(t)).unwrap();
        let share = encode_share_retaining(0, &naive, &x, &y, &x, false, &mut src).unwrap();
        let identity: Vec<usize> = (0..n).collect();
        plain += linkage_attack(&x, &share.x_tilde, &identity, AttackStrategy::RowIndex, &none, &mut src).unwrap();
    }
    let (permuted, plain) = (permuted / trials as f64, plain / trials as f64);
    verdict(
        (0.04..=0.18).contains(&permuted) && plain == 1.0,
        format!("row-index accuracy: permuted shares {permuted:.3} (band [0.04, 0.18], chance 0.1), unpermuted shares {plain:.3} (want 1.0)"),
    )
}

/// Local, Centralized, DC-naive, DC-proposed.
const REFERENCE_AUC: [(&str, [f64; 4]); 4] = [
    ("kidney", [0.66, 0.72, 0.74, 0.74]),
    ("pbc", [0.61, 0.66, 0.71, 0.71]),
    ("veteran", [0.65, 0.69, 0.72, 0.72]),
    ("colon", [0.51, 0.63, 0.64, 0.63]),
];

fn survival_dir() -> PathBuf {
    std::env::var_os("DATACOLLAB_SURVIVAL_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/survival"))
}

fn criterion_5() -> Outcome {
    let dir = survival_dir();
    let present = REFERENCE_AUC
        .iter()
        .all(|(name, _)| dir.join(format!("{name}.csv")).is_file() && dir.join(format!("{name}.toml")).is_file());
    if !present {
        return Outcome::Skip(format!(
            "survival exports not found in {}; replaced by criterion 6",
            dir.display()
        ));
    }
    let cfg = RunConfig {
        party_sizes: vec![10; 4],
        test_size: 20,
        seeds: Seeds::all(SEED),
        ..RunConfig::default()
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, reference) in REFERENCE_AUC {
        let schema = FeatureSchema::load(dir.join(format!("{name}.toml"))).unwrap();
        let (data, _) = load_csv(dir.join(format!("{name}.csv")), &schema).unwrap();
        let report = experiment_with_jobs(&cfg, &data, name, 20, &Mode::ALL, jobs()).unwrap();
        let v: Vec<f64> = report.summaries.iter().map(|s| s.mean_auc).collect();
        let mut bad = Vec::new();
        if v[3] < v[0] {
            bad.push("dc_proposed < local".to_string());
        }
        if (v[3] - v[2]).abs() > 0.05 {
            bad.push(format!("|proposed − naive| = {:.3}", (v[3] - v[2]).abs()));
        }
        for (k, mode) in Mode::ALL.iter().enumerate() {
            if (v[k] - reference[k]).abs() > 0.07 {
                bad.push(format!("{mode} {:.2} vs {:.2}", v[k], reference[k]));
            }
        }
        ok &= bad.is_empty();
        let vals = v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
        if bad.is_empty() {
            notes.push(format!("{name} {vals}"));
        } else {
            notes.push(format!("{name} {vals} [{}]", bad.join(", ")));
        }
    }
    verdict(ok, format!("local/central/naive/proposed: {}", notes.join("; ")))
}

fn criterion_6() -> Outcome {
    let data = hospital(1000, SEED);
    let cfg = RunConfig {
        seeds: Seeds::all(SEED),
        ..RunConfig::default()
    };
    let sweep = party_sweep(&cfg, &data, "hospital", 8, 10, 20, &[Mode::Local, Mode::DcProposed], jobs()).unwrap();
    let at = |c: usize, mode: Mode| sweep[c - 1].1.summary(mode).unwrap().mean_auc;
    let gain = at(8, Mode::DcProposed) - at(8, Mode::Local);
    let (dc1, dc8) = (at(1, Mode::DcProposed), at(8, Mode::DcProposed));
    verdict(
        gain >= 0.05 && dc8 >= dc1,
        format!(
            "8 parties: dc_proposed {dc8:.3} vs local {:.3} (gain {:+.1} pp, need ≥ 5; reference 9); dc_proposed 1 → 8 parties {dc1:.3} → {dc8:.3}",
            at(8, Mode::Local),
            gain * 100.0
        ),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &pi) in labels.iter().enumerate() {
        for (j, &pj) in labels.iter().enumerate() {
            if pi && !pj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn criterion_7() -> Outcome {
    let mut src = RandomSource::seeded(SEED);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = src.random_range(2..=50);
        let levels = src.random_range(1..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| src.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| src.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        worst = worst.max((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs());
    }
    verdict(worst <= 1e-12, format!("500 instances, max |Δ| vs pairwise count = {worst:.2e} (tol 1e-12)"))
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..b[row].len() {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..b[col].len() {
            let mut acc = b[col][k];
            for j in col + 1..n {
                acc -= a[col][j] * b[j][k];
            }
            b[col][k] = acc / a[col][col];
        }
    }
    b
}

/// Weights of ridge with an unpenalized intercept, from the normal equations.
fn ridge_oracle(x: &Matrix, y: &Matrix, lambda: f64) -> Vec<Vec<f64>> {
    let (n, m) = x.shape();
    let z = |i: usize, j: usize| if j < m { x[(i, j)] } else { 1.0 };
    let a: Vec<Vec<f64>> = (0..=m)
        .map(|p| {
            (0..=m)
                .map(|q| (0..n).map(|i| z(i, p) * z(i, q)).sum::<f64>() + if p == q && p < m { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<Vec<f64>> = (0..=m)
        .map(|p| (0..y.ncols()).map(|k| (0..n).map(|i| z(i, p) * y[(i, k)]).sum()).collect())
        .collect();
    solve(a, b)
}

fn test_matrix(src: &mut RandomSource) -> Matrix {
    let rows = src.random_range(1..=50);
    let cols = src.random_range(1..=50);
    match src.random_range(0..3) {
        0 => random_gaussian(rows, cols, src),
        1 => {
            let k = src.random_range(1..=rows.min(cols));
            random_gaussian(rows, k, src) * random_gaussian(k, cols, src)
        }
        _ => {
            let mut a = random_gaussian(rows, cols, src);
            for j in 0..cols {
                let s = 10f64.powf(src.random_range(-1.0..1.0));
                a.column_mut(j).scale_mut(s);
            }
            a
        }
    }
}

fn criterion_8() -> Outcome {
    let mut src = RandomSource::seeded(SEED);
    let (mut penrose, mut recon, mut eckart, mut ridge) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = test_matrix(&mut src);
        let scale = a.norm().max(1.0);

        let p = pseudo_inverse(&a).unwrap();
        let pscale = p.norm().max(1.0);
        let ap = &a * &p;
        let pa = &p * &a;
        penrose = penrose
            .max((&ap * &a - &a).norm() / scale)
            .max((&pa * &p - &p).norm() / pscale)
            .max((&ap - ap.transpose()).norm())
            .max((&pa - pa.transpose()).norm());

        let f = svd(&a).unwrap();
        recon = recon.max((f.reconstruct() - &a).norm() / scale);

        let k = src.random_range(1..=a.nrows().min(a.ncols()));
        let tail: f64 = f.singular_values[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        eckart = eckart.max(((&a - truncated_svd(&a, k).unwrap()).norm() - tail).abs());

        // Ridge is checked on designs of at most 20×20.
        let x = a.view((0, 0), (a.nrows().min(20), a.ncols().min(20))).into_owned();
        let y = random_gaussian(x.nrows(), src.random_range(1..=3), &mut src);
        let lambda = 10f64.powf(src.random_range(-2.0..1.0));
        let w = ridge_fit(&x, &y, lambda).unwrap().weights;
        let oracle = ridge_oracle(&x, &y, lambda);
        let wscale = w.amax().max(1.0);
        for (i, row) in oracle.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                ridge = ridge.max((w[(i, j)] - v).abs() / wscale);
            }
        }
    }
    verdict(
        penrose <= 1e-9 && recon <= 1e-10 && eckart <= 1e-8 && ridge <= 1e-9,
        format!(
            "1000 cases up to 50×50: Penrose {penrose:.1e} (1e-9), SVD reconstruction {recon:.1e} (1e-10), Eckart–Young {eckart:.1e} (1e-8), ridge vs normal equations up to 20×20 {ridge:.1e} (1e-9)"
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = RunConfig {
        seeds: Seeds::all(SEED),
        ..RunConfig::default()
    };
    let data = hospital(200, SEED);
    let trial = prepare_trial(&cfg, &data).unwrap();
    let local = steps::run_proposed(&cfg, &trial).unwrap();
    let local_auc = run_trial(&cfg, &trial).unwrap().auc;
    let options = NetOptions {
        session_id: "acceptance".into(),
        timeout: Duration::from_secs(60),
    };
    let net = networked_session(&cfg, &trial, &options);
    if let Err(e) = &net.master {
        return Outcome::Fail(format!("master failed: {e}"));
    }

    let (mut d_anc, mut d_pred, mut d_auc) = (0.0f64, 0.0f64, 0.0f64);
    for (i, w) in net.workers.iter().enumerate() {
        let w = match w {
            Ok(w) => w,
            Err(e) => return Outcome::Fail(format!("worker {i} failed: {e}")),
        };
        let res = w.result.as_ref().unwrap();
        d_anc = d_anc.max(max_abs(&w.anchor_prediction, &local.anchor_predictions[i]));
        d_pred = d_pred.max(max_abs(&res.predictions[0], &local.predictions[i]));
        d_auc = d_auc.max((res.auc[0] - local_auc[i]).abs());
    }

    let m = data.num_features();
    let mut counts_ok = true;
    for conn in 0..4 {
        let up: Vec<Kind> = net.log.iter().filter(|t| t.conn == conn && t.upstream).map(|t| t.kind).collect();
        let down: Vec<Kind> = net.log.iter().filter(|t| t.conn == conn && !t.upstream).map(|t| t.kind).collect();
        counts_ok &= up == [Kind::Hello, Kind::AnchorPart, Kind::Shares];
        counts_ok &= down == [Kind::AnchorFull, Kind::AnchorPred, Kind::Bye];
    }
    let data_exchanges = net
        .log
        .iter()
        .filter(|t| matches!(t.kind, Kind::AnchorPart | Kind::Shares | Kind::AnchorPred))
        .count();
    let leaks = net
        .log
        .iter()
        .filter(|t| !matches!(t.kind, Kind::AnchorPart | Kind::AnchorFull) && t.widths.contains(&m))
        .count();
    let ok = d_anc <= 1e-12 && d_pred <= 1e-12 && d_auc <= 1e-12 && counts_ok && data_exchanges == 12 && leaks == 0;
    verdict(
        ok,
        format!(
            "max |Δ| Y_anc {d_anc:.1e}, t_i predictions {d_pred:.1e}, AUC {d_auc:.1e} (tol 1e-12); per-worker frame sequence: {counts_ok}; data exchanges {data_exchanges} (want 3 × 4); frames with {m}-column payloads outside the anchor phase: {leaks}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let x = random_gaussian(100, 6, &mut RandomSource::seeded(SEED));
    let d = reconstruction_distinctness(&x, 5, |_| make_map(&x, 5, MapKind::ProposedRandomized, &mut RandomSource::entropy()))
        .unwrap();
    verdict(
        d.min_relative_distance > 0.1,
        format!(
            "5 entropy maps: min pairwise relative distance {:.3} (need > 0.1), max same-column |corr| {:.3}",
            d.min_relative_distance, d.max_column_correlation
        ),
    )
}

fn main() {
    let criteria: [(&str, Option<u64>, fn() -> Outcome); 10] = [
        ("collaboration fusion equals centralized ridge", Some(1), criterion_1),
        ("exact-subspace consistency", None, criterion_2),
        ("permutation invariance", None, criterion_3),
        ("linkage at chance level", Some(10), criterion_4),
        ("survival datasets trend", Some(120), criterion_5),
        ("hospital surrogate trend", Some(60), criterion_6),
        ("AUC oracle", None, criterion_7),
        ("numerics suite", Some(30), criterion_8),
        ("protocol equivalence", None, criterion_9),
        ("reconstruction distinctness", None, criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let (tag, detail) = match timed(limit.map(Duration::from_secs), run) {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {:>2} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} of 10 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
