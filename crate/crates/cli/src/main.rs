//! `datacollab` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use datacollab::audit::{
    audit_aligned, correlation_audit, linkage_attack, reconstruction_distinctness, AttackStrategy, AttackerKnowledge,
    AuditReport, HeldMap,
};
use datacollab::dataio::{horizontal_split, load_csv, read_matrix_csv, synth_hospital, write_csv, write_matrix_csv};
use datacollab::dataio::{FeatureSchema, LabeledDataset};
use datacollab::master::CMode;
use datacollab::matrixkit::{random_permutation, RandomSource};
use datacollab::netproto::{run_worker, serve_master, NetOptions};
use datacollab::pipeline::{
    experiment_with_jobs, format_table, parse_modes, party_sweep, prepare_trial, run_trial, sweep_csv, Mode, RunConfig,
    Seeds,
};
use datacollab::worker::{encode_share_retaining, make_map, IntermediateShare, MapKind};
use datacollab::{Error, Result};

#[derive(Parser)]
#[command(name = "datacollab", version, about = "Non-readily identifiable data collaboration analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Split a dataset into party files and a test file.
    Split(SplitArgs),
    /// Run one trial of one mode and report per-party AUC.
    Run(RunArgs),
    /// Repeat trials over several modes and report mean AUC.
    Experiment(ExperimentArgs),
    /// Check whether a representation is readily identifiable.
    Audit(AuditArgs),
    /// Act as the master of a networked session.
    Serve(ServeArgs),
    /// Join a networked session as a worker.
    Join(JoinArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema TOML for the dataset.
    #[arg(long)]
    schema: Option<PathBuf>,
}

/// Flags mirroring `RunConfig`. A `--config` file overrides them.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file of run settings; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of parties (each of --party-size rows).
    #[arg(long)]
    parties: Option<usize>,
    #[arg(long)]
    party_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    m_tilde: Option<usize>,
    #[arg(long)]
    m_hat: Option<usize>,
    /// `identity` or `sigma`.
    #[arg(long)]
    c_mode: Option<String>,
    /// Penalty of the collaboration model.
    #[arg(long)]
    lambda: Option<f64>,
    /// Penalty of local, centralized and distilled models.
    #[arg(long)]
    lambda_local: Option<f64>,
    /// Anchor rows.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    anchor_rank: Option<usize>,
    /// Keep shares in row order.
    #[arg(long)]
    no_permute: bool,
    /// Seed every random stream from this value. Entropy when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    anchor_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    trial_seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Only `hospital` is available.
    #[arg(long, default_value = "hospital")]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated modes.
    #[arg(long, default_value = "local,centralized,dc_naive,dc_proposed")]
    modes: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Parallel trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also sweep 1..=N parties of --party-size rows into auc_by_parties.csv.
    #[arg(long)]
    sweep: Option<usize>,
    /// Dataset name in the report; the data file stem by default.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Raw feature matrix CSV, rows aligned with --rep or the share.
    #[arg(long, requires = "rep_source")]
    raw: Option<PathBuf>,
    /// Representation matrix CSV.
    #[arg(long, group = "rep_source")]
    rep: Option<PathBuf>,
    /// Saved share whose `x_tilde` rows are aligned with --raw.
    #[arg(long, group = "rep_source")]
    share: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Algorithm to simulate on --data: `dc_naive` or `dc_proposed`.
    #[arg(long, default_value = "dc_proposed")]
    mode: Mode,
    #[arg(long, default_value_t = 10)]
    party_size: usize,
    #[arg(long)]
    m_tilde: Option<usize>,
    /// Fraction of true pairs disclosed to the learned-map attacker.
    #[arg(long, default_value_t = 0.0)]
    disclosed: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, default_value = "session")]
    session: String,
    /// Seconds to wait for a peer.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args)]
struct JoinArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    connect: String,
    /// This worker's party id, from 0.
    #[arg(long)]
    party: usize,
    #[command(flatten)]
    data: DataArgs,
    /// Test CSV in the same schema; per-party AUC is reported when given.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Keys a config file may hold besides `RunConfig` fields.
const CLI_KEYS: [&str; 7] = ["data", "schema", "out", "modes", "trials", "jobs", "name"];

struct Settings {
    run: RunConfig,
    extra: toml::Table,
}

impl Settings {
    fn path(&self, key: &str, flag: &Option<PathBuf>) -> Option<PathBuf> {
        match self.extra.get(key) {
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            _ => flag.clone(),
        }
    }

    fn string(&self, key: &str, flag: &str) -> String {
        match self.extra.get(key) {
            Some(toml::Value::String(s)) => s.clone(),
            _ => flag.to_string(),
        }
    }

    fn count(&self, key: &str, flag: usize) -> Result<usize> {
        match self.extra.get(key) {
            None => Ok(flag),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(*v as usize),
            Some(v) => Err(Error::Configuration(format!("`{key}` must be a non-negative integer, got {v}"))),
        }
    }
}

fn settings(args: &ConfigArgs, mode: Option<Mode>) -> Result<Settings> {
    let mut cfg = RunConfig::default();
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seeds = Seeds::all(seed);
    }
    let seeds = &mut cfg.seeds;
    seeds.anchor_seed = args.anchor_seed.or(seeds.anchor_seed);
    seeds.split_seed = args.split_seed.or(seeds.split_seed);
    seeds.trial_seed = args.trial_seed.or(seeds.trial_seed);
    if args.parties.is_some() || args.party_size.is_some() {
        let parties = args.parties.unwrap_or(cfg.party_sizes.len());
        let size = args.party_size.unwrap_or(cfg.party_sizes[0]);
        cfg.party_sizes = vec![size; parties];
    }
    cfg.test_size = args.test_size.unwrap_or(cfg.test_size);
    cfg.m_tilde = args.m_tilde.or(cfg.m_tilde);
    cfg.m_hat = args.m_hat.or(cfg.m_hat);
    if let Some(c) = &args.c_mode {
        cfg.c_mode = match c.as_str() {
            "identity" => CMode::Identity,
            "sigma" => CMode::Sigma,
            other => return Err(Error::Configuration(format!("unknown c mode `{other}`"))),
        };
    }
    cfg.lambda_collab = args.lambda.unwrap_or(cfg.lambda_collab);
    cfg.lambda_local = args.lambda_local.unwrap_or(cfg.lambda_local);
    cfg.r = args.r.unwrap_or(cfg.r);
    cfg.delta = args.delta.unwrap_or(cfg.delta);
    cfg.anchor_rank = args.anchor_rank.or(cfg.anchor_rank);
    cfg.permute &= !args.no_permute;

    let Some(path) = &args.config else {
        return Ok(Settings { run: cfg, extra: toml::Table::new() });
    };
    let text = fs::read_to_string(path)?;
    let file: toml::Table = text
        .parse()
        .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
    let mut merged = toml::Table::try_from(&cfg).map_err(|e| Error::Configuration(e.to_string()))?;
    let mut extra = toml::Table::new();
    for (k, v) in file {
        if CLI_KEYS.contains(&k.as_str()) {
            extra.insert(k, v);
        } else {
            merged.insert(k, v);
        }
    }
    let run = RunConfig::from_toml_str(&toml::to_string(&merged).map_err(|e| Error::Configuration(e.to_string()))?)
        .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
    Ok(Settings { run, extra })
}

fn load_dataset(settings: &Settings, args: &DataArgs) -> Result<(LabeledDataset, PathBuf)> {
    let data = settings
        .path("data", &args.data)
        .ok_or_else(|| Error::Configuration("--data is required".into()))?;
    let schema = settings
        .path("schema", &args.schema)
        .ok_or_else(|| Error::Configuration("--schema is required".into()))?;
    for path in [&data, &schema] {
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} not found", path.display()),
            )));
        }
    }
    let schema = FeatureSchema::load(&schema)?;
    let (dataset, report) = load_csv(&data, &schema)?;
    if report.rows_dropped > 0 {
        eprintln!(
            "{}: kept {} of {} rows ({} with missing values dropped)",
            data.display(),
            report.rows_kept,
            report.rows_read,
            report.rows_dropped
        );
    }
    Ok((dataset, data))
}

fn out_dir(settings: &Settings, flag: &Path) -> Result<PathBuf> {
    let dir = settings.path("out", &Some(flag.to_path_buf())).unwrap();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn synth(args: SynthArgs) -> Result<()> {
    if args.kind != "hospital" {
        return Err(Error::Configuration(format!("unknown synthetic kind `{}`", args.kind)));
    }
    let data = synth_hospital(args.n, &mut RandomSource::from_option(args.seed))?;
    write_csv(&args.out, &data)?;
    let schema = args.out.with_extension("toml");
    fs::write(&schema, data.schema.to_toml_string())?;
    println!("wrote {} rows to {} (schema {})", data.len(), args.out.display(), schema.display());
    Ok(())
}

fn split(args: SplitArgs) -> Result<()> {
    let s = settings(&args.config, None)?;
    let (data, _) = load_dataset(&s, &args.data)?;
    let out = out_dir(&s, &args.out)?;
    let mut src = RandomSource::from_option(s.run.seeds.split_seed);
    let split = horizontal_split(&data, &s.run.party_sizes, &mut src)?;
    for (i, party) in split.parties.iter().enumerate() {
        write_csv(out.join(format!("party_{i}.csv")), party)?;
    }
    let take = s.run.test_size.min(split.holdout.len());
    write_csv(out.join("test.csv"), &data.subset(&split.holdout[..take]))?;
    fs::write(out.join("schema.toml"), data.schema.encoded().to_toml_string())?;
    println!(
        "wrote {} party files, test.csv ({take} rows) and schema.toml to {}",
        split.parties.len(),
        out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let s = settings(&args.config, args.mode)?;
    let (data, _) = load_dataset(&s, &args.data)?;
    let out = out_dir(&s, &args.out)?;
    let trial = prepare_trial(&s.run, &data)?;
    let result = run_trial(&s.run, &trial)?;
    let mut csv = String::from("mode,party,auc\n");
    for (i, auc) in result.auc.iter().enumerate() {
        csv.push_str(&format!("{},{i},{auc:.6}\n", result.mode));
        println!("{} party {i}: AUC {auc:.4}", result.mode);
    }
    println!("{} mean AUC {:.4}", result.mode, result.mean_auc());
    fs::write(out.join("report.csv"), csv)?;
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let s = settings(&args.config, None)?;
    let (data, path) = load_dataset(&s, &args.data)?;
    let out = out_dir(&s, &args.out)?;
    let modes = parse_modes(&s.string("modes", &args.modes))?;
    let trials = s.count("trials", args.trials)?;
    let jobs = s.count("jobs", args.jobs)?;
    let default_name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = s.string("name", args.name.as_deref().unwrap_or(&default_name));

    let report = experiment_with_jobs(&s.run, &data, &name, trials, &modes, jobs)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    print!("{}", format_table(std::slice::from_ref(&report)));
    if let Some(max) = args.sweep {
        let size = s.run.party_sizes[0];
        let sweep = party_sweep(&s.run, &data, &name, max, size, trials, &modes, jobs)?;
        fs::write(out.join("auc_by_parties.csv"), sweep_csv(&sweep))?;
        println!("wrote auc_by_parties.csv for 1..={max} parties of {size}");
    }
    Ok(())
}

fn write_audit(out: &Path, report: &AuditReport) -> Result<()> {
    fs::write(out.join("audit.txt"), report.to_text())?;
    write_matrix_csv(out.join("correlation.csv"), &report.correlation_matrix)?;
    print!("{}", report.to_text());
    Ok(())
}

fn audit(args: AuditArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    if let Some(raw) = &args.raw {
        let x = read_matrix_csv(raw)?;
        let rep = match (&args.rep, &args.share) {
            (Some(rep), _) => read_matrix_csv(rep)?,
            (None, Some(share)) => IntermediateShare::load(share)?.x_tilde,
            (None, None) => unreachable!("clap requires a representation with --raw"),
        };
        return write_audit(&args.out, &audit_aligned(&x, &rep)?);
    }

    // Simulate one party's share on real data and attack it.
    let s = Settings { run: RunConfig::default(), extra: toml::Table::new() };
    let (data, _) = load_dataset(&s, &args.data)?;
    let seeds = args.seed.map(Seeds::all).unwrap_or_default();
    let split = horizontal_split(&data, &[args.party_size], &mut RandomSource::from_option(seeds.split_seed))?;
    let party = &split.parties[0];
    let x = &party.x;
    let (n, m) = x.shape();
    let m_tilde = args.m_tilde.unwrap_or(m.min(n).saturating_sub(1).max(1));
    let (kind, permute) = match args.mode {
        Mode::DcNaive => (MapKind::NaivePca, false),
        Mode::DcProposed => (MapKind::ProposedRandomized, true),
        other => return Err(Error::Configuration(format!("cannot audit mode `{other}`"))),
    };
    let base = RandomSource::from_option(seeds.trial_seed);
    let map = make_map(x, m_tilde, kind, &mut base.fork(0))?;
    // The auditor knows the permutation; the attacker does not.
    let perm_seed = base.fork(1).random::<u64>();
    let share = encode_share_retaining(0, &map, x, &party.y, x, permute, &mut RandomSource::seeded(perm_seed))?;
    let truth: Vec<usize> = if permute {
        random_permutation(n, &mut RandomSource::seeded(perm_seed)).as_slice().to_vec()
    } else {
        (0..n).collect()
    };

    let (max, corr) = correlation_audit(x, &map.apply(x)?)?;
    let mut accuracies = Vec::new();
    let mut src = base.fork(2);
    let strategies = [AttackStrategy::RowIndex, AttackStrategy::KnownMapNn, AttackStrategy::LearnedMapNn];
    for strategy in strategies {
        // The proposed map is erased after use, so nobody can supply it.
        let held = match args.mode {
            Mode::DcNaive => Some(HeldMap::Map(&map)),
            _ => None,
        };
        let knowledge = AttackerKnowledge {
            map: held,
            disclosed_fraction: Some(args.disclosed),
        };
        match linkage_attack(x, &share.x_tilde, &truth, strategy, &knowledge, &mut src) {
            Ok(acc) => accuracies.push((strategy, acc)),
            Err(Error::MissingCapability(why)) => eprintln!("{strategy}: not possible ({why})"),
            Err(e) => return Err(e),
        }
    }
    let distance = if args.mode == Mode::DcProposed {
        let d = reconstruction_distinctness(x, 5, |_| make_map(x, m_tilde, kind, &mut RandomSource::entropy()))?;
        Some(d.min_relative_distance)
    } else {
        None
    };
    write_audit(&args.out, &AuditReport::new(max, corr, accuracies, n, distance))
}

fn net_options(net: &NetArgs) -> NetOptions {
    NetOptions {
        session_id: net.session.clone(),
        timeout: Duration::from_secs(net.timeout),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let s = settings(&args.config, Some(Mode::DcProposed))?;
    let parties = s.run.party_sizes.len();
    let summary = serve_master(&args.bind, &s.run, parties, &net_options(&args.net))?;
    println!(
        "session {} complete: {} parties, {} anchor rows, m̂ = {}",
        summary.session_id, summary.parties, summary.anchor_rows, summary.m_hat
    );
    Ok(())
}

fn join(args: JoinArgs) -> Result<()> {
    let s = settings(&args.config, Some(Mode::DcProposed))?;
    let (data, _) = load_dataset(&s, &args.data)?;
    let test = match &args.test {
        Some(path) => Some(load_csv(path, &data.schema)?.0),
        None => None,
    };
    let out = out_dir(&s, &args.out)?;
    let outcome = run_worker(&args.connect, &s.run, args.party, &data, test.as_ref(), &net_options(&args.net))?;
    write_matrix_csv(out.join(format!("anchor_prediction_{}.csv", args.party)), &outcome.anchor_prediction)?;
    match outcome.result {
        Some(result) => {
            fs::write(
                out.join(format!("report_{}.csv", args.party)),
                format!("mode,party,auc\n{},{},{:.6}\n", result.mode, args.party, result.auc[0]),
            )?;
            println!("party {}: AUC {:.4}", args.party, result.auc[0]);
        }
        None => println!("party {}: distilled model ready", args.party),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Run(a) => run(a),
        Command::Experiment(a) => experiment(a),
        Command::Audit(a) => audit(a),
        Command::Serve(a) => serve(a),
        Command::Join(a) => join(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Configuration(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
