//! Command-line entry points: `prepare`, `calibrate`, `simulate`,
//! `summarize`.
//!
//! Exit codes: 0 on success, 2 for bad usage, configuration or data, 3 when
//! a run fails part way.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::SimConfig;
use crate::dataset::{build_user_histories, parse_interactions, parse_profiles, Cutoff, FilterThresholds, LogFormat};
use crate::engine::{self, converged_summary, read_metrics, Prepared, Summary};
use crate::error::{Error, Result};
use crate::mechanism::{Granularity, Strategy};
use crate::privacy::GroupSpec;
use crate::ratio::Ratio;
use crate::recommender::ModelSpec;

#[derive(Debug, Parser)]
#[command(name = "disclosure-sim", version, about = "Privacy-aware data disclosure simulator")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter an interaction log into a per-user snapshot.
    Prepare(PrepareArgs),
    /// Compute per-user sensitivity weights with the benchmark model.
    Calibrate(RunArgs),
    /// Run the epoch loop and write metrics.
    Simulate(SimulateArgs),
    /// Average the last epochs of a metrics file per group.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// tab, double-colon or csv.
    #[arg(long, default_value = "tab")]
    pub format: LogFormat,
    /// Optional `id|age|sex|occupation|zip` profile file.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub min_user: usize,
    #[arg(long, default_value_t = 5)]
    pub min_item: usize,
    /// exclusive keeps counts strictly above the thresholds.
    #[arg(long, default_value = "exclusive")]
    pub cutoff: Cutoff,
    #[arg(long, env = "DISCLOSIM_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepared `histories.json`.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Granularity as a unit fraction such as 1/8.
    #[arg(long)]
    pub p: Option<Granularity>,
    /// popularity, mf or markov.
    #[arg(long)]
    pub model: Option<ModelSpec>,
    /// Model used for calibration.
    #[arg(long)]
    pub benchmark: Option<ModelSpec>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma separated group multipliers, e.g. 0,1,10.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<f64>>,
    /// Comma separated group shares, e.g. 1/3,1/3,1/3.
    #[arg(long, value_delimiter = ',')]
    pub shares: Option<Vec<Ratio>>,
    #[arg(long, env = "DISCLOSIM_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Existing calibration file.
    #[arg(long, conflicts_with = "calibrate")]
    pub calibration: Option<PathBuf>,
    /// Calibrate before simulating.
    #[arg(long)]
    pub calibrate: bool,
    /// Also write per-user rewards and final agent states.
    #[arg(long)]
    pub reward_log: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let interactions = parse_interactions(open(&args.input)?, args.format)?;
    let thresholds = FilterThresholds::new(args.min_user, args.min_item, args.cutoff);
    let mut histories = build_user_histories(&interactions, thresholds)?;
    if let Some(p) = &args.profiles {
        histories.attach_profiles(&parse_profiles(open(p)?)?);
    }
    mkdir(&args.out)?;
    let snapshot = args.out.join("histories.json");
    std::fs::write(&snapshot, histories.to_json()?).map_err(|e| Error::io(&snapshot, e))?;
    let stats = histories.stats();
    write_json(&args.out.join("stats.json"), &stats)?;
    println!(
        "users {}  items {}  interactions {}  density {:.2}%",
        stats.users,
        stats.items,
        stats.interactions,
        100.0 * stats.density
    );
    println!("snapshot {} sha256 {}", snapshot.display(), histories.content_hash()?);
    Ok(())
}

/// Loads the config file if given and applies command-line overrides.
pub fn resolve_config(args: &RunArgs) -> Result<SimConfig> {
    let mut cfg = match (&args.config, &args.snapshot) {
        (Some(path), _) => SimConfig::load(path)?,
        (None, Some(snap)) => SimConfig::new(snap, args.epochs.unwrap_or(1)),
        (None, None) => return Err(Error::Config("either --config or --snapshot is required".into())),
    };
    if let Some(s) = &args.snapshot {
        cfg.dataset = s.clone();
    }
    if let Some(s) = args.strategy {
        cfg.mechanism.strategy = s;
    }
    if let Some(p) = args.p {
        cfg.mechanism.p = p;
    }
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(m) = &args.benchmark {
        cfg.benchmark = m.clone();
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
        if args.window.is_none() && args.config.is_none() {
            cfg.window = cfg.window.min(e.max(1));
        }
    }
    if let Some(w) = args.window {
        cfg.window = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.w.is_some() || args.shares.is_some() {
        cfg.groups = override_groups(&cfg.groups, args.w.as_deref(), args.shares.as_deref())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Keeps existing labels when the group count is unchanged.
fn override_groups(current: &[GroupSpec], w: Option<&[f64]>, shares: Option<&[Ratio]>) -> Result<Vec<GroupSpec>> {
    let n = w.map(<[f64]>::len).or(shares.map(<[Ratio]>::len)).unwrap_or(current.len());
    if w.is_some_and(|w| w.len() != n) || shares.is_some_and(|s| s.len() != n) {
        return Err(Error::Config("--w and --shares need the same number of entries".into()));
    }
    if w.is_none() && n != current.len() || shares.is_none() && n != current.len() {
        return Err(Error::Config(format!(
            "{n} groups given but the configuration has {}; pass both --w and --shares",
            current.len()
        )));
    }
    Ok((0..n)
        .map(|g| GroupSpec {
            label: if n == current.len() {
                current[g].label.clone()
            } else {
                format!("group{g}")
            },
            w: w.map_or_else(|| current[g].w, |w| w[g]),
            share: shares.map_or_else(|| current[g].share, |s| s[g]),
        })
        .collect())
}

pub fn calibrate(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let prepared = Prepared::load(&cfg.dataset, &cfg.mechanism)?;
    let calibration = engine::calibrate(&prepared, &cfg)?;
    mkdir(&args.out)?;
    let path = args.out.join("calibration.json");
    engine::write_calibration(&calibration, &path)?;
    for g in &cfg.groups {
        let n = calibration.values().filter(|e| e.group == g.label).count();
        println!("{:<16} w {:<6} users {n}", g.label, g.w);
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = resolve_config(&args.run)?;
    if let Some(c) = &args.calibration {
        cfg.calibration = Some(c.clone());
    }
    if args.calibrate {
        cfg.calibration = None;
    } else if cfg.calibration.is_none() {
        let existing = args.run.out.join("calibration.json");
        if !existing.exists() {
            return Err(Error::Config(
                "no calibration available; pass --calibrate or --calibration <file>".into(),
            ));
        }
        cfg.calibration = Some(existing);
    }
    cfg.reward_log |= args.reward_log;
    let out = engine::run_simulation(&cfg, args.run.config.as_deref(), &args.run.out)?;
    write_summary(&out.summary);
    Ok(())
}

pub fn summarize(args: &SummarizeArgs) -> Result<Summary> {
    let series = read_metrics(open(&args.metrics)?)?;
    let summary = converged_summary(&series, args.window)?;
    write_summary(&summary);
    Ok(summary)
}

fn write_summary(s: &Summary) {
    println!("last {} of {} epochs", s.window, s.epochs);
    println!("{:<16} {:>8} {:>8} {:>12} {:>9}", "group", "NDCG", "dis.%", "disclosing%", "reward");
    for r in &s.rows {
        println!(
            "{:<16} {:>8.4} {:>8.2} {:>12.2} {:>9.4}",
            r.group,
            r.mean_ndcg,
            100.0 * r.mean_dis_frac,
            r.pct_users_disclosing,
            r.mean_reward
        );
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Simulate(a) => simulate(a),
        Command::Summarize(a) => summarize(a).map(|_| ()),
    }
}

pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_input_error() => 2,
        Err(_) => 3,
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = run(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
