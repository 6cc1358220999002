//! `divsample` subcommands: `ingest`, `synth`, `simulate`, `report`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::UpdateMode;
use crate::dataio::{
    compact_items, factorize, filter_and_reindex, load_ratings, read_embeddings, stratified_split,
    synth_dataset, write_atomic, write_embeddings, write_id_map, write_ratings, Delimiter,
    LoadOptions, RatingScale, SplitRepairs, DEFAULT_MIN_ITEM_RATINGS, DEFAULT_RANK,
    DEFAULT_TEST_FRACTION,
};
use crate::error::{Error, Result};
use crate::selection::StrategyKind;
use crate::simulation::{
    aggregate_csv, rounds_csv, run_simulation, summary_json, EvaluationReport, SimulationConfig,
    ROUND_METRICS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const USER_IDS_FILE: &str = "user_ids.tsv";
pub const ITEM_IDS_FILE: &str = "item_ids.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(
    name = "divsample",
    version,
    about = "Diversity-aware sequential sampling for recommendation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, split and factorize a ratings file into a dataset directory.
    Ingest(IngestArgs),
    /// Write a reproducible synthetic ratings file.
    Synth(SynthArgs),
    /// Run a strategy x seed grid over an ingested dataset.
    Simulate(SimulateArgs),
    /// Flatten a simulate output directory into a long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Ratings file (MovieLens `u.data` layout by default).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RANK)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Items need strictly more ratings than this to be kept.
    #[arg(long, default_value_t = DEFAULT_MIN_ITEM_RATINGS)]
    pub min_item_ratings: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    /// `whitespace`, `tab`, `comma`, or any single character.
    #[arg(long, default_value = "whitespace")]
    pub delimiter: String,
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long, default_value_t = 0)]
    pub user_col: usize,
    #[arg(long, default_value_t = 1)]
    pub item_col: usize,
    #[arg(long, default_value_t = 2)]
    pub rating_col: usize,
    #[arg(long, default_value_t = 1.0)]
    pub min_rating: f64,
    #[arg(long, default_value_t = 5.0)]
    pub max_rating: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 300)]
    pub items: usize,
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with simulation settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long, default_value = "VMo,MO,Lin,SO,VMN,Unc")]
    pub strategies: String,
    /// Seed list such as `1..10` (inclusive) or `1,4,7`.
    #[arg(long, default_value = "1..10")]
    pub seeds: String,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub update_mode: Option<UpdateMode>,
    #[arg(long)]
    pub regret_threshold: Option<f64>,
    #[arg(long)]
    pub liked_threshold: Option<f64>,
    #[arg(long)]
    pub user: Option<usize>,
    /// Parallel runs; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Print the run manifest and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `simulate`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Destination CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dataset summary written by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub source: PathBuf,
    pub users: usize,
    pub items: usize,
    pub train_ratings: usize,
    pub test_ratings: usize,
    pub density: f64,
    pub dropped_test_ratings: usize,
    pub repairs: SplitRepairs,
    pub rank: usize,
    pub seed: u64,
    pub scale: RatingScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub user: usize,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    /// Settings shared by every run; strategy and seed are per run.
    pub base: SimulationConfig,
    pub runs: Vec<RunSpec>,
}

impl RunManifest {
    pub fn run_config(&self, run: &RunSpec) -> SimulationConfig {
        SimulationConfig {
            strategy: run.strategy,
            seed: run.seed,
            user: run.user,
            ..self.base.clone()
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.runs {
            if !seen.insert((r.strategy.name(), r.seed, r.user)) {
                return Err(Error::param(format!(
                    "duplicate run {} seed {} user {}",
                    r.strategy, r.seed, r.user
                )));
            }
        }
        Ok(())
    }
}

pub fn run_dir_name(strategy: StrategyKind, seed: u64) -> String {
    format!("{}_seed{seed}", strategy.name())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::DimensionMismatch(_) => {
            EXIT_DATA
        }
        Error::NotSquare { .. } | Error::Numerical(_) | Error::Json(_) => EXIT_RUNTIME,
    }
}

/// Parses args, runs the command, reports errors on stderr and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let stats = cmd_ingest(&a)?;
            println!(
                "users {} items {} density {:.6} train {} test {}",
                stats.users, stats.items, stats.density, stats.train_ratings, stats.test_ratings
            );
            Ok(())
        }
        Command::Synth(a) => {
            let table = synth_dataset(a.users, a.items, a.density, a.seed)?;
            write_ratings(&a.out, &table)?;
            println!("wrote {} ratings to {}", table.len(), a.out.display());
            Ok(())
        }
        Command::Simulate(a) => {
            let manifest = build_manifest(&a)?;
            if a.dry_run {
                println!("{}", serde_json::to_string_pretty(&manifest)?);
                return Ok(());
            }
            let reports = cmd_simulate(&manifest, a.workers)?;
            println!(
                "completed {} runs in {}",
                reports.len(),
                manifest.out.display()
            );
            Ok(())
        }
        Command::Report(a) => {
            let csv = cmd_report(&a.run_dir)?;
            match &a.out {
                Some(path) => write_atomic(path, csv.as_bytes()),
                None => std::io::stdout()
                    .write_all(csv.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

fn parse_delimiter(s: &str) -> Result<Delimiter> {
    match s {
        "whitespace" | "ws" => Ok(Delimiter::Whitespace),
        "tab" | "\\t" => Ok(Delimiter::Char('\t')),
        "comma" => Ok(Delimiter::Char(',')),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(Delimiter::Char(c)),
                _ => Err(Error::param(format!("invalid delimiter {s:?}"))),
            }
        }
    }
}

/// Everything is computed before the first file is written, so a failure
/// leaves no partial output.
pub fn cmd_ingest(a: &IngestArgs) -> Result<DatasetStats> {
    let scale = RatingScale {
        min: a.min_rating,
        max: a.max_rating,
    };
    let opts = LoadOptions {
        delimiter: parse_delimiter(&a.delimiter)?,
        user_col: a.user_col,
        item_col: a.item_col,
        rating_col: a.rating_col,
        skip_header: a.skip_header,
        scale,
    };
    let raw = load_ratings(&a.dataset, &opts)?;
    let filtered = filter_and_reindex(&raw, a.min_item_ratings)?;
    let split = stratified_split(&filtered.table, a.test_fraction, a.seed)?;
    let (split, item_map, dropped) = compact_items(&split);
    let items = item_map.compose(&filtered.items);
    let emb = factorize(&split.train, a.rank, a.seed)?;

    let users = filtered.users.len();
    let n_items = items.len();
    let total = split.train.len() + split.test.len();
    let stats = DatasetStats {
        source: a.dataset.clone(),
        users,
        items: n_items,
        train_ratings: split.train.len(),
        test_ratings: split.test.len(),
        density: total as f64 / (users * n_items) as f64,
        dropped_test_ratings: dropped,
        repairs: split.repairs,
        rank: a.rank,
        seed: a.seed,
        scale,
    };

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_ratings(&a.out.join(TRAIN_FILE), &split.train)?;
    write_ratings(&a.out.join(TEST_FILE), &split.test)?;
    write_id_map(&a.out.join(USER_IDS_FILE), &filtered.users)?;
    write_id_map(&a.out.join(ITEM_IDS_FILE), &items)?;
    write_embeddings(&a.out.join(EMBEDDINGS_FILE), &emb)?;
    let mut json = serde_json::to_string_pretty(&stats)?;
    json.push('\n');
    write_atomic(&a.out.join(STATS_FILE), json.as_bytes())?;
    Ok(stats)
}

/// `1..10` (inclusive), `1,4,7`, or a mix such as `1..3,9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::param(format!("invalid seed list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn parse_strategies(s: &str) -> Result<Vec<StrategyKind>> {
    let list: Vec<StrategyKind> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<StrategyKind>())
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::param("no strategies given"));
    }
    Ok(list)
}

pub fn build_manifest(a: &SimulateArgs) -> Result<RunManifest> {
    let mut base = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SimulationConfig>(&text)
                .map_err(|e| Error::param(format!("{}: {e}", path.display())))?
        }
        None => SimulationConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                base.$field = v;
            }
        )*};
    }
    apply!(
        rounds,
        batch_size,
        lambda,
        jitter,
        update_mode,
        regret_threshold,
        liked_threshold,
        user
    );
    base.validate()?;

    let strategies = parse_strategies(&a.strategies)?;
    let seeds = parse_seeds(&a.seeds)?;
    let runs = strategies
        .iter()
        .flat_map(|&strategy| {
            seeds.iter().map(move |&seed| RunSpec {
                strategy,
                seed,
                user: base.user,
                dir: run_dir_name(strategy, seed),
            })
        })
        .collect();
    let manifest = RunManifest {
        config_path: a.config.clone(),
        dataset: a.dataset.clone(),
        out: a.out.clone(),
        strategies,
        seeds,
        base,
        runs,
    };
    manifest.check_unique()?;
    Ok(manifest)
}

fn load_stats(dataset: &Path) -> Result<DatasetStats> {
    let path = dataset.join(STATS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Runs every manifest entry, writing each run's files as soon as it
/// finishes, then the per-strategy aggregates and the manifest itself.
pub fn cmd_simulate(manifest: &RunManifest, workers: usize) -> Result<Vec<EvaluationReport>> {
    let stats = load_stats(&manifest.dataset)?;
    let emb = read_embeddings(&manifest.dataset.join(EMBEDDINGS_FILE))?;
    let test = load_ratings(
        &manifest.dataset.join(TEST_FILE),
        &LoadOptions {
            scale: stats.scale,
            ..LoadOptions::default()
        },
    )?;
    fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start {workers} workers: {e}")))?;
    let reports: Vec<EvaluationReport> = pool.install(|| {
        manifest
            .runs
            .par_iter()
            .map(|run| {
                let report = run_simulation(&manifest.run_config(run), &emb, &test)?;
                let dir = manifest.out.join(&run.dir);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_atomic(&dir.join(ROUNDS_FILE), rounds_csv(&report).as_bytes())?;
                write_atomic(&dir.join(SUMMARY_FILE), summary_json(&report)?.as_bytes())?;
                Ok(report)
            })
            .collect::<Result<_>>()
    })?;

    for &strategy in &manifest.strategies {
        let group: Vec<EvaluationReport> = reports
            .iter()
            .filter(|r| r.config.strategy == strategy)
            .cloned()
            .collect();
        let path = manifest
            .out
            .join(format!("aggregate_{}.csv", strategy.name()));
        write_atomic(&path, aggregate_csv(&group)?.as_bytes())?;
    }
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_atomic(&manifest.out.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(reports)
}

/// Reads every `*/summary.json` under `run_dir` (sorted by directory name)
/// and emits `strategy,seed,round,metric,value` rows.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let entries = fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut summaries: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(SUMMARY_FILE))
        .filter(|p| p.is_file())
        .collect();
    summaries.sort();
    if summaries.is_empty() {
        return Err(Error::Data(format!(
            "no run summaries found under {}",
            run_dir.display()
        )));
    }
    let mut out = String::from("strategy,seed,round,metric,value\n");
    for path in summaries {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: EvaluationReport = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (name, seed) = (report.config.strategy.name(), report.config.seed);
        for r in &report.rounds {
            for m in ROUND_METRICS {
                let value = r.metric(m).expect("known metric");
                let _ = writeln!(out, "{name},{seed},{},{m},{value:?}", r.t);
            }
        }
    }
    Ok(out)
}
