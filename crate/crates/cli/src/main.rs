//! `dni`: score hidden-unit behaviors against hypothesis functions.
//!
//! Every subcommand takes `--seed` and `--workers`; with one worker and a
//! fixed seed, identical inputs produce identical output files. Failures
//! print a single `error: ...` line to stderr and exit nonzero.

mod commands;
mod config;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "dni",
    version,
    about = "Affinity scoring between hidden-unit behaviors and hypothesis functions"
)]
struct Cli {
    /// Print the default config file and exit.
    #[arg(long)]
    print_config: bool,
    /// Override the engine seed from the config (gen-data defaults to 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Engine worker threads; 1 is byte-for-byte deterministic.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset from a probabilistic grammar file.
    GenData(GenDataArgs),
    /// Score every (group, hypothesis, measure) cell into a result CSV.
    Inspect(InspectArgs),
    /// Write one model's behaviors to a DNIB1 file.
    Extract(ExtractArgs),
    /// Perturbation-test a unit group against a hypothesis.
    Verify(VerifyArgs),
    /// Run an INSPECT query against a relation catalog.
    Query(QueryArgs),
    /// Time each execution strategy on the configured workload.
    Bench(BenchArgs),
    /// Delete spilled hypothesis-cache files.
    CacheClear(CacheClearArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Grammar file: `LHS -> rhs tokens [prob]` lines.
    #[arg(long)]
    grammar: PathBuf,
    /// Number of records to sample.
    #[arg(long)]
    n: usize,
    /// Record length in symbols; shorter samples are padded.
    #[arg(long)]
    n_s: usize,
    /// Output text file, one record per line.
    #[arg(long)]
    out: PathBuf,
    /// Padding symbol; must not be a grammar terminal.
    #[arg(long, default_value_t = '~')]
    pad: char,
    /// Also write the grammar's terminals as an alphabet file.
    #[arg(long)]
    alphabet_out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    config: PathBuf,
    /// naive | merged | early-stop | streaming.
    #[arg(long)]
    strategy: Option<String>,
    /// Read at most this many records (block-aligned).
    #[arg(long)]
    max_records: Option<u64>,
    /// Drop symbols of records the grammar cannot parse.
    #[arg(long)]
    skip_unparsed: bool,
    /// Result CSV path, overriding paths.output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    config: PathBuf,
    /// Model id from the models file.
    #[arg(long)]
    model: String,
    /// Output DNIB1 file.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated unit ids; default is every unit.
    #[arg(long)]
    units: Option<String>,
    #[arg(long)]
    max_records: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: String,
    /// Hypothesis id from the manifest.
    #[arg(long)]
    hyp: String,
    /// Comma-separated unit ids forming the group under test.
    #[arg(long)]
    units: String,
    /// Perturbation pairs to aggregate.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Positions perturbed per record.
    #[arg(long, default_value_t = 4)]
    per_record: usize,
    /// Also score a same-size random unit group for comparison.
    #[arg(long)]
    control: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of relation CSVs (models, units, hypotheses, inputs).
    #[arg(long)]
    catalog: PathBuf,
    /// Query text inline.
    #[arg(long)]
    query: Option<String>,
    /// Read the query from a file instead.
    #[arg(long)]
    query_file: Option<PathBuf>,
    /// Print the parsed query in canonical form before running it.
    #[arg(long)]
    print_ast: bool,
    #[arg(long)]
    strategy: Option<String>,
    /// Result CSV path, overriding paths.output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated strategies; default runs all four.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    max_records: Option<u64>,
    /// Bench CSV destination.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CacheClearArgs {
    /// Read the cache dir from this config's paths.cache_dir.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clear this directory directly.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> dni_core::Result<ExitCode> {
    let cli = Cli::parse();
    if cli.print_config {
        print!("{}", config::default_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(cmd) = cli.command else {
        return Err(dni_core::Error::Config(
            "missing subcommand (try --help or --print-config)".into(),
        ));
    };
    let over = commands::Overrides { seed: cli.seed, workers: cli.workers };
    match cmd {
        Cmd::GenData(a) => commands::gen_data(a, &over),
        Cmd::Inspect(a) => commands::inspect(a, &over),
        Cmd::Extract(a) => commands::extract(a, &over),
        Cmd::Verify(a) => commands::verify_cmd(a, &over),
        Cmd::Query(a) => commands::query(a, &over),
        Cmd::Bench(a) => commands::bench(a, &over),
        Cmd::CacheClear(a) => commands::cache_clear(a),
    }
}
