mod commands;
mod config;
mod error;
mod report;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CodingArg, Run, RunConfig, TestKind};
use config::ConfigFile;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mtsls", version, about = "2SLS with multiple treatments: simulate, estimate, diagnose, test")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON configuration (population, coding, sample size, seed, bins, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV with columns y, t, z_* and optionally weight.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory for the reports.
    #[arg(long, global = true, default_value = "mtsls-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cell (fixed-effect) column.
    #[arg(long, global = true)]
    fe: Option<String>,
    /// Flag column; may be repeated.
    #[arg(long = "flag", global = true)]
    flags: Vec<String>,
    /// Outcome bins (kitagawa) or binned means (linearity).
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Bootstrap replicates (covary).
    #[arg(long, global = true)]
    boot: Option<usize>,
    /// Treatment coding when the config gives none.
    #[arg(long, global = true, value_enum)]
    coding: Option<CodingArg>,
    /// Number of treatment values; defaults to the largest `t` plus one.
    #[arg(long, global = true)]
    treatments: Option<usize>,
    /// Overwrite existing report files.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from a configured population and write data.csv.
    Simulate,
    /// Fit 2SLS with robust standard errors.
    Estimate,
    /// Exact weights and identification verdicts for a configured population.
    Diagnose,
    /// Run a specification test on data.
    Test {
        #[arg(long, value_enum)]
        kind: TestKind,
        /// Linearity pair `k,l` (1-based): is E[P_k | P_l] linear. Default 2,1.
        #[arg(long, value_parser = parse_pair)]
        pair: Option<(usize, usize)>,
    },
    /// Decompose each population 2SLS coefficient into complier, defier and
    /// cross-effect terms.
    Decompose,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected k,l")?;
    let k = a.trim().parse().map_err(|_| format!("bad index {a:?}"))?;
    let l = b.trim().parse().map_err(|_| format!("bad index {b:?}"))?;
    Ok((k, l))
}

fn resolve(cli: Cli) -> CliResult<Run> {
    let c = cli.common;
    let (name, kind, pair) = match cli.command {
        Command::Simulate => ("simulate", None, None),
        Command::Estimate => ("estimate", None, None),
        Command::Diagnose => ("diagnose", None, None),
        Command::Decompose => ("decompose", None, None),
        Command::Test { kind, pair } => ("test", Some(kind), pair),
    };
    let config = c.config.as_deref().map(ConfigFile::load).transpose()?;
    let data_sha256 = match &c.data {
        Some(p) => Some(report::sha256_hex(&std::fs::read(p).map_err(|e| CliError::io(p, e))?)),
        None => None,
    };
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::invalid(format!("--threads {t}: {e}")))?;
    }
    Ok(Run {
        cfg: RunConfig {
            command: name.to_string(),
            kind,
            config,
            data_sha256,
            coding: c.coding,
            treatments: c.treatments,
            seed: c.seed,
            fe: c.fe,
            flags: c.flags,
            bins: c.bins,
            boot: c.boot,
            pair,
        },
        data: c.data,
        out: c.out,
        force: c.force,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match resolve(cli).and_then(|run| commands::run(&run)) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
