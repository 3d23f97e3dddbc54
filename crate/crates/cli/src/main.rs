mod config;
mod report;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{parse_seed, RunConfig};
use crate::run::{Context, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bsde",
    version,
    about = "BSDE solvers, nonlinear pricing and property checks"
)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed; decimal or 0x-hexadecimal.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: the config's `threads`, else all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let shown = cli.config.display().to_string();
    let fail = |code: u8, msg: String| {
        eprintln!("error: {shown}: {msg}");
        ExitCode::from(code)
    };
    let bytes = match fs::read(&cli.config) {
        Ok(b) => b,
        Err(e) => return fail(2, format!("cannot read: {e}")),
    };
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let config: RunConfig = match serde_path_to_error::deserialize(de) {
        Ok(c) => c,
        Err(e) => {
            let path = e.path().to_string();
            let field = if path == "." { "(root)".to_string() } else { path };
            return fail(2, format!("{field}: {}", e.into_inner()));
        }
    };
    let threads = cli.threads.or(config.threads);
    if let Some(k) = threads {
        if k == 0 {
            return fail(2, "threads: must be >= 1".into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return fail(2, format!("threads: {e}"));
        }
    }
    let hash = report::config_hash(&bytes);
    let ctx = Context {
        config: &config,
        config_hash: &hash,
        seed_flag: cli.seed,
    };
    let outcome = match run::run(cli.subcommand, &ctx) {
        Ok(o) => o,
        Err(e) => return fail(e.exit_code(), e.to_string()),
    };
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = outcome.report.write(&dir) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    print!("{}", fs::read_to_string(dir.join("report.txt")).unwrap_or_default());
    if outcome.suite_failed {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}
