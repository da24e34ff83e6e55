//! `tentlab` argument parsing. Flags override the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{run, write_outputs, Command, ExperimentConfig};
use crate::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tentlab", version, about = "Transfer-operator experiments on random paired tent maps")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Build an Ulam matrix and report its row sums.
    Ulam(Common),
    /// Estimate the leading Lyapunov exponents.
    Lyapunov(Common),
    /// Sweep lambda_2 over eps and fit the slope.
    Sweep(Common),
    /// Machine-check invariance of the quarantine cone.
    ConeCheck(Common),
    /// Compare lambda_2 with the two-state Markov reference.
    McCompare(Common),
    /// Dump the second Oseledets vector.
    Oseledets(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list of exact decimals or fractions.
    #[arg(long)]
    eps: Option<String>,
    /// e.g. `constant:a=1;b=1` or `iid_uniform:a=0,1;b=0,1`.
    #[arg(long)]
    driver: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, value_parser = ["ulam", "exact"])]
    backend: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    qr: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    #[arg(long)]
    threads: Option<String>,
}

fn resolve(sub: Sub) -> Result<ExperimentConfig> {
    let (cmd, c) = match sub {
        Sub::Ulam(c) => (Command::Ulam, c),
        Sub::Lyapunov(c) => (Command::Lyapunov, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::ConeCheck(c) => (Command::ConeCheck, c),
        Sub::McCompare(c) => (Command::McCompare, c),
        Sub::Oseledets(c) => (Command::Oseledets, c),
    };
    let mut cfg = ExperimentConfig::defaults(cmd);
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    let pairs = [
        ("eps", c.eps),
        ("driver", c.driver),
        ("bins", c.bins),
        ("steps", c.steps),
        ("seed", c.seed),
        ("backend", c.backend),
        ("samples", c.samples),
        ("depth", c.depth),
        ("qr", c.qr),
        ("threads", c.threads),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if let Some(p) = c.out {
        cfg.out = Some(p);
    }
    if let Some(p) = c.dump_matrix {
        cfg.dump_matrix = Some(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig) -> Result<()> {
    let outcome = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run(cfg))?,
        None => run(cfg)?,
    };
    write_outputs(cfg, &outcome)?;
    match outcome.violation {
        Some(msg) => Err(Error::ConeViolation(msg)),
        None => Ok(()),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match resolve(cli.command).and_then(|cfg| execute(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tentlab: {e}");
            e.exit_code()
        }
    }
}
