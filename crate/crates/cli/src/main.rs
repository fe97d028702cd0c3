//! `semharq` command-line tool.
//!
//! Every failure prints one line `error kind=<kind> msg="<message>"` on
//! stderr and exits with a nonzero status.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semharq::harness::{self, goldens, sweep, train, ExperimentConfig};
use semharq::harq::Mode;
use semharq::Error;

#[derive(Parser)]
#[command(name = "semharq", version, about = "Semantic HARQ link-level simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train codec pair 1, codec pair 2 and the similarity scorer.
    Train(Common),
    /// Run the SNR sweep and write metrics, sessions and plot script.
    Sweep(Common),
    /// Run the self-check oracle suites.
    Goldens(Common),
    /// Build the rank corpus of the similarity scorer.
    Corpus(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Modes to run, overriding the config; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// SNR grid in dB, comma separated, overriding the config.
    #[arg(long)]
    snr: Option<String>,
    /// Worker threads, overriding the config (0: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.display().to_string();
        }
        if !self.mode.is_empty() {
            cfg.modes = self.mode.clone();
        }
        if let Some(s) = &self.snr {
            cfg.snr_db = harness::parse_snr_list(s)?;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        let out = PathBuf::from(&cfg.out);
        Ok((cfg, out))
    }
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    eprintln!("error kind={kind} msg={msg:?}");
    ExitCode::from(if kind == "usage" { 2 } else { 1 })
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    train::train(cfg, out)?;
    println!("trained out={}", out.display());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let models = train::load_or_train(cfg, out)?;
    let result = sweep::run(cfg, &models)?;
    sweep::write(&result, out)?;
    for p in &result.points {
        println!(
            "point mode={} snr_db={} beta={} mean_s={:.4} se_s={:.4} mean_loss={:.5} throughput={:.4}",
            p.mode, p.snr_db, p.beta, p.mean_s, p.se_s, p.mean_loss, p.throughput
        );
    }
    Ok(())
}

fn cmd_goldens(cfg: &ExperimentConfig, out: &Path) -> Result<bool, Error> {
    let checks = goldens::run(cfg)?;
    goldens::write(&checks, out)?;
    for c in &checks {
        println!(
            "golden check={} result={} max_err={:e} tolerance={:e}",
            c.name,
            if c.passed { "pass" } else { "fail" },
            c.max_err,
            c.tolerance
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn cmd_corpus(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let corpus = train::corpus(cfg, out)?;
    println!(
        "corpus queries={} samples={} out={}",
        corpus.queries.len(),
        corpus.samples(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            // a closed pipe (`semharq --help | head`) is not an error
            let _ = write!(std::io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", line);
        }
    };
    let (Command::Train(c) | Command::Sweep(c) | Command::Goldens(c) | Command::Corpus(c)) = &cli.command;
    let run = || -> Result<bool, Error> {
        let (cfg, out) = c.resolve()?;
        harness::with_threads(cfg.threads, || match &cli.command {
            Command::Train(_) => cmd_train(&cfg, &out).map(|_| true),
            Command::Sweep(_) => cmd_sweep(&cfg, &out).map(|_| true),
            Command::Goldens(_) => cmd_goldens(&cfg, &out),
            Command::Corpus(_) => cmd_corpus(&cfg, &out).map(|_| true),
        })?
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => fail("golden_failed", "one or more golden checks failed"),
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
