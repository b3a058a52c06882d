use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use obstacle_control::config::ExperimentConfig;
use obstacle_control::pde::{compare_surfaces, read_surface_csv};
use obstacle_control::suites::{self, RunSummary};
use obstacle_control::{Error, Result};

#[derive(Parser)]
#[command(name = "obstacle-control", version, about = "Reflected stochastic control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config without running anything.
    Validate(Common),
    /// Run the configured suites, or those given with --suite.
    Run(Common),
    /// Penalization ladders (BSDE and PDE).
    Ladder(Common),
    /// PDE value against the Monte Carlo value.
    CrossCheck(Common),
    /// Regularity probes under grid refinement.
    Regularity(Common),
    /// Feedback policy and verification diagnostics.
    Verify(Common),
    /// Node-wise difference of two surface CSV files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, env = "OBSTACLE_CONTROL_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; the bundled standard problem when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "OBSTACLE_CONTROL_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Suite to run; repeatable.
    #[arg(long = "suite")]
    suites: Vec<String>,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(suites::default_out_dir)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::standard(0),
        };
        if let Some(seed) = self.seed_override {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn run(&self, default: &[&str]) -> Result<bool> {
        let cfg = self.load()?;
        let selected: Vec<String> = if self.suites.is_empty() {
            default.iter().map(|s| s.to_string()).collect()
        } else {
            self.suites.clone()
        };
        let suites = (!selected.is_empty()).then_some(selected.as_slice());
        let summary = suites::run(&cfg, &self.out_dir(), self.threads, suites)?;
        print_summary(&summary);
        Ok(summary.passed)
    }
}

fn print_summary(summary: &RunSummary) {
    for s in &summary.suites {
        println!("{:<14} {}", s.suite, if s.passed { "PASS" } else { "FAIL" });
        for c in s.checks.iter().filter(|c| !c.passed) {
            println!("  {} = {} (tolerance {}) {}", c.name, c.value, c.tolerance, c.detail);
        }
    }
    println!("config {} seed {}", summary.config_hash, summary.seed);
}

fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<bool> {
    let read = |p: &Path| -> Result<_> { read_surface_csv(BufReader::new(File::open(p)?)) };
    let diff = compare_surfaces(&read(a)?, &read(b)?)?;
    let text = serde_json::to_string_pretty(&json!({"a": a, "b": b, "diff": diff}))?;
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("compare.json"), format!("{text}\n"))?;
    }
    Ok(true)
}

fn execute(command: &Command) -> Result<bool> {
    match command {
        Command::Validate(c) => {
            let cfg = c.load()?;
            println!("valid config {} seed {} suites {}", cfg.hash()?, cfg.seed, cfg.suite_list().join(","));
            Ok(true)
        }
        Command::Run(c) => c.run(&[]),
        Command::Ladder(c) => c.run(&["ladder", "pde-ladder"]),
        Command::CrossCheck(c) => c.run(&["cross-check"]),
        Command::Regularity(c) => c.run(&["regularity"]),
        Command::Verify(c) => c.run(&["feedback"]),
        Command::Compare { a, b, out } => compare(a, b, out.as_deref()),
    }
}

fn out_dir(command: &Command) -> Option<PathBuf> {
    match command {
        Command::Compare { out, .. } => out.clone(),
        Command::Validate(c) => c.out.clone(),
        Command::Run(c) | Command::Ladder(c) | Command::CrossCheck(c) | Command::Regularity(c) | Command::Verify(c) => {
            Some(c.out_dir())
        }
    }
}

fn report_error(err: &Error, dir: Option<&Path>) {
    let report = json!({"error": err.kind(), "message": err.to_string(), "exit_code": err.exit_code()});
    let text = serde_json::to_string_pretty(&report).unwrap_or_default();
    eprintln!("{text}");
    if let Some(dir) = dir {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            report_error(&err, out_dir(&cli.command).as_deref());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
