use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evomarket::scenario::{load_scenario_with, KeyPolicy};
use evomarket::stats::{fit_family, FitFamily, FitOptions, FitResult, GofMethod};
use evomarket::tables::read_column;
use evomarket::{preset, preset_names, presets, run_scenario, verify_outputs, write_outputs, Error, Scenario};

#[derive(Parser)]
#[command(name = "evomarket", version, about = "Run evolutionary market scenarios and fit their outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Reject unknown keys instead of warning about them.
        #[arg(long)]
        strict: bool,
    },
    /// Run a built-in scenario, or list them when no name is given.
    Preset {
        name: Option<String>,
        /// Print the scenario file instead of running it.
        #[arg(long)]
        print: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit a distribution family to one column of a table.
    Fit {
        table: PathBuf,
        #[arg(long)]
        family: String,
        /// Column to read; defaults to the first column.
        #[arg(long)]
        column: Option<String>,
        /// Bootstrap resamples for the goodness-of-fit p-value; 0 uses the asymptotic law.
        #[arg(long, default_value_t = 200)]
        resamples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Recompute hashes of a run directory and compare them with its manifest.
    Verify { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated seeds overriding the scenario's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; defaults to runs/<scenario name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// Failure classes mapped onto process exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Mismatch(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) | Failure::Mismatch(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Validation(_) | Error::Parameter { .. } => Failure::Validation(e.to_string()),
            Error::Verification(_) => Failure::Mismatch(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, run, strict } => {
            let policy = if strict { KeyPolicy::Strict } else { KeyPolicy::Lenient };
            let loaded = load_scenario_with(&scenario, policy)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            execute(loaded.scenario, &run)
        }
        Command::Preset { name: None, .. } => {
            for name in preset_names() {
                let s = preset(name)?;
                println!("{name:<18} {}", s.description);
            }
            Ok(())
        }
        Command::Preset {
            name: Some(name),
            print,
            run,
        } => {
            if print {
                print!("{}", presets::preset_text(&name)?);
                return Ok(());
            }
            execute(preset(&name)?, &run)
        }
        Command::Fit {
            table,
            family,
            column,
            resamples,
            seed,
        } => fit(&table, &family, column.as_deref(), resamples, seed),
        Command::Verify { run_dir } => {
            let report = verify_outputs(&run_dir)?;
            for m in &report.mismatches {
                eprintln!("mismatch: {m}");
            }
            if report.is_ok() {
                println!("ok: {} files verified", report.files_checked);
                Ok(())
            } else {
                Err(Failure::Mismatch(format!(
                    "{} of {} checks failed",
                    report.mismatches.len(),
                    report.files_checked
                )))
            }
        }
    }
}

fn execute(mut scenario: Scenario, args: &RunArgs) -> Result<(), Failure> {
    if let Some(seeds) = &args.seeds {
        scenario.seeds = seeds.clone();
        scenario.validate()?;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(&scenario.name));
    let runs = run_scenario(&scenario)?;
    let manifest = write_outputs(&scenario, &runs, &out)?;
    for run in &manifest.runs {
        match &run.error {
            None => println!("{}: ok", run.dir),
            Some(e) => println!("{}: failed: {e}", run.dir),
        }
    }
    println!("wrote {}", out.display());
    match manifest.failures() {
        0 => Ok(()),
        n => Err(Failure::Runtime(format!("{n} of {} runs failed", manifest.runs.len()))),
    }
}

fn fit(table: &Path, family: &str, column: Option<&str>, resamples: usize, seed: u64) -> Result<(), Failure> {
    let family = FitFamily::parse(family)?;
    let column = match column {
        Some(c) => c.to_string(),
        None => first_column(table)?,
    };
    let samples = read_column(table, &column)?;
    let gof = if resamples == 0 {
        GofMethod::Asymptotic
    } else {
        GofMethod::Bootstrap { resamples, seed }
    };
    let result = fit_family(family, &samples, &FitOptions { gof })?;
    print_report(&result);
    Ok(())
}

fn first_column(table: &Path) -> Result<String, Failure> {
    let text = std::fs::read_to_string(table).map_err(|e| Failure::Runtime(format!("{}: {e}", table.display())))?;
    let header = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| Failure::Validation(format!("{}: no header row", table.display())))?;
    let first = header.split(',').next().unwrap_or("");
    Ok(first.split('[').next().unwrap_or(first).trim().to_string())
}

fn print_report(fit: &FitResult) {
    println!("family,param,value,stderr");
    for p in fit.estimates() {
        println!("{},{},{},{}", fit.family().name(), p.name, p.value, p.stderr);
    }
    println!("# n={} loglik={}", fit.n, fit.loglik);
    if let Some(g) = &fit.gof {
        println!("# ks_statistic={} p_value={}", g.ks_statistic, g.p_value);
    }
    for d in &fit.diagnostics {
        println!("# {d}");
    }
}
