mod config;
mod experiments;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixlyap::acceptance::{run_criterion, AcceptanceOptions, CRITERIA};
use mixlyap::Error;

use config::{ConfigError, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mixlyap",
    version,
    about = "Lyapunov exponents and phase densities for correlated 1D disorder"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for CSV files and plots.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    no_plots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the acceptance suite.
    Check {
        /// Tighten every numeric tolerance tenfold.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated criterion numbers; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), u8> {
    fs::write(path, contents).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_NUMERICAL
    })
}

fn run(config_path: &Path, out: &Path, plots: bool) -> Result<(), u8> {
    let cfg = ExperimentConfig::load(config_path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            ConfigError::Io { .. } | ConfigError::Parse(_) | ConfigError::Invalid(_) => EXIT_CONFIG,
        }
    })?;
    let report = experiments::run(&cfg).map_err(|e| {
        eprintln!("error: {e}");
        exit_code_for(&e)
    })?;
    fs::create_dir_all(out).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", out.display());
        EXIT_NUMERICAL
    })?;
    let csv_path = out.join(cfg.output_name());
    write_file(&csv_path, &report.table.render(&cfg.hash(), cfg.seed))?;
    println!("wrote {}", csv_path.display());
    if plots {
        for (name, plot) in &report.plots {
            let path = out.join(format!("{}_{name}.svg", cfg.experiment.file_stem()));
            write_file(&path, &plot.to_svg())?;
            println!("wrote {}", path.display());
        }
    }
    for note in &report.notes {
        println!("{note}");
    }
    for c in &report.checks {
        println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    Ok(())
}

fn check(out: &Path, strict: bool, seed: Option<u64>, only: &[u8]) -> Result<(), u8> {
    let mut options = AcceptanceOptions::default();
    if strict {
        options = options.strict();
    }
    if let Some(s) = seed {
        options.seed = s;
    }
    if let Some(bad) = only.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        eprintln!("error: no criterion {bad}");
        return Err(EXIT_CONFIG);
    }
    let mut results = Vec::new();
    for (id, _) in CRITERIA {
        if only.is_empty() || only.contains(&id) {
            let r = run_criterion(id, &options);
            println!("{}", r.line());
            results.push(r);
        }
    }
    fs::create_dir_all(out).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", out.display());
        EXIT_NUMERICAL
    })?;
    let report = serde_json::json!({
        "seed": options.seed,
        "tolerance_scale": options.tolerance_scale,
        "results": results,
    });
    let path = out.join("acceptance_report.json");
    write_file(
        &path,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!("wrote {}", path.display());
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        return Err(EXIT_CHECK);
    }
    println!("all {} criteria passed", results.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(config, &cli.out, !cli.no_plots),
        Command::Check { strict, seed, only } => check(&cli.out, *strict, *seed, only),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
