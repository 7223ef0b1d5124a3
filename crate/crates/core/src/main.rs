use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ee_lab::config::{parse_config, ConfigError, ExperimentConfig};
use ee_lab::output::{
    diagnose_dir, estimate_from_dir, run_experiment, write_diagnostics, write_estimates, SeedSource,
};

/// Equi-energy sampler experiments.
#[derive(Debug, Parser)]
#[command(name = "ee-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sampler and write every artifact to the output directory.
    Run(RunArgs),
    /// Re-run the estimators over an existing run directory.
    Estimate(DirArgs),
    /// Re-run the diagnostics over an existing run directory.
    Diagnose(DirArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named preset; keys from --config override it.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Master seed; takes precedence over the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; takes precedence over the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Independent runs with seeds seed, seed+1, ..., written to
    /// `<out>/rep_<r>`.
    #[arg(long, value_name = "R", value_parser = clap::value_parser!(u64).range(1..))]
    replications: Option<u64>,
}

#[derive(Debug, Args)]
struct DirArgs {
    /// Run directory holding samples.csv and manifest.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn config_err(e: ee_lab::Error) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: ee_lab::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn declares(text: &str, key: &str) -> bool {
    text.lines().any(|l| {
        let l = l.split('#').next().unwrap_or("");
        l.split_once('=').is_some_and(|(k, _)| k.trim() == key)
    })
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, SeedSource), Failure> {
    let mut text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    if let Some(p) = &args.preset {
        if declares(&text, "preset") {
            return Err(Failure::Config(
                "--preset given but the config file names its own preset".into(),
            ));
        }
        // appended so that config line numbers in errors stay correct
        text.push_str(&format!("\npreset = {p}\n"));
    }
    if text.trim().is_empty() {
        return Err(Failure::Config(
            "one of --config or --preset is required".into(),
        ));
    }
    let mut config = parse_config(&text)?;
    let source = if let Some(seed) = args.seed {
        config.sampler.master_seed = seed;
        SeedSource::CommandLine
    } else if declares(&text, "seed") {
        SeedSource::ConfigFile
    } else {
        SeedSource::Default
    };
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    // catch invalid values before any output directory exists
    let target = config.build_target().map_err(config_err)?;
    config
        .sampler
        .validate(target.as_target().dim())
        .map_err(config_err)?;
    Ok((config, source))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let (config, source) = load(args)?;
    match args.replications {
        None => {
            run_experiment(&config, source).map_err(runtime_err)?;
            log::info!("wrote {}", config.out_dir.display());
        }
        Some(r) => {
            let base = config.sampler.master_seed;
            (0..r).into_par_iter().try_for_each(|i| {
                let mut c = config.clone();
                c.sampler.master_seed = base.wrapping_add(i);
                c.out_dir = config.out_dir.join(format!("rep_{i}"));
                run_experiment(&c, source).map_err(runtime_err)?;
                log::info!("wrote {}", c.out_dir.display());
                Ok::<_, Failure>(())
            })?;
        }
    }
    Ok(())
}

fn require_dir(dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{}: not a directory",
            dir.display()
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Estimate(args) => require_dir(&args.out).and_then(|_| {
            let rows = estimate_from_dir(&args.out).map_err(runtime_err)?;
            write_estimates(io::stdout().lock(), &rows).map_err(runtime_err)
        }),
        Command::Diagnose(args) => require_dir(&args.out).and_then(|_| {
            let rows = diagnose_dir(&args.out).map_err(runtime_err)?;
            write_diagnostics(io::stdout().lock(), &rows).map_err(runtime_err)
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
