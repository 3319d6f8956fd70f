use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cyl_levy::experiments::{exit_code_for, list_experiments, run, ExperimentConfig, EXIT_CONFIG};
use cyl_levy::Error;

/// Runs one registered experiment and writes results.csv, verdicts.json and manifest.json.
#[derive(Debug, Parser)]
#[command(name = "cyl-levy", version)]
struct Cli {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment id, when no config file is given.
    #[arg(long)]
    experiment: Option<String>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths; overrides the config.
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads for path-level parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the experiment registry and exit.
    #[arg(long)]
    list: bool,
}

fn print_registry() {
    println!("{:<24} {:<9} anchor", "id", "runtime");
    for e in list_experiments() {
        let runtime = match e.runtime {
            cyl_levy::experiments::RuntimeClass::Seconds => "seconds",
            cyl_levy::experiments::RuntimeClass::Minutes => "minutes",
        };
        println!("{:<24} {:<9} {}", e.id.to_string(), runtime, e.anchor);
    }
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut config = match (&cli.config, &cli.experiment) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(id)) => ExperimentConfig {
            experiment: id.clone(),
            seed: None,
            n_paths: None,
            k: None,
            p: None,
            params: Default::default(),
            out: None,
        },
        (None, None) => return Err(Error::Config("pass --config or --experiment".into())),
    };
    if let Some(id) = &cli.experiment {
        config.experiment = id.clone();
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.paths.is_some() {
        config.n_paths = cli.paths;
    }
    config.id()?;
    config.seed()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&config.experiment));
    Ok((config, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        print_registry();
        return ExitCode::SUCCESS;
    }
    if let Some(w) = cli.workers {
        if w == 0 || rayon::ThreadPoolBuilder::new().num_threads(w).build_global().is_err() {
            eprintln!("error: cannot start {w} workers");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let (config, out) = match resolve(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e) as u8);
        }
    };
    match run(&config, &out) {
        Ok(manifest) => {
            for (check, pass) in &manifest.verdicts {
                println!("{} {check}", if *pass { "ok  " } else { "FAIL" });
            }
            println!("wrote {} ({:.1}s)", out.display(), manifest.wall_time_s);
            ExitCode::from(manifest.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
