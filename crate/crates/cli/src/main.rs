use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cis_cli::check::run_all;
use cis_cli::experiment::RunSummary;
use cis_cli::output::write_run;
use cis_cli::presets::{self, PRESETS};
use cis_cli::{run_experiment, ExperimentConfig, Method, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cis", version, about = "Continuous-time importance sampling experiments")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "CIS_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration, or every configuration of a preset.
    Run(RunArgs),
    /// Inspect the built-in presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Derivative, weight-formula and renewal self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Names and descriptions of all presets.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset; `--out` is then a directory.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Time horizon.
    #[arg(long)]
    t: Option<f64>,
    /// Number of replicates.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path (single run, default `<name>.csv`) or output directory (preset, default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            method: self.method,
            t: self.t,
            n: self.n,
            delta: self.delta,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

fn print_summary(path: &Path, s: &RunSummary) {
    println!(
        "{}: estimate {:.6} ± {:.6}  cost {}  points {:.2}  aborted {}  -> {}",
        s.name,
        s.estimate,
        s.stderr,
        s.cost,
        s.mean_points,
        s.aborted,
        path.display()
    );
}

fn run_one(cfg: &ExperimentConfig, csv: &Path) -> anyhow::Result<()> {
    let out = run_experiment(cfg).with_context(|| format!("run `{}`", cfg.name))?;
    write_run(&out, csv)?;
    print_summary(csv, &out.summary);
    Ok(())
}

fn run(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let overrides = args.overrides();
    if let Some(name) = &args.preset {
        let preset = presets::find(name)?;
        let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let mut failed = 0;
        for mut cfg in preset.configs() {
            overrides.apply(&mut cfg);
            if let Err(e) = run_one(&cfg, &dir.join(format!("{}.csv", cfg.name))) {
                eprintln!("error: {e:#}");
                failed += 1;
            }
        }
        return Ok(if failed == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    let csv = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.name)));
    run_one(&cfg, &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("thread pool")?;
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Preset {
            action: PresetAction::List,
        } => {
            for p in &PRESETS {
                println!("{:<12} {:>3} runs  {}", p.name, p.configs().len(), p.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed } => {
            let results = run_all(seed);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
