use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2gp_cli::commands;
use d2gp_cli::dataset::gen_data;
use d2gp_cli::experiment::{ALL_METHODS, ANALYZE_METHODS};
use d2gp_cli::{Experiment, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "d2gp", version, about = "Distilled gradient preconditioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the small single-pixel desk setup instead of the defaults.
    #[arg(long, conflicts_with = "config")]
    desk: bool,
}

#[derive(Args)]
struct WithMethods {
    #[command(flatten)]
    common: Common,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantoms as PGM plus a dataset manifest.
    GenData {
        #[arg(long, default_value_t = 576)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512.0 / 576.0)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate student and teacher measurements.
    Simulate(Common),
    /// Train the configured preconditioner.
    Train(Common),
    /// Write test reconstructions as PGM.
    Reconstruct(WithMethods),
    /// PSNR table and convergence traces over the test split.
    Benchmark(WithMethods),
    /// Jacobian spectra and condition numbers.
    Analyze(WithMethods),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, c.desk) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, true) => ExperimentConfig::desk(),
        (None, false) => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn methods(m: &WithMethods, default: &[&str]) -> Vec<String> {
    m.methods
        .clone()
        .unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect())
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            count,
            side,
            seed,
            train_fraction,
            out,
        } => {
            let m = gen_data(count, side, seed, train_fraction, &out)?;
            println!("wrote {} images to {}", m.count, out.display());
        }
        Command::Simulate(c) => {
            let exp = Experiment::build(&load(&c)?)?;
            println!("{}", commands::simulate(&exp)?.display());
        }
        Command::Train(c) => {
            let exp = Experiment::build(&load(&c)?)?;
            let t = commands::train(&exp)?;
            for e in &t.history {
                println!(
                    "epoch {:3}  total {:.6}  gradient {:.6}  imitation {:.6}  supervised {:.6}",
                    e.epoch, e.mean.total, e.mean.gradient, e.mean.imitation, e.mean.supervised
                );
            }
            println!("{} ({} parameters) -> {}", t.label, t.parameters, t.weights.display());
        }
        Command::Reconstruct(m) => {
            let exp = Experiment::build(&load(&m.common)?)?;
            for (name, p) in commands::reconstruct(&exp, &methods(&m, &["baseline"]))? {
                println!("{name}: {p:.3} dB");
            }
        }
        Command::Benchmark(m) => {
            let exp = Experiment::build(&load(&m.common)?)?;
            let rows = commands::benchmark(&exp, &methods(&m, &ALL_METHODS))?;
            print!("{}", commands::benchmark_csv(&rows));
        }
        Command::Analyze(m) => {
            let exp = Experiment::build(&load(&m.common)?)?;
            for r in commands::analyze(&exp, &methods(&m, &ANALYZE_METHODS))? {
                println!(
                    "{}: kappa {:.6e}, rank {}",
                    r.method, r.spectrum.condition_number, r.spectrum.rank
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
