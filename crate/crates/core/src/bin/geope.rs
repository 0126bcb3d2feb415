use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geope::cli::{cmd_benchmark, cmd_export_pulses, cmd_hypersearch, cmd_solve, ExperimentConfig, Written};
use geope::Result;

#[derive(Parser)]
#[command(name = "geope", version, about = "Geodesic pulse engineering and GRAPE baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the base seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides `out` in the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded optimisation.
    Solve(Common),
    /// Run `samples` seeded optimisations and write a cumulative success curve.
    Benchmark(Common),
    /// Bayesian search over the method's hyperparameter.
    Hypersearch(Common),
    /// Write the pulse table of a previously written solution.json.
    ExportPulses {
        /// Path to a solution.json written by `solve`.
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| config.out.clone());
    if let Some(workers) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .map_err(|e| geope::Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    Ok((config, out))
}

fn report(written: &Written) {
    for path in &written.0 {
        println!("wrote {}", path.display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(common) => {
            let (config, out) = prepare(&common)?;
            let (solution, written) = cmd_solve(&config, &out)?;
            report(&written);
            match solution.solved_at {
                Some(m) => println!("solved at iteration {m} (infidelity {:.3e})", solution.final_infidelity),
                None => println!("not solved in {} iterations (infidelity {:.3e})", config.max_iters, solution.final_infidelity),
            }
        }
        Command::Benchmark(common) => {
            let (config, out) = prepare(&common)?;
            let (_, summary, written) = cmd_benchmark(&config, &out)?;
            report(&Written(written.0[..2].to_vec()));
            println!("wrote {} per-sample traces", written.0.len() - 2);
            println!(
                "{}/{} solved; mean cumulative infidelity {:.4}",
                summary.solved, summary.samples, summary.mean_cumulative_infidelity
            );
        }
        Command::Hypersearch(common) => {
            let (config, out) = prepare(&common)?;
            let (result, written) = cmd_hypersearch(&config, &out)?;
            report(&written);
            println!("best p = {:.6}, C = {:.6}", result.best_p, result.best_c);
        }
        Command::ExportPulses { solution, out } => report(&cmd_export_pulses(Path::new(&solution), &out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
