use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use divpo::harness::{evaluate_checkpoint, run_study, train, verify, RunConfig, Suite};
use divpo::metrics::report_from_dump;

#[derive(Parser)]
#[command(name = "divpo", version, about = "Diversity-aware GRPO on toy policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warm start and RL-train a policy; writes a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Single-threaded, bit-reproducible execution.
        #[arg(long)]
        deterministic: bool,
    },
    /// Greedy plus k sampled responses per problem, with all metrics.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        temp: f64,
        #[arg(long)]
        seed: u64,
        /// Problems as JSONL; defaults to the run's probe set.
        #[arg(long)]
        problems: Option<PathBuf>,
        /// Eval dump path; defaults to a file beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact checks of the identity, gradients and metrics.
    Verify {
        #[arg(long, default_value = "all", value_parser = ["identity", "grad", "metrics", "all"])]
        suite: String,
    },
    /// Diversity-potential table over a run's checkpoints.
    Study {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Metrics of an eval or rollout dump.
    Metrics {
        #[arg(long)]
        dump: PathBuf,
    },
}

fn run(cli: Cli) -> divpo::Result<bool> {
    match cli.command {
        Command::Train { config, deterministic } => {
            let cfg = RunConfig::load(&config)?;
            let out = train(&cfg, deterministic)?;
            println!("{}", out.run_dir.display());
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
        }
        Command::Evaluate { ckpt, k, temp, seed, problems, out } => {
            let r = evaluate_checkpoint(&ckpt, k, temp, seed, problems.as_deref(), out.as_deref(), true)?;
            eprintln!("dump: {}", r.dump.display());
            println!("{}", serde_json::to_string_pretty(&r.report)?);
        }
        Command::Verify { suite } => {
            let verdict = verify(suite.parse::<Suite>()?);
            println!("{}", serde_json::to_string_pretty(&verdict)?);
            return Ok(verdict.passed);
        }
        Command::Study { run_dir } => {
            let report = run_study(&run_dir, None)?;
            print!("{}", report.to_csv());
            match (&report.regression, &report.notice) {
                (Some(r), _) => println!("slope {} intercept {} r2 {} n {}", r.slope, r.intercept, r.r2, r.n),
                (None, Some(n)) => println!("{n}"),
                _ => {}
            }
        }
        Command::Metrics { dump } => {
            println!("{}", serde_json::to_string_pretty(&report_from_dump(&dump)?)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
