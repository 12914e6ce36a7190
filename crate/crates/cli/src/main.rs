//! `plab`: single runs, sweeps, reports and the gridworld agent.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plab_core::rl::{parse_rl_config, run_rl, write_rl_traces};
use plab_core::runner::{
    assignment_label, parse_config, parse_grid_arg, read_dir_trajectories, run_sweep, summarize, summary_csv,
    summary_table, write_results, RunResult,
};
use plab_core::Error;

#[derive(Parser)]
#[command(name = "plab", version, about = "Plasticity experiments on small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cartesian grid over config fields, e.g. `--grid subset=0.1,1.0 --grid noise=0,0.5`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the trajectory CSVs in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gridworld Q-learning from the `rl` section of a config.
    Rl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Exit status plus message.
enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn report_aborts(results: &[RunResult]) -> usize {
    let mut n = 0;
    for r in results {
        for o in &r.outputs {
            if let Some(why) = &o.aborted {
                eprintln!("run {} seed {} aborted: {why}", o.run_id, o.seed);
                n += 1;
            }
        }
    }
    n
}

fn print_results(results: &[RunResult]) {
    let rows: Vec<_> = results.iter().map(|r| r.summary.clone()).collect();
    for r in results {
        println!("{}  {}", r.run_id, assignment_label(&r.assignment));
    }
    print!("{}", summary_table(&rows));
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = parse_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    let results = run_sweep(&cfg, &[], cfg.seeds.len())?;
    write_results(&dir, &results)?;
    print_results(&results);
    println!("wrote {}", dir.display());
    match report_aborts(&results) {
        0 => Ok(()),
        n => Err(Failure::Run(format!("{n} run(s) aborted"))),
    }
}

fn cmd_sweep(config: &Path, grid: &[String], workers: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = parse_config(config)?;
    let grid = grid.iter().map(|g| parse_grid_arg(g)).collect::<Result<Vec<_>, _>>()?;
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    let results = run_sweep(&cfg, &grid, workers)?;
    write_results(&dir, &results)?;
    print_results(&results);
    // aborted runs are recorded in their trajectories; the sweep still succeeds
    report_aborts(&results);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_report(input: &Path, out: &Path) -> Result<(), Failure> {
    let trajectories = read_dir_trajectories(input).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    if trajectories.is_empty() {
        return Err(Failure::Config(format!("no trajectory CSVs in {}", input.display())));
    }
    let rows = summarize(&trajectories);
    std::fs::write(out, summary_csv(&rows)).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    print!("{}", summary_table(&rows));
    Ok(())
}

fn cmd_rl(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = parse_rl_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    let traces = run_rl(&cfg)?;
    let paths = write_rl_traces(&cfg, &dir, &traces)?;
    let optimal = cfg.world.optimal_return(cfg.world.goal);
    for ((seed, t), p) in traces.iter().zip(&paths) {
        let last = t.greedy_returns.last().copied().unwrap_or(f64::NAN);
        let first = optimal.and_then(|o| t.episodes_to_reach(0, o - 1e-9));
        let first = first.map_or("never".to_string(), |e| e.to_string());
        println!("seed {seed}: final greedy return {last:.3}, first optimal episode {first}  -> {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage mistakes count as config errors; help and version are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Sweep {
            config,
            grid,
            workers,
            out,
        } => cmd_sweep(&config, &grid, workers, out),
        Command::Report { input, out } => cmd_report(&input, &out),
        Command::Rl { config, seed, out } => cmd_rl(&config, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(m)) => {
            eprintln!("run failed: {m}");
            ExitCode::from(2)
        }
    }
}
