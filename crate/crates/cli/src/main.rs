use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use mixbo::eval::TheoryReport;
use mixbo::load_run;
use mixbo_cli::runner::{lipschitz_report, theory_cells, RECORDS_FILE, THEORY_SUMMARY_FILE};
use mixbo_cli::{aggregate, config_dir, expand, load_doc, run_cells, summarize, RunOptions, OUT_ENV};

#[derive(Parser)]
#[command(name = "mixbo", version, about = "Mixture-aware preference-based many-objective Bayesian optimisation")]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GridArgs {
    /// JSON run config or grid (`base` + `policies`/`regimes`/`seeds`).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run cells that already finished.
    #[arg(long)]
    force: bool,
    /// Cells run in parallel.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Dotted overrides such as `query.mode=inter` or `budgets.outer_iterations=20`.
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config grid.
    Run(GridArgs),
    /// Mean and sample std across seeds of every metric CSV.
    Aggregate,
    /// Run a grid with the regret-decomposition checks and a Lipschitz sweep.
    Theory {
        #[command(flatten)]
        grid: GridArgs,
        /// Tuples in the Lipschitz sweep.
        #[arg(long, default_value_t = 10_000)]
        tuples: usize,
    },
    /// Serve the elicitation API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Session store (default `<out>/sessions`).
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// Directory relative table paths resolve against.
        #[arg(long, default_value = ".")]
        tables: PathBuf,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn options(cli_out: &PathBuf, g: &GridArgs) -> RunOptions {
    RunOptions {
        out: cli_out.clone(),
        force: g.force,
        workers: g.workers,
        base_dir: config_dir(&g.config),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn,mixbo_cli=info,mixbo_service=info",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match &cli.command {
        Command::Run(g) => {
            let cells = expand(&load_doc(&g.config)?, &g.overrides, g.seed)?;
            let results = run_cells(&cells, &options(&cli.out, g))?;
            println!("{}", summarize(&cells, results)?);
        }
        Command::Aggregate => {
            for p in aggregate(&cli.out)? {
                println!("{}", p.display());
            }
        }
        Command::Theory { grid: g, tuples } => {
            let cells = theory_cells(expand(&load_doc(&g.config)?, &g.overrides, g.seed)?)?;
            let sweep = lipschitz_report(&cells[0], &cli.out, *tuples)?;
            println!(
                "lipschitz: {} tuples, {} violations (max ratios {:.4} / {:.4})",
                sweep.tuples, sweep.violations, sweep.max_ratio_y, sweep.max_ratio_w
            );
            let results = run_cells(&cells, &options(&cli.out, g))?;
            let line = summarize(&cells, results)?;
            let mut mismatch = 0;
            for c in &cells {
                let dir = cli.out.join(&c.rel_dir);
                let report = TheoryReport::from_records(&load_run(&dir.join(RECORDS_FILE))?)?;
                mismatch += report.mismatch_violations.len();
                println!("== {}\n{}", c.rel_dir.display(), std::fs::read_to_string(dir.join(THEORY_SUMMARY_FILE))?);
            }
            println!("{line}");
            if sweep.violations > 0 || mismatch > 0 {
                bail!("{} Lipschitz and {mismatch} mismatch-bound violations", sweep.violations);
            }
        }
        Command::Serve { port, host, sessions, tables } => {
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let dir = sessions.clone().unwrap_or_else(|| cli.out.join("sessions"));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(mixbo_service::serve(addr, &dir, tables))?;
        }
    }
    Ok(())
}
