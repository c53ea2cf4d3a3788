//! `spanmq-harness`: run a topology experiment or re-verify a report.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};

use spanmq_harness::{run_scenario, verify_report_dir, Launcher, Outcome, RunOptions, TopologySpec};

#[derive(Debug, Parser)]
#[command(version, about = "Spawn broker meshes, inject delay and failures, check the tree")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the experiment described by a topology file.
    Run {
        spec: PathBuf,
        /// Report directory; defaults to `report-<name>` here.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Workload duration in seconds, overriding the file.
        #[arg(long)]
        duration: Option<f64>,
        /// Broker executable; defaults to $SPANMQ_BROKER_BIN or the one
        /// installed next to this program.
        #[arg(long)]
        broker_bin: Option<PathBuf>,
        /// Run brokers inside this process instead.
        #[arg(long, conflicts_with = "broker_bin")]
        in_process: bool,
        /// Upper bound on each convergence wait, in seconds.
        #[arg(long, default_value_t = 90)]
        settle_timeout: u64,
    },
    /// Re-check the tree snapshots stored in a report directory.
    Verify { report: PathBuf },
}

fn run(args: Args) -> anyhow::Result<bool> {
    match args.cmd {
        Cmd::Run {
            spec,
            out,
            seed,
            duration,
            broker_bin,
            in_process,
            settle_timeout,
        } => {
            let spec = TopologySpec::load(&spec)?;
            let launcher = if in_process {
                Launcher::InProcess
            } else if let Some(b) = broker_bin {
                Launcher::Process(b)
            } else {
                Launcher::find().context("spanmq-broker not found; pass --broker-bin or --in-process")?
            };
            let out = out.unwrap_or_else(|| PathBuf::from(format!("report-{}", spec.name)));
            let mut opts = RunOptions::new(launcher.clone(), out.clone());
            opts.seed = seed;
            opts.duration = duration.map(Duration::from_secs_f64);
            opts.settle_timeout = Duration::from_secs(settle_timeout);
            // the orchestrator itself is single-threaded; in-process brokers
            // get a worker pool
            let rt = match launcher {
                Launcher::InProcess => tokio::runtime::Builder::new_multi_thread().enable_all().build()?,
                Launcher::Process(_) => tokio::runtime::Builder::new_current_thread().enable_all().build()?,
            };
            let report = rt.block_on(run_scenario(&spec, &opts))?;
            print!("{}", report.summary());
            println!("report written to {}", out.display());
            Ok(report.passed())
        }
        Cmd::Verify { report } => {
            let checks = verify_report_dir(&report)?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.outcome == Outcome::Pass))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("spanmq-harness: {e:#}");
            ExitCode::from(2)
        }
    }
}
