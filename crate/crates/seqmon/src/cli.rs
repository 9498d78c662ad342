//! Command-line front end.
//!
//! Three subcommands: `simulate` expands a TOML config into a sweep and
//! writes aggregate (and optionally per-stage trace) CSVs; `replay` runs the
//! configured monitor over a CSV observation log, optionally resuming from
//! and finishing with a checkpoint; `assign` answers an assignment query
//! from a checkpoint.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 I/O error,
//! 4 data error (malformed log rows, degenerate streams), 5 checkpoint
//! error.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::driver::AnyMonitor;
use crate::error::{Error, Result};
use crate::replay;
use crate::report;
use crate::rng::{keyed_rng, StreamDomain};
use crate::simlab::run_monte_carlo;
use crate::stream::ArmState;

#[derive(Parser)]
#[command(
    name = "seqmon",
    version,
    about = "Sequential monitoring of adaptive experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo suites described by a config file.
    Simulate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Aggregate CSV path; overrides the config's `output.aggregate`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-stage trace CSV path; overrides `output.trace`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Worker threads (0 = all cores). Falls back to the config value,
        /// then the SEQMON_THREADS environment variable.
        #[arg(long)]
        threads: Option<usize>,
        /// Base seed; overrides the config value.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay a `stage,x1..xd,a,y` observation log through a monitor.
    Replay {
        /// CSV observation log.
        log: PathBuf,
        /// TOML run configuration; every sweep list must have one entry.
        #[arg(long)]
        config: PathBuf,
        /// Decisions CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint path: resumed from when it exists, written on exit.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seed override for a fresh (non-resumed) monitor.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Query the assignment policy stored in a checkpoint.
    Assign {
        /// Checkpoint written by replay.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Print the greedy arm instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Seed override for the sampled assignment.
        #[arg(long)]
        seed: Option<u64>,
        /// Covariate values x1..xd.
        #[arg(required = true, allow_negative_numbers = true)]
        covariates: Vec<f64>,
    },
}

/// Parses arguments, dispatches, and maps errors to exit codes.
pub fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version displays exit 0; usage errors exit 2.
            let code = u8::try_from(e.exit_code()).unwrap_or(2);
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            u8::try_from(e.exit_code()).unwrap_or(4)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            trace,
            threads,
            seed,
        } => cmd_simulate(&config, out, trace, threads, seed),
        Command::Replay {
            log,
            config,
            out,
            checkpoint,
            seed,
        } => cmd_replay(&log, &config, out, checkpoint, seed),
        Command::Assign {
            checkpoint,
            deterministic,
            seed,
            covariates,
        } => cmd_assign(&checkpoint, deterministic, seed, &covariates),
    }
}

/// Worker-thread count: flag, then config, then SEQMON_THREADS, then auto.
fn resolve_threads(flag: Option<usize>, from_config: usize) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t);
    }
    if from_config > 0 {
        return Ok(from_config);
    }
    match std::env::var("SEQMON_THREADS") {
        Ok(s) => s.trim().parse().map_err(|_| {
            Error::Config(format!("SEQMON_THREADS must be an integer, got {s:?}"))
        }),
        Err(_) => Ok(0),
    }
}

fn cmd_simulate(
    config: &Path,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.replications < 2 {
        return Err(Error::Config(
            "replications must be at least 2 for standard errors".into(),
        ));
    }
    let out_path = out
        .or_else(|| cfg.output.aggregate.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config("no aggregate output path; pass --out or set output.aggregate".into())
        })?;
    let trace_path = trace.or_else(|| cfg.output.trace.as_ref().map(PathBuf::from));

    let threads = resolve_threads(threads, cfg.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let cells = cfg.expand()?;
    let dim = cfg.basis.dim_x;
    let mut aggregate = String::from(report::AGGREGATE_HEADER);
    aggregate.push('\n');
    let mut trace_csv = trace_path.as_ref().map(|_| {
        let mut t = report::trace_header(dim);
        t.push('\n');
        t
    });

    for (i, cell) in cells.iter().enumerate() {
        let (agg, trials) = pool.install(|| run_monte_carlo(&cell.trial, cfg.replications))?;
        aggregate.push_str(&report::aggregate_row(cell, &agg));
        aggregate.push('\n');
        if let Some(t) = &mut trace_csv {
            for (rep, trial) in trials.iter().enumerate() {
                for d in &trial.decisions {
                    t.push_str(&report::trace_row(cell, rep as u64, d, dim));
                    t.push('\n');
                }
            }
        }
        eprintln!(
            "[{}/{}] {} {} {} n={} K={} delta={}: rej={:.3} mean_stop={:.0}",
            i + 1,
            cells.len(),
            cell.method.label(),
            cell.design,
            cell.scenario.label(),
            cell.batch,
            cell.stages,
            cell.delta,
            agg.rej_prob,
            agg.mean_stop,
        );
    }

    report::write_csv(&out_path, &aggregate)?;
    if let (Some(path), Some(t)) = (&trace_path, &trace_csv) {
        report::write_csv(path, t)?;
    }
    Ok(())
}

fn cmd_replay(
    log: &Path,
    config: &Path,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let trial = cfg.single_trial()?;

    let resume_from = checkpoint.as_deref().filter(|p| p.exists());
    let (mut monitor, mut policy_state, policy, basis, ckpt_seed) = match resume_from {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            eprintln!(
                "resuming from {} ({} stages already judged)",
                path.display(),
                ck.monitor.stages_done()
            );
            (ck.monitor, ck.policy_state, ck.policy, ck.basis, ck.seed)
        }
        None => (
            AnyMonitor::from_config(&trial)?,
            ArmState::new(trial.basis.output_dim())?,
            trial.policy,
            trial.basis.clone(),
            trial.seed,
        ),
    };

    let file = File::open(log)?;
    let outcome = replay::drive(BufReader::new(file), &basis, &mut monitor, &mut policy_state)?;
    policy_state.refresh_coefficients();

    eprintln!(
        "replayed {} batch(es), skipped {}",
        outcome.batches_replayed, outcome.batches_skipped
    );
    if outcome.terminated {
        eprintln!(
            "monitor rejected at stage {}; remaining log rows left unread",
            monitor.stages_done()
        );
    }

    let csv = report::decisions_csv(monitor.history(), basis.dim_x());
    match &out {
        Some(path) => report::write_csv(path, &csv)?,
        None => print!("{csv}"),
    }

    if let Some(path) = &checkpoint {
        Checkpoint::new(ckpt_seed, policy, basis, policy_state, monitor).save(path)?;
        eprintln!("checkpoint written to {}", path.display());
    }
    Ok(())
}

fn cmd_assign(
    checkpoint: &Path,
    deterministic: bool,
    seed: Option<u64>,
    covariates: &[f64],
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    if covariates.len() != ck.basis.dim_x() {
        return Err(Error::Config(format!(
            "expected {} covariates, got {}",
            ck.basis.dim_x(),
            covariates.len()
        )));
    }
    let (arm, propensity) = if deterministic {
        ck.policy.greedy_arm(&ck.basis, covariates, &ck.policy_state)?
    } else {
        let mut rng = keyed_rng(
            seed.unwrap_or(ck.seed),
            StreamDomain::Assignment,
            ck.policy_state.n(),
            0,
        );
        ck.policy
            .assign(&ck.basis, covariates, &ck.policy_state, &mut rng)?
    };
    println!("arm={} propensity={}", arm.index(), propensity);
    Ok(())
}
