//! `multiq` command-line driver.
//!
//! Exit status: 0 success, 1 usage or config error, 2 runtime failure
//! (including a failed `theory-check`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multiq_core::config::{load_dataset, RunConfigFile};
use multiq_core::engine::{fit_reference_model, run_ideal_baseline, RunOutcome};
use multiq_core::sweep::{aggregate, run_sweep, write_aggregate_csv};
use multiq_core::{data::write_csv, make_blobs, run_active_learning, BlobSpec, Dataset, Strategy};

#[derive(Parser)]
#[command(name = "multiq", version, about = "Active learning with multiple question types")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single simulated run from a JSON config.
    Run {
        #[command(flatten)]
        common: RunArgs,
        /// Metrics CSV path (overrides `output.metrics_csv`).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// JSON-lines log path (overrides `output.log_jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Repeat a run over consecutive seeds and aggregate the curves.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// Number of runs; defaults to `repeats` in the config.
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Budget grid spacing for the aggregate curve.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerical checks of the entropy and gap bounds.
    TheoryCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the annotation session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Base directory for relative dataset paths in session requests.
        #[arg(long, default_value = ".")]
        data_dir: PathBuf,
        /// Seconds `/next` waits on a retraining session.
        #[arg(long, default_value_t = 5.0)]
        long_poll: f64,
    },
    /// Write a synthetic Gaussian-blob dataset as CSV.
    Gen {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 300)]
        points: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<multiq_core::Error> for Failure {
    fn from(e: multiq_core::Error) -> Self {
        match e {
            multiq_core::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { common, metrics, log } => {
            let cfg = load_config(&common)?;
            let (pool, holdout) = load_dataset(&cfg.dataset)?;
            let out = simulate(&pool, holdout.as_ref(), &cfg)?;
            let metrics = metrics
                .or(cfg.output.metrics_csv.clone())
                .unwrap_or_else(|| PathBuf::from("metrics.csv"));
            let log = log.or(cfg.output.log_jsonl.clone()).unwrap_or_else(|| PathBuf::from("run.jsonl"));
            write_outcome(&out, &metrics, &log)?;
            let last = out.metrics.last();
            eprintln!(
                "{:?}: spent {} of {}, {} queries, accuracy {}",
                out.status,
                out.ledger.spent,
                out.ledger.budget,
                out.ledger.history.len(),
                last.and_then(|r| r.accuracy).map_or("n/a".into(), |a| format!("{a:.4}")),
            );
            Ok(())
        }
        Command::Sweep {
            common,
            repeats,
            workers,
            step,
            out,
        } => {
            let cfg = load_config(&common)?;
            let repeats = repeats.unwrap_or(cfg.repeats);
            if repeats == 0 || workers == 0 || !(step > 0.0) {
                return Err(Failure::Usage("repeats, workers and step must be positive".into()));
            }
            let dir = out.or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("sweep"));
            std::fs::create_dir_all(&dir)?;
            let (pool, holdout) = load_dataset(&cfg.dataset)?;
            let runs = if cfg.engine.strategy == Strategy::Ideal {
                (0..repeats)
                    .map(|r| {
                        let mut c = cfg.clone();
                        c.engine.seed = cfg.engine.seed.wrapping_add(r as u64);
                        simulate(&pool, holdout.as_ref(), &c)
                    })
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                run_sweep(&pool, holdout.as_ref(), &cfg.engine, repeats, workers)?
            };
            for (r, run) in runs.iter().enumerate() {
                write_outcome(run, &dir.join(format!("run_{r:03}.csv")), &dir.join(format!("run_{r:03}.jsonl")))?;
            }
            let metrics: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
            let rows = aggregate(&metrics, cfg.engine.budget, step);
            let agg = dir.join("aggregate.csv");
            let mut w = BufWriter::new(File::create(&agg)?);
            write_aggregate_csv(&rows, &mut w)?;
            w.flush()?;
            eprintln!("{repeats} runs written to {}", dir.display());
            Ok(())
        }
        Command::TheoryCheck { seed } => {
            let reports = multiq_core::theory::run_all(seed);
            let mut ok = true;
            for r in &reports {
                let verdict = if r.passed() { "PASS" } else { "FAIL" };
                let tag = if r.informational { " (informational)" } else { "" };
                println!(
                    "{verdict} {}{tag}: {}/{} failures, worst violation {:.3e}",
                    r.name, r.failures, r.trials, r.worst_violation
                );
                ok &= r.informational || r.passed();
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Runtime("one or more checks failed".into()))
            }
        }
        Command::Serve {
            port,
            host,
            data_dir,
            long_poll,
        } => {
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Failure::Usage(format!("bad address: {e}")))?;
            if !(long_poll >= 0.0) {
                return Err(Failure::Usage("long-poll must be non-negative".into()));
            }
            let cfg = multiq_service::ServiceConfig {
                data_dir,
                long_poll: std::time::Duration::from_secs_f64(long_poll),
            };
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(multiq_service::serve(addr, cfg))?;
            Ok(())
        }
        Command::Gen {
            classes,
            points,
            dim,
            separation,
            seed,
            label_column,
            out,
        } => {
            let ds = make_blobs(&BlobSpec {
                classes,
                points,
                dim,
                separation,
                seed,
            })
            .map_err(|e| Failure::Usage(e.to_string()))?;
            write_csv(&ds, &out, &label_column)?;
            Ok(())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfigFile, Failure> {
    if !args.config.is_file() {
        return Err(Failure::Usage(format!("config {} not found", args.config.display())));
    }
    let mut cfg = RunConfigFile::load(&args.config)?;
    if let Some(s) = args.strategy {
        cfg.engine.strategy = s;
    }
    if let Some(b) = args.budget {
        cfg.engine.budget = b;
    }
    if let Some(r) = args.rho {
        cfg.engine.schedule.rho = r;
    }
    if let Some(s) = args.seed {
        cfg.engine.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn simulate(pool: &Dataset, holdout: Option<&Dataset>, cfg: &RunConfigFile) -> Result<RunOutcome, Failure> {
    let e = &cfg.engine;
    if e.strategy == Strategy::Ideal {
        // reference model fitted on every available label
        let mut all = pool.clone();
        if let Some(h) = holdout {
            all.features.extend(h.features.iter().cloned());
            all.labels.extend(h.labels.iter().copied());
        }
        let reference = fit_reference_model(&all, &e.model, &e.training, e.seed)?;
        Ok(run_ideal_baseline(pool, holdout, &reference, e)?)
    } else {
        Ok(run_active_learning(pool, holdout, e)?)
    }
}

fn write_outcome(out: &RunOutcome, metrics: &Path, log: &Path) -> Result<(), Failure> {
    for p in [metrics, log] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(metrics)?);
    out.metrics.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(log)?);
    out.log.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}
