//! Repeated runs over seeds and their aggregate curves.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{run_active_learning, BudgetLedger, EngineConfig, RunOutcome, RunMetrics};
use crate::error::{Error, Result};

/// Runs `repeats` copies of `cfg` with seeds `cfg.seed + r`, at most
/// `workers` at a time. Results come back in seed order.
pub fn run_sweep(
    pool: &Dataset,
    holdout: Option<&Dataset>,
    cfg: &EngineConfig,
    repeats: usize,
    workers: usize,
) -> Result<Vec<RunOutcome>> {
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    threads.install(|| {
        (0..repeats)
            .into_par_iter()
            .map(|r| {
                let cfg = EngineConfig {
                    seed: cfg.seed.wrapping_add(r as u64),
                    ..cfg.clone()
                };
                run_active_learning(pool, holdout, &cfg)
            })
            .collect()
    })
}

/// Value of a run's curve at budget `b`: the last row with `budget ≤ b`.
pub fn step_value(metrics: &RunMetrics, b: f64, pick: impl Fn(&crate::engine::MetricsRow) -> Option<f64>) -> Option<f64> {
    metrics
        .rows
        .iter()
        .take_while(|r| r.budget <= b + crate::acquisition::BUDGET_EPS)
        .last()
        .and_then(pick)
}

/// Sample mean and standard error (`sd / √n`, with `n − 1` in the variance).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub budget: f64,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_stderr: f64,
    pub sum_cross_entropy_mean: f64,
    pub sum_cross_entropy_stderr: f64,
}

/// Aggregates per-run curves on the grid `0, step, 2·step, …, budget`.
pub fn aggregate(runs: &[RunMetrics], budget: f64, step: f64) -> Vec<AggregateRow> {
    let step = if step > 0.0 { step } else { 1.0 };
    let points = (budget / step + crate::acquisition::BUDGET_EPS).floor() as usize;
    (0..=points)
        .map(|i| {
            let b = i as f64 * step;
            let acc: Vec<f64> = runs.iter().filter_map(|m| step_value(m, b, |r| r.accuracy)).collect();
            let ce: Vec<f64> = runs
                .iter()
                .filter_map(|m| step_value(m, b, |r| r.sum_cross_entropy))
                .collect();
            let (am, ase) = mean_stderr(&acc);
            let (cm, cse) = mean_stderr(&ce);
            AggregateRow {
                budget: b,
                runs: acc.len(),
                accuracy_mean: am,
                accuracy_stderr: ase,
                sum_cross_entropy_mean: cm,
                sum_cross_entropy_stderr: cse,
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: &str =
    "budget,runs,accuracy_mean,accuracy_stderr,sum_cross_entropy_mean,sum_cross_entropy_stderr";

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.budget, r.runs, r.accuracy_mean, r.accuracy_stderr, r.sum_cross_entropy_mean, r.sum_cross_entropy_stderr
        )?;
    }
    Ok(())
}

/// Share of `kind` among questions issued while the spent budget was in
/// `[lo, hi)`. `None` if no question falls in the window.
pub fn kind_fraction(ledger: &BudgetLedger, kind: usize, lo: f64, hi: f64) -> Option<f64> {
    let window: Vec<_> = ledger
        .history
        .iter()
        .filter(|e| e.spent_before >= lo && e.spent_before < hi)
        .collect();
    if window.is_empty() {
        return None;
    }
    let hits = window.iter().filter(|e| e.kind_index == kind).count();
    Some(hits as f64 / window.len() as f64)
}
