//! Exploration/exploitation screening.
//!
//! Before each acquisition, points close to anything already asked about are
//! screened out. Closeness is measured with the model-guided distance, the
//! Euclidean distance between score vectors, and the admissible radius shrinks
//! along a schedule `d_1 > … > d_S = 0` until enough of the pool survives.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Euclidean distance between score vectors `h(x; θ)`.
    ModelGuided,
    Euclidean,
    Mahalanobis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Number of thresholds `S`.
    pub levels: usize,
    /// Minimum share of the pool the candidate set must exceed.
    pub rho: f64,
    /// Quantile of pairwise distances used as `d_1`.
    pub quantile: f64,
    /// Above this many points, `d_1` is estimated from a uniform subsample.
    pub max_quantile_points: usize,
    pub metric: DistanceMetric,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            rho: 0.5,
            quantile: 0.05,
            max_quantile_points: 2000,
            metric: DistanceMetric::ModelGuided,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("schedule.levels must be ≥ 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config("schedule.rho must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::Config("schedule.quantile must be in [0, 1]".into()));
        }
        if self.max_quantile_points < 2 {
            return Err(Error::Config("schedule.max_quantile_points must be ≥ 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    thresholds: Vec<f64>,
    rho: f64,
}

impl ThresholdSchedule {
    /// Arithmetic sequence from `d1` down to exactly zero.
    pub fn from_first(d1: f64, levels: usize, rho: f64) -> Self {
        let thresholds = if levels == 1 {
            vec![0.0]
        } else {
            (0..levels)
                .map(|s| {
                    if s + 1 == levels {
                        0.0
                    } else {
                        d1 * (levels - 1 - s) as f64 / (levels - 1) as f64
                    }
                })
                .collect()
        };
        Self { thresholds, rho }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }

    /// Threshold at 1-based level `s`.
    pub fn threshold(&self, s: usize) -> f64 {
        self.thresholds[s - 1]
    }
}

/// Model-guided distance between two points.
pub fn model_distance(model: &ScoreModel, x: &[f64], x2: &[f64]) -> Result<f64> {
    let a = model.scores(x)?;
    let b = model.scores(x2)?;
    Ok(euclidean(&a, &b))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Maps every pool point into the space where the chosen metric is Euclidean.
pub fn embed(metric: DistanceMetric, model: &ScoreModel, pool: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match metric {
        DistanceMetric::ModelGuided => pool.iter().map(|x| model.scores(x)).collect(),
        DistanceMetric::Euclidean => Ok(pool.to_vec()),
        DistanceMetric::Mahalanobis => whiten(pool),
    }
}

/// Applies `L⁻¹(x − μ)` where `LLᵀ` is the (ridge-regularised) pool covariance.
fn whiten(pool: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = pool.len();
    let p = pool.first().map_or(0, Vec::len);
    if n < 2 {
        return Ok(pool.to_vec());
    }
    let data = DMatrix::from_fn(n, p, |i, j| pool[i][j]);
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, p, |i, j| data[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let ridge = 1e-9 * (cov.trace() / p as f64).max(1e-12);
    for d in 0..p {
        cov[(d, d)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("pool covariance is not positive definite".into()))?;
    let l = chol.l();
    Ok((0..n)
        .map(|i| {
            let v = DVector::from_fn(p, |j, _| centered[(i, j)]);
            let w = l
                .solve_lower_triangular(&v)
                .expect("Cholesky factor is invertible");
            w.iter().copied().collect()
        })
        .collect())
}

/// Type-7 (linear interpolation) quantile of all pairwise distances.
pub fn pairwise_quantile(points: &[Vec<f64>], q: f64) -> f64 {
    let n = points.len();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(euclidean(&points[i], &points[j]));
        }
    }
    quantile(&mut dists, q)
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut lo_v, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_v;
    }
    let hi_v = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + frac * (hi_v - lo_v)
}

/// Threshold schedule from pairwise distances of already-embedded points.
pub fn schedule_from_embedding(points: &[Vec<f64>], cfg: &ScheduleConfig, seed: u64) -> Result<ThresholdSchedule> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("schedule needs at least two pool points".into()));
    }
    let d1 = if points.len() > cfg.max_quantile_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, points.len(), cfg.max_quantile_points).into_vec();
        idx.sort_unstable();
        let subset: Vec<Vec<f64>> = idx.into_iter().map(|i| points[i].clone()).collect();
        pairwise_quantile(&subset, cfg.quantile)
    } else {
        pairwise_quantile(points, cfg.quantile)
    };
    Ok(ThresholdSchedule::from_first(d1, cfg.levels, cfg.rho))
}

pub fn build_schedule(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<ThresholdSchedule> {
    cfg.validate()?;
    let points = embed(cfg.metric, model, pool)?;
    schedule_from_embedding(&points, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    /// 1-based level `s` whose threshold produced the set.
    pub level: usize,
}

/// Distance from every point to the nearest touched point (`∞` when nothing
/// has been touched).
pub fn distances_to_touched(points: &[Vec<f64>], touched: &BTreeSet<usize>) -> Vec<f64> {
    points
        .iter()
        .map(|x| {
            touched
                .iter()
                .map(|&t| euclidean(x, &points[t]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn candidates_from_embedding(
    points: &[Vec<f64>],
    touched: &BTreeSet<usize>,
    schedule: &ThresholdSchedule,
) -> CandidateSet {
    let dist = distances_to_touched(points, touched);
    let floor = schedule.rho() * points.len() as f64;
    for s in 1..=schedule.levels() {
        let d = schedule.threshold(s);
        let indices: Vec<usize> = (0..points.len()).filter(|&i| dist[i] > d).collect();
        if indices.len() as f64 > floor {
            return CandidateSet { indices, level: s };
        }
    }
    CandidateSet {
        indices: (0..points.len()).filter(|i| !touched.contains(i)).collect(),
        level: schedule.levels(),
    }
}

/// Candidate set at the smallest level whose set exceeds `rho · N` points.
pub fn candidate_set(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    touched: &BTreeSet<usize>,
    schedule: &ThresholdSchedule,
    metric: DistanceMetric,
) -> Result<CandidateSet> {
    let points = embed(metric, model, pool)?;
    Ok(candidates_from_embedding(&points, touched, schedule))
}
