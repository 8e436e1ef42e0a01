//! Executable forms of the entropy bounds and the confidence-region question
//! sampler, plus randomized property suites over them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax, ScoreModel};
use crate::questions::{QuestionFamily, QuestionPoint};

/// `-x ln x - (1-x) ln(1-x)` with `0 ln 0 = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    let term = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    term(x) + term(1.0 - x)
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Entropy of the softmax of a score vector.
pub fn score_entropy(scores: &[f64]) -> f64 {
    entropy(&softmax(scores))
}

/// Inverse of the binary entropy restricted to `[0, 1/2]`, by bisection.
pub fn binary_entropy_inverse(en: f64) -> Result<f64> {
    let ln2 = std::f64::consts::LN_2;
    if !(0.0..=ln2).contains(&en) {
        return Err(Error::InvalidInput(format!(
            "entropy {en} outside [0, ln 2]"
        )));
    }
    if en == 0.0 {
        return Ok(0.0);
    }
    if en >= binary_entropy(0.5) {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if binary_entropy(mid) < en {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if (binary_entropy(lo) - en).abs() <= (binary_entropy(hi) - en).abs() {
        lo
    } else {
        hi
    })
}

/// Range of the entropy of a prediction whose true-label probability is `p_y`.
pub fn true_label_entropy_bounds(p_y: f64, num_classes: usize) -> (f64, f64) {
    let lower = binary_entropy(p_y);
    let rest = 1.0 - p_y;
    let upper = if rest > 0.0 {
        -p_y * p_y.ln() - rest * (rest / (num_classes - 1) as f64).ln()
    } else {
        0.0
    };
    (lower, upper)
}

/// Entropy of the `L`-vector proportional to `(e^δ, 1, …, 1)`.
pub fn phi1(delta: f64, num_classes: usize) -> f64 {
    let others = (num_classes - 1) as f64;
    // Work with e^{-δ} to stay finite for large gaps.
    let r = (-delta).exp();
    let z = 1.0 + others * r;
    let top = 1.0 / z;
    let each = r / z;
    let mut h = -top * top.ln();
    if each > 0.0 {
        h -= others * each * each.ln();
    }
    h
}

/// Binary entropy of `sigmoid(δ)`.
pub fn phi2(delta: f64) -> f64 {
    phi1(delta, 2)
}

/// `δ e^δ ≥ (L − 3)/e`, the gap condition of the bounds.
pub fn gap_admissible(delta: f64, num_classes: usize) -> bool {
    delta * delta.exp() >= (num_classes as f64 - 3.0) / std::f64::consts::E
}

/// Gap between the largest and second-largest score.
pub fn top_gap(scores: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &s in scores {
        if s > first {
            second = first;
            first = s;
        } else if s > second {
            second = s;
        }
    }
    first - second
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    /// Points with `max_c p_c ≥ 1 − δ_m`, grouped by predicted class.
    pub high: Vec<Vec<usize>>,
    /// Points with `max_c p_c ∈ [max(1/L, 1 − 2^{-1/m}), 1 − δ_m)`, by predicted class.
    pub low: Vec<Vec<usize>>,
    pub uncertain: Vec<usize>,
    pub delta_m: f64,
    pub group_size: usize,
}

impl RegionPartition {
    pub fn high_count(&self) -> usize {
        self.high.iter().map(Vec::len).sum()
    }

    pub fn low_count(&self) -> usize {
        self.low.iter().map(Vec::len).sum()
    }
}

/// `1 − (1/2)^{1/m}`, the largest admissible `δ_m`.
pub fn max_delta_m(group_size: usize) -> f64 {
    1.0 - 0.5f64.powf(1.0 / group_size as f64)
}

pub fn partition_regions(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    group_size: usize,
    delta_m: f64,
) -> Result<RegionPartition> {
    if group_size == 0 {
        return Err(Error::InvalidInput("group size must be ≥ 1".into()));
    }
    let cap = max_delta_m(group_size);
    if !(delta_m > 0.0 && delta_m <= cap) {
        return Err(Error::InvalidInput(format!(
            "delta_m {delta_m} must lie in (0, {cap}] for m = {group_size}"
        )));
    }
    let num_classes = model.num_classes();
    let floor = (1.0 / num_classes as f64).max(cap);
    let mut part = RegionPartition {
        high: vec![Vec::new(); num_classes],
        low: vec![Vec::new(); num_classes],
        uncertain: Vec::new(),
        delta_m,
        group_size,
    };
    for (i, x) in pool.iter().enumerate() {
        let p = model.predict_probs(x)?;
        let c = p.argmax();
        let top = p[c];
        if top >= 1.0 - delta_m {
            part.high[c].push(i);
        } else if top >= floor {
            part.low[c].push(i);
        } else {
            part.uncertain.push(i);
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafeSamplerConfig {
    /// Probability of drawing an all-of question.
    pub pi_all: f64,
    /// Probability of drawing an any-of question.
    pub pi_any: f64,
}

impl Default for SafeSamplerConfig {
    fn default() -> Self {
        Self {
            pi_all: 0.5,
            pi_any: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeQuestion {
    pub family: QuestionFamily,
    pub members: Vec<usize>,
    pub target: usize,
}

impl SafeQuestion {
    pub fn to_question_point(&self, kind_index: usize) -> QuestionPoint {
        QuestionPoint {
            kind_index,
            members: self.members.clone(),
            target: self.target,
        }
    }
}

fn draw_from(regions: &[Vec<usize>], m: usize, rng: &mut impl Rng) -> Option<(usize, Vec<usize>)> {
    let weights: Vec<usize> = regions
        .iter()
        .map(|r| if r.len() >= m { r.len() } else { 0 })
        .collect();
    let total: usize = weights.iter().sum();
    if total == 0 {
        return None;
    }
    let mut pick = rng.random_range(0..total);
    let class = weights
        .iter()
        .position(|&w| {
            if pick < w {
                true
            } else {
                pick -= w;
                false
            }
        })
        .expect("pick below total");
    let region = &regions[class];
    let mut members: Vec<usize> = sample(rng, region.len(), m)
        .into_iter()
        .map(|j| region[j])
        .collect();
    members.sort_unstable();
    Some((class, members))
}

/// Draws a question expected to be answered "yes": all-of questions from
/// the high-confidence region of one class, any-of questions from its
/// low-confidence region. Class weights follow region sizes.
pub fn safe_sample_question(
    partition: &RegionPartition,
    cfg: &SafeSamplerConfig,
    rng: &mut impl Rng,
) -> Result<SafeQuestion> {
    if !(cfg.pi_all >= 0.0 && cfg.pi_any >= 0.0 && (cfg.pi_all + cfg.pi_any - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidInput(
            "pi_all and pi_any must be non-negative and sum to 1".into(),
        ));
    }
    let m = partition.group_size;
    let first_all = rng.random::<f64>() < cfg.pi_all;
    let order = if first_all {
        [QuestionFamily::All, QuestionFamily::Any]
    } else {
        [QuestionFamily::Any, QuestionFamily::All]
    };
    for family in order {
        let regions = match family {
            QuestionFamily::All => &partition.high,
            _ => &partition.low,
        };
        if let Some((target, members)) = draw_from(regions, m, rng) {
            return Ok(SafeQuestion {
                family,
                members,
                target,
            });
        }
    }
    Err(Error::NoSafeQuestion)
}

/// Result of one randomized property suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest amount by which a bound was exceeded.
    pub worst_violation: f64,
    /// Informational checks are reported but do not decide the verdict.
    pub informational: bool,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    name: &'static str,
    trials: usize,
    failures: usize,
    worst: f64,
    informational: bool,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            worst: 0.0,
            informational: false,
        }
    }

    /// Records a check `lo ≤ v ≤ hi` within `slack`.
    fn within(&mut self, v: f64, lo: f64, hi: f64, slack: f64) {
        self.trials += 1;
        let excess = (lo - v).max(v - hi);
        if excess > slack {
            self.failures += 1;
            self.worst = self.worst.max(excess);
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            name: self.name.into(),
            trials: self.trials,
            failures: self.failures,
            worst_violation: self.worst,
            informational: self.informational,
        }
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Entropy of random softmax vectors lies within the bounds implied by the
/// probability of a random true label.
pub fn check_true_label_bounds(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("entropy range given the true-label probability");
    for _ in 0..trials {
        let l = rng.random_range(2..=10);
        let scale = rng.random_range(0.1..8.0);
        let scores: Vec<f64> = (0..l).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let p = softmax(&scores);
        let y = rng.random_range(0..l);
        let (lo, hi) = true_label_entropy_bounds(p[y], l);
        t.within(entropy(&p), lo, hi, 1e-12);
    }
    t.finish()
}

/// Random score vector whose top gap satisfies the gap condition.
fn admissible_scores(rng: &mut impl Rng) -> (Vec<f64>, f64) {
    loop {
        let l = rng.random_range(2..=10);
        let h: Vec<f64> = (0..l).map(|_| rng.random_range(-5.0..5.0)).collect();
        let delta = top_gap(&h);
        if gap_admissible(delta, l) {
            return (h, delta);
        }
    }
}

/// `φ2(δ) ≤ En ≤ φ1(δ)` at the point itself.
pub fn check_gap_bounds(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("entropy between phi2(gap) and phi1(gap)");
    for _ in 0..trials {
        let (h, delta) = admissible_scores(&mut rng);
        t.within(score_entropy(&h), phi2(delta), phi1(delta, h.len()), 1e-12);
    }
    t.finish()
}

/// Bounds at a neighbour `h + d·u`, `u` a uniformly random unit direction.
/// `gap_scale` multiplies `d` inside the shifted bounds; `1` is the bound as
/// stated, `√2` accounts for the largest gap change an ℓ2 step of length `d`
/// can cause.
fn perturbed(trials: usize, seed: u64, gap_scale: f64, name: &'static str) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(name);
    while t.trials < trials {
        let (h, delta) = admissible_scores(&mut rng);
        let l = h.len();
        let d = rng.random_range(0.0..=delta);
        let shrunk = (delta - gap_scale * d).max(0.0);
        if !gap_admissible(delta - d, l) || !gap_admissible(shrunk, l) {
            continue;
        }
        let u = random_unit(&mut rng, l);
        let h2: Vec<f64> = h.iter().zip(&u).map(|(a, b)| a + d * b).collect();
        t.within(
            score_entropy(&h2),
            phi2(delta + gap_scale * d),
            phi1(shrunk, l),
            1e-12,
        );
    }
    t.finish()
}

pub fn check_perturbed_gap_bounds(trials: usize, seed: u64) -> CheckReport {
    perturbed(
        trials,
        seed,
        1.0,
        "neighbour entropy between phi2(gap + d) and phi1(gap - d)",
    )
}

pub fn check_perturbed_gap_bounds_sqrt2(trials: usize, seed: u64) -> CheckReport {
    let mut r = perturbed(
        trials,
        seed,
        std::f64::consts::SQRT_2,
        "neighbour entropy with sqrt(2)-scaled shift",
    );
    r.informational = true;
    r
}

/// The vector `(e^δ, 1, …, 1)` reaches `φ1(δ)`.
pub fn check_phi1_attained(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("phi1 attained by (e^gap, 1, ..., 1)");
    for _ in 0..trials {
        let l = rng.random_range(2..=10);
        let delta = rng.random_range(0.0..10.0);
        let mut h = vec![0.0; l];
        h[0] = delta;
        let bound = phi1(delta, l);
        t.within(score_entropy(&h), bound, bound, 1e-12);
    }
    t.finish()
}

pub fn check_phi_order(steps: usize) -> CheckReport {
    let mut t = Tally::new("phi2 below phi1 on a grid");
    for l in 2..=12 {
        for i in 0..=steps {
            let delta = 20.0 * i as f64 / steps as f64;
            t.within(phi2(delta), f64::NEG_INFINITY, phi1(delta, l), 1e-15);
        }
    }
    t.finish()
}

pub fn check_inverse_round_trip(steps: usize) -> CheckReport {
    let mut t = Tally::new("binary entropy of its inverse");
    for i in 0..=steps {
        let en = std::f64::consts::LN_2 * i as f64 / steps as f64;
        let x = binary_entropy_inverse(en).expect("in range");
        t.within(binary_entropy(x), en, en, 1e-9);
    }
    t.finish()
}

/// Every suite run by the `theory-check` command.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![
        check_inverse_round_trip(100),
        check_true_label_bounds(10_000, seed),
        check_phi_order(400),
        check_gap_bounds(1000, seed.wrapping_add(1)),
        check_perturbed_gap_bounds(1000, seed.wrapping_add(2)),
        check_phi1_attained(1000, seed.wrapping_add(3)),
        check_perturbed_gap_bounds_sqrt2(1000, seed.wrapping_add(2)),
    ]
}
