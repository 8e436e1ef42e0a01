//! Question selection.
//!
//! For every question kind the most uncertain question point is located
//! (an exact scan for class questions, random-restart exchange hill climbing
//! for group questions). The kind to ask is then the argmax of
//! `En_k / g(cost_k) + ξ_k`, with `g(c) = c^exponent` and a small uniform
//! jitter `ξ_k`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::questions::{
    cross_entropy, distribution_from_probs, AnswerDistribution, QuestionFamily, QuestionKind,
    QuestionPoint,
};

/// Slack used when comparing costs against the remaining budget.
pub const BUDGET_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Proposal steps per restart.
    pub exchange_iters: usize,
    pub restarts: usize,
    /// Half-width of the uniform jitter added to each kind's index.
    pub jitter_scale: f64,
    pub cost_exponent: f64,
    /// Share of exchange proposals that change the class instead of a member.
    pub class_change_prob: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            exchange_iters: 200,
            restarts: 5,
            jitter_scale: 0.02,
            cost_exponent: 2.0 / 3.0,
            class_change_prob: 0.2,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exchange_iters == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "acquisition.exchange_iters and acquisition.restarts must be ≥ 1".into(),
            ));
        }
        if !(self.jitter_scale >= 0.0) {
            return Err(Error::Config("acquisition.jitter_scale must be ≥ 0".into()));
        }
        if !(self.cost_exponent > 0.0) {
            return Err(Error::Config("acquisition.cost_exponent must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.class_change_prob) {
            return Err(Error::Config(
                "acquisition.class_change_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Cost transform `g(c) = c^exponent`.
pub fn g_cost(cost: f64, exponent: f64) -> f64 {
    cost.powf(exponent)
}

/// Class probabilities of selected pool points, indexed by pool index.
#[derive(Debug, Clone)]
pub struct ProbTable {
    probs: Vec<Option<Vec<f64>>>,
    num_classes: usize,
}

impl ProbTable {
    pub fn new(model: &ScoreModel, pool: &[Vec<f64>], indices: &[usize]) -> Result<Self> {
        let mut probs = vec![None; pool.len()];
        for &i in indices {
            let x = pool.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("candidate {i} outside pool of size {}", pool.len()))
            })?;
            probs[i] = Some(model.predict_probs(x)?.into_inner());
        }
        Ok(Self {
            probs,
            num_classes: model.num_classes(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn probs(&self, index: usize) -> &[f64] {
        self.probs[index]
            .as_deref()
            .expect("point missing from probability table")
    }

    pub fn distribution(&self, family: QuestionFamily, members: &[usize], target: usize) -> AnswerDistribution {
        let rows: Vec<&[f64]> = members.iter().map(|&i| self.probs(i)).collect();
        distribution_from_probs(family, &rows, target)
    }

    pub fn entropy(&self, family: QuestionFamily, members: &[usize], target: usize) -> f64 {
        self.distribution(family, members, target).entropy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub question: QuestionPoint,
    pub entropy: f64,
}

/// Highest-entropy question of one kind among `candidates`.
///
/// Returns `None` when there are fewer candidates than the kind's group size.
pub fn optimize_question_point<R: Rng + ?Sized>(
    table: &ProbTable,
    kind: &QuestionKind,
    kind_index: usize,
    candidates: &[usize],
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Option<ScoredQuestion> {
    optimize_traced(table, kind, kind_index, candidates, cfg, rng, &mut |_| {})
}

/// As [`optimize_question_point`], calling `observe` with the entropy of every
/// question the exchange search evaluates.
pub fn optimize_traced<R: Rng + ?Sized>(
    table: &ProbTable,
    kind: &QuestionKind,
    kind_index: usize,
    candidates: &[usize],
    cfg: &AcquisitionConfig,
    rng: &mut R,
    observe: &mut dyn FnMut(f64),
) -> Option<ScoredQuestion> {
    let m = kind.group_size;
    if candidates.len() < m || candidates.is_empty() {
        return None;
    }
    if kind.family == QuestionFamily::Class {
        let mut best: Option<ScoredQuestion> = None;
        for &i in candidates {
            let e = table.entropy(QuestionFamily::Class, &[i], 0);
            observe(e);
            if best.as_ref().is_none_or(|b| e > b.entropy) {
                best = Some(ScoredQuestion {
                    question: QuestionPoint::class(kind_index, i),
                    entropy: e,
                });
            }
        }
        return best;
    }

    let num_classes = table.num_classes();
    let can_swap = candidates.len() > m;
    let mut best: Option<ScoredQuestion> = None;
    // Start classes cycle from a random offset, so each restart's class is
    // uniform and restarts ≥ L cover every class.
    let offset = rng.random_range(0..num_classes);
    for restart in 0..cfg.restarts {
        let mut members: Vec<usize> = sample(rng, candidates.len(), m)
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        let mut target = (offset + restart) % num_classes;
        let mut value = table.entropy(kind.family, &members, target);
        observe(value);

        for _ in 0..cfg.exchange_iters {
            let change_class =
                num_classes > 1 && (!can_swap || rng.random::<f64>() < cfg.class_change_prob);
            let (new_members, new_target) = if change_class {
                let mut c = rng.random_range(0..num_classes - 1);
                if c >= target {
                    c += 1;
                }
                (members.clone(), c)
            } else if can_swap {
                let pos = rng.random_range(0..m);
                let incoming = loop {
                    let c = candidates[rng.random_range(0..candidates.len())];
                    if !members.contains(&c) {
                        break c;
                    }
                };
                let mut next = members.clone();
                next[pos] = incoming;
                (next, target)
            } else {
                break;
            };
            let v = table.entropy(kind.family, &new_members, new_target);
            observe(v);
            if v > value {
                members = new_members;
                target = new_target;
                value = v;
            }
        }

        if best.as_ref().is_none_or(|b| value > b.entropy) {
            members.sort_unstable();
            best = Some(ScoredQuestion {
                question: QuestionPoint {
                    kind_index,
                    members,
                    target,
                },
                entropy: value,
            });
        }
    }
    best
}

/// How the per-kind index is scored.
#[derive(Debug, Clone, Copy)]
pub enum Criterion<'a> {
    /// Answer entropy under the current model.
    Entropy,
    /// Expected cross-entropy with answers drawn from a reference model.
    /// Question points are still located by entropy.
    Ideal { reference: &'a ScoreModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub kind_index: usize,
    pub question: QuestionPoint,
    pub entropy: f64,
    /// Entropy, or the reference cross-entropy under the ideal criterion.
    pub criterion: f64,
    /// `criterion / g(cost) + ξ`.
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub chosen_kind: usize,
    pub question: QuestionPoint,
    pub entropy: f64,
    pub per_kind: Vec<KindScore>,
}

/// Argmax of `criterion / g(cost) + jitter`; ties go to the earliest entry.
pub fn choose_kind(criterion_and_cost: &[(f64, f64)], exponent: f64, jitter: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(value, cost)) in criterion_and_cost.iter().enumerate() {
        let index = value / g_cost(cost, exponent) + jitter.get(i).copied().unwrap_or(0.0);
        if best.is_none_or(|(_, b)| index > b) {
            best = Some((i, index));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the next question among `kind_indices`, restricted to affordable
/// kinds with enough candidates.
#[allow(clippy::too_many_arguments)]
pub fn select_question<R: Rng + ?Sized>(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kinds: &[QuestionKind],
    kind_indices: &[usize],
    candidates: &[usize],
    remaining_budget: f64,
    cfg: &AcquisitionConfig,
    criterion: Criterion<'_>,
    rng: &mut R,
) -> Result<AcquisitionResult> {
    let affordable: Vec<usize> = kind_indices
        .iter()
        .copied()
        .filter(|&k| kinds[k].cost <= remaining_budget + BUDGET_EPS)
        .collect();
    if affordable.is_empty() {
        return Err(Error::BudgetExhausted);
    }
    let table = ProbTable::new(model, pool, candidates)?;
    let reference = match criterion {
        Criterion::Ideal { reference } => Some(ProbTable::new(reference, pool, candidates)?),
        Criterion::Entropy => None,
    };

    let mut per_kind = Vec::new();
    for &k in &affordable {
        let Some(found) = optimize_question_point(&table, &kinds[k], k, candidates, cfg, rng) else {
            continue;
        };
        let value = match &reference {
            None => found.entropy,
            Some(truth) => {
                let q = &found.question;
                let family = kinds[k].family;
                cross_entropy(
                    &truth.distribution(family, &q.members, q.target),
                    &table.distribution(family, &q.members, q.target),
                )
            }
        };
        per_kind.push(KindScore {
            kind_index: k,
            question: found.question,
            entropy: found.entropy,
            criterion: value,
            index: 0.0,
        });
    }
    if per_kind.is_empty() {
        return Err(Error::NoFeasibleQuestion);
    }

    let jitter: Vec<f64> = per_kind
        .iter()
        .map(|_| cfg.jitter_scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    for (s, xi) in per_kind.iter_mut().zip(&jitter) {
        s.index = s.criterion / g_cost(kinds[s.kind_index].cost, cfg.cost_exponent) + xi;
    }
    let pairs: Vec<(f64, f64)> = per_kind
        .iter()
        .map(|s| (s.criterion, kinds[s.kind_index].cost))
        .collect();
    let best = choose_kind(&pairs, cfg.cost_exponent, &jitter).expect("non-empty");
    let chosen = &per_kind[best];
    Ok(AcquisitionResult {
        chosen_kind: chosen.kind_index,
        question: chosen.question.clone(),
        entropy: chosen.entropy,
        per_kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_from(rows: Vec<Vec<f64>>) -> ProbTable {
        let num_classes = rows[0].len();
        ProbTable {
            probs: rows.into_iter().map(Some).collect(),
            num_classes,
        }
    }

    #[test]
    fn g_cost_values() {
        assert_eq!(g_cost(1.0, 2.0 / 3.0), 1.0);
        assert!((g_cost(0.25, 2.0 / 3.0) - 0.39685).abs() < 1e-4);
        assert!(g_cost(0.2, 2.0 / 3.0) < g_cost(0.3, 2.0 / 3.0));
    }

    #[test]
    fn class_kind_is_an_exact_scan() {
        // Entropies roughly 0.2, 1.1 and 0.7 nats.
        let table = table_from(vec![
            vec![0.96, 0.02, 0.02],
            vec![0.34, 0.33, 0.33],
            vec![0.7, 0.2, 0.1],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let best = optimize_question_point(
            &table,
            &QuestionKind::class(),
            0,
            &[0, 1, 2],
            &AcquisitionConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(best.question.members, vec![1]);
    }

    #[test]
    fn too_few_candidates_is_infeasible() {
        let table = table_from(vec![vec![0.5, 0.5]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kind = QuestionKind::all(2, 0.2).unwrap();
        assert!(optimize_question_point(&table, &kind, 1, &[0], &AcquisitionConfig::default(), &mut rng).is_none());
    }

    #[test]
    fn identical_points_give_closed_form_entropy() {
        let table = table_from(vec![vec![0.6, 0.4]; 8]);
        let kind = QuestionKind::any(3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cands: Vec<usize> = (0..8).collect();
        let best = optimize_question_point(&table, &kind, 1, &cands, &AcquisitionConfig::default(), &mut rng).unwrap();
        let h = |no: f64| -no * no.ln() - (1.0 - no) * (1.0 - no).ln();
        let expected = h(0.4f64.powi(3)).max(h(0.6f64.powi(3)));
        assert!((best.entropy - expected).abs() < 1e-12);
    }

    #[test]
    fn cheaper_kind_wins_on_cost_normalised_index() {
        let chosen = choose_kind(&[(1.2, 1.0), (0.65, 0.25)], 2.0 / 3.0, &[0.0, 0.0]);
        assert_eq!(chosen, Some(1));
        assert!((0.65 / g_cost(0.25, 2.0 / 3.0) - 1.6379).abs() < 1e-4);
    }

    #[test]
    fn ties_go_to_lowest_kind() {
        assert_eq!(choose_kind(&[(0.5, 1.0), (0.5, 1.0)], 2.0 / 3.0, &[]), Some(0));
    }

    #[test]
    fn unaffordable_kinds_signal_exhaustion() {
        let m = ScoreModel::linear(1, 2);
        let pool = vec![vec![0.0], vec![1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = select_question(
            &m,
            &pool,
            &[QuestionKind::class()],
            &[0],
            &[0, 1],
            0.5,
            &AcquisitionConfig::default(),
            Criterion::Entropy,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::BudgetExhausted)));
    }

    #[test]
    fn single_affordable_kind_is_chosen() {
        let m = ScoreModel::linear(1, 2);
        let pool = vec![vec![0.0], vec![1.0], vec![2.0]];
        let kinds = vec![QuestionKind::class(), QuestionKind::all(2, 0.2).unwrap()];
        let cfg = AcquisitionConfig {
            jitter_scale: 5.0,
            ..Default::default()
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = select_question(&m, &pool, &kinds, &[0, 1], &[0, 1, 2], 0.5, &cfg, Criterion::Entropy, &mut rng).unwrap();
            assert_eq!(r.chosen_kind, 1);
        }
    }
}
