//! The question algebra: answer distributions for the three question
//! families, cross-entropy loss of an observed answer, the averaged loss over
//! everything asked so far, answer entropy, and the expected loss under a
//! reference model.
//!
//! Answers are encoded as integers. A class question is answered with a
//! zero-based class index; all-of and any-of questions with `0` (no) or
//! `1` (yes).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_softmax, log_sum_exp, softmax, ScoreModel};

/// Answer probabilities are clamped into `[MIN, 1 - MIN]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

pub const NO: usize = 0;
pub const YES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFamily {
    /// "What is the class of x?"
    Class,
    /// "Are all of x1..xm from class c?"
    All,
    /// "Is any of x1..xm from class c?"
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionKind {
    pub family: QuestionFamily,
    pub group_size: usize,
    pub cost: f64,
}

impl QuestionKind {
    /// The class question always has group size 1 and unit cost.
    pub fn class() -> Self {
        Self {
            family: QuestionFamily::Class,
            group_size: 1,
            cost: 1.0,
        }
    }

    pub fn all(group_size: usize, cost: f64) -> Result<Self> {
        Self::new(QuestionFamily::All, group_size, cost)
    }

    pub fn any(group_size: usize, cost: f64) -> Result<Self> {
        Self::new(QuestionFamily::Any, group_size, cost)
    }

    pub fn new(family: QuestionFamily, group_size: usize, cost: f64) -> Result<Self> {
        let kind = Self {
            family,
            group_size,
            cost,
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost.is_finite() && self.cost > 0.0) {
            return Err(Error::InvalidInput(format!(
                "question cost must be positive, got {}",
                self.cost
            )));
        }
        match self.family {
            QuestionFamily::Class if self.group_size != 1 || self.cost != 1.0 => Err(
                Error::InvalidInput("class question must have group size 1 and cost 1".into()),
            ),
            _ if self.group_size == 0 => {
                Err(Error::InvalidInput("group size must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Size of the answer set: `L` for class questions, 2 otherwise.
    pub fn answer_set_size(&self, num_classes: usize) -> usize {
        match self.family {
            QuestionFamily::Class => num_classes,
            QuestionFamily::All | QuestionFamily::Any => 2,
        }
    }
}

/// One concrete question: which kind, which pool points, which class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionPoint {
    pub kind_index: usize,
    pub members: Vec<usize>,
    /// Ignored for class questions.
    pub target: usize,
}

impl QuestionPoint {
    pub fn class(kind_index: usize, member: usize) -> Self {
        Self {
            kind_index,
            members: vec![member],
            target: 0,
        }
    }

    pub fn validate(&self, kind: &QuestionKind, pool_size: usize, num_classes: usize) -> Result<()> {
        if self.members.len() != kind.group_size {
            return Err(Error::InvalidInput(format!(
                "question has {} members, kind expects {}",
                self.members.len(),
                kind.group_size
            )));
        }
        if let Some(&bad) = self.members.iter().find(|&&i| i >= pool_size) {
            return Err(Error::InvalidInput(format!(
                "member index {bad} outside pool of size {pool_size}"
            )));
        }
        let distinct: BTreeSet<_> = self.members.iter().collect();
        if distinct.len() != self.members.len() {
            return Err(Error::InvalidInput("question members must be distinct".into()));
        }
        if kind.family != QuestionFamily::Class && self.target >= num_classes {
            return Err(Error::InvalidInput(format!(
                "target class {} outside 0..{num_classes}",
                self.target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: QuestionPoint,
    pub answer: usize,
    /// Logical time: position of the answer in the run.
    pub step: u64,
    /// Budget charged for this answer (zero for seed labels).
    pub budget_spent: f64,
}

/// Everything answered so far, grouped by question kind, plus the set of
/// pool points that appear in any answered question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    kinds: Vec<QuestionKind>,
    per_kind: Vec<Vec<AnswerRecord>>,
    touched: BTreeSet<usize>,
}

impl KnowledgeBase {
    pub fn new(kinds: Vec<QuestionKind>) -> Self {
        let per_kind = vec![Vec::new(); kinds.len()];
        Self {
            kinds,
            per_kind,
            touched: BTreeSet::new(),
        }
    }

    pub fn kinds(&self) -> &[QuestionKind] {
        &self.kinds
    }

    /// Appends a record after checking its kind index and answer.
    pub fn push(&mut self, record: AnswerRecord, num_classes: usize) -> Result<()> {
        let kind = self.kinds.get(record.question.kind_index).ok_or_else(|| {
            Error::InvalidInput(format!("unknown kind index {}", record.question.kind_index))
        })?;
        let size = kind.answer_set_size(num_classes);
        if record.answer >= size {
            return Err(Error::AnswerOutOfRange {
                answer: record.answer,
                size,
            });
        }
        self.touched.extend(record.question.members.iter().copied());
        self.per_kind[record.question.kind_index].push(record);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &AnswerRecord> {
        self.per_kind.iter().flatten()
    }

    pub fn records_of(&self, kind_index: usize) -> &[AnswerRecord] {
        &self.per_kind[kind_index]
    }

    /// `n_k` for every kind.
    pub fn counts(&self) -> Vec<usize> {
        self.per_kind.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.per_kind.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn touched(&self) -> &BTreeSet<usize> {
        &self.touched
    }
}

/// Predicted probabilities over a question's answer set, indexed by answer.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution(pub Vec<f64>);

impl AnswerDistribution {
    pub fn probability(&self, answer: usize) -> f64 {
        self.0[answer]
    }

    /// Most likely answer; ties go to the lowest answer value.
    pub fn most_likely(&self) -> usize {
        crate::model::argmax(&self.0)
    }

    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Answer distribution from the class probabilities of each member.
pub fn distribution_from_probs(
    family: QuestionFamily,
    member_probs: &[&[f64]],
    target: usize,
) -> AnswerDistribution {
    match family {
        QuestionFamily::Class => AnswerDistribution(member_probs[0].to_vec()),
        QuestionFamily::All => {
            let yes: f64 = member_probs.iter().map(|p| p[target]).product();
            AnswerDistribution(vec![1.0 - yes, yes])
        }
        QuestionFamily::Any => {
            let no: f64 = member_probs.iter().map(|p| 1.0 - p[target]).product();
            AnswerDistribution(vec![no, 1.0 - no])
        }
    }
}

fn member_probs(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    question: &QuestionPoint,
) -> Result<Vec<Vec<f64>>> {
    question
        .members
        .iter()
        .map(|&i| {
            let x = pool.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("member index {i} outside pool of size {}", pool.len()))
            })?;
            Ok(model.predict_probs(x)?.into_inner())
        })
        .collect()
}

pub fn answer_distribution(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kind: &QuestionKind,
    question: &QuestionPoint,
) -> Result<AnswerDistribution> {
    question.validate(kind, pool.len(), model.num_classes())?;
    let probs = member_probs(model, pool, question)?;
    let refs: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
    Ok(distribution_from_probs(kind.family, &refs, question.target))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Cross-entropy of the observed answer: `-ln Pr(observed)`.
pub fn question_loss(predicted: &AnswerDistribution, observed: usize) -> f64 {
    -clamp_prob(predicted.probability(observed)).ln()
}

pub fn answer_entropy(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kind: &QuestionKind,
    question: &QuestionPoint,
) -> Result<f64> {
    Ok(answer_distribution(model, pool, kind, question)?.entropy())
}

/// `-Σ_a Pr_ref(a) ln Pr_candidate(a)`: the candidate's expected loss when
/// answers follow the reference model.
pub fn cross_entropy(reference: &AnswerDistribution, candidate: &AnswerDistribution) -> f64 {
    reference
        .0
        .iter()
        .zip(&candidate.0)
        .filter(|(&r, _)| r > 0.0)
        .map(|(&r, &c)| -r * clamp_prob(c).ln())
        .sum()
}

pub fn ideal_expected_loss(
    true_model: &ScoreModel,
    candidate_model: &ScoreModel,
    pool: &[Vec<f64>],
    kind: &QuestionKind,
    question: &QuestionPoint,
) -> Result<f64> {
    if true_model.num_classes() != candidate_model.num_classes()
        || true_model.input_dim() != candidate_model.input_dim()
    {
        return Err(Error::InvalidInput(
            "reference and candidate models disagree on shape".into(),
        ));
    }
    let reference = answer_distribution(true_model, pool, kind, question)?;
    let candidate = answer_distribution(candidate_model, pool, kind, question)?;
    Ok(cross_entropy(&reference, &candidate))
}

const LN_MIN: f64 = -27.631021115928547; // ln(1e-12)

/// `ln(1 - e^s)` for `s ≤ 0`, and its derivative with respect to `s`.
fn log_one_minus_exp(s: f64) -> (f64, f64) {
    let one_minus = -s.exp_m1();
    (one_minus.ln(), -s.exp() / one_minus)
}

/// Loss of one record, computed in the log domain. When `grad` is given,
/// adds `weight · ∂loss/∂θ` to it.
fn record_loss(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kind: &QuestionKind,
    record: &AnswerRecord,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let q = &record.question;
    q.validate(kind, pool.len(), model.num_classes())?;
    let forwards = q
        .members
        .iter()
        .map(|&i| model.forward(&pool[i]))
        .collect::<Result<Vec<_>>>()?;
    let log_probs: Vec<Vec<f64>> = forwards.iter().map(|f| log_softmax(&f.scores)).collect();
    let c = q.target;

    // log Pr(answer) and d log Pr / d scores, per member.
    let (log_pr, d_log_pr): (f64, Vec<Vec<f64>>) = match kind.family {
        QuestionFamily::Class => {
            let y = record.answer;
            let p = softmax(&forwards[0].scores);
            let d = (0..p.len())
                .map(|l| if l == y { 1.0 - p[l] } else { -p[l] })
                .collect();
            (log_probs[0][y], vec![d])
        }
        QuestionFamily::All => {
            let s: f64 = log_probs.iter().map(|lp| lp[c]).sum();
            // d s / d h_j = e_c - p_j
            let ds: Vec<Vec<f64>> = forwards
                .iter()
                .map(|f| {
                    let p = softmax(&f.scores);
                    (0..p.len())
                        .map(|l| if l == c { 1.0 - p[l] } else { -p[l] })
                        .collect()
                })
                .collect();
            if record.answer == YES {
                (s, ds)
            } else {
                let (v, dv) = log_one_minus_exp(s);
                (v, scale(ds, dv))
            }
        }
        QuestionFamily::Any => {
            // t = Σ_j ln(1 - p_c(x_j))
            let mut t = 0.0;
            let mut dt = Vec::with_capacity(forwards.len());
            for f in &forwards {
                let others: Vec<f64> = f
                    .scores
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != c)
                    .map(|(_, &h)| h)
                    .collect();
                let lse_all = log_sum_exp(&f.scores);
                t += log_sum_exp(&others) - lse_all;
                let p_c = (f.scores[c] - lse_all).exp();
                let rest = softmax(&others);
                let mut d = Vec::with_capacity(f.scores.len());
                let mut k = 0;
                for l in 0..f.scores.len() {
                    if l == c {
                        d.push(-p_c);
                    } else {
                        d.push(p_c * rest[k]);
                        k += 1;
                    }
                }
                dt.push(d);
            }
            if record.answer == NO {
                (t, dt)
            } else {
                let (v, dv) = log_one_minus_exp(t);
                (v, scale(dt, dv))
            }
        }
    };

    let upper = (-PROB_CLAMP).ln_1p();
    let clamped = log_pr.is_nan() || log_pr < LN_MIN || log_pr > upper;
    let loss = -if log_pr.is_nan() {
        LN_MIN
    } else {
        log_pr.clamp(LN_MIN, upper)
    };

    if let Some(grad) = grad {
        if !clamped {
            for (fwd, d) in forwards.iter().zip(&d_log_pr) {
                let d_loss: Vec<f64> = d.iter().map(|v| -weight * v).collect();
                model.backward(fwd, &d_loss, grad);
            }
        }
    }
    Ok(loss)
}

fn scale(mut rows: Vec<Vec<f64>>, factor: f64) -> Vec<Vec<f64>> {
    for row in &mut rows {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
    rows
}

/// Sum of per-record losses, without the `1 / Σ n_k` normalisation.
pub fn total_loss(model: &ScoreModel, pool: &[Vec<f64>], kb: &KnowledgeBase) -> Result<f64> {
    let mut sum = 0.0;
    for r in kb.records() {
        sum += record_loss(model, pool, &kb.kinds[r.question.kind_index], r, 1.0, None)?;
    }
    Ok(sum)
}

/// Mean cross-entropy over every answered question. An empty knowledge base
/// has loss 0.
pub fn aggregate_loss(model: &ScoreModel, pool: &[Vec<f64>], kb: &KnowledgeBase) -> Result<f64> {
    if kb.is_empty() {
        return Ok(0.0);
    }
    Ok(total_loss(model, pool, kb)? / kb.len() as f64)
}

/// Gradient of [`aggregate_loss`] with respect to the model parameters.
pub fn loss_gradient(model: &ScoreModel, pool: &[Vec<f64>], kb: &KnowledgeBase) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(model, pool, kb)?.1)
}

pub fn loss_and_gradient(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kb: &KnowledgeBase,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    if kb.is_empty() {
        return Ok((0.0, grad));
    }
    let w = 1.0 / kb.len() as f64;
    let mut sum = 0.0;
    for r in kb.records() {
        sum += record_loss(
            model,
            pool,
            &kb.kinds[r.question.kind_index],
            r,
            w,
            Some(&mut grad),
        )?;
    }
    Ok((sum * w, grad))
}
