//! Full-batch gradient descent on the averaged question loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::questions::{aggregate_loss, loss_and_gradient, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub step_size: f64,
    /// Multiplicative step decay applied after every epoch.
    pub step_decay: f64,
    /// Stop once the relative change of the objective drops below this.
    pub convergence_tol: f64,
    /// Weight of `½‖θ‖²` in the training objective.
    pub l2_penalty: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            step_size: 1.0,
            step_decay: 0.995,
            convergence_tol: 1e-7,
            l2_penalty: 1e-4,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config("training.step_size must be > 0".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("training.convergence_tol must be > 0".into()));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::Config("training.step_decay must be in (0, 1]".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::Config("training.l2_penalty must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ScoreModel,
    /// Training objective after every accepted epoch, starting with the
    /// initial value.
    pub epoch_losses: Vec<f64>,
}

fn objective(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kb: &KnowledgeBase,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad) = loss_and_gradient(model, pool, kb)?;
    let mut penalty = 0.0;
    for (g, &t) in grad.iter_mut().zip(model.params()) {
        *g += l2 * t;
        penalty += t * t;
    }
    Ok((loss + 0.5 * l2 * penalty, grad))
}

fn objective_value(model: &ScoreModel, pool: &[Vec<f64>], kb: &KnowledgeBase, l2: f64) -> Result<f64> {
    let norm: f64 = model.params().iter().map(|t| t * t).sum();
    Ok(aggregate_loss(model, pool, kb)? + 0.5 * l2 * norm)
}

/// Warm-started gradient descent from `model`'s parameters.
///
/// A step is kept only when it lowers the objective; otherwise the step size
/// is halved and the step retried. The returned model never has a higher
/// [`aggregate_loss`] than the starting one.
pub fn train_model(
    model: &ScoreModel,
    pool: &[Vec<f64>],
    kb: &KnowledgeBase,
    cfg: &TrainingConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if kb.is_empty() || cfg.max_epochs == 0 {
        let start = objective_value(model, pool, kb, cfg.l2_penalty)?;
        return Ok(Trained {
            model: model.clone(),
            epoch_losses: vec![start],
        });
    }

    let start_loss = aggregate_loss(model, pool, kb)?;
    let mut current = model.clone();
    let (mut value, mut grad) = objective(&current, pool, kb, cfg.l2_penalty)?;
    if !value.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            reason: "non-finite initial loss".into(),
        });
    }
    let mut losses = vec![value];
    let mut step = cfg.step_size;

    for epoch in 1..=cfg.max_epochs {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: "non-finite gradient".into(),
            });
        }
        let mut accepted = None;
        while step > 1e-12 {
            let proposal: Vec<f64> = current
                .params()
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - step * g)
                .collect();
            if proposal.iter().all(|v| v.is_finite()) {
                let candidate = current.with_params(proposal)?;
                let (v, g) = objective(&candidate, pool, kb, cfg.l2_penalty)?;
                if v.is_finite() && v <= value {
                    accepted = Some((candidate, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, next_value, next_grad)) = accepted else {
            break;
        };
        let rel = (value - next_value).abs() / value.abs().max(1e-12);
        current = next;
        value = next_value;
        grad = next_grad;
        losses.push(value);
        step *= cfg.step_decay;
        if rel < cfg.convergence_tol {
            break;
        }
    }

    // The objective includes the penalty; the unpenalised loss must not rise.
    if aggregate_loss(&current, pool, kb)? > start_loss {
        current = model.clone();
    }
    Ok(Trained {
        model: current,
        epoch_losses: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questions::{AnswerRecord, QuestionKind, QuestionPoint, YES};

    fn class_kb(labels: &[(usize, usize)]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(vec![QuestionKind::class()]);
        for (step, &(i, y)) in labels.iter().enumerate() {
            kb.push(
                AnswerRecord {
                    question: QuestionPoint::class(0, i),
                    answer: y,
                    step: step as u64,
                    budget_spent: 0.0,
                },
                2,
            )
            .unwrap();
        }
        kb
    }

    #[test]
    fn zero_epochs_returns_input() {
        let pool = vec![vec![1.0], vec![-1.0]];
        let kb = class_kb(&[(0, 0), (1, 1)]);
        let m = ScoreModel::linear(1, 2).with_params(vec![0.3, 0.1, -0.2, 0.0]).unwrap();
        let cfg = TrainingConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let t = train_model(&m, &pool, &kb, &cfg).unwrap();
        assert_eq!(t.model, m);
    }

    #[test]
    fn loss_never_increases() {
        let pool = vec![vec![1.0], vec![-1.0], vec![0.5], vec![-0.2]];
        let kb = class_kb(&[(0, 0), (1, 1), (2, 1), (3, 0)]);
        let m = ScoreModel::linear(1, 2);
        let t = train_model(&m, &pool, &kb, &TrainingConfig::default()).unwrap();
        let first = t.epoch_losses[0];
        let last = *t.epoch_losses.last().unwrap();
        assert!(last <= first);
        assert!(t.epoch_losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(aggregate_loss(&t.model, &pool, &kb).unwrap() <= aggregate_loss(&m, &pool, &kb).unwrap());
    }

    #[test]
    fn all_yes_pushes_members_toward_target() {
        let pool = vec![vec![0.4], vec![1.3]];
        let mut kb = KnowledgeBase::new(vec![QuestionKind::class(), QuestionKind::all(2, 0.2).unwrap()]);
        kb.push(
            AnswerRecord {
                question: QuestionPoint {
                    kind_index: 1,
                    members: vec![0, 1],
                    target: 1,
                },
                answer: YES,
                step: 0,
                budget_spent: 0.2,
            },
            2,
        )
        .unwrap();
        let t = train_model(&ScoreModel::linear(1, 2), &pool, &kb, &TrainingConfig::default()).unwrap();
        for x in &pool {
            assert!(t.model.predict_probs(x).unwrap()[1] > 0.5);
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = TrainingConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
