//! Answer sources.

use crate::error::{Error, Result};
use crate::questions::{QuestionFamily, QuestionKind, QuestionPoint, NO, YES};

pub trait Oracle {
    fn answer(&mut self, kind: &QuestionKind, question: &QuestionPoint) -> Result<usize>;
}

/// Answers from hidden ground-truth labels; always deterministic.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    labels: Vec<usize>,
}

impl SimulatedOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }
}

impl Oracle for SimulatedOracle {
    fn answer(&mut self, kind: &QuestionKind, question: &QuestionPoint) -> Result<usize> {
        simulated_answer(&self.labels, kind, question)
    }
}

pub fn simulated_answer(labels: &[usize], kind: &QuestionKind, question: &QuestionPoint) -> Result<usize> {
    let label = |i: usize| {
        labels
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config(format!("no hidden label for pool point {i}")))
    };
    match kind.family {
        QuestionFamily::Class => {
            let &i = question
                .members
                .first()
                .ok_or_else(|| Error::InvalidInput("class question without a member".into()))?;
            label(i)
        }
        QuestionFamily::All => {
            for &i in &question.members {
                if label(i)? != question.target {
                    return Ok(NO);
                }
            }
            Ok(YES)
        }
        QuestionFamily::Any => {
            for &i in &question.members {
                if label(i)? == question.target {
                    return Ok(YES);
                }
            }
            Ok(NO)
        }
    }
}
