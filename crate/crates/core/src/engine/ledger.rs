use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub kind_index: usize,
    pub cost: f64,
    pub answer: usize,
    /// Budget spent before this question was charged.
    pub spent_before: f64,
}

/// Running budget account. `spent` is the left-to-right sum of the logged costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: f64,
    pub spent: f64,
    pub counts: Vec<usize>,
    pub history: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new(budget: f64, num_kinds: usize) -> Self {
        Self {
            budget,
            spent: 0.0,
            counts: vec![0; num_kinds],
            history: Vec::new(),
        }
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.spent
    }

    /// Whether `B ≥ b + cost`, up to [`BUDGET_EPS`](crate::acquisition::BUDGET_EPS).
    pub fn can_afford(&self, cost: f64) -> bool {
        self.budget + crate::acquisition::BUDGET_EPS >= self.spent + cost
    }

    pub fn charge(&mut self, iteration: usize, kind_index: usize, cost: f64, answer: usize) {
        self.history.push(LedgerEntry {
            iteration,
            kind_index,
            cost,
            answer,
            spent_before: self.spent,
        });
        self.spent += cost;
        self.counts[kind_index] += 1;
    }
}
