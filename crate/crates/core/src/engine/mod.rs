//! The active-learning loop.
//!
//! [`Engine`] is a step machine: [`Engine::next_question`] surfaces the next
//! question (a free seed label first, then budgeted questions) and
//! [`Engine::submit_answer`] records the answer, charges the budget and
//! retrains. Simulated runs drive it with an [`Oracle`]; the session service
//! drives it with answers from a person.

mod ledger;
mod log;
mod metrics;
mod oracle;

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ledger::{BudgetLedger, LedgerEntry};
pub use log::{LogEvent, RunLog, LOG_SCHEMA_VERSION};
pub use metrics::{evaluate, Evaluation, MetricsRow, RunMetrics};
pub use oracle::{simulated_answer, Oracle, SimulatedOracle};

use crate::acquisition::{select_question, AcquisitionConfig, Criterion, ProbTable};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exploration::{candidates_from_embedding, embed, schedule_from_embedding, ScheduleConfig};
use crate::model::{ModelFamily, ScoreModel};
use crate::questions::{AnswerRecord, KnowledgeBase, QuestionFamily, QuestionKind, QuestionPoint};
use crate::train::{train_model, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// All configured kinds, cost-normalised entropy index.
    Proposed,
    /// Class questions only, highest entropy point.
    TraditionalEntropy,
    /// Class questions only, uniformly random point.
    Random,
    /// Like `Proposed`, but kinds are ranked by cross-entropy against a
    /// reference model.
    Ideal,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "traditional_entropy" | "entropy" => Ok(Self::TraditionalEntropy),
            "random" => Ok(Self::Random),
            "ideal" => Ok(Self::Ideal),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub budget: f64,
    pub strategy: Strategy,
    pub use_exploration_frame: bool,
    /// `kinds[0]` must be the class question.
    pub kinds: Vec<QuestionKind>,
    /// Budget units to accumulate between retrains.
    pub batch_size: u32,
    /// Free seed labels; `None` means `3L`.
    pub initial_labels: Option<usize>,
    /// Budget spent on class-only entropy questions before other kinds open up.
    pub warmup_budget: f64,
    pub seed: u64,
    pub model: ModelFamily,
    pub training: TrainingConfig,
    pub acquisition: AcquisitionConfig,
    pub schedule: ScheduleConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            budget: 60.0,
            strategy: Strategy::Proposed,
            use_exploration_frame: true,
            kinds: vec![QuestionKind::class()],
            batch_size: 1,
            initial_labels: None,
            warmup_budget: 0.0,
            seed: 0,
            model: ModelFamily::Linear,
            training: TrainingConfig::default(),
            acquisition: AcquisitionConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Config("budget must be a finite number ≥ 0".into()));
        }
        match self.kinds.first() {
            Some(k) if k.family == QuestionFamily::Class => {}
            _ => return Err(Error::Config("kinds[0] must be the class question".into())),
        }
        for k in &self.kinds {
            k.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.initial_labels == Some(0) {
            return Err(Error::Config("initial_labels must be ≥ 1".into()));
        }
        if !(self.warmup_budget >= 0.0) {
            return Err(Error::Config("warmup_budget must be ≥ 0".into()));
        }
        if let ModelFamily::Mlp { hidden } = &self.model {
            if hidden.iter().any(|&w| w == 0) {
                return Err(Error::Config("hidden layer widths must be ≥ 1".into()));
            }
        }
        self.training.validate()?;
        self.acquisition.validate()?;
        self.schedule.validate()?;
        Ok(())
    }
}

/// A question waiting for its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub question: QuestionPoint,
    pub kind: QuestionKind,
    /// Free seed label (charged nothing).
    pub seed: bool,
    /// Budget charged on answer.
    pub cost: f64,
    pub entropy: f64,
    pub level: Option<usize>,
    pub step: u64,
}

impl PendingQuestion {
    pub fn answer_set_size(&self, num_classes: usize) -> usize {
        self.kind.answer_set_size(num_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seeding,
    Active,
    Exhausted,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub retrained: bool,
    pub budget_spent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub metrics: RunMetrics,
    pub log: RunLog,
    pub ledger: BudgetLedger,
    pub model: ScoreModel,
    pub knowledge: KnowledgeBase,
}

/// Labelled evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl From<&Dataset> for Holdout {
    fn from(ds: &Dataset) -> Self {
        Self {
            features: ds.features.clone(),
            labels: ds.labels.clone(),
        }
    }
}

pub struct Engine {
    cfg: EngineConfig,
    pool: Vec<Vec<f64>>,
    num_classes: usize,
    holdout: Option<Holdout>,
    reference: Option<ScoreModel>,
    model: ScoreModel,
    kb: KnowledgeBase,
    ledger: BudgetLedger,
    rng: ChaCha8Rng,
    seed_queue: VecDeque<usize>,
    phase: Phase,
    pending: Option<PendingQuestion>,
    metrics: RunMetrics,
    log: RunLog,
    step: u64,
    iteration: usize,
    since_retrain: f64,
    last_query: Option<(usize, f64, Option<usize>)>,
}

impl Engine {
    pub fn new(
        pool: Vec<Vec<f64>>,
        num_classes: usize,
        holdout: Option<Holdout>,
        cfg: EngineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let dim = pool
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("empty pool".into()))?;
        if let Some(row) = pool.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        let seeds = cfg.initial_labels.unwrap_or(3 * num_classes);
        if seeds > pool.len() {
            return Err(Error::Config(format!(
                "{seeds} seed labels requested from a pool of {}",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seed_queue: VecDeque<usize> = sample(&mut rng, pool.len(), seeds).into_iter().collect();
        let model = ScoreModel::new(&cfg.model, dim, num_classes, cfg.seed);
        let kb = KnowledgeBase::new(cfg.kinds.clone());
        let ledger = BudgetLedger::new(cfg.budget, cfg.kinds.len());
        let mut log = RunLog::default();
        log.push(LogEvent::Config {
            config: cfg.clone(),
            pool_size: pool.len(),
            num_classes,
        });
        Ok(Self {
            cfg,
            pool,
            num_classes,
            holdout,
            reference: None,
            model,
            kb,
            ledger,
            rng,
            seed_queue,
            phase: Phase::Seeding,
            pending: None,
            metrics: RunMetrics::default(),
            log,
            step: 0,
            iteration: 0,
            since_retrain: 0.0,
            last_query: None,
        })
    }

    /// Reference model for the ideal strategy.
    pub fn with_reference(mut self, reference: ScoreModel) -> Result<Self> {
        if reference.num_classes() != self.num_classes || reference.input_dim() != self.model.input_dim() {
            return Err(Error::Config("reference model shape does not match the pool".into()));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ScoreModel {
        &self.model
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn pending(&self) -> Option<&PendingQuestion> {
        self.pending.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pool(&self) -> &[Vec<f64>] {
        &self.pool
    }

    pub fn seeds_remaining(&self) -> usize {
        self.seed_queue.len()
    }

    /// Kinds the strategy may ask right now.
    fn active_kinds(&self) -> Vec<usize> {
        match self.cfg.strategy {
            Strategy::TraditionalEntropy | Strategy::Random => vec![0],
            Strategy::Proposed | Strategy::Ideal => {
                if self.ledger.spent + crate::acquisition::BUDGET_EPS < self.cfg.warmup_budget {
                    vec![0]
                } else {
                    (0..self.cfg.kinds.len()).collect()
                }
            }
        }
    }

    /// The pending question, computing a new one if needed. `None` once the
    /// budget (or the pool) is exhausted.
    pub fn next_question(&mut self) -> Result<Option<PendingQuestion>> {
        if let Some(p) = &self.pending {
            return Ok(Some(p.clone()));
        }
        match &self.phase {
            Phase::Exhausted => return Ok(None),
            Phase::Failed(reason) => {
                return Err(Error::TrainingDiverged {
                    epoch: 0,
                    reason: reason.clone(),
                })
            }
            Phase::Seeding => {
                let point = *self.seed_queue.front().expect("seeding with an empty queue");
                let kind = self.cfg.kinds[0].clone();
                let entropy = self.model.predict_probs(&self.pool[point])?.iter().map(|&p| -p * p.ln()).sum();
                self.log.push(LogEvent::Seed {
                    step: self.step,
                    point,
                });
                let p = PendingQuestion {
                    question: QuestionPoint::class(0, point),
                    kind,
                    seed: true,
                    cost: 0.0,
                    entropy,
                    level: None,
                    step: self.step,
                };
                self.pending = Some(p.clone());
                return Ok(Some(p));
            }
            Phase::Active => {}
        }

        let kinds = self.active_kinds();
        let min_cost = kinds
            .iter()
            .map(|&k| self.cfg.kinds[k].cost)
            .fold(f64::INFINITY, f64::min);
        if !self.ledger.can_afford(min_cost) {
            self.exhaust()?;
            return Ok(None);
        }

        let (candidates, level) = self.candidates()?;
        if candidates.is_empty() {
            self.exhaust()?;
            return Ok(None);
        }

        let remaining = self.ledger.remaining();
        let choice = match self.cfg.strategy {
            Strategy::Random => {
                let point = candidates[self.rng.random_range(0..candidates.len())];
                let entropy = ProbTable::new(&self.model, &self.pool, &[point])?.entropy(QuestionFamily::Class, &[point], 0);
                Some((QuestionPoint::class(0, point), entropy))
            }
            strategy => {
                let criterion = match (strategy, &self.reference) {
                    (Strategy::Ideal, Some(reference)) => Criterion::Ideal { reference },
                    (Strategy::Ideal, None) => {
                        return Err(Error::Config("ideal strategy needs a reference model".into()))
                    }
                    _ => Criterion::Entropy,
                };
                match select_question(
                    &self.model,
                    &self.pool,
                    &self.cfg.kinds,
                    &kinds,
                    &candidates,
                    remaining,
                    &self.cfg.acquisition,
                    criterion,
                    &mut self.rng,
                ) {
                    Ok(r) => Some((r.question, r.entropy)),
                    Err(Error::BudgetExhausted | Error::NoFeasibleQuestion) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        let Some((question, entropy)) = choice else {
            self.exhaust()?;
            return Ok(None);
        };

        let kind = self.cfg.kinds[question.kind_index].clone();
        self.log.push(LogEvent::Query {
            step: self.step,
            iteration: self.iteration,
            question: question.clone(),
            cost: kind.cost,
            entropy,
            level,
        });
        let p = PendingQuestion {
            question,
            cost: kind.cost,
            kind,
            seed: false,
            entropy,
            level,
            step: self.step,
        };
        self.pending = Some(p.clone());
        Ok(Some(p))
    }

    fn candidates(&self) -> Result<(Vec<usize>, Option<usize>)> {
        let touched = self.kb.touched();
        if !self.cfg.use_exploration_frame {
            let c = (0..self.pool.len()).filter(|i| !touched.contains(i)).collect();
            return Ok((c, None));
        }
        let points = embed(self.cfg.schedule.metric, &self.model, &self.pool)?;
        let schedule = schedule_from_embedding(
            &points,
            &self.cfg.schedule,
            self.cfg.seed ^ (self.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        let set = candidates_from_embedding(&points, touched, &schedule);
        Ok((set.indices, Some(set.level)))
    }

    /// Records the answer to the pending question.
    pub fn submit_answer(&mut self, answer: usize) -> Result<SubmitOutcome> {
        let pending = self.pending.as_ref().ok_or(Error::NoPendingQuestion)?;
        let size = pending.answer_set_size(self.num_classes);
        if answer >= size {
            return Err(Error::AnswerOutOfRange { answer, size });
        }
        let pending = self.pending.take().expect("checked above");
        let record = AnswerRecord {
            question: pending.question.clone(),
            answer,
            step: self.step,
            budget_spent: pending.cost,
        };
        self.kb.push(record, self.num_classes)?;
        if pending.seed {
            self.seed_queue.pop_front();
        } else {
            self.ledger
                .charge(self.iteration, pending.question.kind_index, pending.cost, answer);
            self.iteration += 1;
            self.since_retrain += pending.cost;
            self.last_query = Some((pending.question.kind_index, pending.entropy, pending.level));
        }
        self.log.push(LogEvent::Answer {
            step: self.step,
            answer,
            budget_spent: self.ledger.spent,
        });
        self.step += 1;

        let retrain = if pending.seed {
            self.seed_queue.is_empty()
        } else {
            self.since_retrain + crate::acquisition::BUDGET_EPS >= f64::from(self.cfg.batch_size)
        };
        if retrain {
            self.retrain()?;
            if self.phase == Phase::Seeding {
                self.phase = Phase::Active;
            }
        }
        Ok(SubmitOutcome {
            retrained: retrain,
            budget_spent: self.ledger.spent,
        })
    }

    fn retrain(&mut self) -> Result<()> {
        let trained = match train_model(&self.model, &self.pool, &self.kb, &self.cfg.training) {
            Ok(t) => t,
            Err(e) => {
                self.phase = Phase::Failed(e.to_string());
                return Err(e);
            }
        };
        self.model = trained.model;
        self.since_retrain = 0.0;
        self.log.push(LogEvent::Retrain {
            step: self.step,
            records: self.kb.len(),
            epochs: trained.epoch_losses.len() - 1,
            objective: *trained.epoch_losses.last().expect("initial value recorded"),
        });
        let eval = match &self.holdout {
            Some(h) => Some(evaluate(&self.model, &h.features, &h.labels)?),
            None => None,
        };
        let (kind, entropy, level) = match self.last_query {
            Some((k, e, l)) => (Some(k), Some(e), l),
            None => (None, None, None),
        };
        let row = MetricsRow {
            queries: self.iteration,
            budget: self.ledger.spent,
            accuracy: eval.map(|e| e.accuracy),
            sum_cross_entropy: eval.map(|e| e.sum_cross_entropy),
            kind,
            entropy,
            level,
        };
        self.log.push(LogEvent::Metrics(row.clone()));
        self.metrics.rows.push(row);
        Ok(())
    }

    fn exhaust(&mut self) -> Result<()> {
        if self.since_retrain > 0.0 {
            self.retrain()?;
        }
        self.phase = Phase::Exhausted;
        self.log.push(LogEvent::Finished {
            status: "completed".into(),
            budget_spent: self.ledger.spent,
        });
        Ok(())
    }

    pub fn into_outcome(self) -> RunOutcome {
        let status = match &self.phase {
            Phase::Failed(reason) => RunStatus::Diverged(reason.clone()),
            _ => RunStatus::Completed,
        };
        RunOutcome {
            status,
            metrics: self.metrics,
            log: self.log,
            ledger: self.ledger,
            model: self.model,
            knowledge: self.kb,
        }
    }
}

/// Drives an engine to completion with the given oracle. Training divergence
/// ends the run early with [`RunStatus::Diverged`] and the metrics so far.
pub fn drive(mut engine: Engine, oracle: &mut dyn Oracle) -> Result<RunOutcome> {
    loop {
        let pending = match engine.next_question() {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(Error::TrainingDiverged { .. }) => break,
            Err(e) => return Err(e),
        };
        let answer = oracle.answer(&pending.kind, &pending.question)?;
        match engine.submit_answer(answer) {
            Ok(_) => {}
            Err(Error::TrainingDiverged { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let mut out = engine.into_outcome();
    if let RunStatus::Diverged(reason) = &out.status {
        out.log.push(LogEvent::Finished {
            status: format!("diverged: {reason}"),
            budget_spent: out.ledger.spent,
        });
    }
    Ok(out)
}

/// Simulated run: the pool's hidden labels answer every question.
pub fn run_active_learning(pool: &Dataset, holdout: Option<&Dataset>, cfg: &EngineConfig) -> Result<RunOutcome> {
    let engine = Engine::new(
        pool.features.clone(),
        pool.num_classes(),
        holdout.map(Holdout::from),
        cfg.clone(),
    )?;
    drive(engine, &mut SimulatedOracle::new(pool.labels.clone()))
}

/// Simulated run ranking kinds by cross-entropy against `true_model`.
pub fn run_ideal_baseline(
    pool: &Dataset,
    holdout: Option<&Dataset>,
    true_model: &ScoreModel,
    cfg: &EngineConfig,
) -> Result<RunOutcome> {
    let cfg = EngineConfig {
        strategy: Strategy::Ideal,
        ..cfg.clone()
    };
    let engine = Engine::new(
        pool.features.clone(),
        pool.num_classes(),
        holdout.map(Holdout::from),
        cfg,
    )?
    .with_reference(true_model.clone())?;
    drive(engine, &mut SimulatedOracle::new(pool.labels.clone()))
}

/// Model trained on every label of `data`, used as the ideal baseline's
/// stand-in for the true answer probabilities.
pub fn fit_reference_model(data: &Dataset, family: &ModelFamily, training: &TrainingConfig, seed: u64) -> Result<ScoreModel> {
    let mut kb = KnowledgeBase::new(vec![QuestionKind::class()]);
    for (i, &y) in data.labels.iter().enumerate() {
        kb.push(
            AnswerRecord {
                question: QuestionPoint::class(0, i),
                answer: y,
                step: i as u64,
                budget_spent: 0.0,
            },
            data.num_classes(),
        )?;
    }
    let init = ScoreModel::new(family, data.dim(), data.num_classes(), seed);
    let cfg = TrainingConfig {
        max_epochs: training.max_epochs.max(2000),
        ..training.clone()
    };
    Ok(train_model(&init, &data.features, &kb, &cfg)?.model)
}
