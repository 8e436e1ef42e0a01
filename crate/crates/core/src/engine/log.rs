//! JSON-lines run log.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::metrics::MetricsRow;
use super::EngineConfig;
use crate::error::Result;
use crate::questions::QuestionPoint;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    /// First line of every log: the fully resolved configuration.
    Config {
        config: EngineConfig,
        pool_size: usize,
        num_classes: usize,
    },
    /// A free seed label was requested.
    Seed { step: u64, point: usize },
    /// A budgeted question was issued.
    Query {
        step: u64,
        iteration: usize,
        question: QuestionPoint,
        cost: f64,
        entropy: f64,
        level: Option<usize>,
    },
    Answer {
        step: u64,
        answer: usize,
        budget_spent: f64,
    },
    Retrain {
        step: u64,
        records: usize,
        epochs: usize,
        objective: f64,
    },
    Metrics(MetricsRow),
    Finished { status: String, budget_spent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Line {
    v: u32,
    #[serde(flatten)]
    event: LogEvent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub events: Vec<LogEvent>,
}

impl RunLog {
    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for event in &self.events {
            let line = Line {
                v: LOG_SCHEMA_VERSION,
                event: event.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)?;
            events.push(parsed.event);
        }
        Ok(Self { events })
    }
}
