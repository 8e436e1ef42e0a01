use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{log_softmax, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub sum_cross_entropy: f64,
}

/// Holdout accuracy (argmax prediction, ties to the lowest class) and
/// summed `-ln p_y(x)`.
pub fn evaluate(model: &ScoreModel, features: &[Vec<f64>], labels: &[usize]) -> Result<Evaluation> {
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let scores = model.scores(x)?;
        if crate::model::argmax(&scores) == y {
            correct += 1;
        }
        ce -= log_softmax(&scores)[y];
    }
    Ok(Evaluation {
        accuracy: if features.is_empty() {
            0.0
        } else {
            correct as f64 / features.len() as f64
        },
        sum_cross_entropy: ce,
    })
}

/// One row per retrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Budgeted questions answered so far.
    pub queries: usize,
    pub budget: f64,
    pub accuracy: Option<f64>,
    pub sum_cross_entropy: Option<f64>,
    /// Kind of the most recent budgeted question.
    pub kind: Option<usize>,
    pub entropy: Option<f64>,
    /// Exploration level `s` used for that question.
    pub level: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "budget,accuracy,sum_cross_entropy,kind,entropy,level_s";

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.budget,
                opt(r.accuracy),
                opt(r.sum_cross_entropy),
                opt(r.kind),
                opt(r.entropy),
                opt(r.level)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_model_cross_entropy() {
        let m = ScoreModel::linear(1, 4);
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let ys: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let e = evaluate(&m, &xs, &ys).unwrap();
        assert!((e.sum_cross_entropy - 100.0 * 4f64.ln()).abs() < 1e-9);
        // all ties resolve to class 0
        assert!((e.accuracy - 0.25).abs() < 1e-15);
    }

    #[test]
    fn confident_model_is_accurate() {
        // class = sign of x, scores ±20x
        let m = ScoreModel::linear(1, 2).with_params(vec![-20.0, 0.0, 20.0, 0.0]).unwrap();
        let xs = vec![vec![-1.0], vec![-0.5], vec![0.7], vec![2.0]];
        let e = evaluate(&m, &xs, &[0, 0, 1, 1]).unwrap();
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn three_point_hand_computation() {
        // scores (x, 0): p_1 = sigmoid(x)
        let m = ScoreModel::linear(1, 2).with_params(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let xs = vec![vec![0.0], vec![2.0], vec![-1.0]];
        let ys = [0, 0, 1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected = -(0.5f64).ln() - sig(2.0).ln() - (1.0 - sig(-1.0)).ln();
        let e = evaluate(&m, &xs, &ys).unwrap();
        assert!((e.sum_cross_entropy - expected).abs() < 1e-9);
        // x=0 ties to class 0 (correct), x=2 -> 0 (correct), x=-1 -> 1 (correct)
        assert_eq!(e.accuracy, 1.0);
    }
}
