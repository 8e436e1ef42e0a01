//! Softmax-headed score models.
//!
//! A model maps a feature vector `x ∈ R^p` to a score vector `h(x) ∈ R^L`;
//! class probabilities are the softmax of the scores. Two families are
//! provided: a linear (multinomial logistic) model and a small fully connected
//! network with `tanh` hidden units.
//!
//! Parameters live in one flat vector. Every layer is stored as `out` rows of
//! `in + 1` values, the row's weights followed by its bias, so the linear
//! model's row `c` is `(θ_c, θ_0c)`.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest and largest probability a [`ProbabilityVector`] entry may take.
pub const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
pub const PROB_CEIL: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelFamily {
    Linear,
    Mlp { hidden: Vec<usize> },
}

/// Class probabilities for one point. Entries lie strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability; ties go to the lowest class.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = max_of(values);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax with max-score subtraction.
pub fn softmax(scores: &[f64]) -> ProbabilityVector {
    let m = max_of(scores);
    let mut p: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v = (*v / z).clamp(PROB_FLOOR, PROB_CEIL);
    }
    ProbabilityVector(p)
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| s - lse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    family: ModelFamily,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Per-layer activations kept for backpropagation.
pub(crate) struct Forward {
    /// `inputs[l]` is the input to layer `l`; the last layer's output is `scores`.
    inputs: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

impl ScoreModel {
    /// Linear model with all parameters zero.
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        let n = num_classes * (input_dim + 1);
        Self {
            family: ModelFamily::Linear,
            input_dim,
            num_classes,
            params: vec![0.0; n],
        }
    }

    /// Network with `tanh` hidden layers and Glorot-uniform weights drawn
    /// from `seed`. Biases start at zero.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut model = Self {
            family: ModelFamily::Mlp {
                hidden: hidden.to_vec(),
            },
            input_dim,
            num_classes,
            params: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (fan_in, fan_out) in model.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_out {
                for _ in 0..fan_in {
                    model.params.push(rng.random_range(-limit..limit));
                }
                model.params.push(0.0);
            }
        }
        model
    }

    /// Fresh model of the given family: zeros for linear, seeded random
    /// weights for the network.
    pub fn new(family: &ModelFamily, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        match family {
            ModelFamily::Linear => Self::linear(input_dim, num_classes),
            ModelFamily::Mlp { hidden } => Self::mlp(input_dim, hidden, num_classes, seed),
        }
    }

    /// Same architecture with replacement parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(fan_in, fan_out)` of every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        if let ModelFamily::Mlp { hidden } = &self.family {
            widths.extend(hidden.iter().copied());
        }
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-softmax scores `h(x; θ)`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x).scores)
    }

    pub fn predict_probs(&self, x: &[f64]) -> Result<ProbabilityVector> {
        Ok(softmax(&self.scores(x)?))
    }

    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.scores(x)?))
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Forward {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut inputs = Vec::with_capacity(dims.len());
        let mut current = x.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut out = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                let row = &self.params[offset..offset + fan_in + 1];
                let z = row[..fan_in]
                    .iter()
                    .zip(&current)
                    .map(|(w, a)| w * a)
                    .sum::<f64>()
                    + row[fan_in];
                out.push(if l == last { z } else { z.tanh() });
                offset += fan_in + 1;
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        Forward {
            inputs,
            scores: current,
        }
    }

    /// Accumulates `∂(d_scores · h)/∂θ` into `grad`.
    pub(crate) fn backward(&self, fwd: &Forward, d_scores: &[f64], grad: &mut [f64]) {
        let dims = self.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for &(fan_in, fan_out) in &dims {
            offsets.push(offset);
            offset += fan_out * (fan_in + 1);
        }

        // delta holds the gradient with respect to the current layer's pre-activation.
        let mut delta = d_scores.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let input = &fwd.inputs[l];
            let mut d_input = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate().take(fan_out) {
                let start = offsets[l] + o * (fan_in + 1);
                for i in 0..fan_in {
                    grad[start + i] += d * input[i];
                    d_input[i] += d * self.params[start + i];
                }
                grad[start + fan_in] += d;
            }
            if l > 0 {
                // input[i] = tanh(z) for hidden layers
                for (di, a) in d_input.iter_mut().zip(input) {
                    *di *= 1.0 - a * a;
                }
            }
            delta = d_input;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_linear_scores_are_zero() {
        let m = ScoreModel::linear(3, 4);
        assert_eq!(m.num_params(), 4 * 4);
        assert_eq!(m.scores(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn linear_affine_evaluation() {
        let m = ScoreModel::linear(1, 2)
            .with_params(vec![1.0, 0.0, -1.0, 0.0])
            .unwrap();
        assert_eq!(m.scores(&[2.0]).unwrap(), vec![2.0, -2.0]);
        let p = m.predict_probs(&[2.0]).unwrap();
        assert!((p[0] - 0.98201).abs() < 1e-5);
        assert!((p[1] - 0.01799).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = ScoreModel::linear(2, 3);
        assert!(matches!(
            m.scores(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mlp_matches_hand_forward_pass() {
        // 2-3-2 network evaluated by hand.
        let m = ScoreModel::mlp(2, &[3], 2, 7);
        let p = m.params();
        let x = [0.3, -1.2];
        let mut hidden = [0.0; 3];
        for (j, h) in hidden.iter_mut().enumerate() {
            let r = &p[j * 3..j * 3 + 3];
            *h = (r[0] * x[0] + r[1] * x[1] + r[2]).tanh();
        }
        let base = 9;
        let mut expected = [0.0; 2];
        for (c, e) in expected.iter_mut().enumerate() {
            let r = &p[base + c * 4..base + c * 4 + 4];
            *e = r[0] * hidden[0] + r[1] * hidden[1] + r[2] * hidden[2] + r[3];
        }
        let got = m.scores(&x).unwrap();
        assert_eq!(m.num_params(), 9 + 8);
        for c in 0..2 {
            assert!((got[c] - expected[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn equal_scores_give_uniform_probabilities() {
        let p = softmax(&[0.7; 5]);
        for v in p.iter() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_overflow_safe() {
        let s = [0.3, -1.0, 2.5];
        let shifted: Vec<f64> = s.iter().map(|v| v + 1000.0).collect();
        let a = softmax(&s);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_scores_stay_interior() {
        let p = softmax(&[400.0, -400.0, 0.0]);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mlp_init_is_seeded() {
        let a = ScoreModel::mlp(4, &[16], 3, 11);
        let b = ScoreModel::mlp(4, &[16], 3, 11);
        let c = ScoreModel::mlp(4, &[16], 3, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
