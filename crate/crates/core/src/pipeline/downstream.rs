//! Logistic regression on tabular features, optionally with the exported
//! LSTM score appended as one more column.

use serde::{Deserialize, Serialize};

use crate::dataset::{labels, LeadRecord};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;

const LEARNING_RATE: f64 = 1.0;
const MAX_ITERATIONS: usize = 10_000;
const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Column means and standard deviations used to standardize inputs.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub uses_rnn_score: bool,
    pub iterations: usize,
}

fn row(record: &LeadRecord, index: usize, use_rnn_score: bool) -> Result<Vec<f64>> {
    let mut x = record
        .features
        .clone()
        .ok_or_else(|| Error::Data(format!("record {index} has no tabular features")))?;
    if use_rnn_score {
        x.push(record.rnn_score.ok_or(Error::MissingRnnScore(index))?);
    }
    Ok(x)
}

fn design(records: &[LeadRecord], use_rnn_score: bool) -> Result<Vec<Vec<f64>>> {
    let x = records
        .iter()
        .enumerate()
        .map(|(i, r)| row(r, i, use_rnn_score))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = x.first() {
        if x.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Data("records have differing feature counts".into()));
        }
    }
    Ok(x)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LogisticModel {
    /// Full-batch gradient descent on mean log-loss plus `l2/2 * |w|^2`
    /// (bias unpenalized), over standardized columns.
    pub fn fit(x: &[Vec<f64>], y: &[f64], l2: f64, uses_rnn_score: bool) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = x.len() as f64;
        let p = x[0].len();
        let means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scales: Vec<f64> = (0..p)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..p).map(|j| (r[j] - means[j]) / scales[j]).collect())
            .collect();

        let mut w = vec![0.0; p];
        let mut b = 0.0;
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS {
            let mut gw: Vec<f64> = w.iter().map(|wj| l2 * wj).collect();
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(y) {
                let err = (sigmoid(b + zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()) - yi) / n;
                gb += err;
                for (g, v) in gw.iter_mut().zip(zi) {
                    *g += err * v;
                }
            }
            let norm = (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
            if !norm.is_finite() {
                return Err(Error::GradientOverflow);
            }
            if norm < GRADIENT_TOLERANCE {
                break;
            }
            b -= LEARNING_RATE * gb;
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= LEARNING_RATE * g;
            }
            iterations += 1;
        }
        Ok(Self {
            weights: w,
            bias: b,
            means,
            scales,
            uses_rnn_score,
            iterations,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z: f64 = x
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(j, (v, w))| (v - self.means[j]) / self.scales[j] * w)
            .sum();
        sigmoid(self.bias + z)
    }

    pub fn predict(&self, records: &[LeadRecord]) -> Result<Vec<f64>> {
        let x = design(records, self.uses_rnn_score)?;
        if x.iter().any(|r| r.len() != self.weights.len()) {
            return Err(Error::ShapeMismatch("feature count differs from the fitted model".into()));
        }
        Ok(x.iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Fits on `train` and reports on `test`.
pub fn train_downstream(
    train: &[LeadRecord],
    test: &[LeadRecord],
    use_rnn_score: bool,
    l2: f64,
) -> Result<(LogisticModel, EvalReport)> {
    let model = LogisticModel::fit(&design(train, use_rnn_score)?, &labels(train), l2, use_rnn_score)?;
    let report = EvalReport::from_scores(&model.predict(test)?, &labels(test))?;
    Ok((model, report))
}
