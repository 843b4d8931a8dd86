use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, epoch_rng};
use crate::act2vec::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub epochs: usize,
    /// Initial step; epoch `e` uses `lr / (1 + e)`.
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.1,
            l2: 1e-4,
            seed: 7,
        }
    }
}

/// Standardized-feature logistic regression. Binary tasks use one model
/// for class 1; wider tasks use one model per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub n_classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `(models, dim)`.
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
}

fn check_rows(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().ok_or(Error::EmptyInput)?.len();
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logistic regression features".into()));
        }
    }
    Ok(dim)
}

pub fn train_logreg(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &LogRegConfig,
) -> Result<LogReg> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let dim = check_rows(features)?;
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: l,
            classes: n_classes,
        });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClassTrainingSet(labels[0]));
    }

    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // constant features stay at zero after centering
    scale
        .iter_mut()
        .for_each(|s| *s = if *s > 0.0 { (*s / n).sqrt() } else { 1.0 });
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            f.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();

    let models = if n_classes == 2 { 1 } else { n_classes };
    let positive = |m: usize| if n_classes == 2 { 1 } else { m };
    let mut weights = Array2::zeros((models, dim));
    let mut bias = vec![0.0; models];
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr / (1.0 + epoch as f64);
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        for &i in &order {
            for m in 0..models {
                let mut w = weights.row_mut(m);
                let z: f64 = w.iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>() + bias[m];
                let y = if labels[i] == positive(m) { 1.0 } else { 0.0 };
                let g = sigmoid(z) - y;
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj -= lr * (g * xj + cfg.l2 * *wj);
                }
                bias[m] -= lr * g;
            }
        }
    }
    if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression weights".into()));
    }
    Ok(LogReg {
        n_classes,
        mean,
        scale,
        weights,
        bias,
    })
}

impl LogReg {
    /// Per-class scores; for binary tasks class 0 scores 0.
    pub fn scores(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: features.len(),
            });
        }
        let z: Vec<f64> = self
            .weights
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(w, b)| {
                w.iter()
                    .zip(features)
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|((w, v), (m, s))| w * (v - m) / s)
                    .sum::<f64>()
                    + b
            })
            .collect();
        Ok(if self.n_classes == 2 {
            vec![0.0, z[0]]
        } else {
            z
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(self.scores(features)?))
    }

    pub fn predict_all(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        features.iter().map(|f| self.predict(f)).collect()
    }
}
