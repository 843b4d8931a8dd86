use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    /// Gradient with respect to the logits feeding the softmax.
    pub d_logits: Array2<f64>,
    /// Gradient of the penalty with respect to the regularized weights.
    pub d_weights: Array2<f64>,
    /// Set when a gold-class probability was clamped at [`PROB_FLOOR`].
    pub clamped: bool,
}

/// Mean negative log-likelihood of the gold classes plus
/// `(λ2/2)‖W‖² + λ1‖W‖₁` on the given weights. The L1 subgradient is
/// `sign(w)` and 0 at `w = 0`.
pub fn ce_elasticnet(
    probs: &Array2<f64>,
    gold: &[usize],
    weights: &Array2<f64>,
    l1: f64,
    l2: f64,
) -> Result<CrossEntropy> {
    let (b, k) = probs.dim();
    if gold.len() != b {
        return Err(Error::LengthMismatch {
            expected: b,
            got: gold.len(),
        });
    }
    let mut data = 0.0;
    let mut clamped = false;
    let mut d_logits = probs.clone();
    let inv_b = if b == 0 { 0.0 } else { 1.0 / b as f64 };
    for (i, &g) in gold.iter().enumerate() {
        if g >= k {
            return Err(Error::LabelOutOfRange {
                label: g,
                classes: k,
            });
        }
        let p = probs[[i, g]];
        if p < PROB_FLOOR {
            clamped = true;
        }
        data -= p.max(PROB_FLOOR).ln();
        d_logits[[i, g]] -= 1.0;
    }
    d_logits *= inv_b;
    data *= inv_b;
    let l2_term = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let l1_term = l1 * weights.iter().map(|w| w.abs()).sum::<f64>();
    let d_weights = weights.mapv(|w| l2 * w + l1 * sign(w));
    if clamped {
        log::warn!("gold-class probability below {PROB_FLOOR}; clamped");
    }
    Ok(CrossEntropy {
        loss: data + l2_term + l1_term,
        data_loss: data,
        penalty: l2_term + l1_term,
        d_logits,
        d_weights,
        clamped,
    })
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}
