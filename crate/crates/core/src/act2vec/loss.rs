//! Negative-sampling and smoothing objectives with exact gradients, plus the
//! in-place SGD steps the trainer applies.

use ndarray::Array2;

use super::EmbeddingSpace;
use crate::domain::SymbolId;
use crate::error::{Error, Result};

/// `-ln σ(x)`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one negative-sampling term and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NsGradient {
    pub loss: f64,
    /// d loss / d input vector.
    pub d_input: Vec<f64>,
    /// d loss / d output row, one entry per distinct touched row.
    pub d_out: Vec<(usize, Vec<f64>)>,
}

/// `-ln σ(w_pos·x) - Σ ln σ(-w_neg·x)` with analytic gradients.
pub fn ns_loss_grad(
    input: &[f64],
    out: &Array2<f64>,
    positive: usize,
    negatives: &[usize],
) -> Result<NsGradient> {
    let d = input.len();
    if out.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: out.ncols(),
        });
    }
    let rows = out.nrows();
    let mut loss = 0.0;
    let mut d_input = vec![0.0; d];
    let mut d_out: Vec<(usize, Vec<f64>)> = Vec::new();
    let terms = std::iter::once((positive, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (id, is_pos) in terms {
        if id >= rows {
            return Err(Error::IdOutOfRange { id, rows });
        }
        let w = out.row(id);
        let w = w.as_slice().expect("standard layout");
        let s = dot(w, input);
        // g = d loss / d s
        let (l, g) = if is_pos {
            (neg_log_sigmoid(s), sigmoid(s) - 1.0)
        } else {
            (neg_log_sigmoid(-s), sigmoid(s))
        };
        loss += l;
        for (di, wi) in d_input.iter_mut().zip(w) {
            *di += g * wi;
        }
        let slot = match d_out.iter().position(|(r, _)| *r == id) {
            Some(p) => p,
            None => {
                d_out.push((id, vec![0.0; d]));
                d_out.len() - 1
            }
        };
        for (dw, xi) in d_out[slot].1.iter_mut().zip(input) {
            *dw += g * xi;
        }
    }
    Ok(NsGradient {
        loss,
        d_input,
        d_out,
    })
}

/// Segment-specific loss: the segment vector predicts one of its symbols
/// against noise symbols.
pub fn loss_grad_segment(
    space: &EmbeddingSpace,
    segment: usize,
    target: SymbolId,
    negatives: &[SymbolId],
) -> Result<NsGradient> {
    let phi = space.segment_row(segment)?;
    let negs: Vec<usize> = negatives.iter().map(|&n| n as usize).collect();
    ns_loss_grad(phi, space.symbol_out(), target as usize, &negs)
}

/// Neighbor loss: the segment vector predicts an adjacent segment's id
/// against noise segments.
pub fn loss_grad_neighbor(
    space: &EmbeddingSpace,
    segment: usize,
    neighbor: usize,
    negatives: &[usize],
) -> Result<NsGradient> {
    let phi = space.segment_row(segment)?;
    ns_loss_grad(phi, space.segment_out(), neighbor, negatives)
}

/// Smoothing penalty `(η/|N|) Σ ||Φ(k) - Φ(c)||²` and its gradient with
/// respect to the center vector only. An empty neighbor set yields zero.
pub fn loss_grad_smoothing(
    space: &EmbeddingSpace,
    segment: usize,
    neighbors: &[usize],
    eta: f64,
) -> Result<(f64, Vec<f64>)> {
    let center = space.segment_row(segment)?;
    let rows: Vec<&[f64]> = neighbors
        .iter()
        .map(|&c| space.segment_row(c))
        .collect::<Result<_>>()?;
    Ok(smoothing_loss_grad(center, &rows, eta))
}

pub(crate) fn smoothing_loss_grad(
    center: &[f64],
    neighbors: &[&[f64]],
    eta: f64,
) -> (f64, Vec<f64>) {
    let d = center.len();
    if neighbors.is_empty() || eta == 0.0 {
        return (0.0, vec![0.0; d]);
    }
    let scale = eta / neighbors.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    for n in neighbors {
        for ((g, a), b) in grad.iter_mut().zip(center).zip(n.iter()) {
            let diff = a - b;
            loss += diff * diff;
            *g += 2.0 * scale * diff;
        }
    }
    (scale * loss, grad)
}

#[inline]
fn ns_term(input: &[f64], w: &[f64], is_pos: bool, scratch: &mut [f64]) -> (f64, f64) {
    let s = dot(w, input);
    let (l, g) = if is_pos {
        (neg_log_sigmoid(s), sigmoid(s) - 1.0)
    } else {
        (neg_log_sigmoid(-s), sigmoid(s))
    };
    for (acc, wi) in scratch.iter_mut().zip(w) {
        *acc += g * wi;
    }
    (l, g)
}

/// One SGD step on a negative-sampling term, updating `input` and the
/// touched output rows. `scratch` must have the input's length. Returns the
/// loss before the update.
pub(crate) fn ns_sgd_step(
    input: &mut [f64],
    out: &mut Array2<f64>,
    positive: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut [f64],
) -> f64 {
    scratch.fill(0.0);
    let mut loss = 0.0;
    let terms = std::iter::once((positive, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (id, is_pos) in terms {
        let mut w = out.row_mut(id);
        let w = w.as_slice_mut().expect("standard layout");
        let (l, g) = ns_term(input, w, is_pos, scratch);
        loss += l;
        let step = lr * g;
        for (wi, xi) in w.iter_mut().zip(input.iter()) {
            *wi -= step * xi;
        }
    }
    for (x, g) in input.iter_mut().zip(scratch.iter()) {
        *x -= lr * g;
    }
    loss
}

/// As [`ns_sgd_step`] with the output table frozen.
pub(crate) fn ns_sgd_step_frozen(
    input: &mut [f64],
    out: &Array2<f64>,
    positive: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut [f64],
) -> f64 {
    scratch.fill(0.0);
    let mut loss = 0.0;
    let terms = std::iter::once((positive, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (id, is_pos) in terms {
        let w = out.row(id);
        loss += ns_term(
            input,
            w.as_slice().expect("standard layout"),
            is_pos,
            scratch,
        )
        .0;
    }
    for (x, g) in input.iter_mut().zip(scratch.iter()) {
        *x -= lr * g;
    }
    loss
}

/// One SGD step of the smoothing penalty on row `center` of `table`.
/// Neighbor rows are read, not written.
pub(crate) fn smoothing_sgd_step(
    table: &mut Array2<f64>,
    center: usize,
    neighbors: &[usize],
    eta: f64,
    lr: f64,
) -> f64 {
    if neighbors.is_empty() || eta == 0.0 {
        return 0.0;
    }
    let (loss, grad) = {
        let c = table.row(center);
        let rows: Vec<&[f64]> = neighbors
            .iter()
            .map(|&n| table.row(n).to_slice().expect("standard layout"))
            .collect();
        smoothing_loss_grad(c.as_slice().expect("standard layout"), &rows, eta)
    };
    for (x, g) in table.row_mut(center).iter_mut().zip(&grad) {
        *x -= lr * g;
    }
    loss
}
