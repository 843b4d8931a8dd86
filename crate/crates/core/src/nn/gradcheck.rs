use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::Result;

/// A scalar objective over a fixed input whose parameters can be probed.
pub trait Differentiable {
    /// Named parameters in a stable order.
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;
    /// Loss at the current parameters; must not depend on hidden state
    /// that changes between calls.
    fn loss(&mut self) -> Result<f64>;
    /// Zeroes gradients, runs forward and backward, returns the loss.
    fn loss_and_grads(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[flat index]` of the worst entry.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares every analytic parameter gradient with a central difference.
pub fn gradient_check(
    net: &mut dyn Differentiable,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    net.loss_and_grads()?;
    let snapshot: Vec<(String, Vec<f64>)> = net
        .params_mut()
        .into_iter()
        .map(|(name, p)| (name, p.grad.iter().copied().collect()))
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let h = cfg.step;
    for (pi, (name, grads)) in snapshot.iter().enumerate() {
        for (j, &analytic) in grads.iter().enumerate() {
            let base = nudge(net, pi, j, None);
            nudge(net, pi, j, Some(base + h));
            let up = net.loss()?;
            nudge(net, pi, j, Some(base - h));
            let down = net.loss()?;
            nudge(net, pi, j, Some(base));
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = format!("{name}[{j}]");
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Reads entry `j` of parameter `pi`, optionally overwriting it first.
fn nudge(net: &mut dyn Differentiable, pi: usize, j: usize, value: Option<f64>) -> f64 {
    let mut params = net.params_mut();
    let p = &mut params[pi].1.value;
    let slot = p.iter_mut().nth(j).expect("index within parameter");
    if let Some(v) = value {
        *slot = v;
    }
    *slot
}
