//! Confusion-matrix metrics and the repeated-run evaluation protocol.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&g| g != c)
            .map(|g| self.counts[g][c])
            .sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&p| p != c)
            .map(|p| self.counts[c][p])
            .sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.tp(c)).sum()
    }
}

pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            expected: golds.len(),
            got: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &g) in preds.iter().zip(golds) {
        for label in [p, g] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

/// `num/den`, or 0 with a flag when the denominator is zero.
fn ratio(num: u64, den: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: u64, fp: u64, fn_: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_, name, flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

/// Metrics of `positive` against the rest; any K×K matrix is accepted and
/// collapsed one-vs-rest.
pub fn binary_metrics(cm: &ConfusionMatrix, positive: usize) -> BinaryMetrics {
    let mut flags = Vec::new();
    let n = cm.total();
    let tp = cm.tp(positive);
    let fp = cm.fp(positive);
    let fn_ = cm.fn_(positive);
    let tn = n - tp - fp - fn_;
    BinaryMetrics {
        accuracy: ratio(tp + tn, n, "accuracy", &mut flags),
        precision: ratio(tp, tp + fp, "precision", &mut flags),
        recall: ratio(tp, tp + fn_, "recall", &mut flags),
        specificity: ratio(tn, tn + fp, "specificity", &mut flags),
        f1: f1(tp, fp, fn_, "f1", &mut flags),
        degenerate: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_specificity: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// Pooled over every class.
    pub micro_f1: f64,
    /// Pooled over every class except the one with the largest support.
    pub micro_f1_non_majority: f64,
    pub degenerate: Vec<String>,
}

pub fn multiclass_metrics(cm: &ConfusionMatrix) -> MulticlassMetrics {
    let k = cm.n_classes();
    let n = cm.total();
    let mut flags = Vec::new();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let b = binary_metrics(cm, c);
            flags.extend(
                b.degenerate
                    .iter()
                    .filter(|f| *f != "accuracy")
                    .map(|f| format!("class {c} {f}")),
            );
            ClassMetrics {
                precision: b.precision,
                recall: b.recall,
                specificity: b.specificity,
                f1: b.f1,
                support: cm.support(c),
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            return 0.0;
        }
        (0..k)
            .map(|c| cm.support(c) as f64 * f(&per_class[c]))
            .sum::<f64>()
            / n as f64
    };
    let correct = cm.correct();
    let accuracy = ratio(correct, n, "accuracy", &mut flags);
    // support-weighted recall telescopes to correct/n; computed directly
    let weighted_recall = accuracy;
    // pooled FP and FN both equal n - correct
    let micro_f1 = f1(correct, n - correct, n - correct, "micro_f1", &mut flags);
    let majority = (0..k)
        .max_by_key(|&c| (cm.support(c), std::cmp::Reverse(c)))
        .unwrap_or(0);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in (0..k).filter(|&c| c != majority) {
        tp += cm.tp(c);
        fp += cm.fp(c);
        fn_ += cm.fn_(c);
    }
    let micro_f1_non_majority = f1(tp, fp, fn_, "micro_f1_non_majority", &mut flags);
    MulticlassMetrics {
        accuracy,
        weighted_precision: weighted(|m| m.precision),
        weighted_recall,
        weighted_specificity: weighted(|m| m.specificity),
        weighted_f1: weighted(|m| m.f1),
        macro_f1: if k == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64
        },
        micro_f1,
        micro_f1_non_majority,
        per_class,
        degenerate: flags,
    }
}

/// Headline numbers of one evaluation. For binary tasks precision, recall,
/// specificity and F1 refer to class 1; otherwise they are support-weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub micro_f1_non_majority: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl Summary {
    const FIELDS: usize = 11;

    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let m = multiclass_metrics(cm);
        let (precision, recall, specificity, f1) = if cm.n_classes() == 2 {
            let b = binary_metrics(cm, 1);
            (b.precision, b.recall, b.specificity, b.f1)
        } else {
            (
                m.weighted_precision,
                m.weighted_recall,
                m.weighted_specificity,
                m.weighted_f1,
            )
        };
        Self {
            accuracy: m.accuracy,
            precision,
            recall,
            specificity,
            f1,
            macro_f1: m.macro_f1,
            micro_f1: m.micro_f1,
            micro_f1_non_majority: m.micro_f1_non_majority,
            weighted_precision: m.weighted_precision,
            weighted_recall: m.weighted_recall,
            weighted_f1: m.weighted_f1,
        }
    }

    fn to_array(self) -> [f64; Self::FIELDS] {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.specificity,
            self.f1,
            self.macro_f1,
            self.micro_f1,
            self.micro_f1_non_majority,
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
        ]
    }

    fn from_array(a: [f64; Self::FIELDS]) -> Self {
        Self {
            accuracy: a[0],
            precision: a[1],
            recall: a[2],
            specificity: a[3],
            f1: a[4],
            macro_f1: a[5],
            micro_f1: a[6],
            micro_f1_non_majority: a[7],
            weighted_precision: a[8],
            weighted_recall: a[9],
            weighted_f1: a[10],
        }
    }

    /// Micro-F1 over all classes and weighted recall both equal accuracy.
    pub fn identities_hold(&self) -> bool {
        self.micro_f1 == self.accuracy && self.weighted_recall == self.accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub n_classes: usize,
    pub repeats: usize,
    /// Mean over runs, in run order.
    pub mean: Summary,
    pub std: Summary,
    pub runs: Vec<Summary>,
    pub confusions: Vec<ConfusionMatrix>,
}

impl MetricsReport {
    pub fn from_confusions(label: impl Into<String>, confusions: Vec<ConfusionMatrix>) -> Self {
        let runs: Vec<Summary> = confusions.iter().map(Summary::from_confusion).collect();
        let r = runs.len().max(1) as f64;
        let mut sum = [0.0; Summary::FIELDS];
        for s in &runs {
            for (acc, v) in sum.iter_mut().zip(s.to_array()) {
                *acc += v;
            }
        }
        let mean = sum.map(|v| v / r);
        let mut var = [0.0; Summary::FIELDS];
        for s in &runs {
            for ((acc, v), m) in var.iter_mut().zip(s.to_array()).zip(mean) {
                *acc += (v - m) * (v - m);
            }
        }
        Self {
            label: label.into(),
            n_classes: confusions.first().map_or(0, |c| c.n_classes()),
            repeats: runs.len(),
            mean: Summary::from_array(mean),
            std: Summary::from_array(var.map(|v| (v / r).sqrt())),
            runs,
            confusions,
        }
    }

    pub fn identities_hold(&self) -> bool {
        self.runs.iter().all(Summary::identities_hold)
    }
}

/// Aligned plain-text table, one row per report, percentages with one
/// decimal.
pub fn format_table(reports: &[&MetricsReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let heads = [
        "Acc", "Prec", "Rec", "Spec", "F1", "F1-mac", "F1-mic", "F1-mic*",
    ];
    write!(out, "{:<width$}", "Model").unwrap();
    for h in heads {
        write!(out, " {h:>7}").unwrap();
    }
    out.push('\n');
    for r in reports {
        let m = r.mean;
        write!(out, "{:<width$}", r.label).unwrap();
        for v in [
            m.accuracy,
            m.precision,
            m.recall,
            m.specificity,
            m.f1,
            m.macro_f1,
            m.micro_f1,
            m.micro_f1_non_majority,
        ] {
            write!(out, " {:>7.1}", 100.0 * v).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Subject indices of a fixed train/dev/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEV_FRACTION: f64 = 0.1;
pub const TEST_FRACTION: f64 = 0.2;

impl Split {
    /// Seeded shuffle of `0..n` cut into dev, test and train in that order.
    pub fn new(n: usize, dev: f64, test: f64, seed: u64) -> Result<Self> {
        if !(dev >= 0.0 && test >= 0.0 && dev + test < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fractions {dev} + {test} must be below 1"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_dev = (n as f64 * dev).round() as usize;
        let n_test = (n as f64 * test).round() as usize;
        let test_part = idx.split_off(n_dev);
        let mut rest = test_part;
        let train = rest.split_off(n_test);
        Ok(Self {
            dev: idx,
            test: rest,
            train,
        })
    }

    pub fn standard(n: usize, seed: u64) -> Result<Self> {
        Self::new(n, DEV_FRACTION, TEST_FRACTION, seed)
    }
}

/// Runs `experiment` once per seed in `base..base+repeats` on the same
/// split, concurrently, and averages in seed order.
pub fn run_protocol<F>(
    label: &str,
    split: &Split,
    repeats: usize,
    base: u64,
    experiment: F,
) -> Result<MetricsReport>
where
    F: Fn(u64, &Split) -> Result<ConfusionMatrix> + Sync,
{
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let cms = (0..repeats as u64)
        .into_par_iter()
        .map(|i| experiment(base + i, split))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_confusions(label, cms))
}
