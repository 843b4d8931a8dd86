//! Deterministic synthetic actigraphy cohorts with correlated disorder
//! labels.
//!
//! Each subject gets a latent Gaussian vector whose correlation is chosen so
//! that the discretized labels reach the requested pairwise Pearson
//! correlation. The activity signal is a daily rhythm with a sleep trough
//! and autocorrelated multiplicative noise; disorder-positive subjects get
//! the perturbations of their archetype.

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{LabelRecord, Task};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, RawSequence};

pub const MAX_COUNT: u32 = 5000;

/// Activity perturbation applied to subjects positive for one disorder.
/// Three-class disorders apply half the effect at class 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchetypeSpec {
    /// Multiplier on every activity count.
    pub amplitude_scale: f64,
    /// Probability per sleep-window sample of starting a wake bout.
    pub fragmentation_rate: f64,
    /// Fraction removed from the daytime (09:00-21:00) activity level.
    pub daytime_suppression: f64,
    /// Relative swing of activity between even and odd days.
    pub day_alternation: f64,
    /// Makes odd days the high ones for affected subjects.
    pub phase_flip: bool,
}

impl Default for ArchetypeSpec {
    fn default() -> Self {
        Self {
            amplitude_scale: 1.0,
            fragmentation_rate: 0.0,
            daytime_suppression: 0.0,
            day_alternation: 0.0,
            phase_flip: false,
        }
    }
}

impl ArchetypeSpec {
    pub fn is_noop(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Archetypes {
    pub apnea: ArchetypeSpec,
    pub diabetes: ArchetypeSpec,
    pub hypertension: ArchetypeSpec,
    pub insomnia: ArchetypeSpec,
}

impl Archetypes {
    pub fn get(&self, task: Task) -> &ArchetypeSpec {
        match task {
            Task::Apnea => &self.apnea,
            Task::Diabetes => &self.diabetes,
            Task::Hypertension => &self.hypertension,
            Task::Insomnia => &self.insomnia,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut ArchetypeSpec {
        match task {
            Task::Apnea => &mut self.apnea,
            Task::Diabetes => &mut self.diabetes,
            Task::Hypertension => &mut self.hypertension,
            Task::Insomnia => &mut self.insomnia,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub days: usize,
    pub sampling_period_s: u32,
    pub archetypes: Archetypes,
    /// Target Pearson correlation between the ordinal-coded labels, in
    /// task column order.
    pub comorbidity: [[f64; 4]; 4],
    pub labeled_fraction: f64,
    pub seed: u64,
    /// Positive-class prevalence of the binary tasks.
    pub binary_prevalence: f64,
    /// Counts are rounded to a multiple of this step.
    pub count_step: u32,
    pub missing_rate: f64,
    /// Typical awake activity count per sample.
    pub base_level: f64,
    /// Even/odd day swing shared by every subject.
    pub base_alternation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut comorbidity = [[0.0; 4]; 4];
        for (i, row) in comorbidity.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self {
            n_subjects: 200,
            days: 7,
            sampling_period_s: 30,
            archetypes: Archetypes {
                apnea: ArchetypeSpec {
                    fragmentation_rate: 0.02,
                    day_alternation: 0.3,
                    ..Default::default()
                },
                diabetes: ArchetypeSpec {
                    daytime_suppression: 0.3,
                    ..Default::default()
                },
                hypertension: ArchetypeSpec {
                    amplitude_scale: 0.8,
                    ..Default::default()
                },
                insomnia: ArchetypeSpec {
                    fragmentation_rate: 0.04,
                    ..Default::default()
                },
            },
            comorbidity,
            labeled_fraction: 0.5,
            seed: 7,
            binary_prevalence: 0.35,
            count_step: 1,
            missing_rate: 5e-4,
            base_level: 300.0,
            base_alternation: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn samples_per_day(&self) -> usize {
        (86_400 / self.sampling_period_s) as usize
    }

    pub fn sequence_len(&self) -> usize {
        self.days * self.samples_per_day()
    }

    pub fn set_correlation(&mut self, a: Task, b: Task, rho: f64) {
        self.comorbidity[a.index()][b.index()] = rho;
        self.comorbidity[b.index()][a.index()] = rho;
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_subjects == 0 || self.days == 0 {
            return bad("n_subjects and days must be positive".into());
        }
        if self.sampling_period_s == 0 || 86_400 % self.sampling_period_s != 0 {
            return bad(format!(
                "sampling period {}s must divide a day",
                self.sampling_period_s
            ));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return bad("labeled_fraction must lie in [0, 1]".into());
        }
        if !(self.binary_prevalence > 0.0 && self.binary_prevalence < 1.0) {
            return bad("binary_prevalence must lie in (0, 1)".into());
        }
        if self.count_step == 0 {
            return bad("count_step must be positive".into());
        }
        if !(0.0..1.0).contains(&self.base_alternation) {
            return bad("base_alternation must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)".into());
        }
        for t in Task::ALL {
            let a = self.archetypes.get(t);
            if a.amplitude_scale <= 0.0
                || !(0.0..1.0).contains(&a.fragmentation_rate)
                || !(0.0..1.0).contains(&a.daytime_suppression)
                || !(0.0..1.0).contains(&a.day_alternation)
            {
                return bad(format!("archetype for {t} is out of range"));
            }
        }
        let c = &self.comorbidity;
        for i in 0..4 {
            if c[i][i] != 1.0 {
                return Err(Error::InfeasibleCorrelation("diagonal must be 1".into()));
            }
            for j in 0..4 {
                if c[i][j] != c[j][i] || !(-1.0..=1.0).contains(&c[i][j]) {
                    return Err(Error::InfeasibleCorrelation(format!(
                        "entry ({i},{j}) must be symmetric and within [-1, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Latent thresholds per task: a code is the number of thresholds exceeded.
fn thresholds(task: Task, binary_prevalence: f64) -> Vec<f64> {
    let n = std_normal();
    if task.n_classes() == 2 {
        vec![n.inverse_cdf(1.0 - binary_prevalence)]
    } else {
        vec![n.inverse_cdf(1.0 / 3.0), n.inverse_cdf(2.0 / 3.0)]
    }
}

/// Bivariate standard normal density with correlation `r`.
fn bvn_density(a: f64, b: f64, r: f64) -> f64 {
    let q = 1.0 - r * r;
    (-(a * a - 2.0 * r * a * b + b * b) / (2.0 * q)).exp() / (2.0 * std::f64::consts::PI * q.sqrt())
}

/// `P(X>a, Y>b) - P(X>a)P(Y>b)` for standard normals with correlation `r`,
/// via the integral of the density over the correlation parameter.
fn orthant_covariance(a: f64, b: f64, r: f64) -> f64 {
    const STEPS: usize = 2000;
    if r == 0.0 {
        return 0.0;
    }
    let h = r / STEPS as f64;
    let mut sum = bvn_density(a, b, 0.0) + bvn_density(a, b, r);
    for i in 1..STEPS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * bvn_density(a, b, i as f64 * h);
    }
    sum * h / 3.0
}

fn code_variance(th: &[f64]) -> f64 {
    let n = std_normal();
    let tails: Vec<f64> = th.iter().map(|&a| 1.0 - n.cdf(a)).collect();
    let mean: f64 = tails.iter().sum();
    // E[c²] = Σ_a Σ_a' P(X > max(a, a'))
    let mut second = 0.0;
    for (i, &a) in th.iter().enumerate() {
        for (j, &b) in th.iter().enumerate() {
            second += if a >= b { tails[i] } else { tails[j] };
        }
    }
    second - mean * mean
}

/// Pearson correlation of two ordinal codes of a latent normal pair with
/// correlation `r`.
fn code_correlation(ta: &[f64], tb: &[f64], r: f64) -> f64 {
    let cov: f64 = ta
        .iter()
        .flat_map(|&a| tb.iter().map(move |&b| orthant_covariance(a, b, r)))
        .sum();
    cov / (code_variance(ta) * code_variance(tb)).sqrt()
}

/// Latent correlation whose discretization reaches `target`, by bisection.
fn latent_for_target(ta: &[f64], tb: &[f64], target: f64) -> f64 {
    if target == 0.0 {
        return 0.0;
    }
    const LIMIT: f64 = 0.999;
    let (mut lo, mut hi) = (-LIMIT, LIMIT);
    let reach_hi = code_correlation(ta, tb, hi);
    let reach_lo = code_correlation(ta, tb, lo);
    if target >= reach_hi {
        log::warn!("label correlation {target:.3} exceeds reachable {reach_hi:.3}; clamping");
        return hi;
    }
    if target <= reach_lo {
        log::warn!("label correlation {target:.3} below reachable {reach_lo:.3}; clamping");
        return lo;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if code_correlation(ta, tb, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nearest correlation matrix by alternating projections (Higham 2002).
fn nearest_correlation(a: Matrix4<f64>) -> Matrix4<f64> {
    let mut y = a;
    let mut ds = Matrix4::<f64>::zeros();
    for _ in 0..500 {
        let r = y - ds;
        let eig = SymmetricEigen::new(r);
        let clipped = eig.eigenvalues.map(|v| v.max(1e-8));
        let x = eig.eigenvectors * Matrix4::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        ds = x - r;
        let mut next = x;
        for i in 0..4 {
            next[(i, i)] = 1.0;
        }
        let delta = (next - y).norm();
        y = next;
        if delta < 1e-12 {
            break;
        }
    }
    y
}

/// Cholesky factor of the latent correlation that realizes the configured
/// label correlations.
fn latent_factor(cfg: &SynthConfig) -> Result<Matrix4<f64>> {
    let th: Vec<Vec<f64>> = Task::ALL
        .iter()
        .map(|&t| thresholds(t, cfg.binary_prevalence))
        .collect();
    let mut latent = Matrix4::<f64>::identity();
    for i in 0..4 {
        for j in (i + 1)..4 {
            let r = latent_for_target(&th[i], &th[j], cfg.comorbidity[i][j]);
            latent[(i, j)] = r;
            latent[(j, i)] = r;
        }
    }
    if let Some(c) = latent.cholesky() {
        return Ok(c.l());
    }
    log::warn!("latent label correlation is not positive definite; using the nearest valid matrix");
    let repaired = nearest_correlation(latent);
    repaired.cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::InfeasibleCorrelation("nearest correlation matrix is not positive definite".into())
    })
}

fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct SubjectDraw {
    classes: [u8; 4],
    labeled: bool,
    values: Vec<Option<u32>>,
}

fn draw_subject(
    cfg: &SynthConfig,
    factor: &Matrix4<f64>,
    th: &[Vec<f64>],
    index: usize,
) -> SubjectDraw {
    let mut rng = subject_rng(cfg.seed, index);
    let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let latent = factor * nalgebra::Vector4::from(z);
    let mut classes = [0u8; 4];
    for t in Task::ALL {
        let i = t.index();
        classes[i] = th[i].iter().filter(|&&a| latent[i] > a).count() as u8;
    }
    let labeled = rng.random::<f64>() < cfg.labeled_fraction;
    let values = draw_signal(cfg, &classes, &mut rng);
    SubjectDraw {
        classes,
        labeled,
        values,
    }
}

/// Perturbation strengths for a subject, summed over positive disorders.
#[derive(Default)]
struct Effects {
    amplitude: f64,
    fragmentation: f64,
    suppression: f64,
    alternation: f64,
    phase: f64,
}

fn effects(cfg: &SynthConfig, classes: &[u8; 4]) -> Effects {
    let mut e = Effects {
        amplitude: 1.0,
        alternation: cfg.base_alternation,
        phase: 1.0,
        ..Default::default()
    };
    for t in Task::ALL {
        let c = classes[t.index()];
        if c == 0 {
            continue;
        }
        let severity = c as f64 / (t.n_classes() - 1) as f64;
        let a = cfg.archetypes.get(t);
        e.amplitude *= 1.0 + (a.amplitude_scale - 1.0) * severity;
        e.fragmentation += a.fragmentation_rate * severity;
        e.suppression += a.daytime_suppression * severity;
        e.alternation += a.day_alternation * severity;
        if a.phase_flip {
            e.phase = -e.phase;
        }
    }
    e.suppression = e.suppression.min(0.95);
    e.alternation = e.alternation.min(0.95);
    e.fragmentation = e.fragmentation.min(0.5);
    e
}

fn draw_signal<R: Rng>(cfg: &SynthConfig, classes: &[u8; 4], rng: &mut R) -> Vec<Option<u32>> {
    let fx = effects(cfg, classes);
    let per_day = cfg.samples_per_day();
    let period = cfg.sampling_period_s as f64;
    let steps_per_30s = period / 30.0;

    let level = cfg.base_level * (0.25 * rng.sample::<f64, _>(StandardNormal)).exp();
    let sleep_onset = 23.0 + 0.75 * rng.sample::<f64, _>(StandardNormal);
    let sleep_hours = (7.5 + 0.5 * rng.sample::<f64, _>(StandardNormal)).clamp(5.0, 10.0);
    let peak_hour = 14.0 + 1.0 * rng.sample::<f64, _>(StandardNormal);

    // AR(1) log-noise, decorrelating over ~5 minutes
    let phi = 0.9f64.powf(steps_per_30s);
    let innov = (1.0 - phi * phi).sqrt() * 0.4;
    let shape = 2.0;
    let gamma = Gamma::new(shape, 1.0 / shape).expect("valid gamma");
    let bout_continue = 0.75f64.powf(steps_per_30s);
    let frag = 1.0 - (1.0 - fx.fragmentation).powf(steps_per_30s);
    let step = cfg.count_step as f64;

    let mut ar = 0.0;
    let mut in_bout = false;
    let mut out = Vec::with_capacity(cfg.sequence_len());
    for day in 0..cfg.days {
        let day_factor = (0.1 * rng.sample::<f64, _>(StandardNormal)).exp()
            * (1.0 + fx.phase * fx.alternation * if day % 2 == 0 { 1.0 } else { -1.0 });
        for i in 0..per_day {
            let hour = (i as f64 * period) / 3600.0;
            ar = phi * ar + innov * rng.sample::<f64, _>(StandardNormal);
            let since_onset = (hour - sleep_onset).rem_euclid(24.0);
            let asleep = since_onset < sleep_hours;
            let raw = if asleep {
                in_bout = if in_bout {
                    rng.random::<f64>() < bout_continue
                } else {
                    rng.random::<f64>() < frag
                };
                if in_bout {
                    0.3 * level * ar.exp() * gamma.sample(rng)
                } else if rng.random::<f64>() < 0.08 {
                    rng.random_range(1.0..30.0)
                } else {
                    0.0
                }
            } else {
                in_bout = false;
                let rhythm =
                    1.0 + 0.5 * (2.0 * std::f64::consts::PI * (hour - peak_hour) / 24.0).cos();
                let daytime = (9.0..21.0).contains(&hour);
                let suppress = if daytime { 1.0 - fx.suppression } else { 1.0 };
                if rng.random::<f64>() < 0.1 {
                    0.0
                } else {
                    level * day_factor * rhythm * suppress * ar.exp() * gamma.sample(rng)
                }
            };
            let count = ((raw * fx.amplitude) / step).round() * step;
            let count = count.clamp(0.0, MAX_COUNT as f64) as u32;
            let count = count.min(MAX_COUNT - MAX_COUNT % cfg.count_step);
            if rng.random::<f64>() < cfg.missing_rate {
                out.push(None);
            } else {
                out.push(Some(count));
            }
        }
    }
    out
}

/// Generates the cohort. Identical configs produce identical datasets.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Dataset> {
    generate_cohort_with(cfg, true)
}

/// As [`generate_cohort`], optionally on a single thread. Both paths give
/// the same output since each subject draws from its own stream.
pub fn generate_cohort_with(cfg: &SynthConfig, parallel: bool) -> Result<Dataset> {
    cfg.validate()?;
    let factor = latent_factor(cfg)?;
    let th: Vec<Vec<f64>> = Task::ALL
        .iter()
        .map(|&t| thresholds(t, cfg.binary_prevalence))
        .collect();
    let draws: Vec<SubjectDraw> = if parallel {
        (0..cfg.n_subjects)
            .into_par_iter()
            .map(|i| draw_subject(cfg, &factor, &th, i))
            .collect()
    } else {
        (0..cfg.n_subjects)
            .map(|i| draw_subject(cfg, &factor, &th, i))
            .collect()
    };

    let width = cfg.n_subjects.to_string().len().max(4);
    let mut sequences = Vec::with_capacity(draws.len());
    let mut labels = Vec::new();
    let mut all_classes = Vec::with_capacity(draws.len());
    for (i, d) in draws.into_iter().enumerate() {
        let subject_id = format!("s{i:0width$}");
        all_classes.push(d.classes);
        if d.labeled {
            let mut rec = LabelRecord::new(subject_id.clone());
            for t in Task::ALL {
                rec.set(t, Some(d.classes[t.index()]));
            }
            labels.push(rec);
        }
        sequences.push(RawSequence {
            subject_id,
            values: d.values,
        });
    }
    if cfg.n_subjects >= 500 {
        for w in class_balance_warnings(&all_classes) {
            log::warn!("{w}");
        }
    }
    let mut ds = Dataset::new(sequences, labels)?;
    ds.sampling_period_s = cfg.sampling_period_s;
    ds.provenance
        .sources
        .push(format!("synthetic seed={}", cfg.seed));
    ds.provenance.digest = crate::persist::sha256_hex(serde_json::to_string(cfg)?.as_bytes());
    Ok(ds)
}

/// Messages for every class whose prevalence falls below 10%.
pub fn class_balance_warnings(classes: &[[u8; 4]]) -> Vec<String> {
    let n = classes.len().max(1) as f64;
    let mut out = Vec::new();
    for t in Task::ALL {
        for c in 0..t.n_classes() {
            let k = classes
                .iter()
                .filter(|row| row[t.index()] as usize == c)
                .count();
            if (k as f64 / n) < 0.10 {
                out.push(format!(
                    "{t} class {c} prevalence {:.3} is below 10%",
                    k as f64 / n
                ));
            }
        }
    }
    out
}

/// Pairwise label correlation with degeneracy flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCorrelation {
    pub matrix: [[f64; 4]; 4],
    /// Columns with zero variance; their entries are reported as 0.
    pub degenerate: [bool; 4],
}

/// Pearson correlation of ordinal-coded labels over subjects where both
/// labels of a pair are present.
pub fn label_correlation(labels: &[LabelRecord]) -> Result<LabelCorrelation> {
    let full = labels
        .iter()
        .filter(|r| r.labels.iter().all(Option::is_some))
        .count();
    if full < 2 {
        return Err(Error::InsufficientData(format!(
            "{full} fully labeled subject(s); need at least 2"
        )));
    }
    let mut matrix = [[0.0; 4]; 4];
    let mut degenerate = [false; 4];
    for i in 0..4 {
        let vals: Vec<f64> = labels
            .iter()
            .filter_map(|r| r.labels[i])
            .map(f64::from)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        degenerate[i] = vals.iter().all(|&v| v == mean);
    }
    for i in 0..4 {
        for j in i..4 {
            let pairs: Vec<(f64, f64)> = labels
                .iter()
                .filter_map(|r| Some((f64::from(r.labels[i]?), f64::from(r.labels[j]?))))
                .collect();
            let r = pearson(&pairs).unwrap_or(0.0);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(LabelCorrelation { matrix, degenerate })
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean count over 09:00-21:00 for each subject, missing readings skipped.
pub fn daytime_means(ds: &Dataset) -> Vec<f64> {
    let per_day = (86_400 / ds.sampling_period_s) as usize;
    ds.sequences
        .iter()
        .map(|s| {
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, v) in s.values.iter().enumerate() {
                let hour = ((i % per_day) as f64 * ds.sampling_period_s as f64) / 3600.0;
                if let (true, Some(c)) = ((9.0..21.0).contains(&hour), v) {
                    sum += *c as f64;
                    n += 1;
                }
            }
            sum / n.max(1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_median_split_matches_arcsine_law() {
        // For thresholds at 0 the phi coefficient is (2/π)·asin(r).
        let t = [0.0];
        for r in [0.2, 0.5, 0.8] {
            let expect = 2.0 / std::f64::consts::PI * f64::asin(r);
            assert!((code_correlation(&t, &t, r) - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn latent_inversion_hits_target() {
        let a = thresholds(Task::Apnea, 0.35);
        let b = thresholds(Task::Diabetes, 0.35);
        let r = latent_for_target(&a, &b, 0.4);
        assert!((code_correlation(&a, &b, r) - 0.4).abs() < 1e-9);
        assert!(r > 0.4);
    }

    #[test]
    fn nearest_correlation_repairs_indefinite_input() {
        let mut m = Matrix4::<f64>::identity();
        for (i, j, v) in [(0, 1, 0.9), (0, 2, 0.9), (1, 2, -0.9)] {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        assert!(m.cholesky().is_none());
        let fixed = nearest_correlation(m);
        assert!(fixed.cholesky().is_some());
        for i in 0..4 {
            assert!((fixed[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_cohort_shapes() {
        let cfg = SynthConfig {
            n_subjects: 5,
            days: 2,
            sampling_period_s: 600,
            labeled_fraction: 1.0,
            ..Default::default()
        };
        let ds = generate_cohort(&cfg).unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.sequences.iter().all(|s| s.values.len() == 2 * 144));
        assert_eq!(ds.labels.len(), 5);
        assert_eq!(ds.sampling_period_s, 600);
    }

    #[test]
    fn invalid_matrix_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.comorbidity[0][1] = 0.5;
        assert!(matches!(
            generate_cohort(&cfg),
            Err(Error::InfeasibleCorrelation(_))
        ));
        let mut cfg = SynthConfig::default();
        cfg.comorbidity[2][2] = 0.9;
        assert!(matches!(
            generate_cohort(&cfg),
            Err(Error::InfeasibleCorrelation(_))
        ));
    }
}
