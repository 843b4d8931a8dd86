use acton::act2vec::{
    loss_grad_neighbor, loss_grad_segment, loss_grad_smoothing, EmbeddingSpace, SubjectSegments,
    TrainConfig,
};
use acton::domain::{Granularity, Level, Task};
use acton::models::{CnnModel, CnnObjective, Example, NetworkSpec};
use acton::nn::{gradient_check, GradCheckConfig};
use clap::Args;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure};
use crate::settings::{env_seed, flag, layered, read_config};
use crate::Global;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckSettings {
    pub instances: u64,
    pub seed: u64,
    pub tolerance: f64,
    pub check: GradCheckConfig,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per objective
    #[arg(long)]
    instances: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest accepted relative error
    #[arg(long)]
    tolerance: Option<f64>,
}

pub fn run(g: &Global, a: GradcheckArgs) -> CmdResult {
    let mut base = GradcheckSettings {
        instances: 100,
        seed: 0,
        tolerance: 1e-4,
        check: GradCheckConfig::default(),
    };
    flag(&mut base.seed, env_seed()?);
    let mut s = layered(base, &read_config(g.config.as_deref())?)?;
    flag(&mut s.instances, a.instances);
    flag(&mut s.seed, a.seed);
    flag(&mut s.tolerance, a.tolerance);

    let results = [
        ("segment loss", embedding_worst(&s, Objective::Segment)?),
        ("neighbor loss", embedding_worst(&s, Objective::Neighbor)?),
        ("smoothing", embedding_worst(&s, Objective::Smoothing)?),
        ("network", network_worst(&s)?),
    ];
    let mut failed = Vec::new();
    for (name, worst) in results {
        let ok = worst < s.tolerance;
        println!(
            "{} {name:<14} max relative error {worst:.3e} over {} instances",
            if ok { "ok  " } else { "FAIL" },
            s.instances
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            s.tolerance
        )))
    }
}

#[derive(Clone, Copy)]
enum Objective {
    Segment,
    Neighbor,
    Smoothing,
}

#[derive(Clone, Copy)]
enum Table {
    Segments,
    SegmentOut,
    SymbolOut,
}

fn table(space: &mut EmbeddingSpace, t: Table) -> &mut Array2<f64> {
    match t {
        Table::Segments => space.segment_vectors_mut(),
        Table::SegmentOut => space.segment_out_mut(),
        Table::SymbolOut => space.symbol_out_mut(),
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst error of `grad` against central differences along one table row.
fn fd_row(
    space: &mut EmbeddingSpace,
    t: Table,
    row: usize,
    grad: &[f64],
    cfg: &GradCheckConfig,
    loss: &dyn Fn(&EmbeddingSpace) -> acton::Result<f64>,
) -> acton::Result<f64> {
    let h = cfg.step;
    let mut worst: f64 = 0.0;
    for (j, g) in grad.iter().enumerate() {
        let base = table(space, t)[[row, j]];
        table(space, t)[[row, j]] = base + h;
        let up = loss(space)?;
        table(space, t)[[row, j]] = base - h;
        let down = loss(space)?;
        table(space, t)[[row, j]] = base;
        worst = worst.max(rel_err(*g, (up - down) / (2.0 * h), cfg.floor));
    }
    Ok(worst)
}

fn random_space(
    rng: &mut ChaCha8Rng,
    n_seg: usize,
    vocab: usize,
    dim: usize,
) -> CmdResult<EmbeddingSpace> {
    let subjects = vec![SubjectSegments {
        subject_id: "probe".into(),
        first: 0,
        count: n_seg,
    }];
    let cfg = TrainConfig {
        dim,
        ..TrainConfig::for_level(Level::Hour)
    };
    let mut space = EmbeddingSpace::random(
        Granularity::standard(Level::Hour),
        30,
        subjects,
        vec![1; vocab],
        cfg,
        rng,
    )?;
    for t in [Table::Segments, Table::SegmentOut, Table::SymbolOut] {
        table(&mut space, t).mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    Ok(space)
}

fn embedding_worst(s: &GradcheckSettings, obj: Objective) -> CmdResult<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..s.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(i));
        let n_seg = rng.random_range(3..8);
        let vocab = rng.random_range(3..12);
        let dim = rng.random_range(2..8);
        let mut space = random_space(&mut rng, n_seg, vocab, dim)?;
        let seg = rng.random_range(0..n_seg);
        let negs = rng.random_range(1..6);
        let e = match obj {
            Objective::Segment => {
                let target = rng.random_range(0..vocab as u32);
                let noise: Vec<u32> = (0..negs)
                    .map(|_| rng.random_range(0..vocab as u32))
                    .collect();
                let g = loss_grad_segment(&space, seg, target, &noise)?;
                let loss =
                    |sp: &EmbeddingSpace| Ok(loss_grad_segment(sp, seg, target, &noise)?.loss);
                let mut w = fd_row(
                    &mut space,
                    Table::Segments,
                    seg,
                    &g.d_input,
                    &s.check,
                    &loss,
                )?;
                for (row, grad) in &g.d_out {
                    w = w.max(fd_row(
                        &mut space,
                        Table::SymbolOut,
                        *row,
                        grad,
                        &s.check,
                        &loss,
                    )?);
                }
                w
            }
            Objective::Neighbor => {
                let nb = if seg + 1 < n_seg { seg + 1 } else { seg - 1 };
                let noise: Vec<usize> = (0..negs).map(|_| rng.random_range(0..n_seg)).collect();
                let g = loss_grad_neighbor(&space, seg, nb, &noise)?;
                let loss = |sp: &EmbeddingSpace| Ok(loss_grad_neighbor(sp, seg, nb, &noise)?.loss);
                let mut w = fd_row(
                    &mut space,
                    Table::Segments,
                    seg,
                    &g.d_input,
                    &s.check,
                    &loss,
                )?;
                for (row, grad) in &g.d_out {
                    w = w.max(fd_row(
                        &mut space,
                        Table::SegmentOut,
                        *row,
                        grad,
                        &s.check,
                        &loss,
                    )?);
                }
                w
            }
            Objective::Smoothing => {
                let nbs: Vec<usize> = [seg.checked_sub(1), (seg + 1 < n_seg).then_some(seg + 1)]
                    .into_iter()
                    .flatten()
                    .collect();
                let eta = rng.random_range(0.05..1.0);
                let (_, grad) = loss_grad_smoothing(&space, seg, &nbs, eta)?;
                let loss = |sp: &EmbeddingSpace| Ok(loss_grad_smoothing(sp, seg, &nbs, eta)?.0);
                fd_row(&mut space, Table::Segments, seg, &grad, &s.check, &loss)?
            }
        };
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Whole network objective on tiny random architectures with every
/// parameter randomized, so no layer sits behind a zero head.
fn network_worst(s: &GradcheckSettings) -> CmdResult<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..s.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(i) ^ 0x9e37_79b9);
        let n_tasks = rng.random_range(1..=4);
        let tasks: Vec<Task> = Task::ALL[..n_tasks].to_vec();
        let spec = NetworkSpec {
            vocab: rng.random_range(3..8),
            seq_len: rng.random_range(6..12),
            embed_dim: rng.random_range(2..4),
            depth: rng.random_range(1..3),
            filters: rng.random_range(2..4),
            kernel: rng.random_range(1..4),
            pool: rng.random_range(1..3),
            pool_stride: None,
            hidden: rng.random_range(2..5),
            dropout: if rng.random::<bool>() { 0.3 } else { 0.0 },
            tasks: tasks.clone(),
        };
        let mut model = CnnModel::new(spec.clone(), i, None)?;
        for (_, p) in model.params_mut() {
            p.value.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch: Vec<Example> = (0..rng.random_range(2..5))
            .map(|b| {
                let mut labels = [None; 4];
                for t in &tasks {
                    if rng.random_range(0.0..1.0) < 0.8 {
                        labels[t.index()] = Some(rng.random_range(0..t.n_classes()) as u8);
                    }
                }
                labels[tasks[0].index()].get_or_insert(0);
                Example {
                    subject_id: format!("b{b}"),
                    ids: (0..spec.seq_len)
                        .map(|_| rng.random_range(0..spec.vocab as u32))
                        .collect(),
                    labels,
                }
            })
            .collect();
        let mut obj = CnnObjective {
            model,
            batch,
            alpha: vec![1.0 / n_tasks as f64; n_tasks],
            // |w| has no derivative at zero
            l1: 0.0,
            l2: rng.random_range(0.0..0.5),
            dropout_seed: i,
        };
        worst = worst.max(gradient_check(&mut obj, &s.check)?.max_rel_error);
    }
    Ok(worst)
}
