use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{ns_sgd_step, smoothing_sgd_step};
use super::noise::{build_noise_table, NoiseTable, NOISE_POWER};
use super::{init_table, EmbeddingSpace, SubjectSegments, TrainConfig};
use crate::domain::{segment_corpus, Granularity, Level, TimeSegment};
use crate::error::{Error, Result};
use crate::ingest::Corpus;

/// Mean per-target losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub segment: f64,
    pub neighbor: f64,
    pub smoothing: f64,
    pub combined: f64,
    pub learning_rate: f64,
    pub targets: u64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub space: EmbeddingSpace,
    pub trace: Vec<EpochLoss>,
    pub converged: bool,
}

/// Positions within a sequence of `k` segments adjacent to `index`:
/// one step each way for size 2, two steps each way for size 4.
pub fn segment_neighbors(index: usize, k: usize, set_size: usize) -> Vec<usize> {
    let reach = set_size / 2;
    let lo = index.saturating_sub(reach);
    let hi = (index + reach).min(k.saturating_sub(1));
    (lo..=hi).filter(|&i| i != index).collect()
}

#[derive(Default, Clone, Copy)]
struct Accum {
    segment: f64,
    neighbor: f64,
    smoothing: f64,
    targets: u64,
}

impl Accum {
    fn merge(mut self, o: Accum) -> Accum {
        self.segment += o.segment;
        self.neighbor += o.neighbor;
        self.smoothing += o.smoothing;
        self.targets += o.targets;
        self
    }
}

struct Schedule {
    lr_start: f64,
    lr_end: f64,
    total: u64,
    done: AtomicU64,
}

impl Schedule {
    fn tick(&self) -> f64 {
        let n = self.done.fetch_add(1, Ordering::Relaxed);
        let frac = (n as f64 / self.total.max(1) as f64).min(1.0);
        self.lr_start - (self.lr_start - self.lr_end) * frac
    }

    fn current(&self) -> f64 {
        let frac = (self.done.load(Ordering::Relaxed) as f64 / self.total.max(1) as f64).min(1.0);
        self.lr_start - (self.lr_start - self.lr_end) * frac
    }
}

/// Parameter storage the update loop writes through.
trait Tables {
    fn segment_step(&mut self, gid: usize, target: usize, negs: &[usize], lr: f64) -> f64;
    fn neighbor_step(&mut self, gid: usize, neighbor: usize, negs: &[usize], lr: f64) -> f64;
    fn smooth_step(&mut self, gid: usize, neighbors: &[usize], eta: f64, lr: f64) -> f64;
    fn skipgram_step(&mut self, center: usize, context: usize, negs: &[usize], lr: f64) -> f64;
}

struct Direct<'a> {
    space: &'a mut EmbeddingSpace,
    scratch: Vec<f64>,
}

fn row_slice(t: &mut Array2<f64>, i: usize) -> &mut [f64] {
    t.row_mut(i).into_slice().expect("standard layout")
}

impl Tables for Direct<'_> {
    fn segment_step(&mut self, gid: usize, target: usize, negs: &[usize], lr: f64) -> f64 {
        let phi = row_slice(&mut self.space.segment_vectors, gid);
        ns_sgd_step(
            phi,
            &mut self.space.symbol_out,
            target,
            negs,
            lr,
            &mut self.scratch,
        )
    }

    fn neighbor_step(&mut self, gid: usize, neighbor: usize, negs: &[usize], lr: f64) -> f64 {
        let phi = row_slice(&mut self.space.segment_vectors, gid);
        ns_sgd_step(
            phi,
            &mut self.space.segment_out,
            neighbor,
            negs,
            lr,
            &mut self.scratch,
        )
    }

    fn smooth_step(&mut self, gid: usize, neighbors: &[usize], eta: f64, lr: f64) -> f64 {
        smoothing_sgd_step(&mut self.space.segment_vectors, gid, neighbors, eta, lr)
    }

    fn skipgram_step(&mut self, center: usize, context: usize, negs: &[usize], lr: f64) -> f64 {
        let table = self
            .space
            .symbol_vectors
            .as_mut()
            .expect("symbol vectors exist at sample level");
        let x = row_slice(table, center);
        ns_sgd_step(
            x,
            &mut self.space.symbol_out,
            context,
            negs,
            lr,
            &mut self.scratch,
        )
    }
}

/// Row-major f64 table with relaxed atomic cells. Concurrent row updates
/// may overwrite each other; that loss is accepted in throughput mode.
struct AtomicTable {
    cells: Vec<AtomicU64>,
    cols: usize,
}

impl AtomicTable {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            cells: a.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            cols: a.ncols(),
        }
    }

    fn into_array(self, rows: usize) -> Array2<f64> {
        let data: Vec<f64> = self
            .cells
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect();
        Array2::from_shape_vec((rows, self.cols), data).expect("shape preserved")
    }

    fn load(&self, row: usize, buf: &mut [f64]) {
        let base = row * self.cols;
        for (b, c) in buf.iter_mut().zip(&self.cells[base..base + self.cols]) {
            *b = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn store(&self, row: usize, buf: &[f64]) {
        let base = row * self.cols;
        for (b, c) in buf.iter().zip(&self.cells[base..base + self.cols]) {
            c.store(b.to_bits(), Ordering::Relaxed);
        }
    }
}

struct SharedTables {
    segment_vectors: AtomicTable,
    segment_out: AtomicTable,
    symbol_vectors: Option<AtomicTable>,
    symbol_out: AtomicTable,
}

/// Per-worker view of the shared tables: rows are copied into local
/// buffers, stepped, and written back.
struct Worker<'a> {
    shared: &'a SharedTables,
    input: Vec<f64>,
    local: Array2<f64>,
    scratch: Vec<f64>,
}

impl Worker<'_> {
    fn ns(
        &mut self,
        input_table: &AtomicTable,
        out_table: &AtomicTable,
        row: usize,
        pos: usize,
        negs: &[usize],
        lr: f64,
    ) -> f64 {
        let d = self.input.len();
        if self.local.nrows() != negs.len() + 1 {
            self.local = Array2::zeros((negs.len() + 1, d));
        }
        input_table.load(row, &mut self.input);
        let ids: Vec<usize> = std::iter::once(pos).chain(negs.iter().copied()).collect();
        for (r, &id) in ids.iter().enumerate() {
            out_table.load(id, row_slice(&mut self.local, r));
        }
        let local_negs: Vec<usize> = (1..=negs.len()).collect();
        let loss = ns_sgd_step(
            &mut self.input,
            &mut self.local,
            0,
            &local_negs,
            lr,
            &mut self.scratch,
        );
        for (r, &id) in ids.iter().enumerate() {
            out_table.store(id, self.local.row(r).as_slice().expect("standard layout"));
        }
        input_table.store(row, &self.input);
        loss
    }
}

impl Tables for Worker<'_> {
    fn segment_step(&mut self, gid: usize, target: usize, negs: &[usize], lr: f64) -> f64 {
        let s = self.shared;
        self.ns(&s.segment_vectors, &s.symbol_out, gid, target, negs, lr)
    }

    fn neighbor_step(&mut self, gid: usize, neighbor: usize, negs: &[usize], lr: f64) -> f64 {
        let s = self.shared;
        self.ns(&s.segment_vectors, &s.segment_out, gid, neighbor, negs, lr)
    }

    fn smooth_step(&mut self, gid: usize, neighbors: &[usize], eta: f64, lr: f64) -> f64 {
        if neighbors.is_empty() || eta == 0.0 {
            return 0.0;
        }
        let d = self.input.len();
        let mut rows = Array2::zeros((neighbors.len() + 1, d));
        let t = &self.shared.segment_vectors;
        t.load(gid, row_slice(&mut rows, 0));
        for (r, &n) in neighbors.iter().enumerate() {
            t.load(n, row_slice(&mut rows, r + 1));
        }
        let local: Vec<usize> = (1..=neighbors.len()).collect();
        let loss = smoothing_sgd_step(&mut rows, 0, &local, eta, lr);
        t.store(gid, rows.row(0).as_slice().expect("standard layout"));
        loss
    }

    fn skipgram_step(&mut self, center: usize, context: usize, negs: &[usize], lr: f64) -> f64 {
        let s = self.shared;
        let input = s
            .symbol_vectors
            .as_ref()
            .expect("symbol vectors exist at sample level");
        self.ns(input, &s.symbol_out, center, context, negs, lr)
    }
}

struct Context<'a> {
    corpus: &'a Corpus,
    segments: &'a [Vec<TimeSegment>],
    cfg: &'a TrainConfig,
    symbol_noise: &'a NoiseTable,
    segment_noise: Option<&'a NoiseTable>,
    schedule: &'a Schedule,
}

fn draw_negatives<R: Rng>(
    noise: &NoiseTable,
    positive: usize,
    m: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.clear();
    for _ in 0..m {
        let n = noise.sample(rng);
        if n != positive {
            out.push(n);
        }
    }
}

/// Runs one pass over the given subjects.
fn run_subjects<T: Tables, R: Rng>(
    tables: &mut T,
    subjects: &[usize],
    ctx: &Context<'_>,
    rng: &mut R,
) -> Accum {
    let cfg = ctx.cfg;
    let m = cfg.negatives;
    let mut negs = Vec::with_capacity(m);
    let mut acc = Accum::default();

    if cfg.level == Level::Sample {
        for &s in subjects {
            let syms = &ctx.corpus.sequences[s].symbols;
            let n = syms.len();
            for j in 0..n {
                let lr = ctx.schedule.tick();
                let b = rng.random_range(1..=cfg.window);
                let lo = j.saturating_sub(b);
                let hi = (j + b).min(n - 1);
                let center = syms[j] as usize;
                for c in lo..=hi {
                    if c == j {
                        continue;
                    }
                    let ctx_sym = syms[c] as usize;
                    draw_negatives(ctx.symbol_noise, ctx_sym, m, rng, &mut negs);
                    acc.segment += tables.skipgram_step(center, ctx_sym, &negs, lr);
                    acc.targets += 1;
                }
            }
        }
        return acc;
    }

    let obj = cfg.objectives();
    let eta = cfg.effective_eta();
    for &s in subjects {
        let syms = &ctx.corpus.sequences[s].symbols;
        let segs = &ctx.segments[s];
        let k = segs.len();
        for seg in segs {
            let neighbors: Vec<usize> =
                segment_neighbors(seg.index_in_sequence, k, cfg.neighbor_set_size)
                    .into_iter()
                    .map(|i| segs[i].global_id)
                    .collect();
            let gid = seg.global_id;
            let mut start = seg.start;
            while start < seg.end {
                let end = (start + cfg.window).min(seg.end);
                let lr = ctx.schedule.tick();
                if obj.segment {
                    let target = syms[rng.random_range(start..end)] as usize;
                    draw_negatives(ctx.symbol_noise, target, m, rng, &mut negs);
                    acc.segment += tables.segment_step(gid, target, &negs, lr);
                }
                if obj.neighbor && !neighbors.is_empty() {
                    if let Some(noise) = ctx.segment_noise {
                        let ti = neighbors[rng.random_range(0..neighbors.len())];
                        draw_negatives(noise, ti, m, rng, &mut negs);
                        acc.neighbor += tables.neighbor_step(gid, ti, &negs, lr);
                    }
                }
                if obj.smoothing && eta > 0.0 {
                    acc.smoothing += tables.smooth_step(gid, &neighbors, eta, lr);
                }
                acc.targets += 1;
                start = end;
            }
        }
    }
    acc
}

fn updates_per_epoch(corpus: &Corpus, segments: &[Vec<TimeSegment>], cfg: &TrainConfig) -> u64 {
    if cfg.level == Level::Sample {
        return corpus.sequences.iter().map(|s| s.len() as u64).sum();
    }
    segments
        .iter()
        .flatten()
        .map(|s| s.len().div_ceil(cfg.window) as u64)
        .sum()
}

/// Trains an embedding space over the corpus with SGD.
///
/// Each epoch permutes the subjects. Every segment is cut into windows of
/// `cfg.window` symbols; one target is drawn per window and drives a
/// segment-loss step, then a neighbor-loss step on one sampled adjacent
/// segment, then a smoothing step. The learning rate decays linearly over
/// all scheduled updates. Training stops after `cfg.epochs` or once the
/// relative change of the epoch loss drops below `cfg.convergence_tol`.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<Trained> {
    if corpus.sequences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let period = corpus.sequences[0].sampling_period_s;
    if corpus
        .sequences
        .iter()
        .any(|s| s.sampling_period_s != period)
    {
        return Err(Error::InvalidConfig(
            "mixed sampling periods in corpus".into(),
        ));
    }
    let g = Granularity::new(cfg.level, period)?;
    cfg.validate(&g)?;
    let segments = if cfg.level == Level::Sample {
        corpus.sequences.iter().map(|_| Vec::new()).collect()
    } else {
        segment_corpus(&corpus.sequences, g)?
    };

    let v = corpus.vocab.len();
    let mut symbol_counts = vec![0u64; v];
    for s in &corpus.sequences {
        for &t in &s.symbols {
            let t = t as usize;
            if t >= v {
                return Err(Error::IdOutOfRange { id: t, rows: v });
            }
            symbol_counts[t] += 1;
        }
    }
    let symbol_noise = build_noise_table(&symbol_counts, NOISE_POWER)?;
    let seg_lengths: Vec<u64> = segments.iter().flatten().map(|s| s.len() as u64).collect();
    let segment_noise = if seg_lengths.is_empty() {
        None
    } else {
        Some(build_noise_table(&seg_lengths, NOISE_POWER)?)
    };

    let subjects: Vec<SubjectSegments> = corpus
        .sequences
        .iter()
        .zip(&segments)
        .map(|(seq, segs)| SubjectSegments {
            subject_id: seq.subject_id.clone(),
            first: segs.first().map_or(0, |s| s.global_id),
            count: segs.len(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_seg = seg_lengths.len();
    let d = cfg.dim;
    let segment_vectors = init_table(n_seg, d, &mut rng);
    let segment_out = init_table(n_seg, d, &mut rng);
    let symbol_out = init_table(v, d, &mut rng);
    let symbol_vectors = (cfg.level == Level::Sample).then(|| init_table(v, d, &mut rng));
    let mut space = EmbeddingSpace::from_parts(
        g,
        period,
        segment_vectors,
        segment_out,
        symbol_vectors,
        symbol_out,
        symbol_counts,
        subjects,
        cfg.clone(),
        corpus.digest.clone(),
    )?;

    let per_epoch = updates_per_epoch(corpus, &segments, cfg);
    let schedule = Schedule {
        lr_start: cfg.lr_start,
        lr_end: cfg.lr_end,
        total: per_epoch * cfg.epochs as u64,
        done: AtomicU64::new(0),
    };
    let ctx = Context {
        corpus,
        segments: &segments,
        cfg,
        symbol_noise: &symbol_noise,
        segment_noise: segment_noise.as_ref(),
        schedule: &schedule,
    };

    let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut converged = false;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let acc = if cfg.threads <= 1 {
            let mut direct = Direct {
                space: &mut space,
                scratch: vec![0.0; d],
            };
            run_subjects(&mut direct, &order, &ctx, &mut rng)
        } else {
            run_parallel(&mut space, &order, &ctx, cfg.threads, rng.random())
        };

        let n = acc.targets.max(1) as f64;
        let (ls, lc, lr) = (acc.segment / n, acc.neighbor / n, acc.smoothing / n);
        if !(ls + lc + lr).is_finite() {
            return Err(Error::NonFinite(format!(
                "embedding loss at epoch {}",
                epoch + 1
            )));
        }
        trace.push(EpochLoss {
            epoch: epoch + 1,
            segment: ls,
            neighbor: lc,
            smoothing: lr,
            combined: ls + lc + lr,
            learning_rate: schedule.current(),
            targets: acc.targets,
        });
        log::debug!("epoch {} loss {:.6}", epoch + 1, ls + lc + lr);
        if let [.., prev, cur] = trace.as_slice() {
            let rel =
                (prev.combined - cur.combined).abs() / prev.combined.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
    }
    Ok(Trained {
        space,
        trace,
        converged,
    })
}

/// Throughput mode: subjects are split across workers that update shared
/// tables without synchronization. Results are not reproducible.
fn run_parallel(
    space: &mut EmbeddingSpace,
    order: &[usize],
    ctx: &Context<'_>,
    threads: usize,
    seed: u64,
) -> Accum {
    let shared = SharedTables {
        segment_vectors: AtomicTable::from_array(&space.segment_vectors),
        segment_out: AtomicTable::from_array(&space.segment_out),
        symbol_vectors: space.symbol_vectors.as_ref().map(AtomicTable::from_array),
        symbol_out: AtomicTable::from_array(&space.symbol_out),
    };
    let d = space.dim;
    let chunk = order.len().div_ceil(threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
    let work = || {
        order
            .par_chunks(chunk)
            .enumerate()
            .map(|(w, part)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(w as u64);
                let mut worker = Worker {
                    shared: &shared,
                    input: vec![0.0; d],
                    local: Array2::zeros((0, d)),
                    scratch: vec![0.0; d],
                };
                run_subjects(&mut worker, part, ctx, &mut rng)
            })
            .reduce(Accum::default, Accum::merge)
    };
    let acc = match pool {
        Ok(p) => p.install(work),
        Err(_) => work(),
    };
    let SharedTables {
        segment_vectors,
        segment_out,
        symbol_vectors,
        symbol_out,
    } = shared;
    let (ns, nv) = (space.segment_vectors.nrows(), space.symbol_out.nrows());
    space.segment_vectors = segment_vectors.into_array(ns);
    space.segment_out = segment_out.into_array(ns);
    space.symbol_vectors = symbol_vectors.map(|t| t.into_array(nv));
    space.symbol_out = symbol_out.into_array(nv);
    acc
}
