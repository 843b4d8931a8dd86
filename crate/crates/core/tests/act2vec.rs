use acton::act2vec::{
    build_noise_table, infer_sequence, loss_grad_neighbor, loss_grad_segment, loss_grad_smoothing,
    sequence_features, train, EmbeddingSpace, InferConfig, SubjectSegments, TrainConfig,
};
use acton::domain::{ActivitySequence, Granularity, Level};
use acton::ingest::Corpus;
use acton::synthgen::{generate_cohort, SynthConfig};
use acton::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn tiny_corpus(seed: u64) -> Corpus {
    let cfg = SynthConfig {
        n_subjects: 4,
        days: 7,
        seed,
        ..Default::default()
    };
    let ds = generate_cohort(&cfg).unwrap();
    Corpus::from_dataset(&ds, cfg.sequence_len()).unwrap()
}

fn day_cfg(dim: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        dim,
        epochs,
        convergence_tol: 0.0,
        ..TrainConfig::for_level(Level::Day)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Random space with entries of order one so the sigmoids are not flat.
fn random_space(rng: &mut ChaCha8Rng, n_seg: usize, vocab: usize, dim: usize) -> EmbeddingSpace {
    let subjects = vec![SubjectSegments {
        subject_id: "a".into(),
        first: 0,
        count: n_seg,
    }];
    let g = Granularity::standard(Level::Hour);
    let cfg = TrainConfig {
        dim,
        ..TrainConfig::for_level(Level::Hour)
    };
    let mut space = EmbeddingSpace::random(g, 30, subjects, vec![1; vocab], cfg, rng).unwrap();
    for v in space.segment_vectors_mut().iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in space.segment_out_mut().iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in space.symbol_out_mut().iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    space
}

#[test]
fn segment_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut space = random_space(&mut rng, 3, 9, 6);
        let seg = rng.random_range(0..3);
        let target = rng.random_range(0..9u32);
        let negs: Vec<u32> = (0..5).map(|_| rng.random_range(0..9u32)).collect();
        let g = loss_grad_segment(&space, seg, target, &negs).unwrap();
        for j in 0..6 {
            let base = space.segment_vectors()[[seg, j]];
            space.segment_vectors_mut()[[seg, j]] = base + H;
            let up = loss_grad_segment(&space, seg, target, &negs).unwrap().loss;
            space.segment_vectors_mut()[[seg, j]] = base - H;
            let down = loss_grad_segment(&space, seg, target, &negs).unwrap().loss;
            space.segment_vectors_mut()[[seg, j]] = base;
            worst = worst.max(rel_err(g.d_input[j], (up - down) / (2.0 * H)));
        }
        for (row, grad) in &g.d_out {
            for j in 0..6 {
                let base = space.symbol_out()[[*row, j]];
                space.symbol_out_mut()[[*row, j]] = base + H;
                let up = loss_grad_segment(&space, seg, target, &negs).unwrap().loss;
                space.symbol_out_mut()[[*row, j]] = base - H;
                let down = loss_grad_segment(&space, seg, target, &negs).unwrap().loss;
                space.symbol_out_mut()[[*row, j]] = base;
                worst = worst.max(rel_err(grad[j], (up - down) / (2.0 * H)));
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

#[test]
fn neighbor_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut space = random_space(&mut rng, 6, 4, 5);
        let seg = rng.random_range(1..5);
        let nb = seg + 1;
        let negs: Vec<usize> = (0..5).map(|_| rng.random_range(0..6)).collect();
        let g = loss_grad_neighbor(&space, seg, nb, &negs).unwrap();
        for j in 0..5 {
            let base = space.segment_vectors()[[seg, j]];
            space.segment_vectors_mut()[[seg, j]] = base + H;
            let up = loss_grad_neighbor(&space, seg, nb, &negs).unwrap().loss;
            space.segment_vectors_mut()[[seg, j]] = base - H;
            let down = loss_grad_neighbor(&space, seg, nb, &negs).unwrap().loss;
            space.segment_vectors_mut()[[seg, j]] = base;
            worst = worst.max(rel_err(g.d_input[j], (up - down) / (2.0 * H)));
        }
        for (row, grad) in &g.d_out {
            for j in 0..5 {
                let base = space.segment_out()[[*row, j]];
                space.segment_out_mut()[[*row, j]] = base + H;
                let up = loss_grad_neighbor(&space, seg, nb, &negs).unwrap().loss;
                space.segment_out_mut()[[*row, j]] = base - H;
                let down = loss_grad_neighbor(&space, seg, nb, &negs).unwrap().loss;
                space.segment_out_mut()[[*row, j]] = base;
                worst = worst.max(rel_err(grad[j], (up - down) / (2.0 * H)));
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

#[test]
fn smoothing_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut space = random_space(&mut rng, 5, 3, 4);
        let seg: usize = rng.random_range(0..5);
        let nbs: Vec<usize> = [seg.checked_sub(1), (seg + 1 < 5).then_some(seg + 1)]
            .into_iter()
            .flatten()
            .collect();
        let eta = rng.random_range(0.05..1.0);
        let (_, grad) = loss_grad_smoothing(&space, seg, &nbs, eta).unwrap();
        for j in 0..4 {
            let base = space.segment_vectors()[[seg, j]];
            space.segment_vectors_mut()[[seg, j]] = base + H;
            let up = loss_grad_smoothing(&space, seg, &nbs, eta).unwrap().0;
            space.segment_vectors_mut()[[seg, j]] = base - H;
            let down = loss_grad_smoothing(&space, seg, &nbs, eta).unwrap().0;
            space.segment_vectors_mut()[[seg, j]] = base;
            worst = worst.max(rel_err(grad[j], (up - down) / (2.0 * H)));
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

#[test]
fn smoothing_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut space = random_space(&mut rng, 2, 2, 2);
    let t = space.segment_vectors_mut();
    t[[0, 0]] = 1.0;
    t[[0, 1]] = 0.0;
    t[[1, 0]] = 0.0;
    t[[1, 1]] = 1.0;
    assert_eq!(loss_grad_smoothing(&space, 0, &[1], 0.25).unwrap().0, 0.5);
    assert_eq!(loss_grad_smoothing(&space, 0, &[1], 0.0).unwrap().0, 0.0);
    assert_eq!(loss_grad_smoothing(&space, 0, &[], 0.5).unwrap().0, 0.0);
}

#[test]
fn noise_draws_match_probabilities() {
    let counts = [7u64, 0, 3, 1, 12];
    let table = build_noise_table(&counts, 0.75).unwrap();
    let n = 1_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = [0usize; 5];
    for _ in 0..n {
        hits[table.sample(&mut rng)] += 1;
    }
    assert_eq!(hits[1], 0);
    for (i, &h) in hits.iter().enumerate() {
        let p = table.probability(i);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = h as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * se.max(1e-12),
            "id {i}: {freq} vs {p}"
        );
    }
}

#[test]
fn day_loss_decreases_across_seed_suite() {
    for seed in 0..10 {
        let corpus = tiny_corpus(100 + seed);
        let cfg = TrainConfig {
            seed,
            ..day_cfg(8, 5)
        };
        let out = train(&corpus, &cfg).unwrap();
        assert_eq!(out.trace.len(), 5);
        let first = out.trace[0].combined;
        let last = out.trace.last().unwrap().combined;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let corpus = tiny_corpus(7);
    let a = train(&corpus, &day_cfg(8, 3)).unwrap();
    let b = train(&corpus, &day_cfg(8, 3)).unwrap();
    assert_eq!(a.space, b.space);
    assert_eq!(a.trace, b.trace);
    let c = train(
        &corpus,
        &TrainConfig {
            seed: 8,
            ..day_cfg(8, 3)
        },
    )
    .unwrap();
    assert_ne!(a.space, c.space);
}

#[test]
fn week_trace_has_no_neighbor_or_smoothing_terms() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        dim: 8,
        epochs: 3,
        eta: 0.5,
        ..TrainConfig::for_level(Level::Week)
    };
    let out = train(&corpus, &cfg).unwrap();
    for e in &out.trace {
        assert_eq!(e.neighbor, 0.0);
        assert_eq!(e.smoothing, 0.0);
        assert!(e.segment > 0.0);
    }
    assert_eq!(out.space.n_segments(), 4);
}

#[test]
fn hour_training_uses_all_terms() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        dim: 8,
        epochs: 2,
        ..TrainConfig::for_level(Level::Hour)
    };
    let out = train(&corpus, &cfg).unwrap();
    assert_eq!(out.space.n_segments(), 4 * 168);
    assert!(out
        .trace
        .iter()
        .all(|e| e.neighbor > 0.0 && e.smoothing > 0.0));
}

#[test]
fn sample_level_trains_symbol_vectors() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        dim: 4,
        epochs: 1,
        window: 3,
        ..TrainConfig::for_level(Level::Sample)
    };
    let out = train(&corpus, &cfg).unwrap();
    assert_eq!(out.space.n_segments(), 0);
    let sv = out.space.symbol_vectors().unwrap();
    assert_eq!(sv.nrows(), corpus.vocab.len());
    let f = sequence_features(&out.space, &corpus.sequences[0]).unwrap();
    assert_eq!(f.len(), 20160 * 4);
}

#[test]
fn convergence_tolerance_stops_early() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        convergence_tol: 0.5,
        ..day_cfg(8, 20)
    };
    let out = train(&corpus, &cfg).unwrap();
    assert!(out.converged);
    assert!(out.trace.len() < 20);
}

#[test]
fn window_larger_than_segment_is_rejected() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        window: 200,
        ..TrainConfig::for_level(Level::Hour)
    };
    assert!(matches!(train(&corpus, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn feature_dimensions_by_level() {
    let corpus = tiny_corpus(7);
    let day = train(&corpus, &day_cfg(100, 1)).unwrap();
    assert_eq!(
        sequence_features(&day.space, &corpus.sequences[1])
            .unwrap()
            .len(),
        700
    );
    let week = train(
        &corpus,
        &TrainConfig {
            dim: 100,
            epochs: 1,
            ..TrainConfig::for_level(Level::Week)
        },
    )
    .unwrap();
    assert_eq!(
        sequence_features(&week.space, &corpus.sequences[1])
            .unwrap()
            .len(),
        100
    );
    let stranger = ActivitySequence {
        subject_id: "nobody".into(),
        ..corpus.sequences[0].clone()
    };
    assert!(matches!(
        sequence_features(&day.space, &stranger),
        Err(Error::UnknownSegment(_))
    ));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn reinferred_training_sequence_matches_stored_vectors() {
    let corpus = tiny_corpus(7);
    let out = train(&corpus, &day_cfg(100, 5)).unwrap();
    let seq = &corpus.sequences[2];
    let inferred = infer_sequence(&out.space, seq, &InferConfig::default()).unwrap();
    let stored = out.space.subject_vectors(&seq.subject_id).unwrap();
    assert_eq!(inferred.len(), 7);
    let close = inferred
        .iter()
        .zip(&stored)
        .filter(|(a, b)| cosine(a, b) > 0.9)
        .count();
    assert!(close >= 6, "only {close} of 7 day segments above 0.9");
}

#[test]
fn zero_steps_returns_initialization() {
    let corpus = tiny_corpus(7);
    let out = train(&corpus, &day_cfg(8, 1)).unwrap();
    let cfg = InferConfig {
        steps: 0,
        ..Default::default()
    };
    let v = infer_sequence(&out.space, &corpus.sequences[0], &cfg).unwrap();
    let half = 0.5 / 8.0;
    assert!(v.iter().flatten().all(|x| x.abs() < half));
    assert_eq!(
        v,
        infer_sequence(&out.space, &corpus.sequences[0], &cfg).unwrap()
    );
}

#[test]
fn all_unknown_sequence_stays_finite() {
    let corpus = tiny_corpus(7);
    let out = train(&corpus, &day_cfg(8, 2)).unwrap();
    let unk = corpus.vocab.unk_id();
    let seq = ActivitySequence {
        subject_id: "ghost".into(),
        symbols: vec![unk; 20160],
        sampling_period_s: 30,
    };
    let v = infer_sequence(&out.space, &seq, &InferConfig::default()).unwrap();
    assert!(v.iter().flatten().all(|x| x.is_finite()));
}

#[test]
fn inference_rejects_other_sampling_period() {
    let corpus = tiny_corpus(7);
    let out = train(&corpus, &day_cfg(8, 1)).unwrap();
    let seq = ActivitySequence {
        sampling_period_s: 60,
        symbols: corpus.sequences[0].symbols[..10080].to_vec(),
        ..corpus.sequences[0].clone()
    };
    assert!(matches!(
        infer_sequence(&out.space, &seq, &InferConfig::default()),
        Err(Error::GranularityMismatch { .. })
    ));
}

#[test]
fn throughput_mode_trains_finite_space() {
    let corpus = tiny_corpus(7);
    let cfg = TrainConfig {
        threads: 4,
        ..day_cfg(8, 2)
    };
    let out = train(&corpus, &cfg).unwrap();
    assert!(out.space.segment_vectors().iter().all(|x| x.is_finite()));
    assert_eq!(out.trace.len(), 2);
}
