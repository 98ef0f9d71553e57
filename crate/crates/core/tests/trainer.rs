mod common;

use std::collections::HashSet;

use common::*;
use ontoembed::encoder::init_params;
use ontoembed::eval::{eval_sts, PairDataset, PairRow};
use ontoembed::ontology::{Definition, DefinitionSource, KnowledgeGraph, ParallelPair, TrainingPair};
use ontoembed::pipeline::Fixtures;
use ontoembed::trainer::{
    adapt_sts, build_targets, train_contrastive, train_self_distill, train_xlingual, warmup_linear, xlingual_gap,
    AdamW, ContrastivePlan, TrainConfig,
};
use ontoembed::{Checkpoint, EncoderConfig, Phase};
use proptest::prelude::*;

fn small_encoder(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_buckets: 1024,
        embed_dim: 16,
        hidden_dim: 24,
        output_dim: 16,
        init_seed: seed,
        init_scale: 0.1,
        ..EncoderConfig::default()
    }
}

fn fast(epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        epochs,
        batch_size,
        seed,
        ..TrainConfig::default()
    }
}

fn demo() -> Fixtures {
    Fixtures::load(&demo_dir()).unwrap()
}

fn first_rows(d: &PairDataset, n: usize) -> PairDataset {
    PairDataset::new(d.name.clone(), d.rows.iter().take(n).cloned().collect())
}

fn bytes(c: &Checkpoint) -> Vec<u8> {
    c.to_bytes()
}

#[test]
fn warmup_examples() {
    assert_eq!(warmup_linear(49, 1000, 1.0, 0.05), 1.0);
    assert!((warmup_linear(999, 1000, 1.0, 0.05) - 1.0 / 950.0).abs() < 1e-15);
    assert!((warmup_linear(500, 1000, 1.0, 0.05) - 500.0 / 950.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn warmup_is_non_negative_and_continuous(total in 1usize..3000, frac in 0.0f64..=1.0, base in 1e-6f64..1.0) {
        let w = ((frac * total as f64).round() as usize).max(1);
        let increment = base / w as f64;
        let mut prev: Option<f64> = None;
        for step in 0..total {
            let lr = warmup_linear(step, total, base, frac);
            prop_assert!(lr >= 0.0 && lr <= base * (1.0 + 1e-12));
            if let Some(p) = prev {
                if step == w.min(total - 1) {
                    prop_assert!((lr - p).abs() <= increment * (1.0 + 1e-12));
                }
            }
            prev = Some(lr);
        }
    }

    #[test]
    fn adamw_without_decay_or_gradient_is_identity(seed in any::<u64>()) {
        let c = tiny_config(seed);
        let mut p = random_params(&c, &mut rng(seed));
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0);
        let g = ontoembed::encoder::Gradient::zeros_like(&c, &p);
        for _ in 0..3 {
            opt.update(&mut p, &g, 0.1).unwrap();
        }
        prop_assert_eq!(p, before);
        prop_assert!(opt.v.iter().flatten().all(|v| *v >= 0.0));
    }
}

#[test]
fn contrastive_batches_never_repeat_a_concept() {
    let f = demo();
    let corpus = f.kg.build_corpus(2, 0);
    for batch_size in [2, 7, 32, 128] {
        let plan = ContrastivePlan::new(&corpus, &fast(3, batch_size, 4)).unwrap();
        for epoch in &plan.epochs {
            let mut all: Vec<usize> = epoch.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..corpus.len()).collect::<Vec<_>>(), "epoch is a permutation");
            for batch in epoch {
                assert!(batch.len() <= batch_size);
                let concepts: HashSet<&str> = batch.iter().map(|&i| corpus[i].concept_id()).collect();
                assert_eq!(concepts.len(), batch.len(), "duplicate concept in a batch");
            }
        }
    }
}

#[test]
fn contrastive_rejects_a_single_pair() {
    let f = demo();
    let corpus: Vec<TrainingPair> = f.kg.build_corpus(0, 0).into_iter().take(1).collect();
    let base = Checkpoint::base(small_encoder(0)).unwrap();
    let err = train_contrastive(&base, &corpus, &f.kg, &fast(1, 2, 0)).unwrap_err();
    assert!(matches!(err, ontoembed::Error::Precondition(_)), "{err}");
}

#[test]
fn every_trainer_is_deterministic() {
    let f = demo();
    let base = Checkpoint::base(small_encoder(3)).unwrap();
    let sts = first_rows(&f.sts_train, 120);
    let a = adapt_sts(&base, &sts, &fast(2, 16, 1)).unwrap();
    let b = adapt_sts(&base, &sts, &fast(2, 16, 1)).unwrap();
    assert_eq!(bytes(&a.checkpoint), bytes(&b.checkpoint));
    let adapted = a.checkpoint;

    let corpus: Vec<TrainingPair> = f.kg.build_corpus(1, 2).into_iter().take(300).collect();
    let mut cfg = fast(1, 32, 5);
    cfg.hard_negatives_per_batch = 4;
    let c1 = train_contrastive(&adapted, &corpus, &f.kg, &cfg).unwrap();
    let c2 = train_contrastive(&adapted, &corpus, &f.kg, &cfg).unwrap();
    assert_eq!(bytes(&c1.checkpoint), bytes(&c2.checkpoint));
    assert_eq!(c1.checkpoint.phase, Phase::Contrastive);

    let (_, targets) = build_targets(&adapted, &f.kg, 8).unwrap();
    let d1 = train_self_distill(&adapted, &targets, &f.kg, &fast(1, 64, 6)).unwrap();
    let d2 = train_self_distill(&adapted, &targets, &f.kg, &fast(1, 64, 6)).unwrap();
    assert_eq!(bytes(&d1.checkpoint), bytes(&d2.checkpoint));
    let d3 = train_self_distill(&adapted, &targets, &f.kg, &fast(1, 64, 7)).unwrap();
    assert_ne!(d1.checkpoint.params, d3.checkpoint.params);

    let pairs = &f.parallel[..200];
    let x1 = train_xlingual(&adapted, &small_encoder(9), pairs, &fast(1, 32, 8)).unwrap();
    let x2 = train_xlingual(&adapted, &small_encoder(9), pairs, &fast(1, 32, 8)).unwrap();
    assert_eq!(bytes(&x1.checkpoint), bytes(&x2.checkpoint));
}

#[test]
fn zero_epochs_leave_the_encoder_unchanged() {
    let f = demo();
    let base = Checkpoint::base(small_encoder(1)).unwrap();
    let out = adapt_sts(&base, &first_rows(&f.sts_train, 20), &fast(0, 8, 0)).unwrap();
    assert_eq!(out.checkpoint.params, base.params);
    assert_eq!(out.steps, 0);

    let adapted = Checkpoint::new(base.config.clone(), Phase::StsAdapted, base.params.clone()).unwrap();
    let (_, targets) = build_targets(&adapted, &f.kg, 4).unwrap();
    let out = train_self_distill(&adapted, &targets, &f.kg, &fast(0, 8, 0)).unwrap();
    assert_eq!(out.checkpoint.params.without_head(), base.params);
    assert!(out.checkpoint.params.head.is_some());
}

#[test]
fn identical_pairs_are_fitted_and_adaptation_helps_pearson() {
    let f = demo();
    let base = Checkpoint::base(small_encoder(2)).unwrap();
    let same = PairDataset::new(
        "same",
        f.sts_train
            .rows
            .iter()
            .take(40)
            .map(|r| PairRow {
                text_a: r.text_a.clone(),
                text_b: r.text_a.clone(),
                gold: 5.0,
            })
            .collect(),
    );
    let out = adapt_sts(&base, &same, &fast(50, 8, 0)).unwrap();
    assert!(out.final_loss < 1e-3, "loss {}", out.final_loss);

    let train = first_rows(&f.sts_train, 300);
    let before = eval_sts(&base, &train).unwrap().value;
    let after = eval_sts(&adapt_sts(&base, &train, &fast(5, 16, 0)).unwrap().checkpoint, &train)
        .unwrap()
        .value;
    assert!(after >= before, "{after} < {before}");
}

#[test]
fn distillation_rejects_contrastive_bases() {
    let f = demo();
    let base = Checkpoint::base(small_encoder(0)).unwrap();
    let c = Checkpoint::new(base.config.clone(), Phase::Contrastive, base.params.clone()).unwrap();
    let (_, targets) = build_targets(&c, &f.kg, 4).unwrap();
    assert!(train_self_distill(&c, &targets, &f.kg, &fast(1, 8, 0)).is_err());
    assert!(build_targets(&base, &f.kg, 4).is_err());
}

#[test]
fn full_distillation_loss_never_increases() {
    let f = demo();
    let base = Checkpoint::base(small_encoder(4)).unwrap();
    let adapted = adapt_sts(&base, &f.sts_train, &fast(3, 32, 0)).unwrap().checkpoint;
    let (_, targets) = build_targets(&adapted, &f.kg, 8).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.005,
        ..fast(5, 32, 1)
    };
    let out = train_self_distill(&adapted, &targets, &f.kg, &cfg).unwrap();
    assert_eq!(out.full_losses.len(), 6);
    for w in out.full_losses.windows(2) {
        assert!(w[1] <= w[0], "full loss went up: {:?}", out.full_losses);
    }
}

/// Targets rebuilt by hand: encode, average, covariance eigenvectors with the
/// largest-entry-positive sign rule, projection.
#[test]
fn targets_match_a_scripted_pipeline() {
    let def = |t: &str| Definition {
        text: t.into(),
        source: DefinitionSource::Human,
        language: "en".into(),
    };
    let mut a = concept("A", &["acute fever"], &[]);
    a.definitions.push(def("high body temperature"));
    let mut b = concept("B", &["peptic ulcer"], &[]);
    b.definitions.push(def("a sore in the stomach lining"));
    let c = concept("C", &["chronic cough", "persistent cough"], &[]);
    let kg = KnowledgeGraph::from_concepts([a, b, c]).unwrap();
    let cfg = small_encoder(7);
    let teacher = Checkpoint::new(cfg.clone(), Phase::StsAdapted, init_params(&cfg)).unwrap();

    let raw = |name: &str, definition: &str| -> Vec<f64> {
        let n = teacher.encode(name).into_vec();
        let d = teacher.encode(definition).into_vec();
        n.iter().zip(&d).map(|(x, y)| (x + y) / 2.0).collect()
    };
    let raws = [
        raw("acute fever", "high body temperature"),
        raw("peptic ulcer", "a sore in the stomach lining"),
        raw("chronic cough", "chronic cough"),
    ];
    let (_, vectors) = jacobi_eigen(&covariance(&raws));
    let mean: Vec<f64> = (0..cfg.output_dim)
        .map(|j| raws.iter().map(|r| r[j]).sum::<f64>() / 3.0)
        .collect();
    let components: Vec<Vec<f64>> = vectors
        .into_iter()
        .take(2)
        .map(|v| {
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            v.iter().map(|x| x * pivot.signum()).collect()
        })
        .collect();

    let (_, targets) = build_targets(&teacher, &kg, 2).unwrap();
    for (t, r) in targets.iter().zip(&raws) {
        for (k, comp) in components.iter().enumerate() {
            let expect: f64 = comp.iter().zip(r).zip(&mean).map(|((c, x), m)| c * (x - m)).sum();
            assert!((t.target[k] - expect).abs() < 1e-10, "{} component {k}", t.concept_id);
        }
    }
}

#[test]
fn xlingual_keeps_the_teacher_frozen_and_closes_the_gap() {
    let f = demo();
    let teacher = adapt_sts(
        &Checkpoint::base(small_encoder(5)).unwrap(),
        &first_rows(&f.sts_train, 100),
        &fast(1, 16, 0),
    )
    .unwrap()
    .checkpoint;
    let frozen = teacher.to_bytes();
    let pairs = &f.parallel[..300];
    let student_cfg = small_encoder(11);
    let initial = xlingual_gap(&Checkpoint::base(student_cfg.clone()).unwrap(), &teacher, pairs);
    let out = train_xlingual(&teacher, &student_cfg, pairs, &fast(10, 16, 0)).unwrap();
    assert_eq!(teacher.to_bytes(), frozen);
    assert_eq!(out.checkpoint.phase, Phase::XlingualStudent);
    let after = xlingual_gap(&out.checkpoint, &teacher, pairs);
    assert!(after < initial, "{after} >= {initial}");
}

#[test]
fn xlingual_identity_pairs_make_both_terms_coincide() {
    let f = demo();
    let teacher = Checkpoint::new(small_encoder(1), Phase::StsAdapted, init_params(&small_encoder(1))).unwrap();
    let pairs: Vec<ParallelPair> = f.parallel[..50]
        .iter()
        .map(|p| ParallelPair {
            source_text: p.source_text.clone(),
            target_text: p.source_text.clone(),
            target_language: "en".into(),
        })
        .collect();
    let out = train_xlingual(&teacher, &small_encoder(2), &pairs, &fast(2, 10, 0)).unwrap();
    let student = &out.checkpoint;
    let direct: f64 = pairs
        .iter()
        .map(|p| {
            let s = student.encode(&p.source_text).into_vec();
            let t = teacher.encode(&p.source_text).into_vec();
            s.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / pairs.len() as f64;
    assert!((xlingual_gap(student, &teacher, &pairs) - direct).abs() < 1e-12);
}
