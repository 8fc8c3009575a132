use std::collections::HashSet;

use mates_core::corpus::{generate, tag_counts, CorpusConfig, Example, Mix, QualityTag};
use mates_core::model::{LMConfig, LanguageModel};
use mates_core::optim::{adam_step, AdamState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> CorpusConfig {
    CorpusConfig {
        vocab_size: 64,
        min_len: 16,
        max_len: 32,
        train: 4000,
        holdout: 500,
        reference: 256,
        mix: Mix::new(0.3, 0.4, 0.3),
        seed,
    }
}

#[test]
fn all_clean_mix() {
    let c = generate(&CorpusConfig {
        mix: Mix::new(1.0, 0.0, 0.0),
        ..small(1)
    })
    .unwrap();
    assert!(c.train_pool.iter().all(|e| e.quality == QualityTag::Clean));
}

#[test]
fn same_seed_same_corpus() {
    assert_eq!(generate(&small(7)).unwrap(), generate(&small(7)).unwrap());
    assert_ne!(generate(&small(7)).unwrap(), generate(&small(8)).unwrap());
}

#[test]
fn invalid_mix_is_config_error() {
    let bad = CorpusConfig {
        mix: Mix::new(0.5, 0.4, 0.3),
        ..small(0)
    };
    assert!(matches!(generate(&bad), Err(mates_core::Error::Config(_))));
    let neg = CorpusConfig {
        mix: Mix::new(1.2, -0.2, 0.0),
        ..small(0)
    };
    assert!(generate(&neg).is_err());
}

#[test]
fn split_invariants_hold() {
    let cfg = CorpusConfig {
        train: 20_000,
        ..small(3)
    };
    let c = generate(&cfg).unwrap();
    c.validate(64, 32).unwrap();
    let mut ids = HashSet::new();
    for e in c.train_pool.iter().chain(&c.holdout).chain(&c.reference) {
        assert!(ids.insert(e.id), "duplicate id {}", e.id);
        assert!(!e.tokens.is_empty() && e.tokens.len() <= 32);
        assert!(e.tokens.iter().all(|&t| t < 64));
    }
    assert!(c.reference.iter().all(|e| e.quality == QualityTag::Clean));
    for (set, n) in [(&c.train_pool, 20_000.0), (&c.holdout, 500.0)] {
        let counts = tag_counts(set.iter());
        for (got, want) in counts.iter().zip([0.3, 0.4, 0.3]) {
            assert!((*got as f64 / n - want).abs() <= 0.01);
        }
    }
}

#[test]
fn shuffled_examples_keep_clean_unigrams() {
    // a shuffled example is a permutation of a grammar sample, so it uses
    // tokens the grammar can emit; noise is uniform over the vocabulary
    let c = generate(&small(4)).unwrap();
    let distinct = |tag| {
        let set: HashSet<u32> = c
            .train_pool
            .iter()
            .filter(|e| e.quality == tag)
            .flat_map(|e| e.tokens.iter().copied())
            .collect();
        set.len()
    };
    assert_eq!(distinct(QualityTag::Noise), 64);
    assert!(distinct(QualityTag::Shuffled) > 0);
}

fn mean_nll(lm: &LanguageModel, st: &mates_core::model::ModelState, set: &[&Example]) -> f64 {
    let nll = lm.nll(st, set).unwrap();
    nll.mean()
}

#[test]
fn trained_bigram_ranks_quality() {
    let c = generate(&small(5)).unwrap();
    let lm = LanguageModel::new(LMConfig::bigram(64, 32, 0)).unwrap();
    let mut st = lm.init();
    let mut adam = AdamState::new(lm.param_count());
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut order: Vec<usize> = (0..c.train_pool.len()).collect();
    for step in 0..2000 {
        if step % (order.len() / 32) == 0 {
            order.shuffle(&mut r);
        }
        let start = (step % (order.len() / 32)) * 32;
        let batch: Vec<&Example> = order[start..start + 32].iter().map(|&i| &c.train_pool[i]).collect();
        let g = lm.loss(&st, &batch).unwrap();
        adam_step(&mut st, &g.grads, &mut adam, 1e-2).unwrap();
    }
    let by = |tag| -> Vec<&Example> { c.holdout.iter().filter(|e| e.quality == tag).collect() };
    let clean = mean_nll(&lm, &st, &by(QualityTag::Clean));
    let shuffled = mean_nll(&lm, &st, &by(QualityTag::Shuffled));
    let noise = mean_nll(&lm, &st, &by(QualityTag::Noise));
    assert!(clean < shuffled && shuffled < noise, "{clean} {shuffled} {noise}");
}

fn bigram_features(tokens: &[u32], v: usize) -> Vec<(usize, f64)> {
    let mut f: Vec<(usize, f64)> = tokens.windows(2).map(|w| (w[0] as usize * v + w[1] as usize, 1.0)).collect();
    let n = f.len() as f64;
    f.iter_mut().for_each(|x| x.1 /= n);
    f
}

#[test]
fn clean_and_noise_are_separable() {
    let c = generate(&small(6)).unwrap();
    let v = 64;
    let pick = |set: &[Example]| -> Vec<(Vec<(usize, f64)>, f64)> {
        set.iter()
            .filter(|e| e.quality != QualityTag::Shuffled)
            .map(|e| (bigram_features(&e.tokens, v), if e.quality == QualityTag::Clean { 1.0 } else { 0.0 }))
            .collect()
    };
    let train = pick(&c.train_pool);
    let test = pick(&c.holdout);
    let mut w = vec![0.0; v * v];
    let mut b = 0.0;
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    for _ in 0..20 {
        for (x, y) in &train {
            let z: f64 = x.iter().map(|&(i, val)| w[i] * val).sum::<f64>() + b;
            let err = sigmoid(z) - y;
            for &(i, val) in x {
                w[i] -= 0.5 * err * val;
            }
            b -= 0.5 * err;
        }
    }
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let z: f64 = x.iter().map(|&(i, val)| w[i] * val).sum::<f64>() + b;
            (sigmoid(z) > 0.5) == (*y == 1.0)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}

#[test]
fn mixture_counts_are_exact() {
    let m = Mix::new(0.3, 0.4, 0.3);
    for n in [1usize, 7, 10, 999, 50_000] {
        let c = m.counts(n);
        assert_eq!(c.iter().sum::<usize>(), n);
    }
    assert_eq!(m.counts(10), [3, 4, 3]);
}
