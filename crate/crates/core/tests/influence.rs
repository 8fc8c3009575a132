use mates_core::corpus::{generate, CorpusConfig, Mix};
use mates_core::exec::Serial;
use mates_core::influence::{fit, predict_pool, FeatureVec, Featurizer, FitConfig, FitInit, Head, Regressor};
use mates_core::stats::spearman;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn features(n: usize, seed: u64) -> Vec<FeatureVec> {
    let c = generate(&CorpusConfig {
        vocab_size: 64,
        min_len: 16,
        max_len: 32,
        train: n,
        holdout: 1,
        reference: 1,
        mix: Mix::new(0.3, 0.4, 0.3),
        seed,
    })
    .unwrap();
    let f = Featurizer::default();
    c.train_pool.iter().map(|e| f.featurize(&e.tokens)).collect()
}

/// Weights supported on the `k` buckets present in the most examples, so a
/// few hundred records determine them.
fn frequent_weights(xs: &[FeatureVec], k: usize, seed: u64) -> Vec<f64> {
    let mut df = vec![0usize; 4096];
    for x in xs {
        x.indices.iter().for_each(|&i| df[i as usize] += 1);
    }
    let mut order: Vec<usize> = (0..4096).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(df[i]));
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; 4096];
    for &i in &order[..k] {
        w[i] = n01.sample(&mut r);
    }
    w
}

fn linear_targets(xs: &[FeatureVec], w: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| x.indices.iter().zip(&x.values).map(|(&i, v)| w[i as usize] * v).sum()).collect()
}

#[test]
fn featurizer_is_deterministic_and_normalized() {
    let f = Featurizer::default();
    let a = f.featurize(&[1, 2, 3, 4, 5, 1, 2]);
    assert_eq!(a, f.featurize(&[1, 2, 3, 4, 5, 1, 2]));
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert!(a.values.iter().all(|&v| v > 0.0));
    assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
    let long: Vec<u32> = (0..200).map(|i| (i * 7 % 64) as u32).collect();
    assert!((f.featurize(&long).norm() - 1.0).abs() < 1e-12);
    let other = Featurizer { seed: 1, ..f.clone() };
    assert_ne!(f.featurize(&[1, 2, 3]), other.featurize(&[1, 2, 3]));
}

/// Sequences over disjoint token sets share no n-gram, so any overlap is a
/// hash collision. With `m` distinct buckets per side the expected number of
/// shared buckets is about `m²/F`.
#[test]
fn disjoint_sequences_only_collide() {
    let f = Featurizer::default();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut cosines = Vec::new();
    let mut predicted = Vec::new();
    for _ in 0..2000 {
        let a: Vec<u32> = (0..32).map(|_| r.random_range(0..128)).collect();
        let b: Vec<u32> = (0..32).map(|_| r.random_range(128..256)).collect();
        let (fa, fb) = (f.featurize(&a), f.featurize(&b));
        cosines.push(fa.dot(&fb));
        let m = (fa.nnz() as f64 * fb.nnz() as f64).sqrt();
        // each shared bucket contributes about 1/m to the cosine
        predicted.push(m * m / f.dim as f64 / m);
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let est = predicted.iter().sum::<f64>() / predicted.len() as f64;
    assert!(mean <= 0.05, "mean cosine {mean}");
    assert!(mean <= 2.0 * est && mean >= 0.5 * est, "mean {mean} vs collision estimate {est}");
}

#[test]
fn realizable_target_is_learned() {
    // small dense features so the records pin the head down
    let dim = 16;
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<FeatureVec> = (0..500)
        .map(|_| FeatureVec {
            indices: (0..dim as u32).collect(),
            values: (0..dim).map(|_| r.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.values[5]).collect();
    let cfg = FitConfig {
        epochs: 300,
        batch: 32,
        init: FitInit::Fresh,
        ..FitConfig::default()
    };
    let (_, report) = fit(None, &xs, &ys, dim, &cfg).unwrap();
    let rho = report.validation_spearman.unwrap();
    assert!(rho >= 0.99, "validation spearman {rho}");
}

#[test]
fn pure_noise_is_not_learned() {
    let xs = features(500, 2);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = (0..500).map(|_| n01.sample(&mut r)).collect();
        let cfg = FitConfig {
            validation_fraction: 0.5,
            seed,
            ..FitConfig::default()
        };
        let (_, report) = fit(None, &xs, &ys, 4096, &cfg).unwrap();
        let rho = report.validation_spearman.unwrap();
        assert!(rho.abs() <= 0.2, "seed {seed}: |rho| = {}", rho.abs());
    }
}

fn epochs_to_reach(prev: Option<&Regressor>, xs: &[FeatureVec], ys: &[f64], target: f64, init: FitInit) -> usize {
    for epochs in 1..=200 {
        let cfg = FitConfig {
            epochs,
            batch: 32,
            validation_fraction: 0.2,
            init,
            ..FitConfig::default()
        };
        let (_, rep) = fit(prev, xs, ys, 4096, &cfg).unwrap();
        if rep.validation_spearman.unwrap_or(-1.0) >= target {
            return epochs;
        }
    }
    usize::MAX
}

#[test]
fn continuing_from_last_needs_fewer_epochs() {
    let xs = features(600, 3);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let w1 = frequent_weights(&xs, 64, 8);
    let w2: Vec<f64> = w1.iter().map(|&w| if w != 0.0 { w + 0.3 * n01.sample(&mut r) } else { 0.0 }).collect();
    let y1 = linear_targets(&xs, &w1);
    let y2 = linear_targets(&xs, &w2);
    let first = FitConfig {
        epochs: 100,
        batch: 32,
        validation_fraction: 0.2,
        init: FitInit::Fresh,
        ..FitConfig::default()
    };
    let (prev, _) = fit(None, &xs, &y1, 4096, &first).unwrap();
    let target = 0.8;
    let fresh = epochs_to_reach(None, &xs, &y2, target, FitInit::Fresh);
    let cont = epochs_to_reach(Some(&prev), &xs, &y2, target, FitInit::ContinueFromLast);
    assert!(fresh != usize::MAX, "fresh fit never reached {target}");
    assert!(2 * cont < fresh, "continue {cont} epochs vs fresh {fresh}");
}

#[test]
fn affine_target_changes_do_not_change_the_fit() {
    let xs = features(200, 4);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let ys: Vec<f64> = (0..200).map(|_| n01.sample(&mut r)).collect();
    let scaled: Vec<f64> = ys.iter().map(|y| 1e-4 * y - 3.0).collect();
    let cfg = FitConfig::default();
    let (a, ra) = fit(None, &xs, &ys, 4096, &cfg).unwrap();
    let (b, rb) = fit(None, &xs, &scaled, 4096, &cfg).unwrap();
    assert_eq!(ra.validation_ids, rb.validation_ids);
    // z-scoring removes the affine map; only rounding differs, which Adam can
    // amplify on coordinates whose gradient is pure rounding noise
    let (pa, _) = predict_pool(&Serial, &a, &xs);
    let (pb, _) = predict_pool(&Serial, &b, &xs);
    assert!(spearman(&pa, &pb).unwrap() >= 0.999);
    let (sa, sb) = (ra.validation_spearman.unwrap(), rb.validation_spearman.unwrap());
    assert!((sa - sb).abs() <= 0.01, "{sa} vs {sb}");
}

#[test]
fn bias_shift_keeps_rank_order() {
    let xs = features(300, 5);
    let ys = linear_targets(&xs, &(0..4096).map(|i| (i % 13) as f64).collect::<Vec<_>>());
    let (mut reg, _) = fit(None, &xs, &ys, 4096, &FitConfig::default()).unwrap();
    let (before, flops) = predict_pool(&Serial, &reg, &xs);
    *reg.params.last_mut().unwrap() += 17.5;
    let (after, _) = predict_pool(&Serial, &reg, &xs);
    assert_eq!(spearman(&before, &after).unwrap(), 1.0);
    let want: u64 = xs.iter().map(|x| 2 * x.nnz() as u64 + 1).sum();
    assert_eq!(flops, want);
}

#[test]
fn fit_input_validation() {
    let xs = features(30, 6);
    let ys = vec![1.0; 30];
    assert!(fit(None, &xs, &ys, 4096, &FitConfig::default()).is_err());
    let mut ys: Vec<f64> = (0..30).map(|i| i as f64).collect();
    assert!(fit(None, &xs[..10], &ys[..10], 4096, &FitConfig::default()).is_err());
    let bad = FitConfig {
        validation_fraction: 1.0,
        ..FitConfig::default()
    };
    assert!(fit(None, &xs, &ys, 4096, &bad).is_err());
    ys[3] = f64::NAN;
    assert!(fit(None, &xs, &ys, 4096, &FitConfig::default()).is_err());
}

#[test]
fn mlp_head_fits_and_continues() {
    let xs = features(300, 7);
    let ys = linear_targets(&xs, &frequent_weights(&xs, 32, 2));
    let cfg = FitConfig {
        head: Head::Mlp { hidden: 8 },
        epochs: 50,
        batch: 32,
        ..FitConfig::default()
    };
    let (reg, rep) = fit(None, &xs, &ys, 4096, &cfg).unwrap();
    assert_eq!(reg.params.len(), Regressor::param_len(cfg.head, 4096));
    assert!(rep.validation_spearman.unwrap() > 0.5);
    assert!(reg.params.iter().all(|p| p.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_are_unit_norm_and_non_negative(tokens in prop::collection::vec(0u32..256, 1..100)) {
        let v = Featurizer::default().featurize(&tokens);
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        prop_assert!(v.values.iter().all(|&x| x > 0.0));
        prop_assert!(v.indices.iter().all(|&i| (i as usize) < 4096));
    }

    #[test]
    fn predictions_are_finite(seed in 0u64..1000, tokens in prop::collection::vec(0u32..64, 1..40)) {
        let x = Featurizer::default().featurize(&tokens);
        for head in [Head::Linear, Head::Mlp { hidden: 4 }] {
            let mut reg = Regressor::new(head, 4096, seed);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            reg.params.iter_mut().for_each(|p| *p += r.random_range(-10.0..10.0));
            prop_assert!(reg.predict(&x).is_finite());
        }
    }
}
