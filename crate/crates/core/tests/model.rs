use mates_core::model::{bigram_closed_form_grad, flops_per_token, Arch, FlopsMode, LMConfig, LanguageModel};
use mates_core::optim::sgd_step;
use proptest::prelude::*;

fn tiny(seed: u64) -> LMConfig {
    LMConfig {
        vocab_size: 16,
        context_len: 12,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        arch: Arch::Transformer,
        seed,
    }
}

#[test]
fn init_is_deterministic_with_unit_gains() {
    let lm = LanguageModel::new(tiny(3)).unwrap();
    let (a, b) = (lm.init(), lm.init());
    assert!(a.bitwise_eq(&b));
    let other = LanguageModel::new(tiny(4)).unwrap().init();
    assert_ne!(a.params, other.params);
    for seg in lm.layout().segments() {
        if seg.name.ends_with(".g") {
            assert!(a.params[seg.range()].iter().all(|&g| g == 1.0), "{}", seg.name);
        }
    }
}

#[test]
fn bigram_param_count_and_flops() {
    let lm = LanguageModel::new(LMConfig::bigram(64, 32, 0)).unwrap();
    assert_eq!(lm.param_count(), 4096);
    assert_eq!(lm.flops_per_token(FlopsMode::Infer), 8192);
    for n in [1usize, 17, 4096, 123_457] {
        assert_eq!(
            flops_per_token(n, FlopsMode::Train),
            3 * flops_per_token(n, FlopsMode::Infer)
        );
    }
    let t = LanguageModel::new(tiny(0)).unwrap();
    assert_eq!(t.flops_per_token(FlopsMode::Train), 3 * t.flops_per_token(FlopsMode::Infer));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(LanguageModel::new(LMConfig { n_heads: 3, ..tiny(0) }).is_err());
    assert!(LanguageModel::new(LMConfig { context_len: 1, ..tiny(0) }).is_err());
    assert!(LanguageModel::new(LMConfig { vocab_size: 1, ..tiny(0) }).is_err());
}

#[test]
fn uniform_bigram_loss_is_ln_v() {
    let lm = LanguageModel::new(LMConfig::bigram(8, 10, 0)).unwrap();
    let mut st = lm.init();
    st.params.iter_mut().for_each(|p| *p = 0.0);
    let batch = [vec![0u32, 3, 7, 1], vec![2, 2, 5]];
    let l = lm.loss(&st, &batch).unwrap();
    assert!((l.loss - 8f64.ln()).abs() < 1e-12);
    assert_eq!(l.positions, 5);
}

#[test]
fn small_sgd_step_descends() {
    for lm in [
        LanguageModel::new(LMConfig::bigram(16, 12, 1)).unwrap(),
        LanguageModel::new(tiny(1)).unwrap(),
    ] {
        let mut st = lm.init();
        let batch = [vec![1u32, 4, 9, 2, 2, 7], vec![3, 3, 8, 15]];
        let before = lm.loss(&st, &batch).unwrap();
        sgd_step(&mut st, &before.grads, 1e-2).unwrap();
        let after = lm.loss(&st, &batch).unwrap();
        assert!(after.loss < before.loss, "{:?}", lm.config().arch);
    }
}

#[test]
fn bigram_autodiff_matches_closed_form() {
    let lm = LanguageModel::new(LMConfig::bigram(10, 12, 7)).unwrap();
    let st = lm.init();
    let batch = [vec![1u32, 4, 9, 2, 2, 7], vec![3, 3, 8], vec![0, 1]];
    let auto = lm.loss(&st, &batch).unwrap().grads;
    let closed = bigram_closed_form_grad(10, &st.params, &batch);
    for (a, c) in auto.iter().zip(&closed) {
        assert!((a - c).abs() <= 1e-15, "{a} vs {c}");
    }
}

#[test]
fn batch_loss_is_position_weighted_mean() {
    let lm = LanguageModel::new(tiny(2)).unwrap();
    let st = lm.init();
    let seqs = [vec![1u32, 4, 9, 2, 2, 7, 11, 0], vec![3, 3], vec![5, 6, 7, 8]];
    let whole = lm.loss(&st, &seqs).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for s in &seqs {
        let l = lm.loss(&st, std::slice::from_ref(s)).unwrap();
        sum += l.loss * l.positions as f64;
        count += l.positions;
    }
    assert_eq!(whole.positions, count);
    assert!((whole.loss - sum / count as f64).abs() < 1e-12);
}

#[test]
fn snapshot_restore_round_trip() {
    let lm = LanguageModel::new(tiny(5)).unwrap();
    let mut st = lm.init();
    let snap = st.snapshot();
    assert!(snap.snapshot().bitwise_eq(&snap));
    let g = lm.loss(&st, &[vec![1u32, 2, 3]]).unwrap();
    sgd_step(&mut st, &g.grads, 0.1).unwrap();
    st.step += 1;
    assert!(!st.bitwise_eq(&snap));
    st.restore(&snap).unwrap();
    assert!(st.bitwise_eq(&snap));
    st.restore(&snap).unwrap();
    assert!(st.bitwise_eq(&snap));
    let bigram = LanguageModel::new(LMConfig::bigram(16, 12, 0)).unwrap().init();
    assert!(st.restore(&bigram).is_err());
}

#[test]
fn bad_batches_are_rejected() {
    let lm = LanguageModel::new(tiny(0)).unwrap();
    let st = lm.init();
    let empty: [Vec<u32>; 0] = [];
    assert!(lm.loss(&st, &empty).is_err());
    assert!(lm.loss(&st, &[vec![1u32]]).is_err());
    assert!(lm.loss(&st, &[vec![1u32, 16]]).is_err());
    assert!(lm.loss(&st, &[vec![1u32; 13]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The prediction of token `p` only sees tokens before `p`, so editing
    /// token `j` leaves the loss terms of every earlier target untouched.
    #[test]
    fn transformer_is_causal(
        seq in prop::collection::vec(0u32..16, 3..=12),
        j_frac in 0.0f64..1.0,
        new_tok in 0u32..16,
        seed in 0u64..50,
    ) {
        let lm = LanguageModel::new(tiny(seed)).unwrap();
        let st = lm.init();
        let j = 1 + ((seq.len() - 1) as f64 * j_frac) as usize;
        let j = j.min(seq.len() - 1);
        let mut edited = seq.clone();
        edited[j] = new_tok;
        let other = vec![7u32, 1, 2, 3, 4, 5];
        let a = lm.position_nll(&st, &[seq.clone(), other.clone()]).unwrap();
        let b = lm.position_nll(&st, &[edited, other]).unwrap();
        // position p predicts token p+1
        for p in 0..j - 1 {
            prop_assert_eq!(a[p].to_bits(), b[p].to_bits());
        }
        // the unedited sequence of the batch is unaffected too
        let off = seq.len() - 1;
        for p in off..a.len() {
            prop_assert!((a[p] - b[p]).abs() <= 1e-12);
        }
    }
}
