use mates::parallel::Rayon;
use mates_core::corpus::{generate, CorpusConfig, Mix};
use mates_core::exec::Serial;
use mates_core::influence::{predict_pool, Featurizer, Regressor, Head};
use mates_core::model::{Arch, LMConfig, LanguageModel};
use mates_core::optim::{adam_step, AdamState, WsdConfig};
use mates_core::oracle::{probe_many, ProbeConfig, Prober};
use mates_core::pipeline::{run, PipelineConfig};

fn corpus() -> mates_core::corpus::CorpusSplit {
    generate(&CorpusConfig {
        vocab_size: 16,
        min_len: 4,
        max_len: 8,
        train: 200,
        holdout: 100,
        reference: 16,
        mix: Mix::new(0.4, 0.3, 0.3),
        seed: 8,
    })
    .unwrap()
}

#[test]
fn probes_match_serial() {
    let c = corpus();
    let lm = LanguageModel::new(LMConfig {
        vocab_size: 16,
        context_len: 8,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        arch: Arch::Transformer,
        seed: 2,
    })
    .unwrap();
    let mut st = lm.init();
    let mut adam = AdamState::new(lm.param_count());
    for x in &c.train_pool[..5] {
        let g = lm.loss(&st, std::slice::from_ref(&x.tokens)).unwrap();
        adam_step(&mut st, &g.grads, &mut adam, 1e-2).unwrap();
    }
    let prober = Prober::new(&lm, &st, &c.reference, ProbeConfig::default(), 1e-3).unwrap();
    let a = probe_many(&Serial, &prober, &st, &adam, &c.holdout).unwrap();
    let b = probe_many(&Rayon, &prober, &st, &adam, &c.holdout).unwrap();
    assert_eq!(a, b);
    let bits = |o: &mates_core::oracle::ProbeOutcome| o.records.iter().map(|r| r.influence.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn predictions_match_serial() {
    let c = corpus();
    let f = Featurizer::default();
    let xs: Vec<_> = c.train_pool.iter().map(|e| f.featurize(&e.tokens)).collect();
    let mut reg = Regressor::new(Head::Mlp { hidden: 8 }, 4096, 1);
    reg.params.iter_mut().enumerate().for_each(|(i, p)| *p += (i as f64 * 0.37).sin());
    let (a, fa) = predict_pool(&Serial, &reg, &xs);
    let (b, fb) = predict_pool(&Rayon, &reg, &xs);
    assert_eq!(fa, fb);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn whole_run_matches_serial() {
    let c = corpus();
    let cfg = PipelineConfig {
        lm: LMConfig::bigram(16, 8, 0),
        total_steps: 30,
        update_interval: 10,
        batch_size: 4,
        eval_interval: 5,
        oracle_budget_first: 40,
        oracle_budget: 30,
        wsd: WsdConfig {
            warmup: 2,
            stable_end: 30,
            decay: 2,
            max_lr: 1e-2,
        },
        featurizer: Featurizer {
            dim: 64,
            ..Featurizer::default()
        },
        ..PipelineConfig::default()
    };
    let a = run(&Serial, &c, &cfg).unwrap();
    let b = run(&Rayon, &c, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
