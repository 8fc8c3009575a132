use std::collections::HashSet;
use std::io::Write;

use mates::checkpoint::{
    decode_model, encode_model, load_model, load_regressor, save_model, save_regressor, FORMAT_VERSION, MODEL_MAGIC,
};
use mates::corpus_io::{load_corpus, save_corpus};
use mates::records::{
    load_oracle_records, load_report, load_selection, read_oracle_csv, save_oracle_records, save_report,
    save_selection, selection_entries, write_oracle_csv,
};
use mates::Error;
use mates_core::corpus::{generate, CorpusConfig, CorpusSplit, Mix};
use mates_core::exec::Serial;
use mates_core::influence::{Featurizer, Head, Regressor};
use mates_core::model::{Arch, LMConfig, LanguageModel};
use mates_core::optim::{adam_step, AdamState, WsdConfig};
use mates_core::oracle::OracleRecord;
use mates_core::pipeline::{run, PipelineConfig};
use proptest::prelude::*;

fn corpus(train: usize) -> CorpusSplit {
    generate(&CorpusConfig {
        vocab_size: 64,
        min_len: 8,
        max_len: 32,
        train,
        holdout: 300,
        reference: 64,
        mix: Mix::new(0.3, 0.4, 0.3),
        seed: 4,
    })
    .unwrap()
}

#[test]
fn large_corpus_round_trips_with_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(10_000);
    for name in ["c.jsonl", "c.jsonl.gz"] {
        let path = dir.path().join(name);
        save_corpus(&c, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back, c);
        back.validate(64, 32).unwrap();
        let ids: HashSet<u64> = back.iter_tagged().map(|(_, e)| e.id).collect();
        assert_eq!(ids.len(), 10_000 + 300 + 64);
    }
}

#[test]
fn corpus_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, r#"{{"id":0,"tokens":[1,2],"quality_tag":"clean","split":"train"}}"#).unwrap();
    writeln!(f, r#"{{"id":1,"quality_tag":"clean","split":"train"}}"#).unwrap();
    drop(f);
    match load_corpus(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(load_corpus(&dir.path().join("missing.jsonl")), Err(Error::Io { .. })));
}

fn trained_state() -> (LMConfig, mates_core::model::ModelState, AdamState) {
    let cfg = LMConfig {
        vocab_size: 16,
        context_len: 8,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        arch: Arch::Transformer,
        seed: 5,
    };
    let lm = LanguageModel::new(cfg).unwrap();
    let mut st = lm.init();
    let mut adam = AdamState::new(lm.param_count());
    for i in 0..3u32 {
        let g = lm.loss(&st, &[vec![i, i + 1, 3, 4, 5]]).unwrap();
        adam_step(&mut st, &g.grads, &mut adam, 1e-2).unwrap();
        st.step += 1;
    }
    (cfg, st, adam)
}

#[test]
fn model_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, st, adam) = trained_state();
    let path = dir.path().join("m.ckpt");
    save_model(&path, &cfg, &st, Some(&adam)).unwrap();
    let (c2, s2, a2) = load_model(&path).unwrap();
    assert_eq!(c2, cfg);
    assert!(s2.bitwise_eq(&st));
    assert!(a2.unwrap().bitwise_eq(&adam));

    save_model(&path, &cfg, &st, None).unwrap();
    let (_, s3, a3) = load_model(&path).unwrap();
    assert!(s3.bitwise_eq(&st));
    assert!(a3.is_none());

    let bytes = encode_model(&cfg, &st, None);
    assert_eq!(&bytes[..4], MODEL_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    let n = st.params.len();
    // trailing optimizer flag byte after the parameters
    let params_start = bytes.len() - 1 - 8 * n;
    assert_eq!(f64::from_le_bytes(bytes[params_start..params_start + 8].try_into().unwrap()), st.params[0]);
    assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn regressor_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let f = Featurizer {
        dim: 256,
        seed: 77,
        ..Featurizer::default()
    };
    for head in [Head::Linear, Head::Mlp { hidden: 4 }] {
        let mut reg = Regressor::new(head, 256, 3);
        reg.params.iter_mut().enumerate().for_each(|(i, p)| *p += (i as f64).sin());
        let path = dir.path().join("r.bin");
        save_regressor(&path, &reg, &f).unwrap();
        let (r2, f2) = load_regressor(&path).unwrap();
        assert_eq!(r2, reg);
        assert_eq!(f2, f);
    }
}

#[test]
fn oracle_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        OracleRecord {
            example_id: 3,
            step: 500,
            influence: -1.234_567_890_123_456_7e-7,
        },
        OracleRecord {
            example_id: 9,
            step: 500,
            influence: f64::MIN_POSITIVE,
        },
        OracleRecord {
            example_id: 3,
            step: 1000,
            influence: 0.1 + 0.2,
        },
    ];
    let j = dir.path().join("o.jsonl");
    save_oracle_records(&recs, &j).unwrap();
    assert_eq!(load_oracle_records(&j).unwrap(), recs);
    let c = dir.path().join("o.csv");
    write_oracle_csv(&recs, &c).unwrap();
    assert_eq!(read_oracle_csv(&c).unwrap(), recs);
    let header = std::fs::read_to_string(&c).unwrap();
    assert!(header.starts_with("example_id,step,influence\n"));
}

fn tiny_run() -> (CorpusSplit, mates_core::pipeline::RunReport) {
    let c = generate(&CorpusConfig {
        vocab_size: 16,
        min_len: 4,
        max_len: 8,
        train: 200,
        holdout: 200,
        reference: 16,
        mix: Mix::new(0.4, 0.3, 0.3),
        seed: 1,
    })
    .unwrap();
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
    let r = run(&Serial, &c, &cfg).unwrap();
    (c, r)
}

#[test]
fn selection_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, r) = tiny_run();
    let entries = selection_entries(&r);
    assert_eq!(entries.len(), 3 * 40);
    let p = dir.path().join("sel.jsonl");
    save_selection(&entries, &p).unwrap();
    assert_eq!(load_selection(&p).unwrap(), entries);
    let rp = dir.path().join("report.json");
    save_report(&r, &rp).unwrap();
    let back = load_report(&rp).unwrap();
    assert_eq!(back, r);
    for (a, b) in back.evals.iter().zip(&r.evals) {
        assert_eq!(a.ref_loss.to_bits(), b.ref_loss.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn records_round_trip_any_float(vals in prop::collection::vec((any::<u64>(), any::<u64>(), -1e300f64..1e300), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<OracleRecord> = vals
            .into_iter()
            .map(|(id, step, influence)| OracleRecord { example_id: id, step, influence })
            .collect();
        let c = dir.path().join("o.csv");
        write_oracle_csv(&recs, &c).unwrap();
        prop_assert_eq!(read_oracle_csv(&c).unwrap(), recs.clone());
        let j = dir.path().join("o.jsonl.gz");
        save_oracle_records(&recs, &j).unwrap();
        prop_assert_eq!(load_oracle_records(&j).unwrap(), recs);
    }
}
