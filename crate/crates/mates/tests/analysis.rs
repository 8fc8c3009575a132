use mates::eval::{
    audit_entries, audit_selection, compare_runs, loss_rows, read_rows, run_label, spearman_rows, spearman_trajectory,
    write_report_csvs, write_rows, LossRow, SpearmanRow, StageAudit,
};
use mates::records::SelectionEntry;
use mates_core::corpus::{generate, CorpusConfig, CorpusSplit, Mix, QualityTag};
use mates_core::exec::Serial;
use mates_core::influence::Featurizer;
use mates_core::model::LMConfig;
use mates_core::optim::WsdConfig;
use mates_core::pipeline::{run, Mode, PipelineConfig, RunReport};
use mates_core::selection::random_select;

fn corpus() -> CorpusSplit {
    generate(&CorpusConfig {
        vocab_size: 16,
        min_len: 4,
        max_len: 8,
        train: 200,
        holdout: 200,
        reference: 16,
        mix: Mix::new(0.4, 0.3, 0.3),
        seed: 6,
    })
    .unwrap()
}

fn config(mode: Mode) -> PipelineConfig {
    PipelineConfig {
        lm: LMConfig::bigram(16, 8, 0),
        mode,
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
    }
}

fn reports(c: &CorpusSplit) -> Vec<RunReport> {
    [Mode::Mates, Mode::Random]
        .into_iter()
        .map(|m| run(&Serial, c, &config(m)).unwrap())
        .collect()
}

#[test]
fn comparison_schema_and_self_difference() {
    let c = corpus();
    let rs = reports(&c);
    let cmp = compare_runs(&rs).unwrap();
    assert_eq!(cmp.header().len(), 1 + 2 * rs.len());
    assert_eq!(cmp.header()[0], "step");
    assert_eq!(cmp.header()[1], format!("{}_ref_loss", run_label(&rs[0])));
    assert_eq!(cmp.steps.len(), rs[0].evals.len());

    let twice = compare_runs(&[rs[0].clone(), rs[0].clone()]).unwrap();
    assert_ne!(twice.labels[0], twice.labels[1]);
    assert!(twice.loss_differences(0, 1).iter().all(|&d| d == 0.0));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cmp.csv");
    cmp.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), cmp.header().join(","));
    assert_eq!(lines.count(), cmp.steps.len());
}

#[test]
fn misaligned_grids_are_reported() {
    let c = corpus();
    let a = run(&Serial, &c, &config(Mode::Random)).unwrap();
    let b = run(&Serial, &c, &PipelineConfig { eval_interval: 10, ..config(Mode::Random) }).unwrap();
    let err = compare_runs(&[a, b]).unwrap_err().to_string();
    assert!(err.contains('5'), "{err}");
    assert!(compare_runs(&[]).is_err());
}

#[test]
fn steps_to_threshold_picks_the_first_crossing() {
    let c = corpus();
    let rs = reports(&c);
    let cmp = compare_runs(&rs).unwrap();
    let t = cmp.steps_to_threshold(f64::INFINITY);
    assert!(t.iter().all(|s| *s == Some(cmp.steps[0])));
    assert!(cmp.steps_to_threshold(0.0).iter().all(Option::is_none));
    let mid = rs[0].evals[3].ref_loss;
    let first = rs[0].evals.iter().find(|e| e.ref_loss <= mid).unwrap().step;
    assert_eq!(cmp.steps_to_threshold(mid)[0], Some(first));
}

#[test]
fn whole_pool_selection_has_base_precision() {
    let c = corpus();
    let entries: Vec<SelectionEntry> = c
        .train_pool
        .iter()
        .map(|e| SelectionEntry { id: e.id, score: 0.0, stage: 0 })
        .collect();
    let a = audit_entries(&entries, &c).unwrap();
    assert_eq!(a.stages.len(), 1);
    assert_eq!(a.stages[0].precision, a.base_precision);
    assert_eq!(a.stages[0].selected(), 200);
    assert_eq!(a.pool.iter().sum::<usize>(), 200);
    let bad = [SelectionEntry { id: 999_999, score: 0.0, stage: 0 }];
    assert!(audit_entries(&bad, &c).is_err());
}

#[test]
fn random_precision_is_binomial() {
    let c = generate(&CorpusConfig {
        vocab_size: 16,
        min_len: 4,
        max_len: 8,
        train: 5000,
        holdout: 1,
        reference: 1,
        mix: Mix::new(0.4, 0.3, 0.3),
        seed: 7,
    })
    .unwrap();
    let ids: Vec<u64> = c.train_pool.iter().map(|e| e.id).collect();
    let k = 1000;
    let base = c.train_pool.iter().filter(|e| e.quality == QualityTag::Clean).count() as f64 / 5000.0;
    // sampling without replacement: finite-population correction
    let sd = (base * (1.0 - base) / k as f64 * (5000.0 - k as f64) / 4999.0).sqrt();
    for seed in 0..20 {
        let entries: Vec<SelectionEntry> = random_select(&ids, k, seed)
            .unwrap()
            .into_iter()
            .map(|id| SelectionEntry { id, score: 0.0, stage: seed as usize })
            .collect();
        let a = audit_entries(&entries, &c).unwrap();
        let p = a.stages[0].precision;
        assert!((p - base).abs() <= 3.0 * sd, "seed {seed}: {p} vs {base} ± {sd}");
    }
}

#[test]
fn trajectory_skips_the_warmup_stage() {
    let c = corpus();
    let rs = reports(&c);
    let t = spearman_trajectory(&rs[0]);
    assert_eq!(t.len(), rs[0].stages.len() - 1);
    assert!(t.iter().all(|p| p.rho.is_some()));
    assert!(spearman_trajectory(&rs[1]).iter().all(|p| p.rho.is_none()));
    assert_eq!(audit_selection(&rs[0], &c).unwrap().stages.len(), 3);
}

#[test]
fn csv_rows_round_trip() {
    let c = corpus();
    let rs = reports(&c);
    let dir = tempfile::tempdir().unwrap();
    let losses = loss_rows(&rs);
    let p = dir.path().join("l.csv");
    write_rows(&p, &losses).unwrap();
    assert_eq!(read_rows::<LossRow>(&p).unwrap(), losses);
    let rhos = spearman_rows(&rs);
    let p = dir.path().join("s.csv.gz");
    write_rows(&p, &rhos).unwrap();
    assert_eq!(read_rows::<SpearmanRow>(&p).unwrap(), rhos);

    write_report_csvs(dir.path(), &rs, Some(&c)).unwrap();
    let audit: Vec<StageAudit> = read_rows(&dir.path().join("audit.csv")).unwrap();
    assert_eq!(audit.len(), 6);
    let header = std::fs::read_to_string(dir.path().join("loss_curves.csv")).unwrap();
    assert!(header.starts_with("step,mode,ref_loss,flops\n"));
}
