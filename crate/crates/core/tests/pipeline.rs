use pinn_core::config::{Config, ConfigLayer};
use pinn_core::harness::{
    persist_run, read_run, read_sweep, run_h_sweep, run_scaling, RunMode, Study,
};
use pinn_core::metrics::RegimeThresholds;
use pinn_core::parallel::ScalingMode;
use pinn_core::problems::ProblemKind;
use pinn_core::sampling::Counts;
use proptest::prelude::*;

fn small(kind: ProblemKind, iterations: usize) -> Study {
    let c = Config::resolve(
        None,
        &ConfigLayer {
            problem: Some(kind),
            width: Some(6),
            depth: Some(2),
            iterations: Some(iterations),
            lr: Some(1e-3),
            record_every: Some(5),
            ..ConfigLayer::default()
        },
    )
    .unwrap();
    Study::new(c.spec(), c.train_settings(), c.counts).unwrap()
}

#[test]
fn sweep_persists_and_reads_back() {
    let study = small(ProblemKind::Laplace1d, 15);
    let records = run_h_sweep(
        &study,
        &[8, 16],
        &[0, 1],
        &RegimeThresholds::default(),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.regime.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = records
        .iter()
        .map(|r| persist_run(r, dir.path()).unwrap())
        .collect();
    let rows = read_sweep(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!(row, &rec.to_row());
    }
    let back = read_run(&dir.path().join(format!("run_{}.json", ids[0]))).unwrap();
    assert_eq!(back.history, records[0].history);
    assert_eq!(back.error.to_bits(), records[0].error.to_bits());

    // a second persist of the same record gets a fresh id
    let again = persist_run(&records[0], dir.path()).unwrap();
    assert_ne!(again, ids[0]);
    assert_eq!(read_sweep(&dir.path().join("sweep.csv")).unwrap().len(), 5);
}

#[test]
fn weak_scaling_reports_efficiency_against_one_rank() {
    let study = small(ProblemKind::Laplace1d, 10);
    let dir = tempfile::tempdir().unwrap();
    let records = run_scaling(
        &study,
        ScalingMode::Weak,
        &[1, 2],
        8,
        &[3],
        Some(dir.path()),
        &mut |_| {},
    )
    .unwrap();
    let weak: Vec<_> = records.iter().filter(|r| r.mode == RunMode::Weak).collect();
    assert_eq!(weak.len(), 2);
    let one = weak.iter().find(|r| r.size == 1).unwrap();
    assert_eq!(one.efficiency, Some((1.0, 1.0)));
    let two = weak.iter().find(|r| r.size == 2).unwrap();
    assert_eq!(two.counts.n_f, 16);
    assert!(two.efficiency.is_some());
    // serial baselines at N and 2N
    let serial: Vec<usize> = records
        .iter()
        .filter(|r| r.mode == RunMode::Serial)
        .map(|r| r.counts.n_f)
        .collect();
    assert_eq!(serial, vec![8, 16]);
    assert!(dir.path().join("weak_size2_seed3/rank_1.log").exists());
}

#[test]
fn strong_scaling_rejects_uneven_shards() {
    let study = small(ProblemKind::Laplace1d, 3);
    let err = study.run_distributed(ScalingMode::Strong, 3, 16, 0, None);
    assert!(err.is_err());
}

#[test]
fn inverse_problem_trains_lambda() {
    let study = small(ProblemKind::Laplace1dInverse, 20);
    let (rec, params) = study.run_serial(16, 0).unwrap();
    let params = params.unwrap();
    let lambda = params.extra("lambda").unwrap();
    assert!(lambda != 0.0);
    assert_eq!(rec.extras, vec![("lambda".to_string(), lambda)]);
    assert_eq!(
        rec.counts,
        Counts::defaults(ProblemKind::Laplace1dInverse, 16)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_deterministic_in_the_seed(seed in 0u64..1000, n in 2usize..12) {
        let study = small(ProblemKind::Laplace1d, 4);
        let (a, _) = study.run_serial(n, seed).unwrap();
        let (b, _) = study.run_serial(n, seed).unwrap();
        prop_assert_eq!(a.history.train_loss, b.history.train_loss);
        prop_assert_eq!(a.error.to_bits(), b.error.to_bits());
    }
}
