use std::fs;

use edgeflow::config::{parse_config, ExperimentConfig, Method};
use edgeflow::data::PartitionScheme;
use edgeflow::engine::{ClusterLayout, RunOptions};
use edgeflow::harness::{self, parse_trace, setup_repeat, SweepAxis};
use edgeflow::model::ModelSpec;
use edgeflow::theory::{estimate_heterogeneity, TheoryReport};
use edgeflow::topology::{CommLedger, CommMethod};
use edgeflow::{Error, ParamVector};

fn quick(scheme: PartitionScheme, dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.partition.scheme = scheme;
    c.train.rounds = 20;
    c.theory.enabled = false;
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn single_class_clusters_are_far_more_heterogeneous_at_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::Iid, tmp.path());
    c.clusters.layout = ClusterLayout::Strided;
    let iid = setup_repeat(&c, 0).unwrap();
    c.partition.scheme = PartitionScheme::NiidB;
    let niid = setup_repeat(&c, 0).unwrap();
    // NIID_B clients past the first tenth hold one class each, client n -> class n % 10
    for shard in &niid.federation.shards[10..] {
        let nonzero: Vec<usize> = (0..10).filter(|&k| shard.label_histogram[k] > 0).collect();
        assert_eq!(nonzero, vec![shard.client_id % 10]);
    }
    let zero = ParamVector::zeros(iid.federation.spec.num_params());
    let a = estimate_heterogeneity(&iid.federation.spec, &zero, &iid.federation.shards, &iid.membership).unwrap();
    let b = estimate_heterogeneity(&niid.federation.spec, &zero, &niid.federation.shards, &niid.membership).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&b) >= 5.0 * mean(&a), "iid {a:?} niid {b:?}");
}

#[test]
fn heterogeneity_dominates_on_single_class_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::NiidB, tmp.path());
    c.clusters.layout = ClusterLayout::Strided;
    c.train.rounds = 50;
    c.theory.enabled = true;
    c.methods = vec![Method::EdgeflowSeq];
    let s = harness::run(&c).unwrap();
    let b = s.cells[0].bound.unwrap();
    assert!(b.valid);
    assert!(s.cells[0].slack.unwrap() >= 0.0);
    assert!(b.term_hetero > b.term_variance && b.term_hetero > b.term_drift, "{b:?}");
}

#[test]
fn run_writes_artifacts_that_bound_report_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::NiidA, tmp.path());
    c.theory.enabled = true;
    c.theory.smoothness_probes = 20;
    c.checkpoint_every = 5;
    let s = harness::run(&c).unwrap();
    assert_eq!(s.failed_cells(), 0);
    for file in ["summary.json", "plot_accuracy.csv", "plot_load.csv", "config.toml"] {
        assert!(tmp.path().join(file).is_file(), "{file}");
    }
    let reparsed = parse_config(&fs::read_to_string(tmp.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(reparsed, c);

    let cell = harness::cell_dir(tmp.path(), Method::EdgeflowSeq, 0);
    let trace = parse_trace(&fs::read_to_string(cell.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 20);
    let sequence: Vec<usize> = trace.iter().map(|r| r.cluster_id.unwrap()).collect();
    assert_eq!(sequence, (0..20).map(|t| t % 10).collect::<Vec<_>>());
    let theta = ParamVector::read_from(fs::File::open(cell.join("checkpoints/theta_000020.bin")).unwrap()).unwrap();
    assert_eq!(theta.len(), c.model_spec().num_params());

    let report: TheoryReport = serde_json::from_reader(fs::File::open(cell.join("theory.json")).unwrap()).unwrap();
    let rows = harness::bound_report(tmp.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let row = rows.iter().find(|r| r.run_id == report.run_id).unwrap();
    assert_eq!(row.bound_total, report.breakdown.total);
    assert_eq!(row.lemma3_violations, 0);
    let cell_summary = s
        .cells
        .iter()
        .find(|x| x.method == Method::EdgeflowSeq)
        .unwrap();
    assert_eq!(row.recomputed_ratio_vs_fedavg, cell_summary.compression_ratio);
}

#[test]
fn ledger_totals_follow_the_round_formulas() {
    let tmp = tempfile::tempdir().unwrap();
    let c = quick(PartitionScheme::Iid, tmp.path());
    harness::run(&c).unwrap();
    let read = |m| {
        let f = fs::File::open(harness::cell_dir(tmp.path(), m, 0).join("ledger.csv")).unwrap();
        CommLedger::read_csv(f).unwrap()
    };
    let seq = read(Method::EdgeflowSeq);
    let p = c.model_spec().num_params() as u64;
    // simple topology: 10 uploads of one hop, migration edge-cloud-edge of two hops
    assert_eq!(seq.total(CommMethod::Edgeflow), 20 * 10 * p + 19 * 2 * p);
    assert_eq!(seq.total(CommMethod::Fedavg), 20 * 10 * 2 * p);
    assert_eq!(seq.total(CommMethod::HierFl), 20 * 11 * p);
    let fedavg = read(Method::Fedavg);
    assert!(!fedavg.has(CommMethod::Edgeflow));
    assert_eq!(fedavg.total(CommMethod::Fedavg), 20 * 10 * 2 * p);
}

#[test]
fn fedavg_only_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::NiidB, tmp.path());
    c.methods = vec![Method::Fedavg];
    c.theory.enabled = true;
    let s = harness::run(&c).unwrap();
    assert_eq!(s.methods.len(), 1);
    assert_eq!(s.cells[0].bound, None);
    assert_eq!(s.method(Method::Fedavg).unwrap().compression_ratio_mean, 1.0);
    assert!(!harness::cell_dir(tmp.path(), Method::EdgeflowSeq, 0).exists());
}

#[test]
fn diverging_cells_are_recorded_and_the_run_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::Iid, tmp.path());
    c.train.eta = 1e308;
    c.train.rounds = 3;
    let s = harness::run(&c).unwrap();
    assert_eq!(s.failed_cells(), 3);
    assert!(s.cells.iter().all(|cell| cell.error.as_deref().unwrap().contains("round")));
}

#[test]
fn sweep_over_cluster_size() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::NiidB, tmp.path());
    c.methods = vec![Method::EdgeflowSeq];
    c.train.rounds = 10;
    let (table, summaries) = harness::sweep(&c, SweepAxis::ClusterSize, &[5, 10, 20]).unwrap();
    assert_eq!(summaries.len(), 3);
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows.iter().filter(|r| r.best).count(), 1);
    let best = table.best_value(Method::EdgeflowSeq).unwrap();
    let best_acc = table.accuracy(Method::EdgeflowSeq, best).unwrap();
    assert!(table.rows.iter().all(|r| r.final_accuracy_mean <= best_acc));
    assert!(tmp.path().join("sweep_N_m.csv").is_file());
    let curves = fs::read_to_string(tmp.path().join("sweep_N_m_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 10);
    assert!(harness::sweep(&c, SweepAxis::ClusterSize, &[7]).is_err());
}

#[test]
fn sweep_over_local_steps_changes_drift_length() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::Iid, tmp.path());
    c.methods = vec![Method::EdgeflowRand];
    c.train.rounds = 4;
    let (_, summaries) = harness::sweep(&c, SweepAxis::LocalSteps, &[1, 3]).unwrap();
    for (s, k) in summaries.iter().zip([1, 3]) {
        let trace = fs::read_to_string(harness::cell_dir(&s.output_dir, Method::EdgeflowRand, 0).join("trace.csv")).unwrap();
        let records = parse_trace(&trace).unwrap();
        assert!(records.iter().all(|r| r.drift_trajectory.len() == k + 1));
    }
}

#[test]
fn mlp_models_run_through_the_harness() {
    let tmp = tempfile::tempdir().unwrap();
    let c = parse_config(&format!(
        "output_dir = {:?}\nmethods = [\"edgeflow_seq\"]\n[model]\nkind = \"mlp\"\nhidden_dims = [8]\n[train]\nrounds = 3\neta = 0.05\n[theory]\nsmoothness_probes = 10\n",
        tmp.path()
    ))
    .unwrap();
    assert_eq!(c.model_spec(), ModelSpec::mlp(20, vec![8], 10));
    let s = harness::run(&c).unwrap();
    assert_eq!(s.failed_cells(), 0);
    assert!(s.cells[0].bound.is_some());
}

#[test]
fn engine_respects_checkpoint_schedule_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(PartitionScheme::Iid, tmp.path());
    c.train.rounds = 7;
    let setup = setup_repeat(&c, 0).unwrap();
    let mut plan = setup.membership.clone();
    let out = setup
        .federation
        .run_edgeflow(&mut plan, &c.hyper_params(setup.seed), RunOptions { checkpoint_every: Some(3) })
        .unwrap();
    let at: Vec<usize> = out.checkpoints.iter().map(|(t, _)| *t).collect();
    assert_eq!(at, vec![0, 3, 6, 7]);
}

#[test]
fn config_errors_carry_line_numbers() {
    let err = parse_config("seed = 1\n[clusters]\nm = 7\n").unwrap_err();
    match err {
        Error::Parse { line, message } => {
            assert_eq!(line, 3);
            assert!(message.contains('7') && message.contains("100"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_config("[train]\nbogus = 1\n"), Err(Error::Parse { line: 2, .. })));
}
