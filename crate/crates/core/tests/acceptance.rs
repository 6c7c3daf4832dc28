//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! straight to stderr so it shows up without `--nocapture`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgeflow::config::{ExperimentConfig, Method};
use edgeflow::data::PartitionScheme;
use edgeflow::engine::{
    aggregate_cluster, average_models, local_train, ClusterLayout, ClusterPlan, RunOptions, SchedulePolicy,
};
use edgeflow::harness::{self, setup_repeat};
use edgeflow::model::{forward_loss, gradient, Batch, ModelSpec};
use edgeflow::theory::{
    check_lemma3, estimate_heterogeneity_max, iid_bound, theorem1_bound, BoundConstants,
};
use edgeflow::topology::{
    compare_builtin, compression_ratio, round_comm_load, CommMethod, LoadOptions, RoundInfo, TopologyGraph,
    TopologyKind, TopologySize,
};
use edgeflow::ParamVector;

fn report(n: usize, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let within = elapsed < limit;
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    let line = format!(
        "acceptance {n} [{name}]: {verdict} ({detail}; {:.2}s of {:.0}s)\n",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "acceptance {n} failed: {detail}");
    assert!(within, "acceptance {n} exceeded {:?}: {:?}", limit, elapsed);
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize, n: usize) -> Batch {
    let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(dim, features, labels).unwrap()
}

fn close(a: f64, b: f64, digits: i32) -> bool {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale < 0.5 * 10f64.powi(1 - digits)
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [ModelSpec::linear_softmax(6, 4), ModelSpec::mlp(6, vec![5, 3], 4)];
    let h = 1e-5;
    let mut probes = [0usize; 2];
    let mut worst = 0.0f64;
    let mut ok = true;
    for (s, spec) in specs.iter().enumerate() {
        for _ in 0..10 {
            let params = ParamVector::from_vec((0..spec.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let batch = random_batch(&mut rng, 6, 4, 8);
            let g = gradient(spec, &params, &batch).unwrap();
            for _ in 0..12 {
                let i = rng.random_range(0..spec.num_params());
                let mut plus = params.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = params.clone();
                minus.as_mut_slice()[i] -= h;
                let fd = (forward_loss(spec, &plus, &batch).unwrap() - forward_loss(spec, &minus, &batch).unwrap())
                    / (2.0 * h);
                let gi = g.as_slice()[i];
                let tol = (1e-3 * gi.abs()).max(1e-4);
                worst = worst.max((fd - gi).abs() / tol);
                ok &= (fd - gi).abs() <= tol;
                probes[s] += 1;
            }
        }
    }
    ok &= probes.iter().all(|&p| p >= 100);
    let detail = format!("{} linear + {} mlp probes, worst error/tol {worst:.3}", probes[0], probes[1]);
    report(1, "gradient correctness", ok, start.elapsed(), Duration::from_secs(10), &detail);
}

fn small_config(scheme: PartitionScheme) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.partition.scheme = scheme;
    c.theory.enabled = false;
    c
}

#[test]
fn criterion_2_protocol_identities() {
    let start = Instant::now();
    let c = small_config(PartitionScheme::NiidB);
    let setup = setup_repeat(&c, 0).unwrap();
    let fed = &setup.federation;
    let hp = c.hyper_params(setup.seed);

    // (a) gradient-sum aggregation against the plain model average
    let theta = fed.initial_params(setup.seed);
    let mut worst = 0.0f64;
    for m in 0..setup.membership.num_clusters() {
        let updates: Vec<_> = setup
            .membership
            .members(m)
            .into_iter()
            .map(|n| local_train(&fed.spec, &theta, &fed.shards[n], &hp, m).unwrap())
            .collect();
        let sums: Vec<ParamVector> = updates.iter().map(|u| u.grad_sum.clone()).collect();
        let finals: Vec<ParamVector> = updates.iter().map(|u| u.final_params.clone()).collect();
        let agg = aggregate_cluster(&theta, &sums, hp.eta).unwrap();
        let avg = average_models(&finals).unwrap();
        let gap = agg
            .as_slice()
            .iter()
            .zip(avg.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
    }

    // (b) one cluster holding everyone against full-participation FedAvg
    let hp20 = edgeflow::engine::HyperParams { rounds: 20, ..hp };
    let n = fed.num_clients();
    let mut single = ClusterPlan::from_membership(vec![0; n], 1, SchedulePolicy::cyclic(1)).unwrap();
    let ef = fed.run_edgeflow(&mut single, &hp20, RunOptions::default()).unwrap();
    let fa = fed.run_fedavg(n, &hp20, RunOptions::default()).unwrap();
    let bitwise = ef.final_params.to_bytes() == fa.final_params.to_bytes()
        && ef
            .records
            .iter()
            .zip(&fa.records)
            .all(|(a, b)| a.global_loss.to_bits() == b.global_loss.to_bits());

    let ok = worst <= 1e-12 && bitwise && ef.records.len() == 20;
    let detail = format!("max |agg - avg| = {worst:.2e}, M=1 bitwise equal over T=20: {bitwise}");
    report(2, "protocol identities", ok, start.elapsed(), Duration::from_secs(30), &detail);
}

#[test]
fn criterion_3_lemma3_oracle() {
    let start = Instant::now();
    let mut c = small_config(PartitionScheme::NiidB);
    c.train.rounds = 50;
    c.train.local_steps = 5;
    let setup = setup_repeat(&c, 0).unwrap();
    let hp = c.hyper_params(setup.seed);
    let mut plan = setup.membership.clone();
    let out = setup.federation.run_edgeflow(&mut plan, &hp, RunOptions::default()).unwrap();
    let g_sq = out.records.iter().map(|r| r.per_client_grad_norm_sq_max).fold(0.0, f64::max);

    // independent recount of the drift inequality
    let mut oracle_violations = 0;
    for r in &out.records {
        for (k, &d) in r.drift_trajectory.iter().enumerate() {
            let bound = (k * k) as f64 * hp.eta * hp.eta * g_sq;
            if d > bound * (1.0 + 1e-9) {
                oracle_violations += 1;
            }
        }
    }
    let lemma = check_lemma3(&out.records, hp.eta, g_sq);
    let sizes_ok = plan.cluster_sizes().iter().all(|&s| s == 10);
    let ok = lemma.violations.is_empty() && oracle_violations == 0 && lemma.checked == 50 * 6 && sizes_ok;
    let detail = format!(
        "{} checks, {} violations (oracle {}), max ratio {:.4}",
        lemma.checked,
        lemma.violations.len(),
        oracle_violations,
        lemma.max_ratio
    );
    report(3, "drift bound oracle", ok, start.elapsed(), Duration::from_secs(120), &detail);
}

fn worked_example() -> BoundConstants {
    BoundConstants {
        l: 1.0,
        g_sq: 1.0,
        sigma_sq: 1.0,
        lambda_sq: vec![0.2; 10],
        cluster_sizes: vec![10; 10],
        f0: 1.0,
        f_star: 0.0,
        eta: 0.01,
        k: 5,
        t: 100,
    }
}

fn cyclic_schedule(m: usize, t: usize) -> Vec<usize> {
    (0..t).map(|i| i % m).collect()
}

#[test]
fn criterion_4_bound_numeric() {
    let start = Instant::now();
    let c = worked_example();
    let b = theorem1_bound(&c, &cyclic_schedule(10, 100)).unwrap();
    // hand arithmetic: 4/(5*0.01*100), 2*0.2, 2*(1*0.01*1/10), 4*1*25*1e-4*1/3
    let expected = [0.8, 0.4, 0.002, 0.01 / 3.0];
    let got = [b.term_init, b.term_hetero, b.term_variance, b.term_drift];
    let mut ok = expected.iter().zip(&got).all(|(e, g)| close(*e, *g, 6));
    ok &= close(b.total, 1.205333, 6) && b.valid;
    let mut detail = format!("total {:.6}", b.total);

    let tmp = tempfile::tempdir().unwrap();
    for scheme in [PartitionScheme::Iid, PartitionScheme::NiidB] {
        let mut cfg = small_config(scheme);
        cfg.theory.enabled = true;
        cfg.train.rounds = 100;
        cfg.repeats = 1;
        cfg.methods = vec![Method::EdgeflowSeq];
        cfg.output_dir = tmp.path().join(scheme.name());
        let summary = harness::run(&cfg).unwrap();
        let cell = &summary.cells[0];
        let bound = cell.bound.expect("theory enabled");
        let slack = cell.slack.unwrap();
        ok &= cell.error.is_none() && bound.lk_eta < 1.0 && slack >= 0.0;
        detail.push_str(&format!(", {} LK eta {:.3} slack {:.4}", scheme.name(), bound.lk_eta, slack));
    }
    report(4, "bound numeric", ok, start.elapsed(), Duration::from_secs(300), &detail);
}

#[test]
fn criterion_5_iid_degeneracy() {
    let start = Instant::now();
    let mut c = small_config(PartitionScheme::Iid);
    c.clusters.layout = ClusterLayout::Strided;
    c.train.rounds = 50;
    let iid = setup_repeat(&c, 0).unwrap();
    c.partition.scheme = PartitionScheme::NiidB;
    let niid = setup_repeat(&c, 0).unwrap();

    let mut plan = iid.membership.clone();
    let out = iid
        .federation
        .run_edgeflow(&mut plan, &c.hyper_params(iid.seed), RunOptions { checkpoint_every: Some(10) })
        .unwrap();
    let mut checkpoints: Vec<ParamVector> = out.checkpoints.into_iter().map(|(_, p)| p).collect();
    checkpoints.push(ParamVector::zeros(iid.federation.spec.num_params()));
    let spec = &iid.federation.spec;
    let lam_iid = estimate_heterogeneity_max(spec, &checkpoints, &iid.federation.shards, &plan).unwrap();
    let lam_niid = estimate_heterogeneity_max(spec, &checkpoints, &niid.federation.shards, &plan).unwrap();
    let mut ok = lam_iid.iter().zip(&lam_niid).all(|(a, b)| *a <= 1e-2 * b);
    let worst = lam_iid.iter().zip(&lam_niid).map(|(a, b)| a / b).fold(0.0, f64::max);

    let mut zeroed = worked_example();
    zeroed.lambda_sq = vec![0.0; 10];
    let full = theorem1_bound(&zeroed, &cyclic_schedule(10, 100)).unwrap();
    let reduced = iid_bound(&zeroed, 10).unwrap();
    let termwise = full.term_init == reduced.term_init
        && full.term_variance == reduced.term_variance
        && full.term_drift == reduced.term_drift
        && full.term_hetero == 0.0
        && reduced.term_hetero == 0.0
        && full.total == reduced.total;
    ok &= termwise;
    let detail = format!("max IID/NIID_B heterogeneity ratio {worst:.2e}, zeroed forms equal term-wise: {termwise}");
    report(5, "IID degeneracy", ok, start.elapsed(), Duration::from_secs(300), &detail);
}

#[test]
fn criterion_6_accuracy_ordering() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for scheme in [PartitionScheme::NiidA, PartitionScheme::NiidB, PartitionScheme::Iid] {
        let mut c = small_config(scheme);
        c.repeats = 3;
        c.train.rounds = 100;
        c.output_dir = tmp.path().join(scheme.name());
        let s = harness::run(&c).unwrap();
        assert_eq!(s.failed_cells(), 0);
        let acc = |m| s.method(m).unwrap().final_accuracy_mean;
        let (fa, seq, rnd) = (acc(Method::Fedavg), acc(Method::EdgeflowSeq), acc(Method::EdgeflowRand));
        match scheme {
            PartitionScheme::Iid => ok &= (seq - fa).abs() <= 0.02 && (rnd - fa).abs() <= 0.02,
            _ => {
                ok &= seq >= fa - 0.01 && rnd >= fa - 0.01;
                if scheme == PartitionScheme::NiidB {
                    ok &= seq > fa || rnd > fa;
                }
            }
        }
        detail.push(format!("{} fedavg {fa:.4} seq {seq:.4} rand {rnd:.4}", scheme.name()));
    }
    report(6, "accuracy ordering", ok, start.elapsed(), Duration::from_secs(900), &detail.join(", "));
}

#[test]
fn criterion_7_communication_accounting() {
    let start = Instant::now();
    let size = TopologySize { edges: 4, depth: 4, branching: 4 };
    let graph = TopologyGraph::builtin(TopologyKind::DepthLinear, size, 4).unwrap();
    let opts = LoadOptions::default();
    let info = RoundInfo {
        cluster: 0,
        next_cluster: Some(1),
        participants: 10,
    };
    let fedavg = round_comm_load(CommMethod::Fedavg, &graph, info, 1, opts).unwrap();
    let edgeflow = round_comm_load(CommMethod::Edgeflow, &graph, info, 1, opts).unwrap();
    let ratio = compression_ratio(edgeflow, fedavg).unwrap();
    let mut ok = graph.uplink_hops(0).unwrap() == 4 && fedavg == 50 && edgeflow == 11 && (ratio - 0.22).abs() < 1e-12;

    let defaults = ExperimentConfig::default();
    let rows = compare_builtin(
        defaults.topology.size(),
        defaults.num_clusters(),
        defaults.cluster_size(),
        1,
        defaults.topology.load_options(),
    )
    .unwrap();
    let ratio_of = |k| rows.iter().find(|r| r.kind == k).unwrap().ratio_vs_fedavg;
    ok &= ratio_of(TopologyKind::DepthLinear) < ratio_of(TopologyKind::BreadthParallel);
    let ef: u64 = rows.iter().map(|r| r.edgeflow).sum();
    let fa: u64 = rows.iter().map(|r| r.fedavg).sum();
    let reduction = 1.0 - ef as f64 / fa as f64;
    ok &= (0.5..=0.8).contains(&reduction);
    let detail = format!("worked example {fedavg}/{edgeflow} ratio {ratio:.2}, overall reduction {:.1}%", 100.0 * reduction);
    report(7, "communication accounting", ok, start.elapsed(), Duration::from_secs(5), &detail);
}

#[test]
fn criterion_8_bound_shape() {
    let start = Instant::now();
    let base = worked_example();
    let total = |c: &BoundConstants| theorem1_bound(c, &cyclic_schedule(10, c.t)).unwrap().total;

    let by_t: Vec<f64> = [10, 50, 100, 200, 400, 1000]
        .iter()
        .map(|&t| total(&BoundConstants { t, ..base.clone() }))
        .collect();
    let by_n: Vec<f64> = [1, 2, 5, 10, 20, 50]
        .iter()
        .map(|&n| {
            total(&BoundConstants {
                cluster_sizes: vec![n; 10],
                ..base.clone()
            })
        })
        .collect();
    let by_k: Vec<f64> = (1..=50).map(|k| total(&BoundConstants { k, ..base.clone() })).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let argmin = by_k
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let interior = argmin > 0 && argmin < by_k.len() - 1;
    let ok = decreasing(&by_t) && decreasing(&by_n) && interior;
    let detail = format!("T and N_m strictly decreasing, K minimum at K={}", argmin + 1);
    report(8, "bound shape", ok, start.elapsed(), Duration::from_secs(1), &detail);
}

fn metric_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_9_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(PartitionScheme::NiidA);
    c.train.rounds = 40;
    c.repeats = 2;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        c.output_dir = tmp.path().join(name);
        harness::run(&c).unwrap();
        runs.push(metric_files(&c.output_dir));
    }
    let ok = !runs[0].is_empty() && runs[0] == runs[1];
    let detail = format!("{} metrics CSVs compared byte for byte", runs[0].len());
    report(9, "determinism", ok, start.elapsed(), Duration::from_secs(120), &detail);
}
