//! Experiment orchestration: seeded cells, artifacts and summaries.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::data::{build_partition, export_shards_csv, make_synthetic_dataset, PartitionConfig, SyntheticTask};
use crate::engine::{ClusterPlan, Federation, RoundRecord, RunOptions, RunOutput, SchedulePolicy};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::theory::{
    bound_vs_empirical, check_lemma3, estimate_gradient_bounds, estimate_heterogeneity_max, estimate_optimum,
    estimate_smoothness, iid_bound, theorem1_bound, BoundBreakdown, BoundConstants, FederatedObjective,
    Lemma3Report, TheoryReport,
};
use crate::topology::{
    compare_builtin, compare_topology, compression_ratio, fedavg_load_for_clients, parse_topology,
    round_comm_load, CommLedger, CommMethod, LedgerEntry, RoundInfo, TopologyComparison, TopologyGraph,
    TopologyKind,
};

/// Environment variable that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "EDGEFLOW_OUTPUT_ROOT";

/// Where a config's artifacts go.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if config.output_dir.is_relative() => PathBuf::from(root).join(&config.output_dir),
        _ => config.output_dir.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub repeat: usize,
    pub seed: u64,
    /// Error message of a failed cell.
    pub error: Option<String>,
    pub final_accuracy: Option<f64>,
    pub rounds_to_threshold: Option<usize>,
    pub params_hop_units: u64,
    pub fedavg_params_hop_units: u64,
    pub compression_ratio: Option<f64>,
    pub bound: Option<BoundBreakdown>,
    pub lemma3: Option<Lemma3Report>,
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub rounds_to_threshold_mean: f64,
    pub params_hop_units_mean: f64,
    pub compression_ratio_mean: f64,
    pub bound: Option<BoundBreakdown>,
    pub lemma3_violations: usize,
    pub lemma3_max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellResult>,
    pub topologies: Vec<TopologyComparison>,
}

impl RunSummary {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Data, federation and fixed cluster membership of one repeat.
pub struct RepeatSetup {
    pub seed: u64,
    pub federation: Federation,
    pub membership: ClusterPlan,
    pub graph: TopologyGraph,
}

pub fn load_topology(config: &ExperimentConfig) -> Result<TopologyGraph> {
    let t = &config.topology;
    let graph = match (&t.file, t.kind) {
        (Some(path), _) => parse_topology(&fs::read_to_string(path)?)?,
        (None, TopologyKind::Custom) => return Err(Error::Config("a custom topology needs `file`".into())),
        (None, kind) => TopologyGraph::builtin(kind, t.size(), config.num_clusters())?,
    };
    if graph.num_clusters() < config.num_clusters() {
        return Err(Error::Topology(format!(
            "topology attaches {} clusters, the config has {}",
            graph.num_clusters(),
            config.num_clusters()
        )));
    }
    Ok(graph)
}

pub fn setup_repeat(config: &ExperimentConfig, repeat: usize) -> Result<RepeatSetup> {
    let seed = config.seed.wrapping_add(repeat as u64);
    let dspec = config.data.dataset_spec();
    let dataset = make_synthetic_dataset(&dspec, seed)?;
    let partition = PartitionConfig::named(config.partition.scheme, config.num_clients());
    let shards = build_partition(&partition, &dataset, config.shard_size(), seed)?;
    let eval = SyntheticTask::new(dspec, seed)?.sample(config.data.eval_per_class, 1);
    let federation = Federation::new(config.model_spec(), shards, eval)?;
    let membership = ClusterPlan::equal(
        config.num_clients(),
        config.num_clusters(),
        config.clusters.layout,
        config.fixed_policy(),
    )?;
    Ok(RepeatSetup {
        seed,
        federation,
        membership,
        graph: load_topology(config)?,
    })
}

/// Runs one method in one repeat.
pub fn run_method(config: &ExperimentConfig, setup: &RepeatSetup, method: Method) -> Result<(RunOutput, Option<ClusterPlan>)> {
    let hp = config.hyper_params(setup.seed);
    let opts = RunOptions {
        checkpoint_every: Some(config.checkpoint_every.max(1)),
    };
    match method {
        Method::Fedavg => Ok((setup.federation.run_fedavg(config.fedavg_sample_size(), &hp, opts)?, None)),
        Method::EdgeflowSeq | Method::EdgeflowRand => {
            let policy = if method == Method::EdgeflowSeq {
                config.fixed_policy()
            } else {
                SchedulePolicy::Random
            };
            let mut plan = ClusterPlan::from_membership(
                setup.membership.membership().to_vec(),
                setup.membership.num_clusters(),
                policy,
            )?;
            let out = setup.federation.run_edgeflow(&mut plan, &hp, opts)?;
            Ok((out, Some(plan)))
        }
    }
}

/// Per-round ledger. EdgeFLow cells also log what FedAvg and hierarchical
/// FL would have moved for the same cluster.
pub fn build_ledger(
    config: &ExperimentConfig,
    graph: &TopologyGraph,
    membership: &ClusterPlan,
    records: &[RoundRecord],
    model_size: usize,
) -> Result<CommLedger> {
    let opts = config.topology.load_options();
    let mut ledger = CommLedger::new();
    for (i, r) in records.iter().enumerate() {
        let uploads = r.participants.len() as u64;
        match r.cluster_id {
            None => {
                let homes: Vec<usize> = r.participants.iter().map(|&n| membership.cluster_of(n)).collect();
                ledger.record(LedgerEntry {
                    t: r.t,
                    method: CommMethod::Fedavg,
                    params_hop_units: fedavg_load_for_clients(graph, &homes, model_size, opts)?,
                    uploads,
                });
            }
            Some(m) => {
                let info = RoundInfo {
                    cluster: m,
                    next_cluster: records.get(i + 1).and_then(|n| n.cluster_id),
                    participants: r.participants.len(),
                };
                for method in [CommMethod::Edgeflow, CommMethod::HierFl, CommMethod::Fedavg] {
                    // hierarchical FL adds the edge-to-cloud upload
                    let extra = u64::from(method == CommMethod::HierFl);
                    ledger.record(LedgerEntry {
                        t: r.t,
                        method,
                        params_hop_units: round_comm_load(method, graph, info, model_size, opts)?,
                        uploads: uploads + extra,
                    });
                }
            }
        }
    }
    Ok(ledger)
}

fn own_method(method: Method) -> CommMethod {
    if method.is_edgeflow() {
        CommMethod::Edgeflow
    } else {
        CommMethod::Fedavg
    }
}

/// Round index (1-based count) at which accuracy first reaches 90% of its
/// final value.
pub fn rounds_to_threshold(records: &[RoundRecord]) -> Option<usize> {
    let target = 0.9 * records.last()?.eval_accuracy;
    records.iter().position(|r| r.eval_accuracy >= target).map(|i| i + 1)
}

/// Evenly spaced picks of `count` items, always including the last.
fn spread<T: Clone>(items: &[T], count: usize) -> Vec<T> {
    if items.len() <= count {
        return items.to_vec();
    }
    (0..count)
        .map(|i| items[(i + 1) * (items.len() - 1) / count].clone())
        .collect()
}

/// Bound analysis of one EdgeFLow run.
pub fn analyze_run(
    config: &ExperimentConfig,
    federation: &Federation,
    plan: &ClusterPlan,
    out: &RunOutput,
    seed: u64,
    run_id: &str,
) -> Result<TheoryReport> {
    let th = &config.theory;
    let hp = config.hyper_params(seed);
    let objective = FederatedObjective {
        spec: &federation.spec,
        shards: &federation.shards,
    };
    let checkpoints: Vec<ParamVector> = out.checkpoints.iter().map(|(_, p)| p.clone()).collect();
    let smoothness = estimate_smoothness(&objective, &checkpoints, th.smoothness_probes, th.smoothness_radius, seed)?;
    let points = spread(&checkpoints, th.gradient_points);
    let grads = estimate_gradient_bounds(
        &federation.spec,
        &federation.shards,
        &points,
        th.batches_per_point,
        hp.batch_size,
        seed,
    )?;
    let observed_g = out.records.iter().map(|r| r.per_client_grad_norm_sq_max).fold(0.0, f64::max);
    let g_sq = grads.g_sq.max(observed_g);
    let lambda_sq = estimate_heterogeneity_max(&federation.spec, &checkpoints, &federation.shards, plan)?;
    let f0 = out.records.first().map(|r| r.global_loss).unwrap_or(0.0);
    let run_min = out.records.iter().map(|r| r.global_loss).fold(f0, f64::min);
    let f_star = estimate_optimum(&objective, &out.final_params, th.optimum_steps, th.optimum_eta)?.min(run_min);
    let constants = BoundConstants {
        l: smoothness.l_hat,
        g_sq,
        sigma_sq: grads.sigma_sq,
        lambda_sq,
        cluster_sizes: plan.cluster_sizes(),
        f0,
        f_star,
        eta: hp.eta,
        k: hp.local_steps,
        t: out.records.len(),
    };
    let breakdown = theorem1_bound(&constants, &plan.sequence)?;
    let iid_breakdown = iid_bound(&constants, config.cluster_size())?;
    let lemma3 = check_lemma3(&out.records, hp.eta, g_sq);
    let comparison = bound_vs_empirical(&out.records, &breakdown)?;
    Ok(TheoryReport {
        run_id: run_id.to_string(),
        constants,
        smoothness,
        breakdown,
        iid_breakdown,
        lemma3,
        comparison,
        f_star_is_proxy: true,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// `t,method,cluster,loss,acc,params_hop_units`; `loss` and `acc` are the
/// held-out metrics after the round's update.
pub fn write_rounds_csv<W: Write>(writer: W, method: Method, records: &[RoundRecord], ledger: &CommLedger) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "method", "cluster", "loss", "acc", "params_hop_units"])?;
    let own = own_method(method);
    for r in records {
        w.write_record([
            r.t.to_string(),
            method.name().to_string(),
            r.cluster_id.map(|m| m.to_string()).unwrap_or_default(),
            r.eval_loss.to_string(),
            r.eval_accuracy.to_string(),
            ledger.round_units(r.t, own).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const TRACE_HEADER: [&str; 10] = [
    "t",
    "cluster",
    "participants",
    "global_loss",
    "global_grad_norm_sq",
    "eval_loss",
    "eval_accuracy",
    "per_client_grad_norm_sq_max",
    "params_uploaded",
    "drift",
];

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Full round records; list fields are space separated.
pub fn write_trace_csv<W: Write>(writer: W, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.cluster_id.map(|m| m.to_string()).unwrap_or_default(),
            join(&r.participants),
            r.global_loss.to_string(),
            r.global_grad_norm_sq.to_string(),
            r.eval_loss.to_string(),
            r.eval_accuracy.to_string(),
            r.per_client_grad_norm_sq_max.to_string(),
            r.params_uploaded.to_string(),
            join(&r.drift_trajectory),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trace_csv`].
pub fn parse_trace(text: &str) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", TRACE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |field: &str, value: &str| Error::Parse {
            line,
            message: format!("invalid {field} `{value}`"),
        };
        if row.len() != TRACE_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", TRACE_HEADER.len(), row.len()),
            });
        }
        let int = |k: usize| row[k].parse::<usize>().map_err(|_| bad(TRACE_HEADER[k], &row[k]));
        let real = |k: usize| {
            row[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(TRACE_HEADER[k], &row[k]))
        };
        let list_int = |k: usize| {
            row[k]
                .split_whitespace()
                .map(|v| v.parse::<usize>().map_err(|_| bad(TRACE_HEADER[k], v)))
                .collect::<Result<Vec<_>>>()
        };
        let drift = row[9]
            .split_whitespace()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("drift", v)))
            .collect::<Result<Vec<_>>>()?;
        out.push(RoundRecord {
            t: int(0)?,
            cluster_id: if row[1].is_empty() { None } else { Some(int(1)?) },
            participants: list_int(2)?,
            global_loss: real(3)?,
            global_grad_norm_sq: real(4)?,
            eval_loss: real(5)?,
            eval_accuracy: real(6)?,
            per_client_grad_norm_sq_max: real(7)?,
            params_uploaded: int(8)?,
            drift_trajectory: drift,
        });
    }
    Ok(out)
}

pub fn cell_dir(root: &Path, method: Method, repeat: usize) -> PathBuf {
    root.join("cells").join(method.name()).join(format!("rep{repeat}"))
}

fn run_cell(config: &ExperimentConfig, setup: &RepeatSetup, method: Method, repeat: usize, dir: &Path) -> Result<(CellResult, Vec<RoundRecord>)> {
    let (out, plan) = run_method(config, setup, method)?;
    let model_size = setup.federation.spec.num_params();
    let ledger = build_ledger(config, &setup.graph, &setup.membership, &out.records, model_size)?;
    fs::create_dir_all(dir)?;
    write_rounds_csv(create(&dir.join("rounds.csv"))?, method, &out.records, &ledger)?;
    ledger.write_csv(create(&dir.join("ledger.csv"))?)?;
    write_trace_csv(create(&dir.join("trace.csv"))?, &out.records)?;
    for (t, params) in &out.checkpoints {
        params.write_to(create(&dir.join("checkpoints").join(format!("theta_{t:06}.bin")))?)?;
    }
    let own = ledger.total(own_method(method));
    let fedavg = ledger.total(CommMethod::Fedavg);
    let mut cell = CellResult {
        method,
        repeat,
        seed: setup.seed,
        error: None,
        final_accuracy: out.final_accuracy(),
        rounds_to_threshold: rounds_to_threshold(&out.records),
        params_hop_units: own,
        fedavg_params_hop_units: fedavg,
        compression_ratio: compression_ratio(own, fedavg).ok(),
        bound: None,
        lemma3: None,
        slack: None,
    };
    if let (Some(plan), true, false) = (&plan, config.theory.enabled, out.records.is_empty()) {
        let run_id = format!("{}/rep{repeat}", method.name());
        let report = analyze_run(config, &setup.federation, plan, &out, setup.seed, &run_id)?;
        report.write_json(create(&dir.join("theory.json"))?)?;
        cell.bound = Some(report.breakdown);
        cell.slack = Some(report.comparison.slack);
        cell.lemma3 = Some(report.lemma3);
    }
    Ok((cell, out.records))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centered moving average; the window shrinks at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn summarize(method: Method, cells: &[CellResult]) -> MethodSummary {
    let done: Vec<&CellResult> = cells.iter().filter(|c| c.method == method && c.error.is_none()).collect();
    let failed = cells.iter().filter(|c| c.method == method && c.error.is_some()).count();
    let acc: Vec<f64> = done.iter().filter_map(|c| c.final_accuracy).collect();
    let (final_accuracy_mean, final_accuracy_std) = mean_std(&acc);
    let rtt: Vec<f64> = done.iter().filter_map(|c| c.rounds_to_threshold.map(|v| v as f64)).collect();
    let units: Vec<f64> = done.iter().map(|c| c.params_hop_units as f64).collect();
    let ratios: Vec<f64> = done.iter().filter_map(|c| c.compression_ratio).collect();
    let lemma: Vec<&Lemma3Report> = done.iter().filter_map(|c| c.lemma3.as_ref()).collect();
    MethodSummary {
        method,
        completed: done.len(),
        failed,
        final_accuracy_mean,
        final_accuracy_std,
        rounds_to_threshold_mean: mean_std(&rtt).0,
        params_hop_units_mean: mean_std(&units).0,
        compression_ratio_mean: mean_std(&ratios).0,
        bound: done.iter().find_map(|c| c.bound),
        lemma3_violations: lemma.iter().map(|l| l.violations.len()).sum(),
        lemma3_max_ratio: lemma.iter().map(|l| l.max_ratio).fold(0.0, f64::max),
    }
}

/// Runs every (method, repeat) cell and writes all artifacts under the
/// resolved output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    let root = resolve_output_dir(config);
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.toml"), config.to_toml())?;
    let mut cells = Vec::new();
    // curves[method][repeat] = accuracy per round
    let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); config.methods.len()];
    for repeat in 0..config.repeats {
        let setup = match setup_repeat(config, repeat) {
            Ok(s) => s,
            Err(e) => {
                log::error!("repeat {repeat}: {e}");
                for &method in &config.methods {
                    cells.push(failed_cell(method, repeat, config.seed.wrapping_add(repeat as u64), &e));
                }
                continue;
            }
        };
        if config.export_shards {
            let path = root.join("data").join(format!("rep{repeat}")).join("shards.csv");
            export_shards_csv(&setup.federation.shards, create(&path)?)?;
        }
        for (mi, &method) in config.methods.iter().enumerate() {
            let dir = cell_dir(&root, method, repeat);
            match run_cell(config, &setup, method, repeat, &dir) {
                Ok((cell, records)) => {
                    log::info!(
                        "{} rep{repeat}: final accuracy {:.4}",
                        method.name(),
                        cell.final_accuracy.unwrap_or(f64::NAN)
                    );
                    curves[mi].push(records.iter().map(|r| r.eval_accuracy).collect());
                    cells.push(cell);
                }
                Err(e) => {
                    log::error!("{} rep{repeat}: {e}", method.name());
                    cells.push(failed_cell(method, repeat, setup.seed, &e));
                }
            }
        }
    }
    write_accuracy_plot(&root.join("plot_accuracy.csv"), config, &curves)?;
    let topologies = topology_report(config)?;
    write_topology_csv(create(&root.join("plot_load.csv"))?, &topologies)?;
    let summary = RunSummary {
        output_dir: root.clone(),
        methods: config.methods.iter().map(|&m| summarize(m, &cells)).collect(),
        cells,
        topologies,
    };
    let mut w = create(&root.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.flush()?;
    Ok(summary)
}

fn failed_cell(method: Method, repeat: usize, seed: u64, e: &Error) -> CellResult {
    CellResult {
        method,
        repeat,
        seed,
        error: Some(e.to_string()),
        final_accuracy: None,
        rounds_to_threshold: None,
        params_hop_units: 0,
        fedavg_params_hop_units: 0,
        compression_ratio: None,
        bound: None,
        lemma3: None,
        slack: None,
    }
}

/// Mean accuracy over completed repeats per round, raw and smoothed.
fn mean_curve(runs: &[Vec<f64>], window: usize) -> (Vec<f64>, Vec<f64>) {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let mean: Vec<f64> = (0..len)
        .map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / runs.len() as f64)
        .collect();
    let smoothed = smooth(&mean, window);
    (mean, smoothed)
}

fn write_accuracy_plot(path: &Path, config: &ExperimentConfig, curves: &[Vec<Vec<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["round", "method", "acc_mean", "acc_smoothed"])?;
    for (&method, runs) in config.methods.iter().zip(curves) {
        let (mean, smoothed) = mean_curve(runs, config.smoothing_window);
        for (t, (m, s)) in mean.iter().zip(&smoothed).enumerate() {
            w.write_record([t.to_string(), method.name().into(), m.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One steady-state cycle per builtin topology, plus the configured file
/// topology when there is one.
pub fn topology_report(config: &ExperimentConfig) -> Result<Vec<TopologyComparison>> {
    let model_size = config.model_spec().num_params();
    let opts = config.topology.load_options();
    let mut rows = compare_builtin(config.topology.size(), config.num_clusters(), config.cluster_size(), model_size, opts)?;
    if config.topology.file.is_some() {
        let graph = load_topology(config)?;
        rows.push(compare_topology(&graph, config.cluster_size(), model_size, opts)?);
    }
    Ok(rows)
}

pub fn write_topology_csv<W: Write>(writer: W, rows: &[TopologyComparison]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["topology", "fedavg", "hier_fl", "edgeflow", "ratio_vs_fedavg", "ratio_vs_hier_fl"])?;
    for r in rows {
        w.write_record([
            r.kind.name().to_string(),
            r.fedavg.to_string(),
            r.hier_fl.to_string(),
            r.edgeflow.to_string(),
            r.ratio_vs_fedavg.to_string(),
            r.ratio_vs_hier_fl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Clients per cluster.
    #[serde(rename = "N_m")]
    ClusterSize,
    /// Local steps.
    #[serde(rename = "K")]
    LocalSteps,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "N_m" | "n_m" | "nm" | "cluster_size" => Some(SweepAxis::ClusterSize),
            "K" | "k" | "local_steps" => Some(SweepAxis::LocalSteps),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ClusterSize => "N_m",
            SweepAxis::LocalSteps => "K",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub method: Method,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    /// Highest mean accuracy of this method across the sweep.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn best_value(&self, method: Method) -> Option<usize> {
        self.rows.iter().find(|r| r.method == method && r.best).map(|r| r.value)
    }

    pub fn accuracy(&self, method: Method, value: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.value == value)
            .map(|r| r.final_accuracy_mean)
    }
}

/// The config with one axis set to `value`.
pub fn sweep_config(config: &ExperimentConfig, axis: SweepAxis, value: usize) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match axis {
        SweepAxis::ClusterSize => {
            if value == 0 || !c.num_clients().is_multiple_of(value) {
                return Err(Error::Config(format!(
                    "N_m = {value} does not divide N = {} clients",
                    c.num_clients()
                )));
            }
            c.clusters.size = Some(value);
            c.clusters.m = None;
            c.clusters.order = None;
            c.train.fedavg_sample_size = None;
        }
        SweepAxis::LocalSteps => {
            if value == 0 {
                return Err(Error::Config("K must be positive".into()));
            }
            c.train.local_steps = value;
        }
    }
    c.output_dir = config.output_dir.join(format!("sweep_{}_{value}", axis.name()));
    Ok(c)
}

/// Runs the config once per axis value; writes `sweep.csv` and the
/// per-value accuracy curves under the base output directory.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<(SweepTable, Vec<RunSummary>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| sweep_config(config, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (&value, c) in values.iter().zip(&configs) {
        let summary = run(c)?;
        for m in &summary.methods {
            rows.push(SweepRow {
                value,
                method: m.method,
                final_accuracy_mean: m.final_accuracy_mean,
                final_accuracy_std: m.final_accuracy_std,
                best: false,
            });
        }
        summaries.push(summary);
    }
    for &method in &config.methods {
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method == method && r.final_accuracy_mean.is_finite())
            .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
                Some((_, a)) if a >= r.final_accuracy_mean => acc,
                _ => Some((i, r.final_accuracy_mean)),
            });
        if let Some((i, _)) = best {
            rows[i].best = true;
        }
    }
    let table = SweepTable { axis, rows };
    let root = resolve_output_dir(config);
    let mut w = csv::Writer::from_writer(create(&root.join(format!("sweep_{}.csv", axis.name())))?);
    w.write_record([axis.name(), "method", "final_acc_mean", "final_acc_std", "best"])?;
    for r in &table.rows {
        w.write_record([
            r.value.to_string(),
            r.method.name().to_string(),
            r.final_accuracy_mean.to_string(),
            r.final_accuracy_std.to_string(),
            r.best.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&root.join(format!("sweep_{}_curves.csv", axis.name())))?);
    w.write_record([axis.name(), "round", "method", "acc_mean", "acc_smoothed"])?;
    for (&value, s) in values.iter().zip(&summaries) {
        let text = fs::read_to_string(s.output_dir.join("plot_accuracy.csv"))?;
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for row in r.records() {
            let row = row?;
            w.write_record([value.to_string(), row[0].into(), row[1].into(), row[2].into(), row[3].into()])?;
        }
    }
    w.flush()?;
    Ok((table, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReportRow {
    pub run_id: String,
    pub bound_total: f64,
    pub empirical_avg_grad_norm_sq: f64,
    pub slack: f64,
    pub valid: bool,
    pub lemma3_violations: usize,
    pub lemma3_max_ratio: f64,
    pub recomputed_ratio_vs_fedavg: Option<f64>,
}

/// Recomputes the bound comparison, drift check and compression ratio of
/// every cell under `run_dir` from its persisted files.
pub fn bound_report(run_dir: &Path) -> Result<Vec<BoundReportRow>> {
    let cells_root = run_dir.join("cells");
    let mut dirs = Vec::new();
    for method in fs::read_dir(&cells_root)? {
        let method = method?.path();
        if method.is_dir() {
            for rep in fs::read_dir(&method)? {
                let rep = rep?.path();
                if rep.join("theory.json").is_file() {
                    dirs.push(rep);
                }
            }
        }
    }
    dirs.sort();
    let mut rows = Vec::new();
    for dir in dirs {
        let report: TheoryReport = serde_json::from_reader(File::open(dir.join("theory.json"))?)?;
        let records = parse_trace(&fs::read_to_string(dir.join("trace.csv"))?)?;
        let bound = theorem1_bound(&report.constants, &records.iter().filter_map(|r| r.cluster_id).collect::<Vec<_>>())?;
        let cmp = bound_vs_empirical(&records, &bound)?;
        let lemma = check_lemma3(&records, report.constants.eta, report.constants.g_sq);
        let ratio = match File::open(dir.join("ledger.csv")) {
            Ok(f) => {
                let ledger = CommLedger::read_csv(f)?;
                compression_ratio(ledger.total(CommMethod::Edgeflow), ledger.total(CommMethod::Fedavg)).ok()
            }
            Err(_) => None,
        };
        rows.push(BoundReportRow {
            run_id: report.run_id,
            bound_total: bound.total,
            empirical_avg_grad_norm_sq: cmp.empirical_avg_grad_norm_sq,
            slack: cmp.slack,
            valid: cmp.valid,
            lemma3_violations: lemma.violations.len(),
            lemma3_max_ratio: lemma.max_ratio,
            recomputed_ratio_vs_fedavg: ratio,
        });
    }
    Ok(rows)
}
