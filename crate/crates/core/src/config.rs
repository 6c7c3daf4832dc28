//! Experiment configuration files.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, PartitionScheme};
use crate::engine::{ClusterLayout, HyperParams, LocalWork, SchedulePolicy};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::topology::{LoadOptions, TopologyKind, TopologySize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedavg,
    EdgeflowSeq,
    EdgeflowRand,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fedavg, Method::EdgeflowSeq, Method::EdgeflowRand];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fedavg => "fedavg",
            Method::EdgeflowSeq => "edgeflow_seq",
            Method::EdgeflowRand => "edgeflow_rand",
        }
    }

    pub fn is_edgeflow(self) -> bool {
        self != Method::Fedavg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_dims: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            hidden_dims: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    /// Held-out samples per class.
    pub eval_per_class: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            num_classes: d.num_classes,
            input_dim: d.input_dim,
            samples_per_class: d.samples_per_class,
            class_separation: d.class_separation,
            noise_std: d.noise_std,
            eval_per_class: 100,
        }
    }
}

impl DataSection {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            samples_per_class: self.samples_per_class,
            class_separation: self.class_separation,
            noise_std: self.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// Samples per client; defaults to eight ninths of the data split
    /// evenly, leaving room for the non-IID major classes.
    pub shard_size: Option<usize>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            scheme: PartitionScheme::Iid,
            num_clients: 100,
            shard_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Number of clusters M.
    pub m: Option<usize>,
    /// Clients per cluster N_m.
    pub size: Option<usize>,
    pub layout: ClusterLayout,
    /// Visiting order of the fixed-sequence policy.
    pub order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub eta: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub local_work: LocalWork,
    /// Clients FedAvg samples per round; defaults to the cluster size.
    pub fedavg_sample_size: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            eta: hp.eta,
            local_steps: hp.local_steps,
            rounds: hp.rounds,
            batch_size: hp.batch_size,
            local_work: hp.local_work,
            fedavg_sample_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub edges: usize,
    pub depth: usize,
    pub branching: usize,
    /// Topology file, required for `kind = "custom"`.
    pub file: Option<PathBuf>,
    pub include_downloads: bool,
    pub cloud_transit: bool,
}

impl Default for TopologySection {
    fn default() -> Self {
        let s = TopologySize::default();
        Self {
            kind: TopologyKind::Simple,
            edges: s.edges,
            depth: s.depth,
            branching: s.branching,
            file: None,
            include_downloads: false,
            cloud_transit: false,
        }
    }
}

impl TopologySection {
    pub fn size(&self) -> TopologySize {
        TopologySize {
            edges: self.edges,
            depth: self.depth,
            branching: self.branching,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            include_downloads: self.include_downloads,
            cloud_transit: self.cloud_transit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub enabled: bool,
    pub smoothness_probes: usize,
    pub smoothness_radius: f64,
    /// Checkpoints sampled for the gradient bounds.
    pub gradient_points: usize,
    pub batches_per_point: usize,
    /// Full-batch descent steps for the `F*` proxy.
    pub optimum_steps: usize,
    pub optimum_eta: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            enabled: true,
            smoothness_probes: 200,
            smoothness_radius: 0.5,
            gradient_points: 3,
            batches_per_point: 8,
            optimum_steps: 300,
            optimum_eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    /// Rounds between parameter checkpoints.
    pub checkpoint_every: usize,
    /// Centered moving-average window of the summary curves; 1 disables.
    pub smoothing_window: usize,
    pub export_shards: bool,
    pub model: ModelSection,
    pub data: DataSection,
    pub partition: PartitionSection,
    pub clusters: ClusterSection,
    pub train: TrainSection,
    pub topology: TopologySection,
    pub theory: TheorySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 10,
            smoothing_window: 5,
            export_shards: false,
            model: ModelSection::default(),
            data: DataSection::default(),
            partition: PartitionSection::default(),
            clusters: ClusterSection::default(),
            train: TrainSection::default(),
            topology: TopologySection::default(),
            theory: TheorySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn num_clients(&self) -> usize {
        self.partition.num_clients
    }

    /// Number of clusters M; defaults to 10 when neither M nor N_m is set.
    pub fn num_clusters(&self) -> usize {
        match (self.clusters.m, self.clusters.size) {
            (Some(m), _) => m,
            (None, Some(s)) if s > 0 => self.num_clients() / s,
            _ => 10,
        }
    }

    /// Clients per cluster N_m.
    pub fn cluster_size(&self) -> usize {
        self.num_clients() / self.num_clusters().max(1)
    }

    pub fn fedavg_sample_size(&self) -> usize {
        self.train.fedavg_sample_size.unwrap_or_else(|| self.cluster_size())
    }

    pub fn shard_size(&self) -> usize {
        self.partition.shard_size.unwrap_or_else(|| {
            let total = self.data.samples_per_class * self.data.num_classes;
            total * 8 / 9 / self.num_clients().max(1)
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model.kind {
            ModelKind::LinearSoftmax => ModelSpec::linear_softmax(self.data.input_dim, self.data.num_classes),
            ModelKind::Mlp => ModelSpec::mlp(self.data.input_dim, self.model.hidden_dims.clone(), self.data.num_classes),
        }
    }

    pub fn hyper_params(&self, seed: u64) -> HyperParams {
        HyperParams {
            eta: self.train.eta,
            local_steps: self.train.local_steps,
            rounds: self.train.rounds,
            batch_size: self.train.batch_size,
            seed,
            local_work: self.train.local_work,
        }
    }

    pub fn fixed_policy(&self) -> SchedulePolicy {
        match &self.clusters.order {
            Some(order) => SchedulePolicy::FixedSequence { order: order.clone() },
            None => SchedulePolicy::cyclic(self.num_clusters()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks cross-field constraints; `text` supplies line numbers.
    fn validate(&self, text: &str) -> Result<()> {
        let fail = |section: Option<&str>, key: &str, message: String| Error::Parse {
            line: key_line(text, section, key),
            message,
        };
        if self.repeats == 0 {
            return Err(fail(None, "repeats", "repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(fail(None, "methods", "at least one method is required".into()));
        }
        let n = self.num_clients();
        if n == 0 {
            return Err(fail(Some("partition"), "num_clients", "num_clients must be positive".into()));
        }
        match (self.clusters.m, self.clusters.size) {
            (Some(0), _) => return Err(fail(Some("clusters"), "m", "m must be positive".into())),
            (_, Some(0)) => return Err(fail(Some("clusters"), "size", "size must be positive".into())),
            (Some(m), Some(s)) if m * s != n => {
                return Err(fail(
                    Some("clusters"),
                    "size",
                    format!("m = {m} clusters of size {s} do not cover N = {n} clients"),
                ))
            }
            (Some(m), _) if !n.is_multiple_of(m) => {
                return Err(fail(
                    Some("clusters"),
                    "m",
                    format!("M = {m} does not divide N = {n} clients into equal clusters"),
                ))
            }
            (None, Some(s)) if !n.is_multiple_of(s) => {
                return Err(fail(
                    Some("clusters"),
                    "size",
                    format!("cluster size N_m = {s} does not divide N = {n} clients"),
                ))
            }
            _ => {}
        }
        if self.clusters.m.is_none() && self.clusters.size.is_none() && !n.is_multiple_of(10) {
            return Err(fail(
                Some("partition"),
                "num_clients",
                format!("the default M = 10 does not divide N = {n}; set [clusters] m or size"),
            ));
        }
        if let Some(order) = &self.clusters.order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..self.num_clusters()).collect::<Vec<_>>() {
                return Err(fail(
                    Some("clusters"),
                    "order",
                    format!("order {order:?} is not a permutation of 0..{}", self.num_clusters()),
                ));
            }
        }
        let hp = self.hyper_params(self.seed);
        if !(hp.eta.is_finite() && hp.eta > 0.0) {
            return Err(fail(Some("train"), "eta", format!("eta must be positive, got {}", hp.eta)));
        }
        if hp.local_steps == 0 {
            return Err(fail(Some("train"), "local_steps", "local_steps must be at least 1".into()));
        }
        if hp.batch_size == 0 {
            return Err(fail(Some("train"), "batch_size", "batch_size must be at least 1".into()));
        }
        if self.shard_size() < hp.batch_size {
            return Err(fail(
                Some("train"),
                "batch_size",
                format!("batch_size {} exceeds the shard size {}", hp.batch_size, self.shard_size()),
            ));
        }
        let fs = self.fedavg_sample_size();
        if fs == 0 || fs > n {
            return Err(fail(
                Some("train"),
                "fedavg_sample_size",
                format!("fedavg_sample_size {fs} outside 1..={n}"),
            ));
        }
        if let Err(e) = self.data.dataset_spec().validate() {
            return Err(fail(Some("data"), "", e.to_string()));
        }
        if self.data.eval_per_class == 0 {
            return Err(fail(Some("data"), "eval_per_class", "eval_per_class must be positive".into()));
        }
        if let Err(e) = self.model_spec().validate() {
            return Err(fail(Some("model"), "hidden_dims", e.to_string()));
        }
        if self.topology.kind == TopologyKind::Custom && self.topology.file.is_none() {
            return Err(fail(Some("topology"), "kind", "a custom topology needs `file`".into()));
        }
        if self.smoothing_window == 0 {
            return Err(fail(None, "smoothing_window", "smoothing_window must be at least 1".into()));
        }
        let th = &self.theory;
        if th.enabled
            && (th.smoothness_probes == 0
                || !(th.smoothness_radius.is_finite() && th.smoothness_radius > 0.0)
                || th.batches_per_point < 2
                || th.gradient_points == 0
                || !(th.optimum_eta.is_finite() && th.optimum_eta > 0.0))
        {
            return Err(fail(
                Some("theory"),
                "",
                "theory needs probes >= 1, radius > 0, gradient_points >= 1, batches_per_point >= 2 and optimum_eta > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Line of `key = ...` inside `[section]` (top level when `None`), falling
/// back to the section header, then to line 1.
fn key_line(text: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            if current.as_deref() == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current.as_deref() == section && !key.is_empty() {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    header_line.unwrap_or(1)
}

/// Parses and validates an experiment file; missing keys take defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::from_toml(text, e))?;
    config.validate(text)?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.num_clients(), 100);
        assert_eq!(c.num_clusters(), 10);
        assert_eq!(c.cluster_size(), 10);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.local_steps, 5);
        assert_eq!(c.train.rounds, 200);
        assert_eq!(c.shard_size(), 80);
        assert_eq!(c.fedavg_sample_size(), 10);
    }

    #[test]
    fn cluster_count_sets_cluster_size() {
        let c = parse_config("[clusters]\nm = 10\n").unwrap();
        assert_eq!(c.cluster_size(), 10);
        let c = parse_config("[clusters]\nsize = 20\n").unwrap();
        assert_eq!(c.num_clusters(), 5);
    }

    #[test]
    fn non_divisible_cluster_count_names_both_values() {
        let text = "seed = 1\n\n[clusters]\nm = 7\n";
        match parse_config(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains('7') && message.contains("100"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_type_errors_carry_lines() {
        match parse_config("seed = 1\n[train]\netaa = 0.1\n") {
            Err(Error::Parse { line: 3, message }) => assert!(message.contains("etaa"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config("[train]\nrounds = \"many\"\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_config("[train]\neta = -1.0\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config("methods = [\"gossip\"]\n").is_err());
        assert!(parse_config("methods = []\n").is_err());
        assert!(parse_config("[clusters]\nm = 4\norder = [0, 1, 2, 2]\n").is_err());
        assert!(parse_config("[topology]\nkind = \"custom\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.partition.scheme = PartitionScheme::NiidB;
        c.clusters.m = Some(5);
        c.clusters.layout = ClusterLayout::Strided;
        c.methods = vec![Method::EdgeflowSeq];
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn key_lines() {
        let text = "a = 1\n[x]\nb = 2\n[y]\nb = 3\n";
        assert_eq!(key_line(text, None, "a"), 1);
        assert_eq!(key_line(text, Some("y"), "b"), 5);
        assert_eq!(key_line(text, Some("y"), "zzz"), 4);
        assert_eq!(key_line(text, Some("q"), "b"), 1);
    }
}
