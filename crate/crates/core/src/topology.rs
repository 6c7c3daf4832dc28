//! Edge-network graphs and hop-weighted upload accounting.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Simple,
    BreadthParallel,
    DepthLinear,
    Hybrid,
    Custom,
}

impl TopologyKind {
    pub const BUILTIN: [TopologyKind; 4] = [
        TopologyKind::Simple,
        TopologyKind::BreadthParallel,
        TopologyKind::DepthLinear,
        TopologyKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Simple => "simple",
            TopologyKind::BreadthParallel => "breadth_parallel",
            TopologyKind::DepthLinear => "depth_linear",
            TopologyKind::Hybrid => "hybrid",
            TopologyKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Cloud,
    /// Base station that clusters attach to.
    Edge,
    /// Forwarding-only node such as a gateway.
    Relay,
}

/// Size parameters of the generated topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySize {
    pub edges: usize,
    pub depth: usize,
    pub branching: usize,
}

impl Default for TopologySize {
    fn default() -> Self {
        Self {
            edges: 4,
            depth: 4,
            branching: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    kind: TopologyKind,
    names: Vec<String>,
    roles: Vec<NodeRole>,
    adjacency: Vec<Vec<usize>>,
    links: Vec<(usize, usize)>,
    /// Edge node of every cluster.
    attachments: Vec<usize>,
    cloud: usize,
}

impl TopologyGraph {
    pub fn new(
        kind: TopologyKind,
        nodes: Vec<(String, NodeRole)>,
        links: &[(String, String)],
        attachments: &[String],
    ) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (name, _)) in nodes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Topology("empty node name".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Topology(format!("duplicate node `{name}`")));
            }
        }
        let clouds: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].1 == NodeRole::Cloud)
            .collect();
        if clouds.len() != 1 {
            return Err(Error::Topology(format!(
                "expected exactly one cloud node, found {}",
                clouds.len()
            )));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Topology(format!("unknown node `{name}`")))
        };
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut link_ids = Vec::with_capacity(links.len());
        for (a, b) in links {
            let (i, j) = (lookup(a)?, lookup(b)?);
            if i == j {
                return Err(Error::Topology(format!("self-loop on `{a}`")));
            }
            if adjacency[i].contains(&j) {
                return Err(Error::Topology(format!("duplicate link `{a}`-`{b}`")));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
            link_ids.push((i, j));
        }
        let mut attach = Vec::with_capacity(attachments.len());
        for (m, name) in attachments.iter().enumerate() {
            let i = lookup(name)?;
            if nodes[i].1 != NodeRole::Edge {
                return Err(Error::Topology(format!(
                    "cluster {m} attaches to `{name}`, which is not an edge node"
                )));
            }
            attach.push(i);
        }
        let (names, roles): (Vec<String>, Vec<NodeRole>) = nodes.into_iter().unzip();
        let graph = Self {
            kind,
            names,
            roles,
            adjacency,
            links: link_ids,
            attachments: attach,
            cloud: clouds[0],
        };
        let reach = graph.distances(graph.cloud, None);
        if let Some(i) = reach.iter().position(Option::is_none) {
            return Err(Error::Disconnected {
                from: graph.names[graph.cloud].clone(),
                to: graph.names[i].clone(),
            });
        }
        Ok(graph)
    }

    /// Generated topology; clusters attach round-robin to the edge nodes
    /// in their listed order.
    pub fn builtin(kind: TopologyKind, size: TopologySize, num_clusters: usize) -> Result<Self> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::Topology(format!("{what} must be positive")))
            } else {
                Ok(v)
            }
        };
        let cloud = "cloud".to_string();
        let mut nodes = vec![(cloud.clone(), NodeRole::Cloud)];
        let mut links = Vec::new();
        let mut edges = Vec::new();
        match kind {
            TopologyKind::Simple => {
                for e in 1..=positive(size.edges, "edges")? {
                    let name = format!("edge_{e}");
                    links.push((name.clone(), cloud.clone()));
                    edges.push(name);
                }
            }
            TopologyKind::BreadthParallel => {
                nodes.push(("gateway".into(), NodeRole::Relay));
                links.push(("gateway".into(), cloud.clone()));
                for e in 1..=positive(size.branching, "branching")? {
                    let name = format!("edge_{e}");
                    links.push((name.clone(), "gateway".into()));
                    edges.push(name);
                }
            }
            TopologyKind::DepthLinear => {
                let d = positive(size.depth, "depth")?;
                edges = (1..=d).map(|k| format!("edge_{k}")).collect();
                chain(&edges, &cloud, &mut links);
            }
            TopologyKind::Hybrid => {
                let d = positive(size.depth, "depth")?;
                for c in 1..=positive(size.branching, "branching")? {
                    let names: Vec<String> = (1..=d).map(|k| format!("edge_{c}_{k}")).collect();
                    chain(&names, &cloud, &mut links);
                    edges.extend(names);
                }
            }
            TopologyKind::Custom => {
                return Err(Error::Topology("custom topologies come from a file".into()));
            }
        }
        nodes.extend(edges.iter().map(|e| (e.clone(), NodeRole::Edge)));
        let attachments: Vec<String> = (0..num_clusters).map(|m| edges[m % edges.len()].clone()).collect();
        Self::new(kind, nodes, &links, &attachments)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.attachments.len()
    }

    pub fn cloud(&self) -> usize {
        self.cloud
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn role(&self, node: usize) -> NodeRole {
        self.roles[node]
    }

    pub fn edge_of(&self, cluster: usize) -> Result<usize> {
        self.attachments
            .get(cluster)
            .copied()
            .ok_or_else(|| Error::Topology(format!("cluster {cluster} is not attached to an edge node")))
    }

    /// BFS distances from `src`, never entering `avoid`.
    fn distances(&self, src: usize, avoid: Option<usize>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.names.len()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() && Some(v) != avoid {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn path_len(&self, a: usize, b: usize, avoid: Option<usize>) -> Result<usize> {
        if a >= self.names.len() || b >= self.names.len() {
            return Err(Error::Topology(format!("node index out of range 0..{}", self.names.len())));
        }
        self.distances(a, avoid)[b].ok_or_else(|| Error::Disconnected {
            from: self.names[a].clone(),
            to: self.names[b].clone(),
        })
    }

    /// Shortest-path hop count.
    pub fn hops(&self, a: usize, b: usize) -> Result<usize> {
        self.path_len(a, b, None)
    }

    pub fn hops_by_name(&self, a: &str, b: &str) -> Result<usize> {
        let idx = |n: &str| self.node(n).ok_or_else(|| Error::Topology(format!("unknown node `{n}`")));
        self.hops(idx(a)?, idx(b)?)
    }

    /// Hops from a cluster's edge node to the cloud.
    pub fn uplink_hops(&self, cluster: usize) -> Result<usize> {
        self.hops(self.edge_of(cluster)?, self.cloud)
    }

    /// Hops the model travels between two clusters' edge nodes. Without
    /// `cloud_transit` the cloud is used only when no cloud-free path
    /// exists.
    pub fn migration_hops(&self, from: usize, to: usize, cloud_transit: bool) -> Result<usize> {
        let (a, b) = (self.edge_of(from)?, self.edge_of(to)?);
        if cloud_transit {
            return self.hops(a, b);
        }
        match self.path_len(a, b, Some(self.cloud)) {
            Ok(h) => Ok(h),
            Err(Error::Disconnected { .. }) => self.hops(a, b),
            Err(e) => Err(e),
        }
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            kind: self.kind,
            nodes: self
                .names
                .iter()
                .zip(&self.roles)
                .map(|(name, &role)| NodeDecl {
                    name: name.clone(),
                    role,
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|&(a, b)| [self.names[a].clone(), self.names[b].clone()])
                .collect(),
            attachments: self.attachments.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("topology serializes")
    }
}

fn chain(edges: &[String], cloud: &str, links: &mut Vec<(String, String)>) {
    for pair in edges.windows(2) {
        links.push((pair[0].clone(), pair[1].clone()));
    }
    if let Some(last) = edges.last() {
        links.push((last.clone(), cloud.to_string()));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub name: String,
    pub role: NodeRole,
}

/// On-disk topology description.
///
/// ```toml
/// kind = "custom"
/// attachments = ["edge_1", "edge_2"]
/// links = [["edge_1", "cloud"], ["edge_2", "cloud"]]
///
/// [[nodes]]
/// name = "cloud"
/// role = "cloud"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    #[serde(default = "custom_kind")]
    pub kind: TopologyKind,
    pub attachments: Vec<String>,
    pub links: Vec<[String; 2]>,
    pub nodes: Vec<NodeDecl>,
}

fn custom_kind() -> TopologyKind {
    TopologyKind::Custom
}

impl TopologyFile {
    pub fn build(self) -> Result<TopologyGraph> {
        let links: Vec<(String, String)> = self.links.into_iter().map(|[a, b]| (a, b)).collect();
        TopologyGraph::new(
            self.kind,
            self.nodes.into_iter().map(|n| (n.name, n.role)).collect(),
            &links,
            &self.attachments,
        )
    }
}

pub fn parse_topology(text: &str) -> Result<TopologyGraph> {
    let file: TopologyFile = toml::from_str(text).map_err(|e| Error::from_toml(text, e))?;
    file.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMethod {
    Fedavg,
    HierFl,
    Edgeflow,
}

impl CommMethod {
    pub const ALL: [CommMethod; 3] = [CommMethod::Fedavg, CommMethod::HierFl, CommMethod::Edgeflow];

    pub fn name(self) -> &'static str {
        match self {
            CommMethod::Fedavg => "fedavg",
            CommMethod::HierFl => "hier_fl",
            CommMethod::Edgeflow => "edgeflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Count global-model downloads as well as uploads.
    pub include_downloads: bool,
    /// Let edge-to-edge migration route through the cloud even when a
    /// cloud-free path exists.
    pub cloud_transit: bool,
}

/// What happened in one round, as far as the network is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundInfo {
    pub cluster: usize,
    /// Cluster that receives the model next; `None` ends the run.
    pub next_cluster: Option<usize>,
    pub participants: usize,
}

/// Parameter-hop units moved in one round by `method`.
pub fn round_comm_load(
    method: CommMethod,
    graph: &TopologyGraph,
    round: RoundInfo,
    model_size: usize,
    opts: LoadOptions,
) -> Result<u64> {
    let p = model_size as u64;
    let n = round.participants as u64;
    let uplink = graph.uplink_hops(round.cluster)? as u64;
    let down = u64::from(opts.include_downloads);
    Ok(match method {
        CommMethod::Fedavg => n * p * (1 + uplink) * (1 + down),
        CommMethod::HierFl => (n * p + p * uplink) * (1 + down),
        CommMethod::Edgeflow => {
            let migration = match round.next_cluster {
                Some(next) => graph.migration_hops(round.cluster, next, opts.cloud_transit)? as u64,
                None => 0,
            };
            n * p * (1 + down) + p * migration
        }
    })
}

/// FedAvg load when the sampled clients live at different edges; `homes`
/// lists the home cluster of each sampled client.
pub fn fedavg_load_for_clients(
    graph: &TopologyGraph,
    homes: &[usize],
    model_size: usize,
    opts: LoadOptions,
) -> Result<u64> {
    let mut total = 0;
    for &m in homes {
        let info = RoundInfo {
            cluster: m,
            next_cluster: None,
            participants: 1,
        };
        total += round_comm_load(CommMethod::Fedavg, graph, info, model_size, opts)?;
    }
    Ok(total)
}

pub fn compression_ratio(edgeflow_total: u64, baseline_total: u64) -> Result<f64> {
    if baseline_total == 0 {
        return Err(Error::Protocol("compression ratio against a zero baseline".into()));
    }
    Ok(edgeflow_total as f64 / baseline_total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: usize,
    pub method: CommMethod,
    pub params_hop_units: u64,
    pub uploads: u64,
}

/// Append-only per-round communication log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self, method: CommMethod) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.method == method)
            .map(|e| e.params_hop_units)
            .sum()
    }

    pub fn has(&self, method: CommMethod) -> bool {
        self.entries.iter().any(|e| e.method == method)
    }

    /// Units of `method` in round `t`.
    pub fn round_units(&self, t: usize, method: CommMethod) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.t == t && e.method == method)
            .map(|e| e.params_hop_units)
            .sum()
    }

    /// CSV with header `t,method,params_hop_units,uploads`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let entries = r.deserialize().collect::<std::result::Result<Vec<LedgerEntry>, _>>()?;
        Ok(Self { entries })
    }
}

/// Loads of one steady-state cycle over all clusters in order, with the
/// last cluster handing back to the first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyComparison {
    pub kind: TopologyKind,
    pub fedavg: u64,
    pub hier_fl: u64,
    pub edgeflow: u64,
    pub ratio_vs_fedavg: f64,
    pub ratio_vs_hier_fl: f64,
}

pub fn compare_topology(
    graph: &TopologyGraph,
    cluster_size: usize,
    model_size: usize,
    opts: LoadOptions,
) -> Result<TopologyComparison> {
    let m = graph.num_clusters();
    if m == 0 {
        return Err(Error::Topology("no clusters attached".into()));
    }
    let mut totals = [0u64; 3];
    for c in 0..m {
        let info = RoundInfo {
            cluster: c,
            next_cluster: Some((c + 1) % m),
            participants: cluster_size,
        };
        for (slot, method) in CommMethod::ALL.into_iter().enumerate() {
            totals[slot] += round_comm_load(method, graph, info, model_size, opts)?;
        }
    }
    let [fedavg, hier_fl, edgeflow] = totals;
    Ok(TopologyComparison {
        kind: graph.kind(),
        fedavg,
        hier_fl,
        edgeflow,
        ratio_vs_fedavg: compression_ratio(edgeflow, fedavg)?,
        ratio_vs_hier_fl: compression_ratio(edgeflow, hier_fl)?,
    })
}

/// [`compare_topology`] over the four generated topologies.
pub fn compare_builtin(
    size: TopologySize,
    num_clusters: usize,
    cluster_size: usize,
    model_size: usize,
    opts: LoadOptions,
) -> Result<Vec<TopologyComparison>> {
    TopologyKind::BUILTIN
        .into_iter()
        .map(|kind| {
            let g = TopologyGraph::builtin(kind, size, num_clusters)?;
            compare_topology(&g, cluster_size, model_size, opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(edges: usize, depth: usize, branching: usize) -> TopologySize {
        TopologySize {
            edges,
            depth,
            branching,
        }
    }

    fn info(cluster: usize, next: Option<usize>, participants: usize) -> RoundInfo {
        RoundInfo {
            cluster,
            next_cluster: next,
            participants,
        }
    }

    #[test]
    fn builtin_hop_counts() {
        let depth = TopologyGraph::builtin(TopologyKind::DepthLinear, size(1, 4, 1), 4).unwrap();
        assert_eq!(depth.hops_by_name("edge_1", "cloud").unwrap(), 4);
        assert_eq!(depth.uplink_hops(0).unwrap(), 4);
        let simple = TopologyGraph::builtin(TopologyKind::Simple, size(1, 1, 1), 1).unwrap();
        assert_eq!(simple.uplink_hops(0).unwrap(), 1);
        let hybrid = TopologyGraph::builtin(TopologyKind::Hybrid, size(1, 3, 2), 6).unwrap();
        assert_eq!(hybrid.hops_by_name("edge_1_1", "cloud").unwrap(), 3);
        // BFS oracle: up one chain to the cloud, down the other
        assert_eq!(hybrid.hops_by_name("edge_1_3", "edge_2_3").unwrap(), 2);
        assert_eq!(hybrid.hops_by_name("edge_1_1", "edge_2_1").unwrap(), 6);
        let breadth = TopologyGraph::builtin(TopologyKind::BreadthParallel, size(1, 1, 3), 3).unwrap();
        assert_eq!(breadth.uplink_hops(2).unwrap(), 2);
        assert_eq!(breadth.migration_hops(0, 1, false).unwrap(), 2);
    }

    #[test]
    fn hops_basics() {
        let nodes: Vec<(String, NodeRole)> = ["cloud", "a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), if i == 0 { NodeRole::Cloud } else { NodeRole::Edge }))
            .collect();
        let links: Vec<(String, String)> = [("cloud", "a"), ("a", "b"), ("b", "c"), ("c", "d")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let g = TopologyGraph::new(TopologyKind::Custom, nodes, &links, &[]).unwrap();
        assert_eq!(g.hops_by_name("cloud", "d").unwrap(), 4);
        for a in 0..5 {
            assert_eq!(g.hops(a, a).unwrap(), 0);
            for b in 0..5 {
                assert_eq!(g.hops(a, b).unwrap(), g.hops(b, a).unwrap());
            }
        }
    }

    #[test]
    fn invalid_graphs() {
        let cloud = ("cloud".to_string(), NodeRole::Cloud);
        let edge = ("e".to_string(), NodeRole::Edge);
        let link = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert!(matches!(
            TopologyGraph::new(TopologyKind::Custom, vec![cloud.clone(), edge.clone()], &[], &[]),
            Err(Error::Disconnected { .. })
        ));
        assert!(TopologyGraph::new(TopologyKind::Custom, vec![edge.clone()], &[], &[]).is_err());
        assert!(TopologyGraph::new(
            TopologyKind::Custom,
            vec![cloud.clone(), edge.clone()],
            &[link("e", "cloud"), link("cloud", "e")],
            &[]
        )
        .is_err());
        assert!(TopologyGraph::new(
            TopologyKind::Custom,
            vec![cloud.clone(), edge.clone()],
            &[link("e", "cloud")],
            &["cloud".into()]
        )
        .is_err());
        let g = TopologyGraph::new(TopologyKind::Custom, vec![cloud, edge], &[link("e", "cloud")], &["e".into()]).unwrap();
        assert!(g.edge_of(1).is_err());
        assert!(round_comm_load(CommMethod::Fedavg, &g, info(3, None, 1), 1, LoadOptions::default()).is_err());
    }

    #[test]
    fn simple_topology_loads() {
        let g = TopologyGraph::builtin(TopologyKind::Simple, size(2, 1, 1), 2).unwrap();
        let o = LoadOptions::default();
        let r = info(0, Some(1), 10);
        assert_eq!(round_comm_load(CommMethod::Fedavg, &g, r, 1, o).unwrap(), 20);
        assert_eq!(round_comm_load(CommMethod::HierFl, &g, r, 1, o).unwrap(), 11);
        assert_eq!(round_comm_load(CommMethod::Edgeflow, &g, r, 1, o).unwrap(), 12);
        assert_eq!(round_comm_load(CommMethod::Edgeflow, &g, info(0, Some(0), 10), 1, o).unwrap(), 10);
    }

    #[test]
    fn depth_linear_worked_example() {
        let g = TopologyGraph::builtin(TopologyKind::DepthLinear, size(1, 4, 1), 4).unwrap();
        let o = LoadOptions::default();
        let r = info(0, Some(1), 10);
        let fedavg = round_comm_load(CommMethod::Fedavg, &g, r, 1, o).unwrap();
        let edgeflow = round_comm_load(CommMethod::Edgeflow, &g, r, 1, o).unwrap();
        assert_eq!((fedavg, edgeflow), (50, 11));
        assert!((compression_ratio(edgeflow, fedavg).unwrap() - 0.22).abs() < 1e-15);
        assert_eq!(compression_ratio(7, 7).unwrap(), 1.0);
        assert!(compression_ratio(1, 0).is_err());
    }

    #[test]
    fn downloads_double_client_traffic() {
        let g = TopologyGraph::builtin(TopologyKind::DepthLinear, size(1, 4, 1), 4).unwrap();
        let o = LoadOptions {
            include_downloads: true,
            cloud_transit: false,
        };
        let r = info(0, Some(1), 10);
        assert_eq!(round_comm_load(CommMethod::Fedavg, &g, r, 1, o).unwrap(), 100);
        assert_eq!(round_comm_load(CommMethod::Edgeflow, &g, r, 1, o).unwrap(), 21);
    }

    #[test]
    fn deeper_uplinks_only_raise_cloud_bound_methods() {
        let o = LoadOptions::default();
        let mut last = None;
        for d in 1..6 {
            let g = TopologyGraph::builtin(TopologyKind::DepthLinear, size(1, d, 1), 1).unwrap();
            let r = info(0, Some(0), 10);
            let loads: Vec<u64> = CommMethod::ALL
                .iter()
                .map(|&m| round_comm_load(m, &g, r, 3, o).unwrap())
                .collect();
            if let Some(prev) = last.replace(loads.clone()) {
                let prev: Vec<u64> = prev;
                assert!(loads[0] > prev[0] && loads[1] > prev[1]);
                assert_eq!(loads[2], prev[2]);
            }
        }
    }

    #[test]
    fn migration_avoids_cloud_when_possible() {
        // two edges linked directly and both one hop from the cloud
        let file = TopologyFile {
            kind: TopologyKind::Custom,
            nodes: vec![
                NodeDecl { name: "cloud".into(), role: NodeRole::Cloud },
                NodeDecl { name: "a".into(), role: NodeRole::Edge },
                NodeDecl { name: "r".into(), role: NodeRole::Relay },
                NodeDecl { name: "b".into(), role: NodeRole::Edge },
            ],
            links: vec![
                ["a".into(), "cloud".into()],
                ["b".into(), "cloud".into()],
                ["a".into(), "r".into()],
                ["r".into(), "b".into()],
            ],
            attachments: vec!["a".into(), "b".into()],
        };
        let g = file.build().unwrap();
        assert_eq!(g.migration_hops(0, 1, false).unwrap(), 2);
        assert_eq!(g.migration_hops(0, 1, true).unwrap(), 2);
        let mut without_cloud_use = 0;
        for t in 0..2 {
            without_cloud_use += round_comm_load(CommMethod::Edgeflow, &g, info(t, Some(1 - t), 4), 5, LoadOptions::default()).unwrap();
        }
        assert_eq!(without_cloud_use, 2 * (4 * 5 + 5 * 2));
    }

    #[test]
    fn topology_file_round_trip_and_errors() {
        let g = TopologyGraph::builtin(TopologyKind::Hybrid, TopologySize::default(), 10).unwrap();
        let back = parse_topology(&g.to_toml()).unwrap();
        assert_eq!(back, g);
        let text = "attachments = []\nlinks = []\nnodes = []\nbogus = 1\n";
        match parse_topology(text) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let text = "attachments = []\nlinks = [[\"x\", \"cloud\"]]\n[[nodes]]\nname = \"cloud\"\nrole = \"cloud\"\n";
        assert!(matches!(parse_topology(text), Err(Error::Topology(_))));
    }

    #[test]
    fn ledger_totals_and_csv() {
        let mut ledger = CommLedger::new();
        for t in 0..4 {
            ledger.record(LedgerEntry { t, method: CommMethod::Edgeflow, params_hop_units: 10 + t as u64, uploads: 10 });
            ledger.record(LedgerEntry { t, method: CommMethod::Fedavg, params_hop_units: 50, uploads: 10 });
        }
        assert_eq!(ledger.total(CommMethod::Edgeflow), 46);
        assert_eq!(ledger.total(CommMethod::Fedavg), 200);
        assert_eq!(ledger.round_units(2, CommMethod::Edgeflow), 12);
        assert!(!ledger.has(CommMethod::HierFl));
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,method,params_hop_units,uploads\n0,edgeflow,10,10\n"));
        assert_eq!(CommLedger::read_csv(buf.as_slice()).unwrap(), ledger);
    }

    #[test]
    fn builtin_comparison_defaults() {
        let rows = compare_builtin(TopologySize::default(), 10, 10, 1, LoadOptions::default()).unwrap();
        let by = |k: TopologyKind| rows.iter().find(|r| r.kind == k).unwrap();
        assert_eq!((by(TopologyKind::Simple).edgeflow, by(TopologyKind::Simple).fedavg), (120, 200));
        assert_eq!((by(TopologyKind::BreadthParallel).edgeflow, by(TopologyKind::BreadthParallel).fedavg), (120, 300));
        assert_eq!((by(TopologyKind::DepthLinear).edgeflow, by(TopologyKind::DepthLinear).fedavg), (114, 370));
        assert_eq!((by(TopologyKind::Hybrid).edgeflow, by(TopologyKind::Hybrid).fedavg), (124, 370));
        assert!(by(TopologyKind::DepthLinear).ratio_vs_fedavg < by(TopologyKind::BreadthParallel).ratio_vs_fedavg);
    }
}
