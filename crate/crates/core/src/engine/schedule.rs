use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// How client ids map onto equally sized clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLayout {
    /// Consecutive id ranges: client `n` joins cluster `n / size`.
    #[default]
    Block,
    /// Strided ids: client `n` joins cluster `n % M`.
    Strided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    /// Visits clusters cyclically in `order`, a permutation of `0..M`.
    FixedSequence { order: Vec<usize> },
    /// Uniform over `0..M` every round, repeats allowed.
    Random,
}

impl SchedulePolicy {
    pub fn cyclic(num_clusters: usize) -> Self {
        SchedulePolicy::FixedSequence {
            order: (0..num_clusters).collect(),
        }
    }
}

/// Fixed cluster membership plus the policy that picks the active cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPlan {
    num_clusters: usize,
    membership: Vec<usize>,
    policy: SchedulePolicy,
    /// Materialized schedule `m(0), m(1), ...`.
    pub sequence: Vec<usize>,
}

impl ClusterPlan {
    /// Equal clusters of `num_clients / num_clusters`.
    pub fn equal(
        num_clients: usize,
        num_clusters: usize,
        layout: ClusterLayout,
        policy: SchedulePolicy,
    ) -> Result<Self> {
        if num_clusters == 0 || num_clients == 0 || !num_clients.is_multiple_of(num_clusters) {
            return Err(Error::Config(format!(
                "{num_clients} clients cannot form {num_clusters} equal clusters"
            )));
        }
        let size = num_clients / num_clusters;
        let membership = (0..num_clients)
            .map(|n| match layout {
                ClusterLayout::Block => n / size,
                ClusterLayout::Strided => n % num_clusters,
            })
            .collect();
        Self::from_membership(membership, num_clusters, policy)
    }

    pub fn from_membership(
        membership: Vec<usize>,
        num_clusters: usize,
        policy: SchedulePolicy,
    ) -> Result<Self> {
        let mut sizes = vec![0usize; num_clusters];
        for &m in &membership {
            *sizes
                .get_mut(m)
                .ok_or_else(|| Error::Config(format!("cluster id {m} out of range 0..{num_clusters}")))? += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Protocol(format!("cluster {empty} has no members")));
        }
        if let SchedulePolicy::FixedSequence { order } = &policy {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..num_clusters).collect::<Vec<_>>() {
                return Err(Error::Config(format!(
                    "fixed order {order:?} is not a permutation of 0..{num_clusters}"
                )));
            }
        }
        Ok(Self {
            num_clusters,
            membership,
            policy,
            sequence: Vec::new(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_clients(&self) -> usize {
        self.membership.len()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn policy(&self) -> &SchedulePolicy {
        &self.policy
    }

    pub fn cluster_of(&self, client: usize) -> usize {
        self.membership[client]
    }

    /// Members of cluster `m`, ascending.
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.membership.len())
            .filter(|&n| self.membership[n] == m)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &m in &self.membership {
            sizes[m] += 1;
        }
        sizes
    }

    /// Active cluster in round `t`; a pure function of `(policy, seed, t)`.
    pub fn cluster_at(&self, t: usize, seed: u64) -> usize {
        match &self.policy {
            SchedulePolicy::FixedSequence { order } => order[t % order.len()],
            SchedulePolicy::Random => {
                stream(seed, Purpose::Schedule, t as u64, 0).random_range(0..self.num_clusters)
            }
        }
    }

    /// Picks the cluster for round `t` and records it; rounds must be
    /// requested in order.
    pub fn next_cluster(&mut self, t: usize, seed: u64) -> Result<usize> {
        if t < self.sequence.len() {
            return Ok(self.sequence[t]);
        }
        if t != self.sequence.len() {
            return Err(Error::Protocol(format!(
                "round {t} requested before round {}",
                self.sequence.len()
            )));
        }
        let m = self.cluster_at(t, seed);
        self.sequence.push(m);
        Ok(m)
    }

    /// Fills `sequence` for rounds `0..rounds`.
    pub fn materialize(&mut self, rounds: usize, seed: u64) -> &[usize] {
        self.sequence.clear();
        for t in 0..rounds {
            let m = self.cluster_at(t, seed);
            self.sequence.push(m);
        }
        &self.sequence
    }
}
