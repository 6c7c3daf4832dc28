//! Local training, cluster aggregation, scheduling and the two training loops.

mod aggregate;
mod local;
mod schedule;

pub use aggregate::{aggregate_cluster, average_models};
pub use local::{local_train, LocalUpdate};
pub use schedule::{ClusterLayout, ClusterPlan, SchedulePolicy};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{forward_loss, loss_and_gradient, predict, Batch, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalWork {
    /// `local_steps` mini-batch steps per round.
    #[default]
    Steps,
    /// `local_steps` passes over the shard per round.
    Epochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    /// K.
    pub local_steps: usize,
    /// T.
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub local_work: LocalWork,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.2,
            local_steps: 5,
            rounds: 200,
            batch_size: 64,
            seed: 0,
            local_work: LocalWork::Steps,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// The step-size precondition `L * K * eta < 1`.
    pub fn lk_eta_ok(&self, l_hat: f64) -> bool {
        l_hat * self.local_steps as f64 * self.eta < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// Active cluster; `None` for FedAvg rounds.
    pub cluster_id: Option<usize>,
    pub participants: Vec<usize>,
    /// `F(theta^t)` at round start.
    pub global_loss: f64,
    /// `|grad F(theta^t)|^2` at round start.
    pub global_grad_norm_sq: f64,
    /// Held-out metrics of `theta^{t+1}`.
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub per_client_grad_norm_sq_max: f64,
    /// Participant-mean squared drift after `k` local steps, `k = 0..=K`.
    pub drift_trajectory: Vec<f64>,
    pub params_uploaded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep `theta^t` whenever `t % every == 0`, plus the final model.
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub initial_params: ParamVector,
    pub final_params: ParamVector,
    pub checkpoints: Vec<(usize, ParamVector)>,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_accuracy)
    }
}

/// Mean loss and top-1 accuracy on `data`.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &Batch) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Protocol("evaluation on an empty set".into()));
    }
    let loss = forward_loss(spec, params, data)?;
    let preds = predict(spec, params, data)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// Unweighted mean of per-client objectives and their gradients over the
/// listed clients, reduced in the given order.
pub fn mean_client_objective(
    spec: &ModelSpec,
    params: &ParamVector,
    shards: &[ClientShard],
    clients: &[usize],
) -> Result<(f64, ParamVector)> {
    if clients.is_empty() {
        return Err(Error::Protocol("objective over an empty client set".into()));
    }
    let parts: Vec<(f64, ParamVector)> = clients
        .par_iter()
        .map(|&n| loss_and_gradient(spec, params, &shards[n].samples))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(params.len());
    for (l, g) in &parts {
        loss += l;
        grad.add_in_place(g)?;
    }
    let inv = 1.0 / clients.len() as f64;
    grad.scale_in_place(inv);
    Ok((loss * inv, grad))
}

/// Clients, their data and the held-out evaluation set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub spec: ModelSpec,
    pub shards: Vec<ClientShard>,
    pub eval: Batch,
}

impl Federation {
    pub fn new(spec: ModelSpec, shards: Vec<ClientShard>, eval: Batch) -> Result<Self> {
        spec.validate()?;
        for (i, s) in shards.iter().enumerate() {
            if s.client_id != i {
                return Err(Error::Protocol(format!("shard {i} carries client id {}", s.client_id)));
            }
            if s.samples.input_dim() != spec.input_dim {
                return Err(Error::LengthMismatch {
                    expected: spec.input_dim,
                    got: s.samples.input_dim(),
                });
            }
        }
        if eval.input_dim() != spec.input_dim {
            return Err(Error::LengthMismatch {
                expected: spec.input_dim,
                got: eval.input_dim(),
            });
        }
        Ok(Self { spec, shards, eval })
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn initial_params(&self, seed: u64) -> ParamVector {
        self.spec.init_params(&mut stream(seed, Purpose::Init, 0, 0))
    }

    /// `F` as the mean of all client objectives.
    pub fn global_objective(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let all: Vec<usize> = (0..self.shards.len()).collect();
        mean_client_objective(&self.spec, params, &self.shards, &all)
    }

    /// Sequential migration: each round only cluster `m(t)` trains.
    pub fn run_edgeflow(&self, plan: &mut ClusterPlan, hp: &HyperParams, opts: RunOptions) -> Result<RunOutput> {
        hp.validate()?;
        if plan.num_clients() != self.shards.len() {
            return Err(Error::Protocol(format!(
                "cluster plan covers {} clients, federation has {}",
                plan.num_clients(),
                self.shards.len()
            )));
        }
        let members: Vec<Vec<usize>> = (0..plan.num_clusters()).map(|m| plan.members(m)).collect();
        plan.sequence.clear();
        self.run_loop(hp, opts, |t| {
            let m = plan.next_cluster(t, hp.seed)?;
            Ok((Some(m), members[m].clone()))
        })
    }

    /// Baseline: `sample_size` clients drawn uniformly without replacement
    /// each round.
    pub fn run_fedavg(&self, sample_size: usize, hp: &HyperParams, opts: RunOptions) -> Result<RunOutput> {
        hp.validate()?;
        let n = self.shards.len();
        if sample_size == 0 || sample_size > n {
            return Err(Error::Config(format!(
                "fedavg sample size {sample_size} outside 1..={n}"
            )));
        }
        self.run_loop(hp, opts, |t| {
            let mut rng = stream(hp.seed, Purpose::ClientSampler, t as u64, 0);
            let mut picked = index::sample(&mut rng, n, sample_size).into_vec();
            picked.sort_unstable();
            Ok((None, picked))
        })
    }

    fn run_loop<F>(&self, hp: &HyperParams, opts: RunOptions, mut select: F) -> Result<RunOutput>
    where
        F: FnMut(usize) -> Result<(Option<usize>, Vec<usize>)>,
    {
        let initial = self.initial_params(hp.seed);
        let mut theta = initial.clone();
        let mut records = Vec::with_capacity(hp.rounds);
        let mut checkpoints = Vec::new();
        for t in 0..hp.rounds {
            if opts.checkpoint_every.is_some_and(|e| e > 0 && t % e == 0) {
                checkpoints.push((t, theta.clone()));
            }
            let (cluster_id, participants) = select(t)?;
            let (global_loss, global_grad) = self.global_objective(&theta)?;
            let updates = self.train_participants(&theta, &participants, hp, t)?;
            let grad_sums: Vec<ParamVector> = updates.iter().map(|u| u.grad_sum.clone()).collect();
            let next = aggregate_cluster(&theta, &grad_sums, hp.eta)?;
            if !next.is_finite() {
                return Err(Error::Diverged {
                    round: t,
                    client: participants[0],
                    source: Box::new(Error::NonFinite {
                        layer: self.spec.layers().len() - 1,
                    }),
                });
            }
            let steps = updates[0].drift.len();
            let mut drift = vec![0.0; steps];
            for u in &updates {
                for (d, x) in drift.iter_mut().zip(&u.drift) {
                    *d += x;
                }
            }
            let inv = 1.0 / updates.len() as f64;
            drift.iter_mut().for_each(|d| *d *= inv);
            let max_g = updates.iter().map(|u| u.max_grad_norm_sq).fold(0.0, f64::max);
            theta = next;
            let (eval_loss, eval_accuracy) = evaluate(&self.spec, &theta, &self.eval)?;
            log::debug!("round {t}: cluster {cluster_id:?} loss {global_loss:.4} acc {eval_accuracy:.4}");
            records.push(RoundRecord {
                t,
                cluster_id,
                params_uploaded: participants.len() * theta.len(),
                participants,
                global_loss,
                global_grad_norm_sq: global_grad.norm_sq(),
                eval_loss,
                eval_accuracy,
                per_client_grad_norm_sq_max: max_g,
                drift_trajectory: drift,
            });
        }
        if opts.checkpoint_every.is_some_and(|e| e > 0) {
            checkpoints.push((hp.rounds, theta.clone()));
        }
        Ok(RunOutput {
            records,
            initial_params: initial,
            final_params: theta,
            checkpoints,
        })
    }

    fn train_participants(
        &self,
        theta: &ParamVector,
        participants: &[usize],
        hp: &HyperParams,
        t: usize,
    ) -> Result<Vec<LocalUpdate>> {
        if participants.is_empty() {
            return Err(Error::Protocol(format!("round {t} has no participants")));
        }
        let results: Vec<Result<LocalUpdate>> = participants
            .par_iter()
            .map(|&n| local_train(&self.spec, theta, &self.shards[n], hp, t))
            .collect();
        results
            .into_iter()
            .zip(participants)
            .map(|(r, &n)| {
                r.map_err(|e| Error::Diverged {
                    round: t,
                    client: n,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}
