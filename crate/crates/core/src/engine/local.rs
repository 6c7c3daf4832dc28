use rand::seq::{index, SliceRandom};

use super::{HyperParams, LocalWork};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{loss_and_gradient, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream, Purpose};

/// Result of one client's local training in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub final_params: ParamVector,
    /// Sum of the stochastic gradients of every local step.
    pub grad_sum: ParamVector,
    /// `drift[k]` is the squared distance from the round-start model after
    /// `k` steps, so `drift[0] == 0` and the last entry is the uploaded model.
    pub drift: Vec<f64>,
    pub max_grad_norm_sq: f64,
}

impl LocalUpdate {
    pub fn steps(&self) -> usize {
        self.drift.len() - 1
    }
}

/// Index sets of every local step for one client-round. Batches never
/// repeat a sample; successive steps sample independently.
fn batch_plan(shard: &ClientShard, hp: &HyperParams, round: usize) -> Result<Vec<Vec<usize>>> {
    let len = shard.len();
    if len < hp.batch_size {
        return Err(Error::Sampling {
            client: shard.client_id,
            needed: hp.batch_size,
            available: len,
        });
    }
    let mut rng = stream(hp.seed, Purpose::MiniBatch, round as u64, shard.client_id as u64);
    let mut batches = Vec::new();
    match hp.local_work {
        LocalWork::Steps => {
            for _ in 0..hp.local_steps {
                batches.push(index::sample(&mut rng, len, hp.batch_size).into_vec());
            }
        }
        LocalWork::Epochs => {
            let mut order: Vec<usize> = (0..len).collect();
            for _ in 0..hp.local_steps {
                order.shuffle(&mut rng);
                for chunk in order.chunks_exact(hp.batch_size) {
                    batches.push(chunk.to_vec());
                }
            }
        }
    }
    for b in &mut batches {
        b.sort_unstable();
    }
    Ok(batches)
}

/// Plain local SGD from `start`: `theta <- theta - eta * g` per step.
pub fn local_train(
    spec: &ModelSpec,
    start: &ParamVector,
    shard: &ClientShard,
    hp: &HyperParams,
    round: usize,
) -> Result<LocalUpdate> {
    let batches = batch_plan(shard, hp, round)?;
    let mut theta = start.clone();
    let mut grad_sum = ParamVector::zeros(start.len());
    let mut drift = Vec::with_capacity(batches.len() + 1);
    drift.push(0.0);
    let mut max_grad_norm_sq: f64 = 0.0;
    for idx in &batches {
        let batch = shard.samples.select(idx);
        let (_, g) = loss_and_gradient(spec, &theta, &batch)?;
        max_grad_norm_sq = max_grad_norm_sq.max(g.norm_sq());
        theta.axpy_in_place(-hp.eta, &g)?;
        grad_sum.add_in_place(&g)?;
        if !theta.is_finite() {
            return Err(Error::NonFinite {
                layer: spec.layers().len() - 1,
            });
        }
        drift.push(start.dist_sq(&theta)?);
    }
    Ok(LocalUpdate {
        final_params: theta,
        grad_sum,
        drift,
        max_grad_norm_sq,
    })
}
