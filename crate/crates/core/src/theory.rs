//! Empirical smoothness, gradient and heterogeneity constants, the
//! convergence bound, and the local drift check.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::engine::{mean_client_objective, ClusterPlan, RoundRecord};
use crate::error::{Error, Result};
use crate::model::{gradient, ModelSpec, Objective};
use crate::params::ParamVector;
use crate::rng::{stream, Purpose};

/// Relative slack allowed by [`check_lemma3`] for floating-point rounding.
pub const LEMMA3_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub l: f64,
    pub g_sq: f64,
    pub sigma_sq: f64,
    /// Per-cluster heterogeneity.
    pub lambda_sq: Vec<f64>,
    /// Per-cluster member counts.
    pub cluster_sizes: Vec<usize>,
    pub f0: f64,
    pub f_star: f64,
    pub eta: f64,
    pub k: usize,
    pub t: usize,
}

impl BoundConstants {
    pub fn lk_eta(&self) -> f64 {
        self.l * self.k as f64 * self.eta
    }

    pub fn lk_eta_ok(&self) -> bool {
        self.lk_eta() < 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.t == 0 || self.k == 0 || !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!(
                "bound needs T, K and eta positive (T={}, K={}, eta={})",
                self.t, self.k, self.eta
            )));
        }
        let scalars = [self.l, self.g_sq, self.sigma_sq, self.f0, self.f_star, self.eta];
        if scalars.iter().any(|v| !v.is_finite()) || self.lambda_sq.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("bound constants must be finite".into()));
        }
        if self.l < 0.0 || self.g_sq < 0.0 || self.sigma_sq < 0.0 || self.lambda_sq.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("bound constants must be nonnegative".into()));
        }
        if self.f0 < self.f_star {
            return Err(Error::Config(format!(
                "F0 = {} is below F* = {}",
                self.f0, self.f_star
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub term_init: f64,
    pub term_hetero: f64,
    pub term_variance: f64,
    pub term_drift: f64,
    pub total: f64,
    pub lk_eta: f64,
    /// Whether the step-size precondition held.
    pub valid: bool,
}

fn term_init(c: &BoundConstants) -> f64 {
    4.0 * (c.f0 - c.f_star) / (c.k as f64 * c.eta * c.t as f64)
}

fn term_drift(c: &BoundConstants) -> f64 {
    let k = c.k as f64;
    4.0 * c.l * c.l * k * k * c.eta * c.eta * c.g_sq / 3.0
}

fn term_variance(c: &BoundConstants, n_m: usize) -> f64 {
    2.0 * c.l * c.eta * c.sigma_sq / n_m as f64
}

fn breakdown(c: &BoundConstants, term_hetero: f64, term_variance: f64) -> BoundBreakdown {
    let term_init = term_init(c);
    let term_drift = term_drift(c);
    if !c.lk_eta_ok() {
        log::warn!("L*K*eta = {:.4} >= 1; the bound does not apply", c.lk_eta());
    }
    BoundBreakdown {
        term_init,
        term_hetero,
        term_variance,
        term_drift,
        total: term_init + term_hetero + term_variance + term_drift,
        lk_eta: c.lk_eta(),
        valid: c.lk_eta_ok(),
    }
}

/// Convergence bound with per-round heterogeneity and cluster size taken
/// from `schedule`, which must have `c.t` entries.
pub fn theorem1_bound(c: &BoundConstants, schedule: &[usize]) -> Result<BoundBreakdown> {
    c.validate()?;
    if schedule.len() != c.t {
        return Err(Error::Config(format!(
            "schedule has {} rounds, constants say T = {}",
            schedule.len(),
            c.t
        )));
    }
    let mut hetero = 0.0;
    let mut rounds_by_size = std::collections::BTreeMap::new();
    for &m in schedule {
        let (lam, size) = match (c.lambda_sq.get(m), c.cluster_sizes.get(m)) {
            (Some(&lam), Some(&size)) if size > 0 => (lam, size),
            _ => return Err(Error::Protocol(format!("no constants for cluster {m}"))),
        };
        hetero += lam;
        *rounds_by_size.entry(size).or_insert(0usize) += 1;
    }
    let t = c.t as f64;
    let variance = rounds_by_size
        .iter()
        .map(|(&size, &count)| count as f64 / t * term_variance(c, size))
        .sum();
    Ok(breakdown(c, 2.0 * hetero / t, variance))
}

/// The bound with zero heterogeneity and a single cluster size `n_m`.
pub fn iid_bound(c: &BoundConstants, n_m: usize) -> Result<BoundBreakdown> {
    c.validate()?;
    if n_m == 0 {
        return Err(Error::Config("cluster size must be positive".into()));
    }
    Ok(breakdown(c, 0.0, term_variance(c, n_m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// Largest observed gradient-difference ratio; a lower bound on `L`.
    pub l_hat: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Probes per chain in [`estimate_smoothness`].
const CHAIN_LEN: usize = 10;

/// Largest `|grad f(a) - grad f(b)| / |a - b|` over probe pairs with
/// `|a - b| <= radius`.
///
/// Probes come in chains from a base point near one of `anchors`. The first
/// offset of a chain is random; each later offset follows the previous
/// gradient difference, which is power iteration on the local Hessian.
pub fn estimate_smoothness<O: Objective + Sync>(
    objective: &O,
    anchors: &[ParamVector],
    num_probes: usize,
    radius: f64,
    seed: u64,
) -> Result<SmoothnessEstimate> {
    if num_probes == 0 || !(radius.is_finite() && radius > 0.0) || anchors.is_empty() {
        return Err(Error::Config(
            "smoothness probes need num_probes >= 1, radius > 0 and an anchor".into(),
        ));
    }
    let dim = objective.dim();
    let chains = num_probes.div_ceil(CHAIN_LEN);
    let per_chain: Vec<Result<(f64, usize, usize)>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let len = CHAIN_LEN.min(num_probes - c * CHAIN_LEN);
            let mut rng = stream(seed, Purpose::Probe, c as u64, 0);
            let anchor = &anchors[c % anchors.len()];
            if anchor.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: anchor.len(),
                });
            }
            let reach = radius * rng.random::<f64>();
            let jitter = random_direction(&mut rng, dim, reach);
            let base = anchor.axpy(1.0, &jitter)?;
            let g_base = objective.gradient(&base)?;
            let mut delta = random_direction(&mut rng, dim, radius);
            let (mut best, mut used, mut skipped) = (0.0f64, 0, 0);
            for _ in 0..len {
                let dn = delta.norm_sq().sqrt();
                if dn < 1e-12 {
                    skipped += 1;
                    delta = random_direction(&mut rng, dim, radius);
                    continue;
                }
                let g = objective.gradient(&base.axpy(1.0, &delta)?)?;
                let diff = g.axpy(-1.0, &g_base)?;
                let diff_norm = diff.norm_sq().sqrt();
                best = best.max(diff_norm / dn);
                used += 1;
                delta = if diff_norm > 1e-300 {
                    let mut d = diff;
                    d.scale_in_place(radius / diff_norm);
                    d
                } else {
                    random_direction(&mut rng, dim, radius)
                };
            }
            Ok((best, used, skipped))
        })
        .collect();
    let mut est = SmoothnessEstimate {
        l_hat: 0.0,
        pairs_used: 0,
        pairs_skipped: 0,
    };
    for r in per_chain {
        let (best, used, skipped) = r?;
        est.l_hat = est.l_hat.max(best);
        est.pairs_used += used;
        est.pairs_skipped += skipped;
    }
    Ok(est)
}

fn random_direction<R: Rng>(rng: &mut R, dim: usize, length: f64) -> ParamVector {
    let mut v = ParamVector::from_vec((0..dim).map(|_| rng.sample(StandardNormal)).collect());
    let n = v.norm_sq().sqrt();
    if n > 0.0 {
        v.scale_in_place(length / n);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientBounds {
    pub g_sq: f64,
    pub sigma_sq: f64,
}

/// Empirical `G^2` (max squared mini-batch gradient norm) and `sigma^2`
/// (max over client and point of the mini-batch gradient variance).
///
/// Batches for one (client, point) are drawn epoch-style: a shuffled pass
/// over the shard cut into consecutive batches, reshuffled when exhausted.
pub fn estimate_gradient_bounds(
    spec: &ModelSpec,
    shards: &[ClientShard],
    points: &[ParamVector],
    batches_per_point: usize,
    batch_size: usize,
    seed: u64,
) -> Result<GradientBounds> {
    if batches_per_point < 2 || batch_size == 0 {
        return Err(Error::Config(
            "gradient bounds need at least two batches per point and a positive batch size".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..shards.len()).map(move |n| (p, n)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = cells
        .par_iter()
        .map(|&(p, n)| {
            let shard = &shards[n];
            let len = shard.len();
            if len == 0 {
                return Err(Error::Sampling {
                    client: shard.client_id,
                    needed: 1,
                    available: 0,
                });
            }
            let b = batch_size.min(len);
            let mut rng = stream(seed, Purpose::GradientProbe, p as u64, n as u64);
            let mut order: Vec<usize> = (0..len).collect();
            let mut cursor = len;
            let mut grads = Vec::with_capacity(batches_per_point);
            for _ in 0..batches_per_point {
                if cursor + b > len {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let mut idx = order[cursor..cursor + b].to_vec();
                idx.sort_unstable();
                cursor += b;
                grads.push(gradient(spec, &points[p], &shard.samples.select(&idx))?);
            }
            let g_sq = grads.iter().map(ParamVector::norm_sq).fold(0.0, f64::max);
            Ok((g_sq, pairwise_variance(&grads)?))
        })
        .collect();
    let mut out = GradientBounds {
        g_sq: 0.0,
        sigma_sq: 0.0,
    };
    for r in results {
        let (g, s) = r?;
        out.g_sq = out.g_sq.max(g);
        out.sigma_sq = out.sigma_sq.max(s);
    }
    Ok(out)
}

/// `(1/B) sum |g_i - mean|^2`, computed as `(1/(2B^2)) sum_{i,j} |g_i - g_j|^2`
/// so identical inputs give exactly zero.
fn pairwise_variance(grads: &[ParamVector]) -> Result<f64> {
    let b = grads.len() as f64;
    let mut total = 0.0;
    for i in 0..grads.len() {
        for j in (i + 1)..grads.len() {
            total += grads[i].dist_sq(&grads[j])?;
        }
    }
    Ok(total / (b * b))
}

/// `|grad F(theta) - grad F_m(theta)|^2` for every cluster `m`.
pub fn estimate_heterogeneity(
    spec: &ModelSpec,
    params: &ParamVector,
    shards: &[ClientShard],
    plan: &ClusterPlan,
) -> Result<Vec<f64>> {
    if !params.is_finite() {
        return Err(Error::Config("heterogeneity needs finite parameters".into()));
    }
    let all: Vec<usize> = (0..shards.len()).collect();
    let (_, global) = mean_client_objective(spec, params, shards, &all)?;
    (0..plan.num_clusters())
        .map(|m| {
            let members = plan.members(m);
            if members.is_empty() {
                return Err(Error::Protocol(format!("cluster {m} has no members")));
            }
            let (_, local) = mean_client_objective(spec, params, shards, &members)?;
            global.dist_sq(&local)
        })
        .collect()
}

/// Per-cluster maximum of [`estimate_heterogeneity`] over `checkpoints`.
pub fn estimate_heterogeneity_max(
    spec: &ModelSpec,
    checkpoints: &[ParamVector],
    shards: &[ClientShard],
    plan: &ClusterPlan,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; plan.num_clusters()];
    for theta in checkpoints {
        for (o, v) in out.iter_mut().zip(estimate_heterogeneity(spec, theta, shards, plan)?) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// Proxy for `F*`: the lowest objective seen during `steps` of full-batch
/// gradient descent from `start`.
pub fn estimate_optimum<O: Objective>(objective: &O, start: &ParamVector, steps: usize, eta: f64) -> Result<f64> {
    let mut theta = start.clone();
    let mut best = objective.loss(&theta)?;
    for _ in 0..steps {
        let g = objective.gradient(&theta)?;
        theta.axpy_in_place(-eta, &g)?;
        let loss = objective.loss(&theta)?;
        if !loss.is_finite() {
            break;
        }
        best = best.min(loss);
    }
    Ok(best)
}

/// The mean of all client objectives as an [`Objective`].
#[derive(Debug, Clone, Copy)]
pub struct FederatedObjective<'a> {
    pub spec: &'a ModelSpec,
    pub shards: &'a [ClientShard],
}

impl Objective for FederatedObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn loss(&self, params: &ParamVector) -> Result<f64> {
        self.loss_and_gradient(params).map(|(l, _)| l)
    }

    fn gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        self.loss_and_gradient(params).map(|(_, g)| g)
    }
}

impl FederatedObjective<'_> {
    pub fn loss_and_gradient(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let all: Vec<usize> = (0..self.shards.len()).collect();
        mean_client_objective(self.spec, params, self.shards, &all)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Violation {
    pub t: usize,
    pub k: usize,
    pub drift: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub violations: Vec<Lemma3Violation>,
    /// Largest `drift / (k^2 eta^2 G^2)`; `k = 0` counts as 0.
    pub max_ratio: f64,
    pub checked: usize,
}

/// Checks `drift[k] <= k^2 eta^2 G^2` for every recorded round and step.
pub fn check_lemma3(records: &[RoundRecord], eta: f64, g_sq: f64) -> Lemma3Report {
    let mut report = Lemma3Report {
        violations: Vec::new(),
        max_ratio: 0.0,
        checked: 0,
    };
    for r in records {
        for (k, &drift) in r.drift_trajectory.iter().enumerate() {
            report.checked += 1;
            let bound = (k * k) as f64 * eta * eta * g_sq;
            if bound > 0.0 {
                report.max_ratio = report.max_ratio.max(drift / bound);
            }
            if drift > bound * (1.0 + LEMMA3_REL_TOL) {
                report.violations.push(Lemma3Violation {
                    t: r.t,
                    k,
                    drift,
                    bound,
                });
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub empirical_avg_grad_norm_sq: f64,
    pub bound_total: f64,
    pub slack: f64,
    pub valid: bool,
}

/// Compares the time-averaged `|grad F(theta^t)|^2` of a run to the bound.
pub fn bound_vs_empirical(records: &[RoundRecord], bound: &BoundBreakdown) -> Result<BoundComparison> {
    if records.is_empty() {
        return Err(Error::Protocol("no rounds to compare against the bound".into()));
    }
    let avg = records.iter().map(|r| r.global_grad_norm_sq).sum::<f64>() / records.len() as f64;
    Ok(BoundComparison {
        empirical_avg_grad_norm_sq: avg,
        bound_total: bound.total,
        slack: bound.total - avg,
        valid: bound.valid,
    })
}

/// Everything the bound analysis of one run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub run_id: String,
    pub constants: BoundConstants,
    pub smoothness: SmoothnessEstimate,
    pub breakdown: BoundBreakdown,
    pub iid_breakdown: BoundBreakdown,
    pub lemma3: Lemma3Report,
    pub comparison: BoundComparison,
    /// `F*` is the best loss found, not the true optimum.
    pub f_star_is_proxy: bool,
}

impl TheoryReport {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}
