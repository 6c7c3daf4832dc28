use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Cluster update in gradient-sum form:
/// `theta' = theta - (eta / N_m) * sum_n grad_sum_n`.
pub fn aggregate_cluster(global: &ParamVector, grad_sums: &[ParamVector], eta: f64) -> Result<ParamVector> {
    if grad_sums.is_empty() {
        return Err(Error::Protocol("aggregation over an empty cluster".into()));
    }
    let mut total = ParamVector::zeros(global.len());
    for g in grad_sums {
        total.add_in_place(g)?;
    }
    global.axpy(-eta / grad_sums.len() as f64, &total)
}

/// Model-averaging form; equal to [`aggregate_cluster`] whenever every
/// client started from the same global model.
pub fn average_models(models: &[ParamVector]) -> Result<ParamVector> {
    if models.is_empty() {
        return Err(Error::Protocol("aggregation over an empty cluster".into()));
    }
    ParamVector::mean(models)
}
