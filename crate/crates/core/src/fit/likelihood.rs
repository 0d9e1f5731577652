//! Grouped data and the per-cluster probability rows behind every fit.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exchangeable::{
    lambda_beta_binomial, lambda_binomial, pmf_from_lambda, qpower_zero_count_pmf,
};
use crate::model::{rate_vector, validate_observation, ClusterObservation, CombinedRegression};
use crate::numeric::CompensatedSum;
use crate::transition::transition_distribution;

use super::FitFamily;

/// Any model that assigns a law over `r` to a cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamModel {
    Family(FitFamily, Vec<f64>),
    Regression(CombinedRegression),
}

impl ParamModel {
    /// Probabilities of `r = 0..=n` for a cluster of size `n` observed from
    /// floor `m`.
    pub fn row(&self, n: usize, m: usize, covariates: &[f64]) -> Result<Vec<f64>> {
        match self {
            ParamModel::Family(family, params) => family_row(*family, params, n, m),
            ParamModel::Regression(reg) => {
                let spec = reg.spec_at(covariates)?;
                let sched = rate_vector(&spec, n)?;
                Ok(transition_distribution(&sched, m, 1.0)?.full_row())
            }
        }
    }
}

fn family_row(family: FitFamily, params: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    if let Some(spec) = family.rate_spec(params)? {
        let sched = rate_vector(&spec, n)?;
        return Ok(transition_distribution(&sched, m, 1.0)?.full_row());
    }
    if m != 0 {
        return Err(Error::domain(
            "m",
            format!("{family} has no ascertainment model; every floor must be 0"),
        ));
    }
    match family {
        FitFamily::Binomial => pmf_from_lambda(&lambda_binomial(params[0], n)?),
        FitFamily::BetaBinomial => pmf_from_lambda(&lambda_beta_binomial(params[0], params[1], n)?),
        FitFamily::QPower => qpower_zero_count_pmf(params[0], params[1], n),
        _ => unreachable!("rate families handled above"),
    }
}

/// Clusters sharing size, floor and (optionally) covariates, with the
/// summed weight of every observed count.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub n: usize,
    pub m: usize,
    pub covariates: Vec<f64>,
    /// `counts[r]` is the total weight observed at `r`, for `r = 0..=n`.
    pub counts: Vec<f64>,
}

impl Group {
    pub fn weight(&self) -> f64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedData {
    pub groups: Vec<Group>,
    pub total_weight: f64,
    pub rows: usize,
}

pub fn check_data(data: &[ClusterObservation]) -> Result<()> {
    for (i, obs) in data.iter().enumerate() {
        let report = validate_observation(obs);
        if !report.is_valid() {
            return Err(Error::Data(format!("observation {i}: {report}")));
        }
    }
    Ok(())
}

impl GroupedData {
    /// Aggregates observations in a fixed, sorted order.
    pub fn new(data: &[ClusterObservation], by_covariates: bool) -> Result<Self> {
        check_data(data)?;
        type Key = (usize, usize, Vec<u64>);
        let mut map: BTreeMap<Key, (Vec<f64>, Vec<CompensatedSum>)> = BTreeMap::new();
        for obs in data {
            let cov_key = if by_covariates {
                obs.covariates.iter().map(|x| canonical_bits(*x)).collect()
            } else {
                Vec::new()
            };
            let entry = map.entry((obs.n, obs.m, cov_key)).or_insert_with(|| {
                let cov = if by_covariates {
                    obs.covariates.clone()
                } else {
                    Vec::new()
                };
                (cov, vec![CompensatedSum::new(); obs.n + 1])
            });
            entry.1[obs.r].add(obs.weight);
        }
        let groups: Vec<Group> = map
            .into_iter()
            .map(|((n, m, _), (covariates, sums))| Group {
                n,
                m,
                covariates,
                counts: sums.iter().map(|s| s.value()).collect(),
            })
            .collect();
        let total_weight =
            crate::numeric::compensated_sum(groups.iter().flat_map(|g| g.counts.iter().copied()));
        Ok(Self {
            groups,
            total_weight,
            rows: data.len(),
        })
    }

    /// `sum_i w_i log P_{m_i r_i}`; `-inf` if any observed count is
    /// impossible under the model.
    pub fn log_likelihood(&self, model: &ParamModel) -> Result<f64> {
        let parts: Vec<Result<f64>> = self
            .groups
            .par_iter()
            .map(|g| {
                let row = model.row(g.n, g.m, &g.covariates)?;
                let mut acc = CompensatedSum::new();
                for (r, &w) in g.counts.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if row[r] <= 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    acc.add(w * row[r].ln());
                }
                Ok(acc.value())
            })
            .collect();
        let mut total = CompensatedSum::new();
        for part in parts {
            let v = part?;
            if v == f64::NEG_INFINITY {
                return Ok(v);
            }
            total.add(v);
        }
        Ok(total.value())
    }
}

/// Bit pattern with `-0.0` folded onto `0.0`.
fn canonical_bits(x: f64) -> u64 {
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}
