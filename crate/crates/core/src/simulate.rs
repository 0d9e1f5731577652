//! Sampling exchangeable binary vectors through the counting process.
//!
//! Each unit is switched on if it is picked before time one. At step `k`
//! the process sits in state `k - 1` for an exponential time with rate
//! `mu[k-1]` and then one of the `n - k + 1` remaining units is picked.
//! Picking the unit whose own `Exp(mu[k-1] / (n - k + 1))` clock rings first
//! is the same as drawing one exponential and choosing uniformly, which is
//! what [`Sampler::CompetingRisks`] does; [`Sampler::Literal`] keeps the
//! per-unit clocks for checking that claim.
//!
//! Randomness comes from ChaCha8 seeded with a 64-bit seed via
//! `seed_from_u64`, with stream `i` reserved for cluster `i`. Datasets are
//! therefore identical regardless of how many threads generate them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    rate_vector, ClusterObservation, CombinedRegression, RateModelSpec, RateSchedule,
};

/// Observation time used throughout.
pub const OBSERVATION_TIME: f64 = 1.0;

/// Attempts per cluster before rejection sampling gives up.
pub const REJECTION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// One exponential per step plus a uniformly chosen unit.
    #[default]
    CompetingRisks,
    /// One exponential per remaining unit; the minimum wins.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCluster {
    pub assignments: Vec<bool>,
    pub count: usize,
    /// Cumulative jump times, up to and including the first one past time one.
    pub arrival_times: Vec<f64>,
    /// Units in the order they were picked (0-based).
    pub selection_order: Vec<usize>,
}

/// Deterministic generator for stream `stream` under `seed`.
pub fn cluster_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}

pub fn simulate_cluster<R: Rng + ?Sized>(sched: &RateSchedule, rng: &mut R) -> SimulatedCluster {
    simulate_cluster_with(sched, Sampler::CompetingRisks, rng)
}

pub fn simulate_cluster_with<R: Rng + ?Sized>(
    sched: &RateSchedule,
    sampler: Sampler,
    rng: &mut R,
) -> SimulatedCluster {
    let n = sched.n();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = SimulatedCluster {
        assignments: vec![false; n],
        count: 0,
        arrival_times: Vec::new(),
        selection_order: Vec::new(),
    };
    let mut time = 0.0;
    for k in 1..=n {
        let mu = sched.rate(k - 1);
        if mu == 0.0 {
            break;
        }
        let (dwell, slot) = match sampler {
            Sampler::CompetingRisks => {
                let dwell = exponential(rng, mu);
                let slot = rng.random_range(0..remaining.len());
                (dwell, slot)
            }
            Sampler::Literal => {
                let each = mu / remaining.len() as f64;
                let mut best = (f64::INFINITY, 0);
                for slot in 0..remaining.len() {
                    let w = exponential(rng, each);
                    if w < best.0 {
                        best = (w, slot);
                    }
                }
                best
            }
        };
        let unit = remaining.remove(slot);
        time += dwell;
        out.arrival_times.push(time);
        out.selection_order.push(unit);
        if time < OBSERVATION_TIME {
            out.assignments[unit] = true;
            out.count += 1;
        } else {
            break;
        }
    }
    out
}

/// State at time one of the process started in state `m`.
pub fn simulate_count<R: Rng + ?Sized>(
    sched: &RateSchedule,
    m: usize,
    rng: &mut R,
) -> Result<usize> {
    let n = sched.n();
    if m > n {
        return Err(Error::domain(
            "m",
            format!("start state {m} exceeds n = {n}"),
        ));
    }
    let mut state = m;
    let mut time = 0.0;
    while state < n {
        let mu = sched.rate(state);
        if mu == 0.0 {
            break;
        }
        time += exponential(rng, mu);
        if time >= OBSERVATION_TIME {
            break;
        }
        state += 1;
    }
    Ok(state)
}

/// How clusters enter a simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ascertainment {
    /// Every cluster starts at zero affected.
    #[default]
    None,
    /// `m` units are affected when observation starts; the count follows
    /// `P_m.`, matching the conditional likelihood used in fitting.
    Proband(usize),
    /// Clusters are generated from zero and kept only if at least `m` are
    /// affected. The kept counts follow `P_0.` truncated to `r ≥ m`, which is
    /// not `P_m.` in general.
    Rejection(usize),
}

impl Ascertainment {
    pub fn floor(self) -> usize {
        match self {
            Ascertainment::None => 0,
            Ascertainment::Proband(m) | Ascertainment::Rejection(m) => m,
        }
    }
}

/// Generative model for [`simulate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetModel {
    Rates(RateModelSpec),
    /// Combined-family regression; cluster `i` gets `covariates[i % len]`.
    CombinedRegression {
        coefficients: CombinedRegression,
        covariates: Vec<Vec<f64>>,
    },
}

/// One observation per entry of `sizes`, cluster `i` drawn from stream `i`.
pub fn simulate_dataset(
    model: &DatasetModel,
    sizes: &[usize],
    policy: Ascertainment,
    seed: u64,
) -> Result<Vec<ClusterObservation>> {
    if sizes.is_empty() {
        return Err(Error::domain(
            "sizes",
            "at least one cluster size is required",
        ));
    }
    if let DatasetModel::CombinedRegression { covariates, .. } = model {
        if covariates.is_empty() {
            return Err(Error::domain(
                "covariates",
                "regression needs at least one covariate row",
            ));
        }
    }
    sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n)| simulate_one(model, i, n, policy, seed))
        .collect()
}

fn simulate_one(
    model: &DatasetModel,
    index: usize,
    n: usize,
    policy: Ascertainment,
    seed: u64,
) -> Result<ClusterObservation> {
    let (spec, covariates) = match model {
        DatasetModel::Rates(spec) => (spec.clone(), Vec::new()),
        DatasetModel::CombinedRegression {
            coefficients,
            covariates,
        } => {
            let z = covariates[index % covariates.len()].clone();
            (coefficients.spec_at(&z)?, z)
        }
    };
    let sched = rate_vector(&spec, n)?;
    let floor = policy.floor();
    if floor > n {
        return Err(Error::domain(
            "m",
            format!("ascertainment floor {floor} exceeds cluster size {n} (cluster {index})"),
        ));
    }
    let mut rng = cluster_rng(seed, index as u64);
    let r = match policy {
        Ascertainment::None => simulate_count(&sched, 0, &mut rng)?,
        Ascertainment::Proband(m) => simulate_count(&sched, m, &mut rng)?,
        Ascertainment::Rejection(m) => {
            let mut attempts = 0;
            loop {
                let r = simulate_count(&sched, 0, &mut rng)?;
                attempts += 1;
                if r >= m {
                    break r;
                }
                if attempts >= REJECTION_CAP {
                    return Err(Error::RejectionCap {
                        cluster: index,
                        n,
                        m,
                        attempts,
                    });
                }
            }
        }
    };
    Ok(ClusterObservation::new(n, r)
        .with_floor(floor)
        .with_covariates(covariates))
}

/// Convenience for tests and fixtures: `reps` clusters of every size.
pub fn repeat_sizes(sizes: &[usize], reps: usize) -> Vec<usize> {
    (0..reps).flat_map(|_| sizes.iter().copied()).collect()
}
