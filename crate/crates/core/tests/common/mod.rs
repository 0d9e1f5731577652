#![allow(dead_code)]

use clustercount::RateSchedule;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson test of `observed` counts against `probs`. Cells with expected
/// count below 5 are pooled; returns `(statistic, df, p_value)`.
pub fn chi2_test(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total;
        if p == 0.0 {
            assert_eq!(o, 0, "count observed in an impossible cell");
            continue;
        }
        if e < 5.0 {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        if pooled.1 >= 5.0 || cells.is_empty() {
            cells.push(pooled);
        } else {
            let last = cells.last_mut().unwrap();
            last.0 += pooled.0;
            last.1 += pooled.1;
        }
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len().saturating_sub(1);
    if df == 0 {
        return (stat, 0, 1.0);
    }
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}

/// Random schedule of size `1..=n_max` with rates in `(0, max_rate]`.
pub fn random_schedule<R: Rng>(rng: &mut R, n_max: usize, max_rate: f64) -> RateSchedule {
    let n = rng.random_range(1..=n_max);
    let mut rates: Vec<f64> = (0..n)
        .map(|_| max_rate * (1.0 - rng.random::<f64>()))
        .collect();
    rates.push(0.0);
    RateSchedule::new(rates).unwrap()
}

/// Random schedule whose nonzero rates are pairwise separated by a relative
/// gap of at least `gap`.
pub fn distinct_schedule<R: Rng>(
    rng: &mut R,
    n_max: usize,
    max_rate: f64,
    gap: f64,
) -> RateSchedule {
    loop {
        let s = random_schedule(rng, n_max, max_rate);
        let r = &s.rates()[..s.n()];
        let ok = r
            .iter()
            .enumerate()
            .all(|(i, a)| r[i + 1..].iter().all(|b| (a - b).abs() >= gap * a.max(*b)));
        if ok {
            return s;
        }
    }
}
