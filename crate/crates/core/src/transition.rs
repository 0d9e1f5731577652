//! Transition probabilities `P_mr(t) = Pr(X(t) = r | X(0) = m)` of a
//! pure-birth process with rates `mu[0..=n]`.
//!
//! The production path is uniformization. With `L = max_k mu[k]` over the
//! reachable states, the one-step kernel `K = I + Q / L` is a discrete chain
//! that either stays put or moves up by one, and
//!
//! ```text
//! P(t) = sum_j Pois(j; L t) K^j
//! ```
//!
//! Every term is nonnegative, so nothing cancels. Poisson weights are built
//! outward from the mode and trimmed once the neglected tail falls below
//! [`TRUNCATION_TOL`]. When `L t` is large the row is computed at
//! `t / 2^s` for every start state and the resulting matrix is squared `s`
//! times.
//!
//! [`transition_closed_form`] evaluates the classical distinct-rate formula
//! and exists only as an independent cross-check.

use crate::error::{Error, Result};
use crate::model::RateSchedule;
use crate::numeric::CompensatedSum;

/// Bound on the Poisson mass discarded by uniformization.
pub const TRUNCATION_TOL: f64 = 1e-14;

/// Minimum relative separation between rates accepted by the closed form.
pub const CLOSED_FORM_MIN_GAP: f64 = 1e-6;

/// Largest `L t` handled by a single uniformization sweep.
const DIRECT_LIMIT: f64 = 64.0;

/// The row `P_m.(t)` over `r = m..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDistribution {
    m: usize,
    n: usize,
    probs: Vec<f64>,
}

impl TransitionDistribution {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Probabilities for `r = m..=n`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `P_mr`, zero for `r < m` or `r > n`.
    pub fn prob(&self, r: usize) -> f64 {
        if r < self.m || r > self.n {
            0.0
        } else {
            self.probs[r - self.m]
        }
    }

    /// The row padded with zeros to cover `r = 0..=n`.
    pub fn full_row(&self) -> Vec<f64> {
        (0..=self.n).map(|r| self.prob(r)).collect()
    }

    /// Builds a row from explicit probabilities over `r = m..=n`.
    pub fn from_probs(m: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("probs", "empty transition row"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain(
                "probs",
                "entries must be finite and nonnegative",
            ));
        }
        let n = m + probs.len() - 1;
        Ok(Self { m, n, probs })
    }
}

pub fn transition_distribution(
    sched: &RateSchedule,
    m: usize,
    t: f64,
) -> Result<TransitionDistribution> {
    let n = sched.n();
    if m > n {
        return Err(Error::domain(
            "m",
            format!("start state {m} exceeds n = {n}"),
        ));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain(
            "t",
            format!("time must be positive and finite, got {t}"),
        ));
    }
    // states past the first absorbing one are unreachable
    let stop = sched.first_absorbing_from(m);
    let rates = &sched.rates()[m..=stop];
    let lambda = rates.iter().cloned().fold(0.0, f64::max);
    let mut probs = if lambda == 0.0 {
        vec![1.0]
    } else if lambda * t <= DIRECT_LIMIT {
        uniformized_row(rates, 0, lambda, lambda * t)
    } else {
        squared_row(rates, lambda, t)
    };
    // Poisson weight sums can overshoot 1 by an ulp
    for p in &mut probs {
        *p = p.clamp(0.0, 1.0);
    }
    probs.resize(n - m + 1, 0.0);
    Ok(TransitionDistribution { m, n, probs })
}

/// `log P_mr(1)`; `-inf` when the state is unreachable.
pub fn log_transition(sched: &RateSchedule, m: usize, r: usize) -> Result<f64> {
    if r > sched.n() {
        return Err(Error::domain(
            "r",
            format!("state {r} exceeds n = {}", sched.n()),
        ));
    }
    let row = transition_distribution(sched, m, 1.0)?;
    Ok(ln_prob(row.prob(r)))
}

pub(crate) fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Distinct-rate closed form for `P_mr(t)`.
///
/// ```text
/// P_mr(t) = (prod_{k=m}^{r-1} mu_k) sum_{k=m}^{r} exp(-mu_k t) / prod_{l != k} (mu_l - mu_k)
/// ```
///
/// Refuses schedules whose rates on `m..=r` are tied within
/// [`CLOSED_FORM_MIN_GAP`] (relative).
pub fn transition_closed_form(sched: &RateSchedule, m: usize, r: usize, t: f64) -> Result<f64> {
    let n = sched.n();
    if m > r || r > n {
        return Err(Error::domain(
            "r",
            format!("need 0 ≤ m ≤ r ≤ n, got m = {m}, r = {r}, n = {n}"),
        ));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain(
            "t",
            format!("time must be positive and finite, got {t}"),
        ));
    }
    let mu = sched.rates();
    for i in m..=r {
        for j in (i + 1)..=r {
            let scale = mu[i].abs().max(mu[j].abs());
            if (mu[i] - mu[j]).abs() <= CLOSED_FORM_MIN_GAP * scale || scale == 0.0 {
                return Err(Error::RateTie {
                    i,
                    j,
                    a: mu[i],
                    b: mu[j],
                    gap: CLOSED_FORM_MIN_GAP,
                });
            }
        }
    }
    let lead: f64 = mu[m..r].iter().product();
    let mut acc = CompensatedSum::new();
    for k in m..=r {
        let denom: f64 = (m..=r).filter(|&l| l != k).map(|l| mu[l] - mu[k]).product();
        acc.add((-mu[k] * t).exp() / denom);
    }
    Ok(lead * acc.value())
}

/// Poisson(`x`) weights over `first..first + weights.len()`, normalized to
/// sum to one after trimming both tails below [`TRUNCATION_TOL`].
struct PoissonWeights {
    first: usize,
    weights: Vec<f64>,
}

impl PoissonWeights {
    fn new(x: f64) -> Self {
        let mode = x.floor() as usize;
        let mut total = 1.0;

        let mut left = Vec::new();
        let mut w = 1.0;
        let mut j = mode;
        while j > 0 {
            // w_{j-1} = w_j * j / x
            w *= j as f64 / x;
            j -= 1;
            left.push(w);
            total += w;
            let q = j as f64 / x;
            if q < 1.0 && w * q / (1.0 - q) < TRUNCATION_TOL * total {
                break;
            }
        }
        let first = mode - left.len();

        let mut right = Vec::new();
        let mut w = 1.0;
        let mut j = mode;
        loop {
            j += 1;
            w *= x / j as f64;
            right.push(w);
            total += w;
            let q = x / (j + 1) as f64;
            if q < 1.0 && w * q / (1.0 - q) < TRUNCATION_TOL * total {
                break;
            }
        }

        let mut weights: Vec<f64> = left.into_iter().rev().collect();
        weights.push(1.0);
        weights.extend(right);
        let total = crate::numeric::compensated_sum(weights.iter().copied());
        for w in &mut weights {
            *w /= total;
        }
        Self { first, weights }
    }

    fn last(&self) -> usize {
        self.first + self.weights.len() - 1
    }
}

/// Uniformized row from local state `start` over a chain with the given
/// rates (local indices `0..rates.len()`), uniformization rate `lambda`
/// and `lambda_t = lambda * t`.
fn uniformized_row(rates: &[f64], start: usize, lambda: f64, lambda_t: f64) -> Vec<f64> {
    let size = rates.len();
    let up: Vec<f64> = rates.iter().map(|mu| mu / lambda).collect();
    let stay: Vec<f64> = up.iter().map(|u| 1.0 - u).collect();
    let pw = PoissonWeights::new(lambda_t);

    let mut v = vec![0.0; size];
    v[start] = 1.0;
    let mut out = vec![0.0; size];
    for j in 0..=pw.last() {
        if j >= pw.first {
            let w = pw.weights[j - pw.first];
            for (o, x) in out.iter_mut().zip(&v) {
                *o += w * x;
            }
        }
        // one step of K, top-down so v[k - 1] is still the old value
        for k in (start + 1..size).rev() {
            v[k] = v[k] * stay[k] + v[k - 1] * up[k - 1];
        }
        v[start] *= stay[start];
    }
    out
}

/// Row 0 of `P(t)` via `P(t) = P(t / 2^s)^(2^s)`.
fn squared_row(rates: &[f64], lambda: f64, t: f64) -> Vec<f64> {
    let size = rates.len();
    let steps = (lambda * t / DIRECT_LIMIT).log2().ceil().max(1.0) as i32;
    let h = t / 2f64.powi(steps);
    // upper triangular: mat[i][j] = 0 for j < i
    let mut mat: Vec<Vec<f64>> = (0..size)
        .map(|i| uniformized_row(rates, i, lambda, lambda * h))
        .collect();
    for _ in 0..steps {
        let mut next = vec![vec![0.0; size]; size];
        for i in 0..size {
            for j in i..size {
                next[i][j] = (i..=j).map(|k| mat[i][k] * mat[k][j]).sum();
            }
            // rows are stochastic; without this the sum drifts as 2^s ulp
            let total = crate::numeric::compensated_sum(next[i].iter().copied());
            for x in &mut next[i] {
                *x /= total;
            }
        }
        mat = next;
    }
    mat.swap_remove(0)
}
