//! Exchangeable Bernoulli sums described by joint-success probabilities.
//!
//! `lambda_j` is the probability that a fixed set of `j` units are all
//! affected. Inclusion-exclusion turns these into the law of the count:
//!
//! ```text
//! Pr(Y = r) = C(n, r) sum_{j=0}^{n-r} (-1)^j C(n-r, j) lambda_{r+j}
//! ```
//!
//! Not every nonincreasing sequence yields a distribution, so the pmf is
//! gated by [`VALIDITY_TOL`]. Running the formula backwards from a
//! transition row `P_0.` recovers the `lambda` of any counting process.

use crate::error::{Error, Result};
use crate::numeric::{binomial, CompensatedSum};
use crate::transition::TransitionDistribution;

/// Tolerance for negative mass and for the total deviating from one.
pub const VALIDITY_TOL: f64 = 1e-9;

/// Allowed drift of the recovered `lambda_0` away from one.
pub const LAMBDA0_TOL: f64 = 1e-8;

const ROUNDING_SLACK: f64 = 1e-10;

/// `lambda_0..=lambda_n`, with `lambda_0 = 1` and nonincreasing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaVector {
    lambdas: Vec<f64>,
}

impl LambdaVector {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::InvalidExchangeable("need n ≥ 1".into()));
        }
        if lambdas[0] != 1.0 {
            return Err(Error::InvalidExchangeable(format!(
                "lambda_0 must be 1, got {}",
                lambdas[0]
            )));
        }
        if let Some(j) = lambdas
            .iter()
            .position(|x| !(x.is_finite() && (0.0..=1.0).contains(x)))
        {
            return Err(Error::InvalidExchangeable(format!(
                "lambda_{j} = {} is not a probability",
                lambdas[j]
            )));
        }
        if let Some(j) = lambdas
            .windows(2)
            .position(|w| w[1] > w[0] + ROUNDING_SLACK)
        {
            return Err(Error::InvalidExchangeable(format!(
                "lambda must be nonincreasing, but lambda_{} > lambda_{}",
                j + 1,
                j
            )));
        }
        Ok(Self { lambdas })
    }

    pub fn n(&self) -> usize {
        self.lambdas.len() - 1
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn get(&self, j: usize) -> f64 {
        self.lambdas[j]
    }
}

/// Law of `Y = Z_1 + ... + Z_n` over `r = 0..=n`.
pub fn pmf_from_lambda(lv: &LambdaVector) -> Result<Vec<f64>> {
    let n = lv.n();
    let lam = lv.lambdas();
    let mut pmf: Vec<f64> = (0..=n)
        .map(|r| {
            let mut acc = CompensatedSum::new();
            for j in 0..=(n - r) {
                let term = binomial(n - r, j) * lam[r + j];
                acc.add(if j % 2 == 0 { term } else { -term });
            }
            binomial(n, r) * acc.value()
        })
        .collect();

    let total = crate::numeric::compensated_sum(pmf.iter().copied());
    if let Some(r) = pmf.iter().position(|p| *p < -VALIDITY_TOL) {
        return Err(Error::InvalidExchangeable(format!(
            "Pr(Y = {r}) = {:e} is negative",
            pmf[r]
        )));
    }
    if (total - 1.0).abs() > VALIDITY_TOL {
        return Err(Error::InvalidExchangeable(format!(
            "probabilities sum to {total}"
        )));
    }
    for p in &mut pmf {
        *p = p.max(0.0);
    }
    let total = crate::numeric::compensated_sum(pmf.iter().copied());
    for p in &mut pmf {
        *p /= total;
    }
    Ok(pmf)
}

fn check_unit_interval(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(name, format!("must lie in (0, 1), got {p}")))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::domain("n", "cluster size must be positive"))
    } else {
        Ok(())
    }
}

/// Independent trials: `lambda_j = p^j`.
pub fn lambda_binomial(p: f64, n: usize) -> Result<LambdaVector> {
    check_unit_interval("p", p)?;
    check_n(n)?;
    LambdaVector::new((0..=n).map(|j| p.powi(j as i32)).collect())
}

/// Smallest admissible beta-binomial correlation for clusters of size `n`.
pub fn beta_binomial_alpha_bound(p: f64, n: usize) -> f64 {
    if n < 2 {
        f64::NEG_INFINITY
    } else {
        -p.min(1.0 - p) / (n - 1) as f64
    }
}

/// `lambda_k = prod_{i<k} (p + i alpha) / (1 + i alpha)`.
///
/// `alpha = 0` is the binomial; negative `alpha` is allowed down to
/// [`beta_binomial_alpha_bound`] (exclusive).
pub fn lambda_beta_binomial(p: f64, alpha: f64, n: usize) -> Result<LambdaVector> {
    check_unit_interval("p", p)?;
    check_n(n)?;
    let bound = beta_binomial_alpha_bound(p, n);
    if !(alpha.is_finite() && alpha > bound) {
        return Err(Error::domain(
            "alpha",
            format!("must exceed {bound} for n = {n}, got {alpha}"),
        ));
    }
    let mut lambdas = Vec::with_capacity(n + 1);
    let mut acc = 1.0;
    lambdas.push(acc);
    for i in 0..n {
        let i = i as f64;
        acc *= (p + i * alpha) / (1.0 + i * alpha);
        lambdas.push(acc);
    }
    LambdaVector::new(lambdas)
}

/// `lambda_j = p^(j^gamma)` for `j ≥ 1`, `gamma ∈ [0, 1]`.
///
/// This is the success parameterization. The usual presentation models the
/// number of unaffected units with `q = 1 - p`; see [`qpower_zero_count_pmf`].
pub fn lambda_qpower(p: f64, gamma: f64, n: usize) -> Result<LambdaVector> {
    check_unit_interval("p", p)?;
    check_n(n)?;
    if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
        return Err(Error::domain(
            "gamma",
            format!("must lie in [0, 1], got {gamma}"),
        ));
    }
    LambdaVector::new(
        (0..=n)
            .map(|j| {
                if j == 0 {
                    1.0
                } else {
                    p.powf((j as f64).powf(gamma))
                }
            })
            .collect(),
    )
}

/// Maps the law of `n - Y` to the law of `Y` (and back).
pub fn reindex_zero_count(pmf: &[f64]) -> Vec<f64> {
    pmf.iter().rev().copied().collect()
}

/// Law of the affected count when the *unaffected* units follow a q-power
/// law: `Pr(all of j fixed units unaffected) = q^(j^gamma)`.
///
/// Returned over `r = 0..=n` affected units. Here `q` is the marginal
/// probability that a unit is unaffected.
pub fn qpower_zero_count_pmf(q: f64, gamma: f64, n: usize) -> Result<Vec<f64>> {
    let zeros = pmf_from_lambda(&lambda_qpower(q, gamma, n)?)?;
    Ok(reindex_zero_count(&zeros))
}

/// Recovers `lambda` from a full transition row `P_0.` by inverting the
/// inclusion-exclusion formula from the top state down:
///
/// ```text
/// lambda_n = P_0n
/// lambda_r = P_0r / C(n, r) - sum_{j=1}^{n-r} (-1)^j C(n-r, j) lambda_{r+j}
/// ```
///
/// The value obtained for `lambda_0` must come back to one within
/// [`LAMBDA0_TOL`].
pub fn lambda_from_transition(row: &TransitionDistribution) -> Result<LambdaVector> {
    if row.m() != 0 {
        return Err(Error::domain(
            "m",
            format!("lambda needs a row started at 0, got m = {}", row.m()),
        ));
    }
    let n = row.n();
    let mut lam = vec![0.0; n + 1];
    for r in (0..=n).rev() {
        let mut acc = CompensatedSum::new();
        acc.add(row.prob(r) / binomial(n, r));
        for j in 1..=(n - r) {
            let term = binomial(n - r, j) * lam[r + j];
            acc.add(if j % 2 == 0 { -term } else { term });
        }
        lam[r] = acc.value();
    }
    if (lam[0] - 1.0).abs() > LAMBDA0_TOL {
        return Err(Error::Numerical(format!(
            "recovered lambda_0 = {} differs from 1 by more than {LAMBDA0_TOL:e}",
            lam[0]
        )));
    }
    lam[0] = 1.0;
    for x in &mut lam[1..] {
        if *x < -ROUNDING_SLACK || *x > 1.0 + ROUNDING_SLACK {
            return Err(Error::Numerical(format!(
                "recovered lambda {x} outside [0, 1]"
            )));
        }
        *x = x.clamp(0.0, 1.0);
    }
    LambdaVector::new(lam)
}
