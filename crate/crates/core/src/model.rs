//! Cluster observations and the parametric rate families.
//!
//! A cluster of `n` units is described by a pure-birth process on
//! `{0, ..., n}` whose jump rate out of state `k` is `mu[k]`. The named
//! families below build that rate vector from a handful of parameters:
//!
//! | family        | `mu[k]`                        |
//! |---------------|--------------------------------|
//! | Susceptible1  | `alpha (n-k)`                  |
//! | Susceptible2  | `alpha (n-k)^gamma`            |
//! | Infectivity1  | `beta k (n-k)`                 |
//! | Infectivity2  | `beta k^eta (n-k)^gamma`       |
//! | Combined      | `alpha (n-k) + beta k (n-k)`   |
//!
//! `mu[n]` is always zero, and infectivity rates vanish at `k = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed cluster, possibly standing in for `weight` identical rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterObservation {
    pub n: usize,
    pub r: usize,
    /// Units already affected when observation starts (ascertainment floor).
    pub m: usize,
    pub weight: f64,
    pub covariates: Vec<f64>,
}

impl ClusterObservation {
    pub fn new(n: usize, r: usize) -> Self {
        Self {
            n,
            r,
            m: 0,
            weight: 1.0,
            covariates: Vec::new(),
        }
    }

    pub fn with_floor(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }
}

/// Outcome of [`validate_observation`]: empty means the row is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "pass")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

pub fn validate_observation(obs: &ClusterObservation) -> ValidationReport {
    let mut violations = Vec::new();
    if obs.n == 0 {
        violations.push("n ≥ 1".to_string());
    }
    if obs.r > obs.n {
        violations.push("r ≤ n".to_string());
    }
    if obs.m > obs.r {
        violations.push("m ≤ r".to_string());
    }
    if !(obs.weight.is_finite() && obs.weight > 0.0) {
        violations.push("weight > 0".to_string());
    }
    if let Some(j) = obs.covariates.iter().position(|x| !x.is_finite()) {
        violations.push(format!("covariate {j} finite"));
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateFamily {
    Susceptible1,
    Susceptible2,
    Infectivity1,
    Infectivity2,
    Combined,
    Custom,
}

impl RateFamily {
    pub const NAMED: [RateFamily; 5] = [
        RateFamily::Susceptible1,
        RateFamily::Susceptible2,
        RateFamily::Infectivity1,
        RateFamily::Infectivity2,
        RateFamily::Combined,
    ];

    /// Parameter names in storage order. Empty for `Custom`.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            RateFamily::Susceptible1 => &["alpha"],
            RateFamily::Susceptible2 => &["alpha", "gamma"],
            RateFamily::Infectivity1 => &["beta"],
            RateFamily::Infectivity2 => &["beta", "eta", "gamma"],
            RateFamily::Combined => &["alpha", "beta"],
            RateFamily::Custom => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateFamily::Susceptible1 => "susceptible1",
            RateFamily::Susceptible2 => "susceptible2",
            RateFamily::Infectivity1 => "infectivity1",
            RateFamily::Infectivity2 => "infectivity2",
            RateFamily::Combined => "combined",
            RateFamily::Custom => "custom",
        }
    }

    /// Whether parameter `i` may be exactly zero.
    pub fn allows_zero(self, i: usize) -> bool {
        match self {
            RateFamily::Susceptible1 | RateFamily::Infectivity1 => false,
            RateFamily::Susceptible2 => i == 1,
            RateFamily::Infectivity2 => i >= 1,
            // zero on either side gives the nested single-source models
            RateFamily::Combined => true,
            RateFamily::Custom => true,
        }
    }
}

impl fmt::Display for RateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "susceptible1" => Ok(RateFamily::Susceptible1),
            "susceptible2" => Ok(RateFamily::Susceptible2),
            "infectivity1" | "infective1" => Ok(RateFamily::Infectivity1),
            "infectivity2" | "infective2" => Ok(RateFamily::Infectivity2),
            "combined" => Ok(RateFamily::Combined),
            "custom" => Ok(RateFamily::Custom),
            _ => Err(Error::domain(
                "family",
                format!("unknown rate family `{s}`"),
            )),
        }
    }
}

/// A rate family together with its parameter vector.
///
/// For `Custom` the parameters are the rate table itself, `mu[0..=n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModelSpec {
    pub family: RateFamily,
    pub params: Vec<f64>,
}

impl RateModelSpec {
    pub fn new(family: RateFamily, params: Vec<f64>) -> Result<Self> {
        let spec = Self { family, params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn susceptible1(alpha: f64) -> Result<Self> {
        Self::new(RateFamily::Susceptible1, vec![alpha])
    }

    pub fn susceptible2(alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(RateFamily::Susceptible2, vec![alpha, gamma])
    }

    pub fn infectivity1(beta: f64) -> Result<Self> {
        Self::new(RateFamily::Infectivity1, vec![beta])
    }

    pub fn infectivity2(beta: f64, eta: f64, gamma: f64) -> Result<Self> {
        Self::new(RateFamily::Infectivity2, vec![beta, eta, gamma])
    }

    pub fn combined(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(RateFamily::Combined, vec![alpha, beta])
    }

    pub fn custom(rates: Vec<f64>) -> Result<Self> {
        Self::new(RateFamily::Custom, rates)
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == RateFamily::Custom {
            // shape is checked against n in rate_vector
            return RateSchedule::new(self.params.clone()).map(|_| ());
        }
        let names = self.family.param_names();
        if self.params.len() != names.len() {
            return Err(Error::domain(
                self.family.name(),
                format!(
                    "expected {} parameters, got {}",
                    names.len(),
                    self.params.len()
                ),
            ));
        }
        for (i, (&v, name)) in self.params.iter().zip(names).enumerate() {
            let ok = v.is_finite() && (v > 0.0 || (v == 0.0 && self.family.allows_zero(i)));
            if !ok {
                let bound = if self.family.allows_zero(i) {
                    "≥ 0"
                } else {
                    "> 0"
                };
                return Err(Error::domain(
                    *name,
                    format!("must be finite and {bound}, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Log-linear covariate model for the combined family:
/// `log alpha = z . phi`, `log beta = z . psi` with `z = (1, covariates...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedRegression {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl CombinedRegression {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() || phi.len() != psi.len() {
            return Err(Error::domain(
                "phi/psi",
                format!(
                    "coefficient vectors must be nonempty and equally long, got {} and {}",
                    phi.len(),
                    psi.len()
                ),
            ));
        }
        if phi.iter().chain(&psi).any(|x| !x.is_finite()) {
            return Err(Error::domain("phi/psi", "coefficients must be finite"));
        }
        Ok(Self { phi, psi })
    }

    /// Number of covariates (excluding the intercept).
    pub fn dim(&self) -> usize {
        self.phi.len() - 1
    }

    fn linear(coef: &[f64], covariates: &[f64]) -> f64 {
        coef[0]
            + coef[1..]
                .iter()
                .zip(covariates)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// `(alpha, beta)` for a cluster with the given covariates.
    pub fn rates_at(&self, covariates: &[f64]) -> Result<(f64, f64)> {
        if covariates.len() != self.dim() {
            return Err(Error::domain(
                "covariates",
                format!(
                    "expected {} covariates, got {}",
                    self.dim(),
                    covariates.len()
                ),
            ));
        }
        Ok((
            Self::linear(&self.phi, covariates).exp(),
            Self::linear(&self.psi, covariates).exp(),
        ))
    }

    pub fn spec_at(&self, covariates: &[f64]) -> Result<RateModelSpec> {
        let (alpha, beta) = self.rates_at(covariates)?;
        RateModelSpec::combined(alpha, beta)
    }
}

/// Jump rates `mu[0..=n]` of a pure-birth process capped at `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    rates: Vec<f64>,
}

impl RateSchedule {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.len() < 2 {
            return Err(Error::domain("n", "rate schedule needs n ≥ 1"));
        }
        if let Some(k) = rates.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::domain(
                format!("mu[{k}]"),
                format!("rates must be finite and nonnegative, got {}", rates[k]),
            ));
        }
        if *rates.last().unwrap() != 0.0 {
            return Err(Error::domain(
                format!("mu[{}]", rates.len() - 1),
                "the top state must be absorbing (mu[n] = 0)",
            ));
        }
        Ok(Self { rates })
    }

    pub fn n(&self) -> usize {
        self.rates.len() - 1
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, k: usize) -> f64 {
        self.rates[k]
    }

    /// Divides every rate by `factor`; paired with multiplying time by
    /// `factor` this leaves transition probabilities unchanged.
    pub fn scaled_down(&self, factor: f64) -> Self {
        Self {
            rates: self.rates.iter().map(|x| x / factor).collect(),
        }
    }

    /// First state at or above `m` that cannot be left.
    pub fn first_absorbing_from(&self, m: usize) -> usize {
        (m..=self.n())
            .find(|&k| self.rates[k] == 0.0)
            .unwrap_or(self.n())
    }
}

/// `x^e` with `0^0 = 1`.
fn pow0(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

pub fn rate_vector(spec: &RateModelSpec, n: usize) -> Result<RateSchedule> {
    if n == 0 {
        return Err(Error::domain("n", "cluster size must be positive"));
    }
    spec.validate()?;
    let p = &spec.params;
    if spec.family == RateFamily::Custom {
        if p.len() != n + 1 {
            return Err(Error::domain(
                "custom",
                format!(
                    "rate table has {} entries, expected n + 1 = {}",
                    p.len(),
                    n + 1
                ),
            ));
        }
        return RateSchedule::new(p.clone());
    }
    let nf = n as f64;
    let rates = (0..=n)
        .map(|k| {
            if k == n {
                return 0.0;
            }
            let kf = k as f64;
            let free = nf - kf;
            match spec.family {
                RateFamily::Susceptible1 => p[0] * free,
                RateFamily::Susceptible2 => p[0] * pow0(free, p[1]),
                RateFamily::Infectivity1 => p[0] * kf * free,
                RateFamily::Infectivity2 if k == 0 => 0.0,
                RateFamily::Infectivity2 => p[0] * pow0(kf, p[1]) * pow0(free, p[2]),
                RateFamily::Combined => p[0] * free + p[1] * kf * free,
                RateFamily::Custom => unreachable!(),
            }
        })
        .collect();
    RateSchedule::new(rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn susceptible1_rates() {
        let s = rate_vector(&RateModelSpec::susceptible1(0.5).unwrap(), 3).unwrap();
        assert_eq!(s.rates(), &[1.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn combined_rates_small_cluster() {
        let s = rate_vector(&RateModelSpec::combined(0.275, 0.300).unwrap(), 4).unwrap();
        assert!(close(s.rates(), &[1.100, 1.725, 1.750, 1.175, 0.0], 1e-12));
    }

    #[test]
    fn infectivity1_rates() {
        let s = rate_vector(&RateModelSpec::infectivity1(1.0).unwrap(), 3).unwrap();
        assert_eq!(s.rates(), &[0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn infectivity2_zero_eta_keeps_mu0_zero() {
        let s = rate_vector(&RateModelSpec::infectivity2(2.0, 0.0, 0.5).unwrap(), 4).unwrap();
        let want: Vec<f64> = (0..=4)
            .map(|k| {
                if k == 0 || k == 4 {
                    0.0
                } else {
                    2.0 * (4.0 - k as f64).sqrt()
                }
            })
            .collect();
        assert!(close(s.rates(), &want, 1e-15));
    }

    #[test]
    fn nested_families_match() {
        for n in 1..=10 {
            let a = rate_vector(&RateModelSpec::combined(0.7, 0.0).unwrap(), n).unwrap();
            let b = rate_vector(&RateModelSpec::susceptible1(0.7).unwrap(), n).unwrap();
            assert_eq!(a, b);

            let a = rate_vector(&RateModelSpec::combined(0.0, 0.4).unwrap(), n).unwrap();
            let b = rate_vector(&RateModelSpec::infectivity1(0.4).unwrap(), n).unwrap();
            assert_eq!(a, b);
            let c = rate_vector(&RateModelSpec::custom(b.rates().to_vec()).unwrap(), n).unwrap();
            assert_eq!(a, c);

            let a = rate_vector(&RateModelSpec::susceptible2(0.3, 1.0).unwrap(), n).unwrap();
            let b = rate_vector(&RateModelSpec::susceptible1(0.3).unwrap(), n).unwrap();
            assert!(close(a.rates(), b.rates(), 1e-15));

            let a = rate_vector(&RateModelSpec::infectivity2(0.3, 1.0, 1.0).unwrap(), n).unwrap();
            let b = rate_vector(&RateModelSpec::infectivity1(0.3).unwrap(), n).unwrap();
            assert!(close(a.rates(), b.rates(), 1e-15));
        }
    }

    #[test]
    fn domain_errors_name_the_parameter() {
        match RateModelSpec::susceptible2(0.3, -1.0) {
            Err(Error::Domain { name, .. }) => assert_eq!(name, "gamma"),
            other => panic!("{other:?}"),
        }
        assert!(RateModelSpec::susceptible1(0.0).is_err());
        assert!(RateModelSpec::infectivity1(f64::NAN).is_err());
        let spec = RateModelSpec::susceptible1(1.0).unwrap();
        assert!(matches!(rate_vector(&spec, 0), Err(Error::Domain { .. })));
        assert!(RateModelSpec::custom(vec![1.0, 1.0]).is_err());
        let custom = RateModelSpec::custom(vec![1.0, 0.0]).unwrap();
        assert!(rate_vector(&custom, 2).is_err());
    }

    #[test]
    fn observation_validation() {
        let ok = ClusterObservation::new(4, 2).with_floor(1);
        assert!(validate_observation(&ok).is_valid());

        let bad = ClusterObservation::new(4, 5);
        assert_eq!(validate_observation(&bad).violations, vec!["r ≤ n"]);

        let bad = ClusterObservation::new(3, 1).with_floor(2);
        assert_eq!(validate_observation(&bad).violations, vec!["m ≤ r"]);

        let bad = ClusterObservation::new(3, 1)
            .with_weight(0.0)
            .with_covariates(vec![1.0, f64::INFINITY]);
        assert_eq!(validate_observation(&bad).violations.len(), 2);
    }

    #[test]
    fn family_names_parse() {
        for f in RateFamily::NAMED {
            assert_eq!(f.name().parse::<RateFamily>().unwrap(), f);
        }
        assert_eq!(
            "Infective-1".parse::<RateFamily>().unwrap(),
            RateFamily::Infectivity1
        );
        assert!("altham".parse::<RateFamily>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rates_nonnegative_with_absorbing_top(
                fam in 0usize..5,
                a in 1e-3f64..20.0,
                b in 0.0f64..3.0,
                c in 0.0f64..3.0,
                n in 1usize..30,
            ) {
                let family = RateFamily::NAMED[fam];
                let params = match family {
                    RateFamily::Susceptible1 | RateFamily::Infectivity1 => vec![a],
                    RateFamily::Susceptible2 => vec![a, b],
                    RateFamily::Infectivity2 => vec![a, b, c],
                    _ => vec![a, b],
                };
                let s = rate_vector(&RateModelSpec::new(family, params).unwrap(), n).unwrap();
                prop_assert_eq!(s.rates().len(), n + 1);
                prop_assert_eq!(s.rate(n), 0.0);
                prop_assert!(s.rates().iter().all(|x| x.is_finite() && *x >= 0.0));
            }
        }
    }
}
