//! Maximum-likelihood fitting.
//!
//! Every family is fit on a working scale where the parameters are
//! unconstrained: rates and exponents on the log scale, probabilities on the
//! logit scale, and the beta-binomial correlation as is. The likelihood of a
//! cluster observed from floor `m` is `P_mr(1)`. Each fit runs the
//! quasi-Newton optimizer from [`RESTART_EXPONENTS`] and keeps the best
//! converged run. Standard errors come from the inverse observed information
//! on the natural scale.

mod gof;
mod likelihood;
pub mod optim;
mod regression;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchangeable::beta_binomial_alpha_bound;
use crate::model::{ClusterObservation, RateFamily, RateModelSpec};

pub use gof::{goodness_of_fit, GofCell, GoodnessOfFit};
pub use likelihood::{Group, GroupedData, ParamModel};
pub use optim::{Bounds, OptimOptions, OptimOutcome};
pub use regression::{
    fit_regression_combined, relative_risk, CovariateSummary, RegressionFit, RelativeRisk,
};

/// Starting values on the working scale, one optimizer run each.
pub const RESTART_EXPONENTS: [f64; 5] = [-3.0, -1.5, 0.0, 1.5, 3.0];

/// Lower clamp for log-scale parameters.
pub const LOG_PARAM_FLOOR: f64 = -20.0;
/// Upper clamp for log-scale parameters.
pub const LOG_PARAM_CEILING: f64 = 20.0;
const LOGIT_LIMIT: f64 = 30.0;

/// Families that can be fit by [`fit_mle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitFamily {
    Susceptible1,
    Susceptible2,
    Infectivity1,
    Infectivity2,
    Combined,
    Binomial,
    BetaBinomial,
    /// q-power law on the unaffected units, parameters `(q, gamma)`.
    QPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scale {
    Log,
    Logit,
    Identity,
}

impl FitFamily {
    pub const ALL: [FitFamily; 8] = [
        FitFamily::Susceptible1,
        FitFamily::Susceptible2,
        FitFamily::Infectivity1,
        FitFamily::Infectivity2,
        FitFamily::Combined,
        FitFamily::Binomial,
        FitFamily::BetaBinomial,
        FitFamily::QPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitFamily::Binomial => "binomial",
            FitFamily::BetaBinomial => "beta-binomial",
            FitFamily::QPower => "q-power",
            other => other.rate_family().unwrap().name(),
        }
    }

    pub fn rate_family(self) -> Option<RateFamily> {
        match self {
            FitFamily::Susceptible1 => Some(RateFamily::Susceptible1),
            FitFamily::Susceptible2 => Some(RateFamily::Susceptible2),
            FitFamily::Infectivity1 => Some(RateFamily::Infectivity1),
            FitFamily::Infectivity2 => Some(RateFamily::Infectivity2),
            FitFamily::Combined => Some(RateFamily::Combined),
            _ => None,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitFamily::Binomial => &["p"],
            FitFamily::BetaBinomial => &["p", "a"],
            FitFamily::QPower => &["q", "gamma"],
            other => other.rate_family().unwrap().param_names(),
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    fn scales(self) -> Vec<Scale> {
        match self {
            FitFamily::Binomial => vec![Scale::Logit],
            FitFamily::BetaBinomial => vec![Scale::Logit, Scale::Identity],
            FitFamily::QPower => vec![Scale::Logit, Scale::Logit],
            _ => vec![Scale::Log; self.n_params()],
        }
    }

    /// Rate specification for the counting-process families.
    pub fn rate_spec(self, params: &[f64]) -> Result<Option<RateModelSpec>> {
        match self.rate_family() {
            Some(family) => RateModelSpec::new(family, params.to_vec()).map(Some),
            None => Ok(None),
        }
    }

    /// Checks `params` against the family's natural domain.
    pub fn check_params(self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::domain(
                self.name(),
                format!(
                    "expected {} parameters, got {}",
                    self.n_params(),
                    params.len()
                ),
            ));
        }
        if self.rate_spec(params)?.is_some() {
            return Ok(());
        }
        let names = self.param_names();
        for (i, scale) in self.scales().into_iter().enumerate() {
            let v = params[i];
            let ok = match scale {
                Scale::Logit if self == FitFamily::QPower && i == 1 => (0.0..=1.0).contains(&v),
                Scale::Logit => v > 0.0 && v < 1.0,
                _ => v.is_finite(),
            };
            if !ok {
                return Err(Error::domain(names[i], format!("value {v} out of range")));
            }
        }
        Ok(())
    }

    fn to_natural(self, working: &[f64]) -> Vec<f64> {
        working
            .iter()
            .zip(self.scales())
            .map(|(w, s)| match s {
                Scale::Log => w.exp(),
                Scale::Logit => 1.0 / (1.0 + (-w).exp()),
                Scale::Identity => *w,
            })
            .collect()
    }

    fn bounds(self) -> Bounds {
        let (lower, upper) = self
            .scales()
            .into_iter()
            .map(|s| match s {
                Scale::Log => (LOG_PARAM_FLOOR, LOG_PARAM_CEILING),
                Scale::Logit => (-LOGIT_LIMIT, LOGIT_LIMIT),
                // beta-binomial a: the lower limit is enforced per cluster size
                Scale::Identity => (-1.0, 1e3),
            })
            .unzip();
        Bounds { lower, upper }
    }

    fn start(self, e: f64) -> Vec<f64> {
        self.scales()
            .into_iter()
            .map(|s| match s {
                Scale::Identity => e / 20.0,
                _ => e,
            })
            .collect()
    }
}

impl fmt::Display for FitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "binomial" => Ok(FitFamily::Binomial),
            "betabinomial" => Ok(FitFamily::BetaBinomial),
            "qpower" => Ok(FitFamily::QPower),
            _ => match s.parse::<RateFamily>() {
                Ok(RateFamily::Custom) | Err(_) => Err(Error::domain(
                    "model",
                    format!("unknown model family `{s}`"),
                )),
                Ok(rf) => Ok(FitFamily::ALL
                    .into_iter()
                    .find(|f| f.rate_family() == Some(rf))
                    .unwrap()),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub optim: OptimOptions,
    pub restart_exponents: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optim: OptimOptions::default(),
            restart_exponents: RESTART_EXPONENTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: FitFamily,
    pub param_names: Vec<String>,
    /// Natural-scale estimates.
    pub estimates: Vec<f64>,
    /// `None` where the information matrix gave no usable variance.
    pub se: Vec<Option<f64>>,
    /// Estimate pinned at the working-scale clamp. A pinned parameter that
    /// its family allows to vanish is reported as exactly zero when that
    /// does not lower the likelihood.
    pub at_boundary: Vec<bool>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub chi2: f64,
    /// Total weight, the number of independent clusters.
    pub n_clusters: f64,
    pub converged: bool,
    /// Projected finite-difference gradient norm on the working scale.
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Whether the natural-scale Hessian was negative definite.
    pub hessian_ok: bool,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.estimates.len()
    }

    pub fn model(&self) -> ParamModel {
        ParamModel::Family(self.family, self.estimates.clone())
    }
}

pub fn information_criteria(loglik: f64, n_params: usize, n_clusters: f64) -> (f64, f64) {
    let k = n_params as f64;
    (-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * n_clusters.ln())
}

/// `sum_i w_i log P_{m_i r_i}(1)` under `family` with natural `params`.
pub fn log_likelihood(
    family: FitFamily,
    params: &[f64],
    data: &[ClusterObservation],
) -> Result<f64> {
    family.check_params(params)?;
    check_family_data(family, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    GroupedData::new(data, false)?.log_likelihood(&ParamModel::Family(family, params.to_vec()))
}

fn check_family_data(family: FitFamily, data: &[ClusterObservation]) -> Result<()> {
    if family.rate_family().is_none() {
        if let Some(i) = data.iter().position(|o| o.m != 0) {
            return Err(Error::Data(format!(
                "observation {i} has floor m = {}; {family} has no ascertainment model",
                data[i].m
            )));
        }
    }
    Ok(())
}

fn check_fit_data(data: &[ClusterObservation]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    likelihood::check_data(data)?;
    if data.iter().all(|o| o.m == o.n) {
        return Err(Error::Data(
            "every cluster starts full (m = n); the likelihood is flat".into(),
        ));
    }
    Ok(())
}

pub fn fit_mle(
    family: FitFamily,
    data: &[ClusterObservation],
    options: &FitOptions,
) -> Result<FitResult> {
    check_fit_data(data)?;
    check_family_data(family, data)?;
    let grouped = GroupedData::new(data, false)?;
    let max_n = grouped.groups.iter().map(|g| g.n).max().unwrap_or(1);

    let natural_loglik = |theta: &[f64]| -> f64 {
        if family == FitFamily::BetaBinomial
            && theta[1] <= beta_binomial_alpha_bound(theta[0], max_n)
        {
            return f64::NEG_INFINITY;
        }
        grouped
            .log_likelihood(&ParamModel::Family(family, theta.to_vec()))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let working_loglik = |w: &[f64]| natural_loglik(&family.to_natural(w));

    let bounds = family.bounds();
    let best = run_restarts(&working_loglik, &bounds, options, |e| family.start(e))?;

    let mut estimates = family.to_natural(&best.x);
    let mut loglik = best.value;
    let at_boundary: Vec<bool> = (0..estimates.len())
        .map(|i| bounds.at_bound(&best.x, i))
        .collect();
    // a rate pinned at the log floor may belong exactly at zero (nested model)
    if let Some(rf) = family.rate_family() {
        for i in 0..estimates.len() {
            if bounds.at_lower(&best.x, i) && rf.allows_zero(i) {
                let mut theta = estimates.clone();
                theta[i] = 0.0;
                let ll = natural_loglik(&theta);
                if ll >= loglik {
                    estimates = theta;
                    loglik = ll;
                }
            }
        }
    }
    let free: Vec<usize> = (0..estimates.len()).filter(|&i| !at_boundary[i]).collect();
    let (se, hessian_ok) = natural_se(&natural_loglik, family, &estimates, &free);

    let (aic, bic) = information_criteria(loglik, family.n_params(), grouped.total_weight);
    let model = ParamModel::Family(family, estimates.clone());
    let chi2 = gof::pearson_chi2(&grouped, &model)?;
    Ok(FitResult {
        family,
        param_names: family.param_names().iter().map(|s| s.to_string()).collect(),
        estimates,
        se,
        at_boundary,
        loglik,
        aic,
        bic,
        chi2,
        n_clusters: grouped.total_weight,
        converged: best.converged,
        gradient_norm: best.gradient_norm,
        iterations: best.iterations,
        hessian_ok,
    })
}

/// Runs the optimizer from each restart and keeps the best converged run
/// (or the best run overall when none converged).
fn run_restarts<F: Fn(&[f64]) -> f64>(
    f: &F,
    bounds: &Bounds,
    options: &FitOptions,
    start: impl Fn(f64) -> Vec<f64>,
) -> Result<OptimOutcome> {
    let outcomes: Vec<OptimOutcome> = options
        .restart_exponents
        .iter()
        .filter_map(|&e| optim::maximize(f, &start(e), bounds, &options.optim))
        .collect();
    let pick = |only_converged: bool| {
        outcomes
            .iter()
            .filter(|o| !only_converged || o.converged)
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .cloned()
    };
    pick(true).or_else(|| pick(false)).ok_or_else(|| {
        Error::Optimization(
            "no restart reached a finite log-likelihood; the data may be impossible under this model"
                .into(),
        )
    })
}

/// Standard errors from the inverse negative Hessian of the natural-scale
/// log-likelihood over the free parameters.
fn natural_se<F: Fn(&[f64]) -> f64>(
    f: &F,
    family: FitFamily,
    theta: &[f64],
    free: &[usize],
) -> (Vec<Option<f64>>, bool) {
    let mut se = vec![None; theta.len()];
    if free.is_empty() {
        return (se, false);
    }
    let scales = family.scales();
    let steps: Vec<f64> = theta
        .iter()
        .zip(&scales)
        .map(|(&t, s)| {
            let h = optim::fd_step_scale() * t.abs().max(1.0);
            match s {
                Scale::Log => h.min(t / 4.0),
                Scale::Logit => h.min(t / 4.0).min((1.0 - t) / 4.0),
                Scale::Identity => h,
            }
        })
        .collect();
    let fx = f(theta);
    let h = optim::fd_hessian(f, theta, fx, free, &steps);
    match invert_negative_definite(&h) {
        Some(cov) => {
            for (a, &i) in free.iter().enumerate() {
                se[i] = Some(cov[(a, a)].sqrt());
            }
            (se, true)
        }
        None => (se, false),
    }
}

/// `(-h)^{-1}` when `-h` is positive definite.
pub(crate) fn invert_negative_definite(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let neg = -h.clone();
    let sym = (&neg + neg.transpose()) * 0.5;
    let chol = sym.cholesky()?;
    let inv = chol.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterObservation as Obs;

    #[test]
    fn family_names_round_trip() {
        for f in FitFamily::ALL {
            assert_eq!(f.name().parse::<FitFamily>().unwrap(), f);
        }
        assert_eq!(
            "Beta-Binomial".parse::<FitFamily>().unwrap(),
            FitFamily::BetaBinomial
        );
        assert!("custom".parse::<FitFamily>().is_err());
        assert!("altham".parse::<FitFamily>().is_err());
    }

    #[test]
    fn loglik_single_cluster() {
        let data = [Obs::new(2, 1)];
        let ll = log_likelihood(FitFamily::Susceptible1, &[std::f64::consts::LN_2], &data).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn loglik_empty_and_full_clusters() {
        assert_eq!(
            log_likelihood(FitFamily::Combined, &[0.3, 0.2], &[]).unwrap(),
            0.0
        );
        let data = [Obs::new(3, 3).with_floor(3)];
        assert_eq!(
            log_likelihood(FitFamily::Combined, &[0.3, 0.2], &data).unwrap(),
            0.0
        );
    }

    #[test]
    fn loglik_impossible_observation() {
        let data = [Obs::new(3, 2)];
        let ll = log_likelihood(FitFamily::Infectivity1, &[0.5], &data).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_domain_errors() {
        let data = [Obs::new(3, 2)];
        assert!(log_likelihood(FitFamily::Susceptible1, &[-1.0], &data).is_err());
        assert!(log_likelihood(FitFamily::Binomial, &[1.5], &data).is_err());
        assert!(log_likelihood(FitFamily::Combined, &[0.1], &data).is_err());
        let asc = [Obs::new(3, 2).with_floor(1)];
        assert!(matches!(
            log_likelihood(FitFamily::Binomial, &[0.3], &asc),
            Err(Error::Data(_))
        ));
        let bad = [Obs::new(3, 4)];
        assert!(log_likelihood(FitFamily::Binomial, &[0.3], &bad).is_err());
    }

    #[test]
    fn susceptible1_mle_is_analytic() {
        // success fraction exactly one half
        let data = vec![
            Obs::new(4, 2).with_weight(3.0),
            Obs::new(2, 0).with_weight(2.0),
            Obs::new(2, 2).with_weight(2.0),
            Obs::new(6, 3),
        ];
        let fit = fit_mle(FitFamily::Susceptible1, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.estimates[0] - std::f64::consts::LN_2).abs() < 1e-6);
        assert!(fit.gradient_norm < 1e-6);
        let (aic, bic) = information_criteria(fit.loglik, 1, 8.0);
        assert_eq!(fit.aic, aic);
        assert_eq!(fit.bic, bic);
        assert_eq!(fit.n_clusters, 8.0);
        assert!(fit.se[0].unwrap() > 0.0);
    }

    #[test]
    fn infectivity_without_floor_cannot_fit() {
        let data = vec![Obs::new(4, 2), Obs::new(3, 1)];
        assert!(matches!(
            fit_mle(FitFamily::Infectivity1, &data, &FitOptions::default()),
            Err(Error::Optimization(_))
        ));
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        assert!(fit_mle(FitFamily::Susceptible1, &[], &FitOptions::default()).is_err());
        let full = [Obs::new(2, 2).with_floor(2)];
        assert!(fit_mle(FitFamily::Susceptible1, &full, &FitOptions::default()).is_err());
    }

    #[test]
    fn vanishing_infectivity_is_reported_as_zero() {
        // underdispersed counts drive beta to the floor
        let data = vec![
            Obs::new(4, 2).with_weight(30.0),
            Obs::new(4, 1).with_weight(20.0),
            Obs::new(4, 3).with_weight(20.0),
            Obs::new(4, 0).with_weight(2.0),
        ];
        let opts = FitOptions::default();
        let comb = fit_mle(FitFamily::Combined, &data, &opts).unwrap();
        let s1 = fit_mle(FitFamily::Susceptible1, &data, &opts).unwrap();
        assert!(comb.at_boundary[1]);
        assert_eq!(comb.estimates[1], 0.0);
        assert!(
            comb.loglik >= s1.loglik - 1e-12,
            "{} vs {}",
            comb.loglik,
            s1.loglik
        );
    }

    #[test]
    fn boundary_estimate_is_flagged() {
        // all zero counts push alpha to the floor
        let data = vec![Obs::new(3, 0).with_weight(10.0)];
        let fit = fit_mle(FitFamily::Susceptible1, &data, &FitOptions::default()).unwrap();
        assert!(fit.at_boundary[0]);
        assert!(fit.se[0].is_none());
        assert!((fit.estimates[0] - LOG_PARAM_FLOOR.exp()).abs() < 1e-15);
        assert!(fit.converged);
    }
}
