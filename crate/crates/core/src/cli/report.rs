//! JSON fit reports and their plain-text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fit::{
    relative_risk, CovariateSummary, FitFamily, FitResult, GofCell, GoodnessOfFit, ParamModel,
    RegressionFit, RelativeRisk,
};
use crate::model::CombinedRegression;

use super::CliError;

/// Significant digits kept for every real number in a report.
pub const REPORT_DIGITS: usize = 12;

/// Model id used for the combined-family regression.
pub const REGRESSION_MODEL: &str = "combined-regression";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    #[serde(default)]
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSection {
    pub covariates: Vec<String>,
    /// Covariance of `(phi, psi)`; empty when unavailable.
    pub covariance: Vec<Vec<f64>>,
    pub by_pattern: Vec<CovariateSummary>,
    /// Relative risk at each distinct value of the first covariate.
    pub relative_risk: Vec<RelativeRisk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofSection {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub chi2: f64,
    pub cells: Vec<GofCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub rows: usize,
    pub clusters: f64,
    pub parameters: Vec<ParamEntry>,
    /// Transformations of the estimates, such as the equivalent binomial
    /// probability of the susceptible1 rate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derived: Vec<ParamEntry>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub chi2: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub hessian_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gof: Option<GofSection>,
}

impl Report {
    pub fn from_fit(fit: &FitResult, rows: usize) -> Self {
        let parameters = (0..fit.n_params())
            .map(|i| ParamEntry {
                name: fit.param_names[i].clone(),
                estimate: fit.estimates[i],
                se: fit.se[i],
                at_boundary: fit.at_boundary[i],
            })
            .collect();
        let mut derived = Vec::new();
        if fit.family == FitFamily::Susceptible1 {
            let a = fit.estimates[0];
            derived.push(ParamEntry {
                name: "p".into(),
                estimate: -(-a).exp_m1(),
                se: fit.se[0].map(|s| (-a).exp() * s),
                at_boundary: fit.at_boundary[0],
            });
        }
        Self {
            model: fit.family.name().into(),
            rows,
            clusters: fit.n_clusters,
            parameters,
            derived,
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            chi2: fit.chi2,
            converged: fit.converged,
            gradient_norm: fit.gradient_norm,
            iterations: fit.iterations,
            hessian_ok: fit.hessian_ok,
            regression: None,
            gof: None,
        }
    }

    pub fn from_regression(fit: &RegressionFit, rows: usize) -> Self {
        let mut labels = vec!["intercept".to_string()];
        labels.extend(fit.covariate_names.iter().cloned());
        let mut parameters = Vec::new();
        for (prefix, coef, se) in [
            ("phi", &fit.phi, &fit.se_phi),
            ("psi", &fit.psi, &fit.se_psi),
        ] {
            for (j, label) in labels.iter().enumerate() {
                parameters.push(ParamEntry {
                    name: format!("{prefix}[{label}]"),
                    estimate: coef[j],
                    se: se[j],
                    at_boundary: false,
                });
            }
        }
        let mut doses: Vec<f64> = fit
            .summaries
            .iter()
            .filter_map(|s| s.covariates.first().copied())
            .collect();
        doses.sort_by(f64::total_cmp);
        doses.dedup();
        let rr = doses
            .into_iter()
            .filter_map(|d| relative_risk(fit, d).ok())
            .collect();
        Self {
            model: REGRESSION_MODEL.into(),
            rows,
            clusters: fit.n_clusters,
            parameters,
            derived: Vec::new(),
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            chi2: fit.chi2,
            converged: fit.converged,
            gradient_norm: fit.gradient_norm,
            iterations: fit.iterations,
            hessian_ok: fit.hessian_ok,
            regression: Some(RegressionSection {
                covariates: fit.covariate_names.clone(),
                covariance: fit.covariance.clone(),
                by_pattern: fit.summaries.clone(),
                relative_risk: rr,
            }),
            gof: None,
        }
    }

    /// Rebuilds the fitted model from the stored estimates.
    pub fn param_model(&self) -> Result<(ParamModel, usize), CliError> {
        let values: Vec<f64> = self.parameters.iter().map(|p| p.estimate).collect();
        if self.model == REGRESSION_MODEL {
            let half = values.len() / 2;
            let reg = CombinedRegression::new(values[..half].to_vec(), values[half..].to_vec())
                .map_err(CliError::from)?;
            return Ok((ParamModel::Regression(reg), values.len()));
        }
        let family: FitFamily = self.model.parse().map_err(CliError::from)?;
        family.check_params(&values).map_err(CliError::from)?;
        Ok((ParamModel::Family(family, values), family.n_params()))
    }

    pub fn set_gof(&mut self, gof: GoodnessOfFit) {
        self.gof = Some(GofSection {
            loglik: gof.loglik,
            aic: gof.aic,
            bic: gof.bic,
            chi2: gof.chi2,
            cells: gof.cells,
        });
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut value = serde_json::to_value(self)
            .map_err(|e| CliError::io(format!("serialize report: {e}")))?;
        round_numbers(&mut value);
        let mut text = serde_json::to_string_pretty(&value)
            .map_err(|e| CliError::io(format!("serialize report: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::parse(format!("report: {e}")))
    }

    /// Fixed-width table with three decimals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model: {}  ({} clusters, {} rows)",
            self.model,
            fmt3(self.clusters),
            self.rows
        );
        let _ = writeln!(out, "{:<24}{:>12}{:>12}", "parameter", "estimate", "se");
        for p in self.parameters.iter().chain(&self.derived) {
            let flag = if p.at_boundary { "  (boundary)" } else { "" };
            let se = p.se.map(fmt3).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<24}{:>12}{:>12}{flag}",
                p.name,
                fmt3(p.estimate),
                se
            );
        }
        let _ = writeln!(
            out,
            "L = {}  AIC = {}  BIC = {}  chi2 = {}",
            fmt3(self.loglik),
            fmt3(self.aic),
            fmt3(self.bic),
            fmt3(self.chi2)
        );
        if let Some(reg) = &self.regression {
            if let Some(first) = reg.covariates.first() {
                let _ = writeln!(
                    out,
                    "{:<12}{:>10}{:>10}{:>10}{:>10}",
                    first, "alpha", "se", "beta", "se"
                );
                for s in &reg.by_pattern {
                    let dash = |v: Option<f64>| v.map(fmt3).unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        out,
                        "{:<12}{:>10}{:>10}{:>10}{:>10}",
                        fmt3(s.covariates[0]),
                        fmt3(s.alpha),
                        dash(s.se_alpha),
                        fmt3(s.beta),
                        dash(s.se_beta)
                    );
                }
                let _ = writeln!(out, "{:<12}{:>10}{:>10}", first, "RR", "se");
                for rr in &reg.relative_risk {
                    let se = rr.se.map(fmt3).unwrap_or_else(|| "-".into());
                    let _ = writeln!(out, "{:<12}{:>10}{:>10}", fmt3(rr.d), fmt3(rr.rr), se);
                }
            }
        }
        if !self.converged {
            let _ = writeln!(
                out,
                "warning: optimizer did not converge (gradient norm {:e})",
                self.gradient_norm
            );
        }
        out
    }
}

fn fmt3(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        "-".into()
    }
}

/// `x` rounded to [`REPORT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", REPORT_DIGITS - 1, x).parse().unwrap()
}

fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap());
            *value = serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}
