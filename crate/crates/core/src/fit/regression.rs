//! Log-linear covariate regression for the combined family.
//!
//! Covariates are centred and scaled before optimization; coefficients and
//! their covariance are mapped back to the original scale afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterObservation, CombinedRegression};

use super::likelihood::{GroupedData, ParamModel};
use super::optim::{self, Bounds};
use super::{
    check_fit_data, fit_mle, gof, information_criteria, invert_negative_definite, run_restarts,
    FitFamily, FitOptions,
};

/// Bound on every standardized coefficient.
const COEF_LIMIT: f64 = 60.0;
const RANK_TOL: f64 = 1e-10;

/// Fitted `alpha` and `beta` at one covariate pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub covariates: Vec<f64>,
    pub weight: f64,
    pub alpha: f64,
    /// Delta-method SE of `alpha`, `alpha * se(log alpha)`.
    pub se_alpha: Option<f64>,
    pub se_log_alpha: Option<f64>,
    pub beta: f64,
    pub se_beta: Option<f64>,
    pub se_log_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub covariate_names: Vec<String>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub se_phi: Vec<Option<f64>>,
    pub se_psi: Vec<Option<f64>>,
    /// Covariance of `(phi, psi)` stacked in that order; empty when the
    /// Hessian was not negative definite.
    pub covariance: Vec<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub chi2: f64,
    pub n_clusters: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub hessian_ok: bool,
    /// One entry per distinct covariate pattern, in sorted order.
    pub summaries: Vec<CovariateSummary>,
}

impl RegressionFit {
    pub fn n_params(&self) -> usize {
        self.phi.len() + self.psi.len()
    }

    pub fn coefficients(&self) -> CombinedRegression {
        CombinedRegression {
            phi: self.phi.clone(),
            psi: self.psi.clone(),
        }
    }

    pub fn model(&self) -> ParamModel {
        ParamModel::Regression(self.coefficients())
    }

    fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        if self.covariance.is_empty() {
            return None;
        }
        let k = self.covariance.len();
        Some(DMatrix::from_fn(k, k, |i, j| self.covariance[i][j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeRisk {
    pub d: f64,
    pub rr: f64,
    pub se: Option<f64>,
}

/// `RR = exp(phi_1 d)` with delta-method SE `|d| RR se(phi_1)`.
pub fn relative_risk(fit: &RegressionFit, d: f64) -> Result<RelativeRisk> {
    if fit.phi.len() < 2 {
        return Err(Error::domain(
            "phi",
            "relative risk needs at least one covariate coefficient",
        ));
    }
    let rr = (fit.phi[1] * d).exp();
    let se = if d == 0.0 {
        Some(0.0)
    } else {
        fit.se_phi[1].map(|s| d.abs() * rr * s)
    };
    Ok(RelativeRisk { d, rr, se })
}

/// Centring and scaling of each covariate column.
struct Standardization {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardization {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }

    /// Linear map from standardized to original coefficients for one of
    /// `phi` or `psi`.
    fn block(&self) -> DMatrix<f64> {
        let k = self.center.len() + 1;
        let mut t = DMatrix::identity(k, k);
        for j in 0..self.center.len() {
            t[(j + 1, j + 1)] = 1.0 / self.scale[j];
            t[(0, j + 1)] = -self.center[j] / self.scale[j];
        }
        t
    }
}

/// Weighted column summaries; fails on constant columns or collinearity.
fn standardize(data: &[ClusterObservation], names: &[String]) -> Result<Standardization> {
    let p = names.len();
    let total: f64 = data.iter().map(|o| o.weight).sum();
    let mut center = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let mean = data.iter().map(|o| o.weight * o.covariates[j]).sum::<f64>() / total;
        let var = data
            .iter()
            .map(|o| o.weight * (o.covariates[j] - mean).powi(2))
            .sum::<f64>()
            / total;
        let sd = var.sqrt();
        if sd.is_nan() || sd <= RANK_TOL * mean.abs().max(1.0) {
            return Err(Error::RankDeficient(vec![
                "intercept".into(),
                names[j].clone(),
            ]));
        }
        center[j] = mean;
        scale[j] = sd;
    }
    let st = Standardization { center, scale };

    // Gram-Schmidt over the standardized columns to name dependencies
    let rows: Vec<Vec<f64>> = data
        .iter()
        .map(|o| {
            let w = o.weight.sqrt();
            st.apply(&o.covariates).into_iter().map(|v| v * w).collect()
        })
        .collect();
    let column = |j: usize| DVector::from_iterator(rows.len(), rows.iter().map(|r| r[j]));
    let mut basis: Vec<(usize, DVector<f64>)> = Vec::new();
    for j in 0..p {
        let col = column(j);
        let mut resid = col.clone();
        for (_, q) in &basis {
            resid -= q * q.dot(&resid);
        }
        if resid.norm() <= 1e-8 * col.norm() {
            let kept: Vec<usize> = basis.iter().map(|(i, _)| *i).collect();
            let a = DMatrix::from_fn(rows.len(), kept.len(), |r, c| rows[r][kept[c]]);
            let coef = a
                .clone()
                .svd(true, true)
                .solve(&col, RANK_TOL)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let mut involved: Vec<String> = kept
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-6)
                .map(|(i, _)| names[*i].clone())
                .collect();
            involved.push(names[j].clone());
            return Err(Error::RankDeficient(involved));
        }
        let q = &resid / resid.norm();
        basis.push((j, q));
    }
    Ok(st)
}

/// Fits `log alpha = z . phi`, `log beta = z . psi` with
/// `z = (1, covariates)`. `names` labels the covariate columns, which every
/// observation must carry in that order.
pub fn fit_regression_combined(
    data: &[ClusterObservation],
    names: &[String],
    options: &FitOptions,
) -> Result<RegressionFit> {
    check_fit_data(data)?;
    let p = names.len();
    if let Some(i) = data.iter().position(|o| o.covariates.len() != p) {
        return Err(Error::Data(format!(
            "observation {i} has {} covariates, expected {p}",
            data[i].covariates.len()
        )));
    }
    let st = standardize(data, names)?;
    let scaled: Vec<ClusterObservation> = data
        .iter()
        .map(|o| o.clone().with_covariates(st.apply(&o.covariates)))
        .collect();
    let grouped = GroupedData::new(&scaled, true)?;

    let k = p + 1;
    let split = |x: &[f64]| CombinedRegression {
        phi: x[..k].to_vec(),
        psi: x[k..].to_vec(),
    };
    let f = |x: &[f64]| {
        grouped
            .log_likelihood(&ParamModel::Regression(split(x)))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let bounds = Bounds {
        lower: vec![-COEF_LIMIT; 2 * k],
        upper: vec![COEF_LIMIT; 2 * k],
    };

    // intercept-only combined fit seeds one extra start
    let base = fit_mle(FitFamily::Combined, data, options)?;
    let seed_start = |e: Option<f64>| {
        let mut x = vec![0.0; 2 * k];
        match e {
            Some(e) => {
                x[0] = e;
                x[k] = e;
            }
            None => {
                x[0] = base.estimates[0].ln().max(-COEF_LIMIT);
                x[k] = base.estimates[1].ln().max(-COEF_LIMIT);
            }
        }
        x
    };
    let mut restart_options = options.clone();
    restart_options.restart_exponents.push(f64::NAN);
    let best = run_restarts(&f, &bounds, &restart_options, |e| {
        seed_start(if e.is_nan() { None } else { Some(e) })
    })?;

    // back to the original covariate scale
    let block = st.block();
    let mut t = DMatrix::zeros(2 * k, 2 * k);
    t.view_mut((0, 0), (k, k)).copy_from(&block);
    t.view_mut((k, k), (k, k)).copy_from(&block);
    let coef = &t * DVector::from_column_slice(&best.x);
    let (phi, psi) = (
        coef.rows(0, k).iter().copied().collect(),
        coef.rows(k, k).iter().copied().collect(),
    );

    let free: Vec<usize> = (0..2 * k)
        .filter(|&i| !bounds.at_bound(&best.x, i))
        .collect();
    let covariance = if free.len() == 2 * k {
        let h = optim::fd_hessian(
            &f,
            &best.x,
            best.value,
            &free,
            &optim::default_steps(&best.x),
        );
        invert_negative_definite(&h).map(|c| &t * c * t.transpose())
    } else {
        None
    };
    let hessian_ok = covariance.is_some();
    let se_of = |i: usize| covariance.as_ref().map(|c| c[(i, i)].max(0.0).sqrt());

    let loglik = best.value;
    let n_params = 2 * k;
    let (aic, bic) = information_criteria(loglik, n_params, grouped.total_weight);
    let coefficients = CombinedRegression { phi, psi };
    let original = GroupedData::new(data, true)?;
    let chi2 = gof::pearson_chi2(&original, &ParamModel::Regression(coefficients.clone()))?;

    let mut fit = RegressionFit {
        covariate_names: names.to_vec(),
        se_phi: (0..k).map(se_of).collect(),
        se_psi: (k..2 * k).map(se_of).collect(),
        phi: coefficients.phi,
        psi: coefficients.psi,
        covariance: covariance
            .as_ref()
            .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
            .unwrap_or_default(),
        loglik,
        aic,
        bic,
        chi2,
        n_clusters: grouped.total_weight,
        converged: best.converged,
        gradient_norm: best.gradient_norm,
        iterations: best.iterations,
        hessian_ok,
        summaries: Vec::new(),
    };
    fit.summaries = summarize(&fit, &original)?;
    Ok(fit)
}

fn summarize(fit: &RegressionFit, grouped: &GroupedData) -> Result<Vec<CovariateSummary>> {
    let k = fit.phi.len();
    let cov = fit.covariance_matrix();
    let mut patterns: Vec<(Vec<f64>, f64)> = Vec::new();
    for g in &grouped.groups {
        match patterns.iter_mut().find(|(c, _)| *c == g.covariates) {
            Some(entry) => entry.1 += g.weight(),
            None => patterns.push((g.covariates.clone(), g.weight())),
        }
    }
    patterns.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    patterns
        .into_iter()
        .map(|(covariates, weight)| {
            let (alpha, beta) = fit.coefficients().rates_at(&covariates)?;
            let mut z = vec![1.0];
            z.extend_from_slice(&covariates);
            let z = DVector::from_vec(z);
            let log_se = |offset: usize| {
                cov.as_ref().map(|c| {
                    let block = c.view((offset, offset), (k, k));
                    (z.transpose() * block * &z)[(0, 0)].max(0.0).sqrt()
                })
            };
            let se_log_alpha = log_se(0);
            let se_log_beta = log_se(k);
            Ok(CovariateSummary {
                covariates,
                weight,
                alpha,
                se_alpha: se_log_alpha.map(|s| alpha * s),
                se_log_alpha,
                beta,
                se_beta: se_log_beta.map(|s| beta * s),
                se_log_beta,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterObservation as Obs;

    fn fit_with_phi(phi: Vec<f64>, se1: Option<f64>) -> RegressionFit {
        let k = phi.len();
        RegressionFit {
            covariate_names: vec!["dose".into()],
            se_phi: vec![Some(0.1), se1],
            se_psi: vec![None; k],
            psi: vec![0.0; k],
            phi,
            covariance: Vec::new(),
            loglik: 0.0,
            aic: 0.0,
            bic: 0.0,
            chi2: 0.0,
            n_clusters: 1.0,
            converged: true,
            gradient_norm: 0.0,
            iterations: 0,
            hessian_ok: false,
            summaries: Vec::new(),
        }
    }

    #[test]
    fn relative_risk_basics() {
        let fit = fit_with_phi(vec![-2.76, 0.016], Some(0.004));
        let rr0 = relative_risk(&fit, 0.0).unwrap();
        assert_eq!(rr0.rr, 1.0);
        assert_eq!(rr0.se, Some(0.0));
        let rr30 = relative_risk(&fit, 30.0).unwrap();
        let rr60 = relative_risk(&fit, 60.0).unwrap();
        assert!((rr60.rr - rr30.rr.powi(2)).abs() < 1e-12);
        assert!((rr30.se.unwrap() - 30.0 * rr30.rr * 0.004).abs() < 1e-15);
        assert!(rr60.rr > rr30.rr);
        assert!(relative_risk(&fit_with_phi(vec![0.1], None), 1.0).is_err());
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let data: Vec<Obs> = (0..6)
            .map(|i| Obs::new(4, i % 3).with_covariates(vec![i as f64, 2.0]))
            .collect();
        let names = vec!["dose".to_string(), "site".to_string()];
        match fit_regression_combined(&data, &names, &FitOptions::default()) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["intercept", "site"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let data: Vec<Obs> = (0..6)
            .map(|i| {
                let d = i as f64;
                Obs::new(4, i % 3).with_covariates(vec![d, 1.0 - d, (d * 0.7).sin()])
            })
            .collect();
        let names: Vec<String> = ["dose", "undose", "other"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        match fit_regression_combined(&data, &names, &FitOptions::default()) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["dose", "undose"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn standardization_block_maps_coefficients() {
        let st = Standardization {
            center: vec![2.0],
            scale: vec![4.0],
        };
        let tilde = DVector::from_vec(vec![0.5, 1.2]);
        let orig = st.block() * &tilde;
        for x in [-3.0, 0.0, 7.5] {
            let lhs = tilde[0] + tilde[1] * st.apply(&[x])[0];
            let rhs = orig[0] + orig[1] * x;
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }
}
