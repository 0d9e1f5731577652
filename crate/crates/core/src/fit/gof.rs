//! Pearson goodness of fit over `(n, m, r)` cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ClusterObservation;
use crate::numeric::CompensatedSum;

use super::information_criteria;
use super::likelihood::{GroupedData, ParamModel};

/// Expected counts below this are skipped when nothing was observed there.
pub const EMPTY_CELL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofCell {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub observed: f64,
    pub expected: f64,
    /// `(O - E)^2 / E`, or `None` for a skipped cell.
    pub contribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub chi2: f64,
    pub n_params: usize,
    pub n_clusters: f64,
    pub cells: Vec<GofCell>,
}

/// Observed and expected counts per `(n, m, r)`, summed over covariate
/// patterns.
pub(crate) fn cells(grouped: &GroupedData, model: &ParamModel) -> Result<Vec<GofCell>> {
    let mut table: BTreeMap<(usize, usize), (Vec<CompensatedSum>, Vec<CompensatedSum>)> =
        BTreeMap::new();
    for g in &grouped.groups {
        let row = model.row(g.n, g.m, &g.covariates)?;
        let total = g.weight();
        let entry = table.entry((g.n, g.m)).or_insert_with(|| {
            (
                vec![CompensatedSum::new(); g.n + 1],
                vec![CompensatedSum::new(); g.n + 1],
            )
        });
        for (r, p) in row.iter().enumerate() {
            entry.0[r].add(g.counts[r]);
            entry.1[r].add(total * p);
        }
    }
    let mut out = Vec::new();
    for ((n, m), (obs, exp)) in table {
        // states below the floor are unreachable and never tabulated
        for r in m..=n {
            let observed = obs[r].value();
            let expected = exp[r].value();
            let contribution = if expected < EMPTY_CELL_TOL && observed == 0.0 {
                None
            } else {
                Some((observed - expected).powi(2) / expected)
            };
            out.push(GofCell {
                n,
                m,
                r,
                observed,
                expected,
                contribution,
            });
        }
    }
    Ok(out)
}

fn chi2_of(cells: &[GofCell]) -> f64 {
    cells
        .iter()
        .filter_map(|c| c.contribution)
        .collect::<CompensatedSum>()
        .value()
}

pub(crate) fn pearson_chi2(grouped: &GroupedData, model: &ParamModel) -> Result<f64> {
    Ok(chi2_of(&cells(grouped, model)?))
}

/// Likelihood summaries and the Pearson cell table of `model` on `data`.
/// `n_params` is the number of fitted parameters, used for AIC and BIC.
pub fn goodness_of_fit(
    model: &ParamModel,
    n_params: usize,
    data: &[ClusterObservation],
) -> Result<GoodnessOfFit> {
    let by_covariates = matches!(model, ParamModel::Regression(_));
    let grouped = GroupedData::new(data, by_covariates)?;
    let loglik = grouped.log_likelihood(model)?;
    let cells = cells(&grouped, model)?;
    let (aic, bic) = information_criteria(loglik, n_params, grouped.total_weight);
    Ok(GoodnessOfFit {
        loglik,
        aic,
        bic,
        chi2: chi2_of(&cells),
        n_params,
        n_clusters: grouped.total_weight,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::FitFamily;
    use crate::model::{rate_vector, RateModelSpec};
    use crate::transition::transition_distribution;

    #[test]
    fn chi2_by_hand() {
        // Susceptible1(ln 2), n = 2: probabilities (1/4, 1/2, 1/4)
        let model = ParamModel::Family(FitFamily::Susceptible1, vec![std::f64::consts::LN_2]);
        let data = vec![
            ClusterObservation::new(2, 0).with_weight(2.0),
            ClusterObservation::new(2, 1).with_weight(4.0),
            ClusterObservation::new(2, 2).with_weight(6.0),
        ];
        let gof = goodness_of_fit(&model, 1, &data).unwrap();
        let want = (2.0f64 - 3.0).powi(2) / 3.0 + (4.0f64 - 6.0).powi(2) / 6.0 + 9.0 / 3.0;
        assert!((gof.chi2 - want).abs() < 1e-12);
        assert_eq!(gof.cells.len(), 3);
        assert_eq!(gof.n_clusters, 12.0);
    }

    #[test]
    fn perfect_fit_has_zero_chi2() {
        let model = ParamModel::Family(FitFamily::Susceptible1, vec![std::f64::consts::LN_2]);
        let mut data = Vec::new();
        for (r, w) in [(0, 10.0), (1, 30.0), (2, 30.0), (3, 10.0)] {
            data.push(ClusterObservation::new(3, r).with_weight(w));
        }
        let gof = goodness_of_fit(&model, 1, &data).unwrap();
        assert!(gof.chi2.abs() < 1e-20, "{}", gof.chi2);
    }

    #[test]
    fn impossible_cells_are_skipped() {
        // Infectivity1 from floor 1 never reaches r = 0; the floor trims it
        let model = ParamModel::Family(FitFamily::Infectivity1, vec![0.4]);
        let data = vec![ClusterObservation::new(3, 2).with_floor(1)];
        let gof = goodness_of_fit(&model, 1, &data).unwrap();
        assert_eq!(gof.cells.len(), 3);
        assert!(gof.cells.iter().all(|c| c.contribution.is_some()));

        // mu_0 = 0 from floor 0: only r = 0 has mass
        let data = vec![ClusterObservation::new(3, 0)];
        let gof = goodness_of_fit(&model, 1, &data).unwrap();
        assert_eq!(gof.chi2, 0.0);
        assert_eq!(
            gof.cells
                .iter()
                .filter(|c| c.contribution.is_none())
                .count(),
            3
        );
    }

    #[test]
    fn expected_counts_follow_the_transition_row() {
        let spec = RateModelSpec::combined(0.275, 0.3).unwrap();
        let model = ParamModel::Family(FitFamily::Combined, vec![0.275, 0.3]);
        let data = vec![
            ClusterObservation::new(4, 2).with_floor(1).with_weight(5.0),
            ClusterObservation::new(4, 4).with_floor(1).with_weight(2.0),
        ];
        let gof = goodness_of_fit(&model, 2, &data).unwrap();
        let row = transition_distribution(&rate_vector(&spec, 4).unwrap(), 1, 1.0).unwrap();
        for c in &gof.cells {
            assert!((c.expected - 7.0 * row.prob(c.r)).abs() < 1e-12);
        }
    }
}
