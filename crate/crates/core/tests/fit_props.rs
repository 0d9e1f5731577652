use clustercount::fit::{
    fit_mle, goodness_of_fit, information_criteria, log_likelihood, FitFamily, FitOptions,
    ParamModel,
};
use clustercount::simulate::{repeat_sizes, simulate_dataset, Ascertainment, DatasetModel};
use clustercount::{rate_vector, transition_distribution, ClusterObservation, RateModelSpec};

fn simulated(
    spec: RateModelSpec,
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Vec<ClusterObservation> {
    simulate_dataset(
        &DatasetModel::Rates(spec),
        &repeat_sizes(sizes, reps),
        Ascertainment::None,
        seed,
    )
    .unwrap()
}

#[test]
fn susceptible1_and_binomial_are_the_same_model() {
    let data = simulated(
        RateModelSpec::susceptible1(0.35).unwrap(),
        &[2, 3, 5, 7],
        60,
        8,
    );
    let opts = FitOptions::default();
    let s1 = fit_mle(FitFamily::Susceptible1, &data, &opts).unwrap();
    let bin = fit_mle(FitFamily::Binomial, &data, &opts).unwrap();
    assert!(s1.converged && bin.converged);
    assert!((s1.loglik - bin.loglik).abs() < 1e-8);
    assert!((bin.estimates[0] - (1.0 - (-s1.estimates[0]).exp())).abs() < 1e-6);

    let successes: f64 = data.iter().map(|o| o.weight * o.r as f64).sum();
    let trials: f64 = data.iter().map(|o| o.weight * o.n as f64).sum();
    assert!((1.0 - (-s1.estimates[0]).exp() - successes / trials).abs() < 1e-6);
    assert!((s1.chi2 - bin.chi2).abs() < 1e-8);
}

#[test]
fn combined_nests_single_source_models() {
    for seed in 0..5 {
        let data = simulated(
            RateModelSpec::combined(0.2, 0.4).unwrap(),
            &[3, 4, 6],
            40,
            seed,
        );
        let opts = FitOptions::default();
        let comb = fit_mle(FitFamily::Combined, &data, &opts).unwrap();
        let s1 = fit_mle(FitFamily::Susceptible1, &data, &opts).unwrap();
        assert!(comb.loglik >= s1.loglik - 1e-8, "seed {seed}");
        // data from state zero is impossible under pure infectivity
        assert!(fit_mle(FitFamily::Infectivity1, &data, &opts).is_err());
    }
}

#[test]
fn combined_nests_infectivity_under_ascertainment() {
    let model = DatasetModel::Rates(RateModelSpec::combined(0.1, 0.5).unwrap());
    let data = simulate_dataset(
        &model,
        &repeat_sizes(&[3, 5, 6], 100),
        Ascertainment::Proband(1),
        13,
    )
    .unwrap();
    let opts = FitOptions::default();
    let comb = fit_mle(FitFamily::Combined, &data, &opts).unwrap();
    let i1 = fit_mle(FitFamily::Infectivity1, &data, &opts).unwrap();
    let s1 = fit_mle(FitFamily::Susceptible1, &data, &opts).unwrap();
    assert!(comb.loglik >= i1.loglik - 1e-8);
    assert!(comb.loglik >= s1.loglik - 1e-8);
}

#[test]
fn aggregation_does_not_change_the_fit() {
    let weighted = vec![
        ClusterObservation::new(4, 1).with_weight(3.0),
        ClusterObservation::new(4, 3).with_weight(2.0),
        ClusterObservation::new(5, 0).with_weight(4.0),
        ClusterObservation::new(3, 2),
    ];
    let unit: Vec<ClusterObservation> = weighted
        .iter()
        .flat_map(|o| std::iter::repeat_n(o.clone().with_weight(1.0), o.weight as usize))
        .collect();
    let opts = FitOptions::default();
    for family in [
        FitFamily::Combined,
        FitFamily::BetaBinomial,
        FitFamily::Susceptible2,
    ] {
        let a = fit_mle(family, &weighted, &opts).unwrap();
        let b = fit_mle(family, &unit, &opts).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in [
            (a.loglik, b.loglik),
            (a.aic, b.aic),
            (a.bic, b.bic),
            (a.chi2, b.chi2),
        ] {
            assert!((x - y).abs() < 1e-10, "{family}: {x} vs {y}");
        }
        assert_eq!(a.n_clusters, b.n_clusters);
    }
}

#[test]
fn criteria_identities_hold_for_every_family() {
    let data = simulated(
        RateModelSpec::combined(0.3, 0.3).unwrap(),
        &[2, 4, 6, 8],
        30,
        21,
    );
    let n: f64 = data.len() as f64;
    for family in FitFamily::ALL {
        let Ok(fit) = fit_mle(family, &data, &FitOptions::default()) else {
            continue;
        };
        let k = fit.n_params() as f64;
        assert_eq!(
            (fit.aic, fit.bic),
            information_criteria(fit.loglik, fit.n_params(), n)
        );
        assert!(((fit.bic - fit.aic) - k * (n.ln() - 2.0)).abs() < 1e-9 * fit.aic.abs());
        if fit.converged {
            assert!(fit.gradient_norm < 1e-6, "{family}");
        }
        if fit.hessian_ok {
            assert!(fit.se.iter().flatten().all(|s| *s > 0.0 && s.is_finite()));
        }
    }
}

#[test]
fn beta_binomial_reaches_negative_correlation() {
    // mildly underdispersed against the binomial (6.25, 25, 37.5, 25, 6.25)
    let data: Vec<ClusterObservation> = [(0, 5.0), (1, 20.0), (2, 50.0), (3, 20.0), (4, 5.0)]
        .iter()
        .map(|&(r, w)| ClusterObservation::new(4, r).with_weight(w))
        .collect();
    let fit = fit_mle(FitFamily::BetaBinomial, &data, &FitOptions::default()).unwrap();
    assert!(fit.converged, "{fit:?}");
    assert!(fit.estimates[1] < 0.0);
    assert!(fit.estimates[1] > -0.5 / 3.0);
    assert!((fit.estimates[0] - 0.5).abs() < 1e-6);
}

#[test]
fn qpower_fit_runs() {
    let data = simulated(
        RateModelSpec::combined(0.2, 0.6).unwrap(),
        &[3, 5, 7],
        60,
        31,
    );
    let fit = fit_mle(FitFamily::QPower, &data, &FitOptions::default()).unwrap();
    assert!(fit.loglik.is_finite());
    let bin = fit_mle(FitFamily::Binomial, &data, &FitOptions::default()).unwrap();
    // gamma = 1 is the binomial
    assert!(fit.loglik >= bin.loglik - 1e-8);
}

#[test]
fn chi2_matches_cellwise_enumeration() {
    let spec = RateModelSpec::combined(0.4, 0.25).unwrap();
    let data = vec![
        ClusterObservation::new(2, 0).with_weight(3.0),
        ClusterObservation::new(2, 2).with_weight(5.0),
        ClusterObservation::new(3, 1).with_weight(2.0),
        ClusterObservation::new(4, 1).with_floor(1),
        ClusterObservation::new(4, 4).with_floor(1).with_weight(2.0),
        ClusterObservation::new(4, 2),
    ];
    let model = ParamModel::Family(FitFamily::Combined, vec![0.4, 0.25]);
    let gof = goodness_of_fit(&model, 2, &data).unwrap();

    let mut want = 0.0;
    for n in 1..=4 {
        for m in 0..=n {
            let rows: Vec<&ClusterObservation> =
                data.iter().filter(|o| o.n == n && o.m == m).collect();
            if rows.is_empty() {
                continue;
            }
            let total: f64 = rows.iter().map(|o| o.weight).sum();
            let sched = rate_vector(&spec, n).unwrap();
            let row = transition_distribution(&sched, m, 1.0).unwrap();
            for r in m..=n {
                let o: f64 = rows.iter().filter(|x| x.r == r).map(|x| x.weight).sum();
                let e = total * row.prob(r);
                want += (o - e).powi(2) / e;
            }
        }
    }
    assert!(
        (gof.chi2 - want).abs() < 1e-10 * want,
        "{} vs {want}",
        gof.chi2
    );
    let ll = log_likelihood(FitFamily::Combined, &[0.4, 0.25], &data).unwrap();
    assert_eq!(gof.loglik, ll);
}
