mod common;

use mzinb::data::{Dataset, Factor};
use mzinb::estimator::{fit, FitOptions};
use mzinb::frame::{build_frame, Family, ModelSpec};
use mzinb::sim::{simulate, simulate_dataset, SimConfig, Truth};

fn intercept_only(family: Family, n: usize, mu: f64, alpha: f64, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n,
        response: "y".into(),
        model: ModelSpec::new(family),
        levels: common::levels(&[("g", 3)]),
        binary_covariates: vec![],
        truth: Truth {
            cond: vec![mu.ln()],
            zi: vec![],
            alpha,
            sd_cond: vec![],
            sd_zi: vec![],
            sd_observation: 0.0,
        },
        target_nonzero: None,
    }
}

#[test]
fn intercept_only_nb_recovers_mean_and_dispersion() {
    let cfg = intercept_only(Family::Nb, 5000, 5.0, 0.5, 21);
    let data = simulate_dataset(&cfg).unwrap();
    let r = fit(&data, &cfg.model, &FitOptions::default()).unwrap();
    assert!(r.converged, "{}", r.message);
    assert_eq!(r.k, 2);
    let b0 = r.estimate("cond:(Intercept)").unwrap();
    let se0 = r.std_error("cond:(Intercept)").unwrap();
    assert!((b0 - 5f64.ln()).abs() <= 3.0 * se0, "b0 {b0} se {se0}");
    let la = r.estimate("log_alpha").unwrap();
    let se_la = r.std_error("log_alpha").unwrap();
    // Delta method: se(alpha) = alpha * se(log alpha).
    let alpha = la.exp();
    assert!((alpha - 0.5).abs() <= 3.0 * alpha * se_la, "alpha {alpha}");
    // The sample mean is the exact MLE of the intercept-only mean.
    let ybar = data.response.iter().sum::<u64>() as f64 / 5000.0;
    assert!((b0.exp() - ybar).abs() < 1e-4 * ybar);
}

#[test]
fn all_zero_response_saturates_inflation() {
    let n = 200;
    let labels: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
    let data = Dataset::new("y", vec![0; n], vec![], vec![Factor::from_labels("g", &labels)]).unwrap();
    let r = fit(&data, &ModelSpec::new(Family::Zinb), &FitOptions::default()).unwrap();
    assert!(r.converged, "{}", r.message);
    assert!(r.boundary.zero_inflation_saturated);
    assert!(r.log_lik.abs() < 1e-6);
}

#[test]
fn zero_inflated_fit_without_zeros_is_rejected() {
    let data = Dataset::new("y", vec![1, 2, 3, 4], vec![], vec![]).unwrap();
    let err = fit(&data, &ModelSpec::new(Family::Zinb), &FitOptions::default()).unwrap_err();
    assert_eq!(err.kind(), mzinb::ErrorKind::Data);
}

#[test]
fn fits_are_bit_reproducible() {
    let cfg = common::crossed_config(600, 31);
    let data = simulate_dataset(&cfg).unwrap();
    let opts = FitOptions { seed: 9, ..Default::default() };
    let a = fit(&data, &cfg.model, &opts).unwrap();
    let b = fit(&data, &cfg.model, &opts).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn row_order_does_not_change_the_likelihood() {
    let cfg = common::crossed_config(600, 32);
    let data = simulate_dataset(&cfg).unwrap();
    let order: Vec<usize> = (0..600).map(|i| (i * 7 + 3) % 600).collect();
    let shuffled = data.permuted(&order).unwrap();
    let opts = FitOptions::default();
    let a = fit(&data, &cfg.model, &opts).unwrap();
    let f_shuffled = build_frame(&shuffled, &cfg.model).unwrap();
    let at_same_theta = mzinb::estimator::marginal_nll(&f_shuffled, &a.theta_hat).unwrap();
    assert!((-a.log_lik - at_same_theta).abs() <= 1e-8, "{} vs {at_same_theta}", -a.log_lik);
}

#[test]
fn likelihood_increases_along_the_ladder() {
    let cfg = common::crossed_config(800, 33);
    let data = simulate_dataset(&cfg).unwrap();
    let covs = ["x1", "x2"];
    let ladder = [
        ModelSpec::new(Family::Nb).with_cond_covariates(&covs),
        ModelSpec::new(Family::Zinb).with_cond_covariates(&covs).with_zi_covariates(&["x1"]),
        ModelSpec::new(Family::Zinb)
            .with_cond_covariates(&covs)
            .with_zi_covariates(&["x1"])
            .with_cond_factors(&["state"]),
        ModelSpec::new(Family::Zinb)
            .with_cond_covariates(&covs)
            .with_zi_covariates(&["x1"])
            .with_cond_factors(&["state", "industry"]),
        cfg.model.clone(),
    ];
    let mut prev = f64::NEG_INFINITY;
    for spec in &ladder {
        let r = fit(&data, spec, &FitOptions::default()).unwrap();
        assert!(r.converged, "{spec:?}: {}", r.message);
        assert!(r.log_lik >= prev - 1e-3, "{spec:?}: {} < {prev}", r.log_lik);
        prev = r.log_lik;
    }
}

#[test]
fn crossed_model_recovers_parameters() {
    let cfg = common::crossed_config(3000, 34);
    let sim = simulate(&cfg).unwrap();
    let r = fit(&sim.data, &cfg.model, &FitOptions::default()).unwrap();
    assert!(r.converged, "{}", r.message);
    assert!(!r.hessian_singular);
    let fixed = cfg.layout().cond_fixed.end + cfg.layout().zi_fixed.len();
    for j in 0..=fixed {
        let se = r.se[j].unwrap();
        assert!(se > 0.0);
        assert!((r.theta_hat[j] - sim.theta[j]).abs() <= 4.0 * se, "{}", r.param_names[j]);
        assert!((r.z[j].unwrap() - r.theta_hat[j] / se).abs() < 1e-12);
    }
    assert_eq!(r.re_modes.len(), 7 + 4 + 7);
}

#[test]
fn boundary_variance_is_flagged_not_rejected() {
    let mut cfg = common::single_block_config(800, 10, 0.0, 35);
    cfg.truth.sd_cond = vec![0.0];
    let data = simulate_dataset(&cfg).unwrap();
    let r = fit(&data, &cfg.model, &FitOptions::default()).unwrap();
    let sd = r.estimate("log_sd:cond:group").unwrap().exp();
    assert_eq!(r.boundary.variance_components[0], sd < 1e-4);
}

#[test]
fn observation_effect_is_estimated() {
    let mut cfg = common::single_block_config(1500, 10, 0.4, 21);
    cfg.model.family = Family::Zip;
    cfg.model.observation_effect = true;
    cfg.truth.alpha = 0.0;
    cfg.truth.sd_observation = 0.6;
    let data = simulate(&cfg).unwrap().data;
    let result = fit(&data, &cfg.model, &FitOptions::default()).unwrap();
    assert!(result.converged, "{}", result.message);
    let sd = result.estimate("log_sd:cond:(observation)").unwrap().exp();
    assert!((sd - 0.6).abs() < 0.2, "observation sd {sd}");
}
