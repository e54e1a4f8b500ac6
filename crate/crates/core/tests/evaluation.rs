mod common;

use common::{random_params, sim_config, simulate};
use freqsev::distributions::Representation;
use freqsev::error::Error;
use freqsev::evaluation::{
    count_parameters, experience_report_with_params, information_criteria, loss_ratio, ordered_lorenz,
    ratio_gini_matrix, ReportConfig,
};
use freqsev::pricing::price_with_params;
use freqsev::simulate::{preset, simulate_portfolio, ExposureSpec, PeriodSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn information_criteria_examples() {
    let (aic, bic) = information_criteria(-100.0, 3, 50);
    assert_eq!(aic, 206.0);
    assert!((bic - 211.7360).abs() < 1e-4);
    assert!((bic - (3.0 * 50f64.ln() + 200.0)).abs() < 1e-12);
    assert_eq!(information_criteria(-42.5, 0, 10).0, 85.0);
    // each extra parameter costs ln(n_obs) in BIC
    let (_, b4) = information_criteria(-100.0, 4, 50);
    assert!((b4 - bic - 50f64.ln()).abs() < 1e-12);
}

#[test]
fn parameter_count_examples() {
    assert_eq!(count_parameters(1, Representation::Full, 2, 2), 7);
    assert_eq!(count_parameters(2, Representation::Sparse, 2, 2), 19);
    assert_eq!(count_parameters(1, Representation::Sparse, 2, 2), 9);
    assert_eq!(count_parameters(3, Representation::Full, 2, 3), 3 * 8 + 12);
}

#[test]
fn loss_ratio_calibration_and_homogeneity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = random_params(1, Representation::Full, &mut rng);
    let portfolio = simulate(&truth, 200, PeriodSpec::Fixed(2), 1);
    let calibrated: Vec<f64> = portfolio
        .periods()
        .map(|(_, pp)| (pp.total_claims() + 1.0) / pp.exposure)
        .collect();
    let extra = portfolio.n_observations() as f64;
    let losses: f64 = portfolio.periods().map(|(_, pp)| pp.total_claims()).sum();
    let lr = loss_ratio(&portfolio, &calibrated).unwrap();
    assert!((lr - 100.0 * losses / (losses + extra)).abs() < 1e-9);

    let premia: Vec<f64> = (0..portfolio.n_observations()).map(|_| rng.random_range(50.0..500.0)).collect();
    let doubled: Vec<f64> = premia.iter().map(|p| 2.0 * p).collect();
    let a = loss_ratio(&portfolio, &premia).unwrap();
    let b = loss_ratio(&portfolio, &doubled).unwrap();
    assert!((a - 2.0 * b).abs() < 1e-9 * a);

    // hand sum over the first policy's periods
    let mut first = portfolio.clone();
    first.policies.truncate(1);
    let p = &first.policies[0].periods;
    let hand = 100.0 * (p[0].total_claims() + p[1].total_claims()) / (p[0].exposure * 120.0 + p[1].exposure * 80.0);
    assert!((loss_ratio(&first, &[120.0, 80.0]).unwrap() - hand).abs() < 1e-12);

    assert!(matches!(loss_ratio(&first, &[120.0, 0.0]), Err(Error::Domain(_))));
    assert!(matches!(loss_ratio(&first, &[120.0]), Err(Error::Dimension { .. })));
}

#[test]
fn two_policy_lorenz_curve() {
    let c = ordered_lorenz(&[1.0, 1.0], &[1.0, 3.0], &[0.0, 2.0], &[1.0, 1.0]).unwrap();
    assert_eq!(c.points, vec![(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]);
    assert_eq!(c.gini, 0.5);
}

#[test]
fn identical_premia_give_the_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50;
    let premia: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..100.0)).collect();
    let losses: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..500.0) } else { 0.0 }).collect();
    let exposures: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let c = ordered_lorenz(&premia, &premia, &losses, &exposures).unwrap();
    assert_eq!(c.gini, 0.0);
    assert_eq!(c.merged, vec![(0.0, 0.0), (1.0, 1.0)]);
    assert_eq!(c.points.len(), n + 1);
}

#[test]
fn maximal_concentration_curve() {
    let bench = [2.0, 1.0, 3.0, 4.0];
    let alt = [1.0, 1.0, 9.0, 2.0];
    let exposures = [1.0, 0.5, 1.0, 1.0];
    // policy 2 has the largest relative premium
    let c = ordered_lorenz(&bench, &alt, &[0.0, 0.0, 7.0, 0.0], &exposures).unwrap();
    let share = 3.0 / (2.0 + 0.5 + 3.0 + 4.0);
    assert!((c.gini - (1.0 - share)).abs() < 1e-14);
}

#[test]
fn lorenz_invariants_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let bench: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        let alt: Vec<f64> = (0..n).map(|_| (rng.random_range(1..5) as f64)).collect();
        let mut losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        losses[0] += 1.0;
        let exposures: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let c = ordered_lorenz(&bench, &alt, &losses, &exposures).unwrap();
        for pts in [&c.points, &c.merged] {
            assert_eq!(pts[0], (0.0, 0.0));
            assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        }
        assert!(c.gini.abs() <= 1.0);
        let scaled_b: Vec<f64> = bench.iter().map(|b| 7.0 * b).collect();
        let scaled_a: Vec<f64> = alt.iter().map(|a| 0.3 * a).collect();
        let s = ordered_lorenz(&scaled_b, &scaled_a, &losses, &exposures).unwrap();
        assert!((s.gini - c.gini).abs() < 1e-12);
    }
}

#[test]
fn lorenz_rejects_bad_inputs() {
    assert!(matches!(ordered_lorenz(&[1.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]), Err(Error::Domain(_))));
    assert!(matches!(ordered_lorenz(&[1.0], &[1.0, 1.0], &[1.0], &[1.0]), Err(Error::Dimension { .. })));
}

#[test]
fn ratio_gini_matrix_of_three_model_toy() {
    let names: Vec<String> = ["flat", "rising", "falling"].iter().map(|s| s.to_string()).collect();
    let premia = vec![vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
    let losses = [0.0, 1.0, 3.0];
    let m = ratio_gini_matrix(&names, &premia, &losses, &[1.0; 3]).unwrap();
    let expected = [
        [0.0, 0.5, -0.5],
        [-7.0 / 24.0, 0.0, -7.0 / 24.0],
        [17.0 / 24.0, 17.0 / 24.0, 0.0],
    ];
    for b in 0..3 {
        for a in 0..3 {
            assert!((m.gini[b][a] - expected[b][a]).abs() < 1e-14, "({b},{a}) {}", m.gini[b][a]);
        }
    }
    assert_eq!(m.minimax, 1);
    for (got, want) in m.row_max.iter().zip([0.5, 0.0, 17.0 / 24.0]) {
        assert!((got - want).abs() < 1e-14);
    }
    assert!((m.constant_benchmark[1] - 0.5).abs() < 1e-14);
}

#[test]
fn identical_models_tie_at_the_first_index() {
    let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let p = vec![2.0, 5.0, 1.0, 4.0];
    let m = ratio_gini_matrix(&names, &vec![p.clone(); 3], &[1.0, 0.0, 3.0, 2.0], &[1.0; 4]).unwrap();
    assert!(m.gini.iter().flatten().all(|g| *g == 0.0));
    assert_eq!(m.minimax, 0);
    assert!(matches!(
        ratio_gini_matrix(&names[..1], &[p], &[1.0, 0.0, 3.0, 2.0], &[1.0; 4]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn single_profile_report_has_unit_assignments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_params(1, Representation::Full, &mut rng);
    let mut cfg = sim_config(truth.clone(), 200, PeriodSpec::Fixed(3), 4);
    cfg.exposure = ExposureSpec::Fixed(1.0);
    let portfolio = simulate_portfolio(&cfg).unwrap().portfolio;
    let priced = price_with_params(&portfolio, &truth).unwrap();
    let report = experience_report_with_params(&portfolio, &truth, &priced, &ReportConfig::default()).unwrap();
    for row in report.by_claim_count.iter().chain(&report.by_claim_amount) {
        assert!((row.mean_posterior_assignment[0] - 1.0).abs() < 1e-12);
    }
    let total: usize = report.by_claim_count.iter().map(|r| r.observations).sum();
    assert_eq!(total, 600);
    let zero = &report.by_claim_count[0];
    assert_eq!((zero.exposure_years, zero.experience), (0, 0.0));
    assert_eq!(zero.observations, 200);
    assert_eq!(zero.mean_correction, 0.0);
    assert_eq!(report.profiles.len(), 1);
}

#[test]
fn bonus_malus_pattern_on_simulated_portfolio() {
    let cfg = preset("negative-sparse", 2000, 4, 5).unwrap();
    let sim = simulate_portfolio(&cfg).unwrap();
    let priced = price_with_params(&sim.portfolio, &cfg.truth).unwrap();
    let report = experience_report_with_params(&sim.portfolio, &cfg.truth, &priced, &ReportConfig::default()).unwrap();
    for row in &report.by_claim_count {
        if row.exposure_years >= 1 && row.experience == 0.0 {
            assert!(row.mean_correction < 0.0, "{row:?}");
        }
        if row.experience >= 3.0 && row.observations >= 5 {
            assert!(row.mean_correction > 0.0, "{row:?}");
        }
    }
    let widths: Vec<f64> = report.by_claim_amount.iter().map(|r| r.experience).collect();
    assert!(widths.iter().all(|w| (w / 2500.0).fract() == 0.0));
    for p in &report.profiles {
        assert!(p.prior_frequency.mean > 0.0 && p.prior_severity.median > 0.0);
        assert!(p.posterior_premium.mean > 0.0);
    }
}
