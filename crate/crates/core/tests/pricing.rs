mod common;

use common::{random_params, sim_config, simulate};
use freqsev::distributions::{
    ModelParameters, ProfileFrequencyParams, ProfileSeverityParams, Representation, TransitionModel,
};
use freqsev::error::Error;
use freqsev::portfolio::PolicyPeriod;
use freqsev::pricing::{
    credibility_form_premium, credibility_weights, posterior_premium, price_with_params, prior_premium,
    profile_history, scaling_factors,
};
use freqsev::simulate::{simulate_portfolio, PeriodSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

fn period(exposure: f64, x: f64, sizes: &[f64]) -> PolicyPeriod {
    PolicyPeriod {
        period: 1,
        exposure,
        freq_covariates: vec![1.0, x],
        sev_covariates: vec![1.0, x],
        claim_sizes: sizes.to_vec(),
    }
}

fn intercept_only(exp_a: f64, exp_b: f64, a_u: f64, a_v: f64, phi: f64) -> (ProfileFrequencyParams, ProfileSeverityParams) {
    (
        ProfileFrequencyParams {
            delta_a: vec![exp_a.ln()],
            a_u,
            b_u: a_u,
        },
        ProfileSeverityParams {
            delta_b: vec![exp_b.ln()],
            phi,
            a_v,
            b_v: a_v - 1.0,
        },
    )
}

fn full_model(profiles: Vec<(ProfileFrequencyParams, ProfileSeverityParams)>, transitions: TransitionModel) -> ModelParameters {
    let (frequency, severity) = profiles.into_iter().unzip();
    ModelParameters {
        representation: Representation::Full,
        frequency,
        severity,
        transitions,
    }
}

fn random_history(rng: &mut impl Rng, len: usize) -> Vec<PolicyPeriod> {
    (0..len)
        .map(|t| {
            let n = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..4) };
            let sizes: Vec<f64> = (0..n).map(|_| (rng.random_range(4.0..9.0f64)).exp()).collect();
            let mut pp = period(rng.random_range(0.2..1.0), rng.random_range(-1.5..1.5), &sizes);
            pp.period = t + 1;
            pp
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn worked_example_gives_150() {
    // exp(A δ_A) = 100 with e = 0.01 so that e λ = 1, exp(B δ_B) = 1 with φ = 1 so that μ = 1
    let params = full_model(vec![intercept_only(100.0, 1.0, 2.0, 2.0, 1.0)], TransitionModel::uniform(1));
    let history = vec![PolicyPeriod {
        period: 1,
        exposure: 0.01,
        freq_covariates: vec![1.0],
        sev_covariates: vec![1.0],
        claim_sizes: vec![2.0],
    }];
    let entries = profile_history(&params, 0, &history);
    assert!((entries[0].expo_lambda - 1.0).abs() < 1e-12);
    assert!((entries[0].mu - 1.0).abs() < 1e-12);
    let row = posterior_premium(&params, &history, &[1.0], &[1.0]).unwrap();
    assert!((row.prior_premium - 100.0).abs() < 1e-9);
    assert!((row.posterior_premium - 150.0).abs() < 1e-9, "{}", row.posterior_premium);
    let cred = credibility_form_premium(&params, &history, &[1.0], &[1.0]).unwrap();
    assert!((cred - 150.0).abs() < 1e-9);
}

#[test]
fn full_convention_mixture_prior_premium() {
    let params = full_model(
        vec![
            intercept_only(1.0, 100.0, 1.5, 3.0, 1e-3),
            intercept_only(1.0, 200.0, 0.7, 2.2, 2e-3),
        ],
        TransitionModel {
            w0: vec![0.5, 0.5],
            w: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        },
    );
    let (pi, per_profile, assign) = prior_premium(&params, &[1.0], &[1.0], 1).unwrap();
    assert!((per_profile[0] - 100.0).abs() < 1e-10);
    assert!((per_profile[1] - 200.0).abs() < 1e-10);
    assert_eq!(assign, vec![0.5, 0.5]);
    assert!((pi - 150.0).abs() < 1e-10);
}

#[test]
fn single_profile_prior_premium_is_product_of_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(1, Representation::Sparse, &mut rng);
    let (a, b) = ([1.0, 0.4], [1.0, -0.7]);
    let (f, s) = (&p.frequency[0], &p.severity[0]);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    let expected = dot(&a, &f.delta_a).exp() * dot(&b, &s.delta_b).exp() * f.a_u / f.b_u * s.b_v / (s.a_v - 1.0);
    for t in 1..5 {
        let (pi, _, assign) = prior_premium(&p, &a, &b, t).unwrap();
        assert!(rel(pi, expected) < 1e-14);
        assert_eq!(assign, vec![1.0]);
    }
}

#[test]
fn identity_transitions_make_prior_premium_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = random_params(3, Representation::Full, &mut rng);
    p.transitions.w = (0..3).map(|h| (0..3).map(|j| f64::from(u8::from(h == j))).collect()).collect();
    let (pi1, _, _) = prior_premium(&p, &[1.0, 0.2], &[1.0, 0.3], 1).unwrap();
    for t in 2..8 {
        let (pi, _, _) = prior_premium(&p, &[1.0, 0.2], &[1.0, 0.3], t).unwrap();
        assert!(rel(pi, pi1) < 1e-14);
    }
}

#[test]
fn prior_premium_rejects_infinite_severity_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = random_params(2, Representation::Sparse, &mut rng);
    p.severity[1].a_v = 0.9;
    assert!(matches!(prior_premium(&p, &[1.0, 0.0], &[1.0, 0.0], 1), Err(Error::Domain(_))));
    assert!(matches!(posterior_premium(&p, &[], &[1.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
}

#[test]
fn empty_history_leaves_premium_and_weights_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let rep = if case % 2 == 0 { Representation::Full } else { Representation::Sparse };
        let p = random_params(1 + case % 3, rep, &mut rng);
        let a = [1.0, rng.random_range(-1.0..1.0)];
        let b = [1.0, rng.random_range(-1.0..1.0)];
        let row = posterior_premium(&p, &[], &a, &b).unwrap();
        assert_eq!(row.posterior_premium, row.prior_premium);
        assert_eq!(row.posterior_assignment, row.prior_assignment);
        assert!(row.kappa_u.iter().chain(&row.kappa_v).all(|k| *k == 1.0));
        assert_eq!(row.bonus_malus_additive, 0.0);
        assert_eq!(row.bonus_malus_ratio, 1.0);
        assert_eq!(credibility_form_premium(&p, &[], &a, &b).unwrap(), row.prior_premium);
    }
}

#[test]
fn credibility_weight_examples() {
    let (f, s) = intercept_only(1.0, 1.0, 1.0, 2.0, 1.0);
    let h = freqsev::distributions::HistoryEntry {
        expo_lambda: 1.0,
        count: 1,
        mu: 3.0,
        total_size: 10.0,
    };
    let (ku, kv) = credibility_weights(&f, &s, &[h]);
    assert_eq!(ku, 0.5);
    assert_eq!(kv, 0.25);
    assert_eq!(credibility_weights(&f, &s, &[]), (1.0, 1.0));
}

#[test]
fn credibility_weights_vanish_with_experience() {
    let (f, s) = intercept_only(1.0, 1.0, 1.5, 2.5, 1.0);
    let mut prev = (1.0, 1.0);
    for scale in [1.0, 10.0, 100.0, 1e4, 1e6] {
        let h = freqsev::distributions::HistoryEntry {
            expo_lambda: scale,
            count: 1,
            mu: scale,
            total_size: 1.0,
        };
        let (ku, kv) = credibility_weights(&f, &s, &[h]);
        assert!(ku < prev.0 && kv < prev.1 && ku > 0.0 && kv > 0.0);
        prev = (ku, kv);
    }
    assert!(prev.0 < 1e-5 && prev.1 < 1e-5);
}

#[test]
fn credibility_identity_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let rep = if case % 2 == 0 { Representation::Full } else { Representation::Sparse };
        let p = random_params(2 + case % 2, rep, &mut rng);
        let len = rng.random_range(0..6);
        let history = random_history(&mut rng, len);
        let a = [1.0, rng.random_range(-1.5..1.5)];
        let b = [1.0, rng.random_range(-1.5..1.5)];
        let post = posterior_premium(&p, &history, &a, &b).unwrap().posterior_premium;
        let cred = credibility_form_premium(&p, &history, &a, &b).unwrap();
        worst = worst.max(rel(cred, post));
    }
    assert!(worst <= 1e-10, "worst relative gap {worst:e}");
}

#[test]
fn breakdown_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let p = random_params(3, Representation::Sparse, &mut rng);
        let history = random_history(&mut rng, 3);
        let row = posterior_premium(&p, &history, &[1.0, 0.3], &[1.0, -0.2]).unwrap();
        let prior: f64 = row.prior_assignment.iter().zip(&row.prior_profile_premia).map(|(w, x)| w * x).sum();
        let post: f64 = row.posterior_assignment.iter().zip(&row.posterior_profile_premia).map(|(w, x)| w * x).sum();
        assert!(rel(prior, row.prior_premium) < 1e-14);
        assert!(rel(post, row.posterior_premium) < 1e-14);
        assert!(row.kappa_u.iter().chain(&row.kappa_v).all(|k| *k > 0.0 && *k <= 1.0));
        assert!(row.posterior_profile_premia.iter().all(|x| *x >= 0.0));
        assert!(rel(row.bonus_malus_ratio * row.prior_premium, row.posterior_premium) < 1e-14);
        assert_eq!(row.period, 4);
    }
}

#[test]
fn claims_free_history_earns_a_bonus() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let p = random_params(2, Representation::Sparse, &mut rng);
        let history: Vec<PolicyPeriod> = (0..3).map(|_| period(1.0, rng.random_range(-1.0..1.0), &[])).collect();
        let row = posterior_premium(&p, &history, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        for j in 0..2 {
            let ratio = row.posterior_profile_premia[j] / row.prior_profile_premia[j];
            let freq_factor = p.frequency[j].b_u / (p.frequency[j].b_u
                + profile_history(&p, j, &history).iter().map(|h| h.expo_lambda).sum::<f64>());
            assert!(ratio < 1.0);
            // severity factor stays at its prior value
            assert!(rel(ratio, freq_factor) < 1e-13);
            assert_eq!(row.kappa_v[j], 1.0);
        }
    }
}

#[test]
fn frequency_factor_increases_with_claim_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = random_params(2, Representation::Full, &mut rng);
    let mut prev = [0.0; 2];
    for n in 0..6 {
        let history = vec![period(1.0, 0.0, &vec![500.0; n])];
        let entries: Vec<_> = (0..2).map(|j| profile_history(&p, j, &history)).collect();
        for j in 0..2 {
            let f = &p.frequency[j];
            let factor = (f.a_u + n as f64) / (f.b_u + entries[j][0].expo_lambda) / (f.a_u / f.b_u);
            assert!(factor > prev[j]);
            prev[j] = factor;
        }
    }
}

#[test]
fn scaling_factor_examples() {
    let (f, s) = intercept_only(0.2, 900.0, 1.5, 3.0, 2e-3);
    let same = full_model(vec![(f.clone(), s.clone()), (f.clone(), s.clone())], TransitionModel::uniform(2));
    let sf = scaling_factors(&same, &[1.0], &[1.0], &[]).unwrap();
    assert!((sf.r_prior - 1.0).abs() < 1e-14 && (sf.s_prior - 1.0).abs() < 1e-14);

    let (f2, s2) = intercept_only(0.4, 900.0, 2.5, 3.0, 2e-3);
    let p = full_model(vec![(f, s), (f2, s2)], TransitionModel::uniform(2));
    let sf = scaling_factors(&p, &[1.0], &[1.0], &[]).unwrap();
    assert!((sf.r_prior - 2.0).abs() < 1e-13);
    assert!((sf.s_prior - 1.0).abs() < 1e-13);
    assert_eq!((sf.r_post, sf.s_post), (sf.r_prior, sf.s_prior));

    let history = vec![PolicyPeriod {
        period: 1,
        exposure: 1.0,
        freq_covariates: vec![1.0],
        sev_covariates: vec![1.0],
        claim_sizes: vec![3000.0],
    }];
    let sf = scaling_factors(&p, &[1.0], &[1.0], &history).unwrap();
    // r* = 2 (a_U² + 1)/(a_U² + 0.4) · (a_U¹ + 0.2)/(a_U¹ + 1)
    let expected = 2.0 * (3.5 / 2.9) / (2.5 / 1.7);
    assert!(rel(sf.r_post, expected) < 1e-13);
    assert!(sf.r_post > 0.0 && sf.s_post > 0.0);

    let three = random_params(3, Representation::Sparse, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(matches!(
        scaling_factors(&three, &[1.0, 0.0], &[1.0, 0.0], &[]),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn single_period_portfolio_has_no_corrections() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = random_params(2, Representation::Sparse, &mut rng);
    let portfolio = simulate(&truth, 300, PeriodSpec::Fixed(1), 12);
    let rows = price_with_params(&portfolio, &truth).unwrap();
    assert_eq!(rows.len(), 300);
    for r in &rows {
        assert_eq!(r.posterior_premium, r.prior_premium);
        assert_eq!(r.period, 1);
    }
}

#[test]
fn single_profile_assignments_are_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let truth = random_params(1, Representation::Full, &mut rng);
    let portfolio = simulate(&truth, 100, PeriodSpec::Range { min: 1, max: 4 }, 13);
    for r in price_with_params(&portfolio, &truth).unwrap() {
        assert_eq!(r.prior_assignment, vec![1.0]);
        assert!((r.posterior_assignment[0] - 1.0).abs() < 1e-15);
    }
}

fn nb_ln_pmf(n: u32, a: f64, b: f64, m: f64) -> f64 {
    let n = n as f64;
    ln_gamma(a + n) - ln_gamma(a) - ln_gamma(n + 1.0) + a * (b / (b + m)).ln() + n * (m / (b + m)).ln()
}

fn gb2_ln_pdf(x: f64, mu: f64, a: f64, b: f64, phi: f64) -> f64 {
    let y = phi * x / b;
    (phi / b).ln() + (mu - 1.0) * y.ln() - (mu + a) * (1.0 + y).ln() + ln_gamma(mu + a) - ln_gamma(mu) - ln_gamma(a)
}

#[test]
fn two_period_policy_matches_hand_computed_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let truth = random_params(2, Representation::Sparse, &mut rng);
    let mut cfg = sim_config(truth.clone(), 40, PeriodSpec::Fixed(2), 14);
    cfg.exposure = freqsev::simulate::ExposureSpec::Fixed(0.8);
    let sim = simulate_portfolio(&cfg).unwrap().portfolio;
    let policy = sim
        .policies
        .iter()
        .find(|p| !p.periods[0].claim_sizes.is_empty())
        .expect("a policy with a first-period claim");
    let (p1, p2) = (&policy.periods[0], &policy.periods[1]);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();

    let mut joint = [0.0; 2];
    let mut premia = [0.0; 2];
    for j in 0..2 {
        let (f, s) = (&truth.frequency[j], &truth.severity[j]);
        let m = p1.exposure * dot(&p1.freq_covariates, &f.delta_a).exp();
        let mu = s.phi * dot(&p1.sev_covariates, &s.delta_b).exp();
        let mut ln_f = nb_ln_pmf(p1.claim_count(), f.a_u, f.b_u, m);
        for &x in &p1.claim_sizes {
            ln_f += gb2_ln_pdf(x, mu, s.a_v, s.b_v, s.phi);
        }
        joint[j] = truth.transitions.w0[j] * ln_f.exp();
        let n = p1.claim_count() as f64;
        let a_u = f.a_u + n;
        let b_u = f.b_u + m;
        let a_v = s.a_v + n * mu;
        let b_v = s.b_v + s.phi * p1.total_claims();
        let base = (dot(&p2.freq_covariates, &f.delta_a) + dot(&p2.sev_covariates, &s.delta_b)).exp();
        premia[j] = base * a_u / b_u * b_v / (a_v - 1.0);
    }
    let norm = joint[0] + joint[1];
    let filtered = [joint[0] / norm, joint[1] / norm];
    let w = &truth.transitions.w;
    let assign = [
        filtered[0] * w[0][0] + filtered[1] * w[1][0],
        filtered[0] * w[0][1] + filtered[1] * w[1][1],
    ];
    let expected = assign[0] * premia[0] + assign[1] * premia[1];

    let rows = price_with_params(&sim, &truth).unwrap();
    let row = rows
        .iter()
        .find(|r| r.policy_id == policy.id && r.period == p2.period)
        .unwrap();
    assert!(rel(row.posterior_premium, expected) < 1e-10, "{} vs {}", row.posterior_premium, expected);
    assert!((row.posterior_assignment[0] - assign[0]).abs() < 1e-12);
    assert_eq!(row.exposure, 0.8);
}

#[test]
fn posterior_premium_averages_to_prior_premium() {
    // With U and V persistent across a policy's periods, the posterior premium
    // is the conditional mean of the next period's loss rate.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let truth = random_params(1, Representation::Full, &mut rng);
    let mut cfg = sim_config(truth.clone(), 40_000, PeriodSpec::Fixed(3), 15);
    cfg.persistent_heterogeneity = true;
    let sim = simulate_portfolio(&cfg).unwrap().portfolio;
    let rows = price_with_params(&sim, &truth).unwrap();
    let ratios: Vec<f64> = rows.iter().filter(|r| r.period == 3).map(|r| r.bonus_malus_ratio).collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean ratio {mean} with se {se}");
    assert!(ratios.iter().any(|r| *r < 1.0) && ratios.iter().any(|r| *r > 1.0));
}

#[test]
fn pricing_rejects_mismatched_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = random_params(2, Representation::Sparse, &mut rng);
    assert!(matches!(
        posterior_premium(&p, &[], &[1.0], &[1.0, 0.0]),
        Err(Error::Dimension { .. })
    ));
}
