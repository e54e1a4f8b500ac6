#![allow(dead_code)]

use freqsev::distributions::{
    ModelParameters, ProfileFrequencyParams, ProfileSeverityParams, Representation, TransitionModel,
};
use freqsev::portfolio::{Portfolio, Role};
use freqsev::simulate::{
    simulate_portfolio, CovariateGenerator, ExposureSpec, Generator, PeriodSpec, SimConfig,
};
use rand::Rng;

pub fn random_transitions(k: usize, rng: &mut impl Rng) -> TransitionModel {
    let mut row = |_| {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    TransitionModel {
        w0: row(0),
        w: (1..=k).map(&mut row).collect(),
    }
}

/// Random parameters with an intercept and one continuous covariate in each GLM.
pub fn random_params(k: usize, rep: Representation, rng: &mut impl Rng) -> ModelParameters {
    let sparse = rep == Representation::Sparse;
    let shared_a = vec![rng.random_range(0.1f64..0.6).ln(), rng.random_range(-0.3..0.3)];
    let shared_b = vec![rng.random_range(200.0f64..3000.0).ln(), rng.random_range(-0.3..0.3)];
    let shared_phi = rng.random_range(1e-3..5e-3);
    let mut frequency = Vec::new();
    let mut severity = Vec::new();
    for _ in 0..k {
        let a_u = rng.random_range(0.5..5.0);
        let a_v = 1.0 + rng.random_range(0.5..5.0);
        if sparse {
            frequency.push(ProfileFrequencyParams {
                delta_a: shared_a.clone(),
                a_u,
                b_u: a_u * rng.random_range(0.3..3.0),
            });
            severity.push(ProfileSeverityParams {
                delta_b: shared_b.clone(),
                phi: shared_phi,
                a_v,
                b_v: (a_v - 1.0) * rng.random_range(0.3..3.0),
            });
        } else {
            frequency.push(ProfileFrequencyParams {
                delta_a: vec![rng.random_range(0.1f64..0.6).ln(), rng.random_range(-0.3..0.3)],
                a_u,
                b_u: a_u,
            });
            severity.push(ProfileSeverityParams {
                delta_b: vec![rng.random_range(200.0f64..3000.0).ln(), rng.random_range(-0.3..0.3)],
                phi: rng.random_range(1e-3..5e-3),
                a_v,
                b_v: a_v - 1.0,
            });
        }
    }
    ModelParameters {
        representation: rep,
        frequency,
        severity,
        transitions: random_transitions(k, rng),
    }
}

pub fn sim_config(truth: ModelParameters, policies: usize, periods: PeriodSpec, seed: u64) -> SimConfig {
    SimConfig {
        policies,
        periods,
        covariates: vec![CovariateGenerator {
            name: "x1".into(),
            role: Role::Both,
            generator: Generator::Continuous { mean: 0.0, sd: 1.0 },
        }],
        time_varying_covariates: false,
        exposure: ExposureSpec::Range { min: 0.5, max: 1.0 },
        seed,
        truth,
        persistent_heterogeneity: false,
    }
}

pub fn simulate(truth: &ModelParameters, policies: usize, periods: PeriodSpec, seed: u64) -> Portfolio {
    simulate_portfolio(&sim_config(truth.clone(), policies, periods, seed))
        .expect("simulation")
        .portfolio
}

/// Random responsibilities with rows summing to one.
pub fn random_gamma(portfolio: &Portfolio, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    portfolio
        .policies
        .iter()
        .map(|p| {
            let mut g = Vec::with_capacity(p.periods.len() * k);
            for _ in 0..p.periods.len() {
                let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = v.iter().sum();
                g.extend(v.into_iter().map(|x| x / s));
            }
            g
        })
        .collect()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
