//! Randomized starting points, warm-start conversion and canonical ordering.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::em::normalize_sparse;
use crate::distributions::{
    ModelParameters, ProfileFrequencyParams, ProfileSeverityParams, Representation, TransitionModel,
};
use crate::error::{Error, Result};
use crate::portfolio::Portfolio;

const SHAPE_LO: f64 = 0.5;
const SHAPE_HI: f64 = 5.0;
const JITTER: f64 = 0.5;

fn pooled_moments(portfolio: &Portfolio) -> (f64, f64) {
    let (mut n, mut e, mut x) = (0.0, 0.0, 0.0);
    for (_, pp) in portfolio.periods() {
        n += pp.claim_count() as f64;
        e += pp.exposure;
        x += pp.total_claims();
    }
    let freq = if n > 0.0 { n / e } else { 1e-3 / e.max(1.0) };
    let sev = if n > 0.0 { x / n } else { 1.0 };
    (freq, sev)
}

fn dirichlet_one(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Method-of-moments intercepts with profile jitter, log-uniform shapes on
/// [0.5, 5] and a sticky Dirichlet transition matrix. `K = 1` is deterministic.
pub fn initial_point(
    portfolio: &Portfolio,
    k: usize,
    representation: Representation,
    rng: &mut impl Rng,
) -> ModelParameters {
    let (freq, sev) = pooled_moments(portfolio);
    let p_a = portfolio.freq_covariate_names.len();
    let p_b = portfolio.sev_covariate_names.len();
    let sparse = representation == Representation::Sparse;
    let mid = (SHAPE_LO * SHAPE_HI).sqrt();

    let mut frequency = Vec::with_capacity(k);
    let mut severity = Vec::with_capacity(k);
    for _ in 0..k {
        let (a_u, a_v1, jit_a, jit_b) = if k == 1 {
            (mid, mid, 0.0, 0.0)
        } else {
            (
                rng.random_range(SHAPE_LO.ln()..SHAPE_HI.ln()).exp(),
                rng.random_range(SHAPE_LO.ln()..SHAPE_HI.ln()).exp(),
                rng.random_range(-JITTER..JITTER),
                rng.random_range(-JITTER..JITTER),
            )
        };
        let mut delta_a = vec![0.0; p_a];
        delta_a[0] = freq.ln();
        let mut delta_b = vec![0.0; p_b];
        delta_b[0] = sev.ln();
        let phi = 1.0 / sev;
        if sparse {
            frequency.push(ProfileFrequencyParams {
                delta_a,
                a_u,
                b_u: a_u * (-jit_a).exp(),
            });
            severity.push(ProfileSeverityParams {
                delta_b,
                phi,
                a_v: 1.0 + a_v1,
                b_v: a_v1 * jit_b.exp(),
            });
        } else {
            delta_a[0] += jit_a;
            delta_b[0] += jit_b;
            frequency.push(ProfileFrequencyParams { delta_a, a_u, b_u: a_u });
            severity.push(ProfileSeverityParams {
                delta_b,
                phi,
                a_v: 1.0 + a_v1,
                b_v: a_v1,
            });
        }
    }

    let transitions = if k == 1 {
        TransitionModel::uniform(1)
    } else {
        let w0 = dirichlet_one(k, rng);
        let stick = 2.0 * k as f64;
        let w = (0..k)
            .map(|h| {
                let mut row = dirichlet_one(k, rng);
                row[h] += stick;
                row.iter_mut().for_each(|v| *v /= 1.0 + stick);
                row
            })
            .collect();
        TransitionModel { w0, w }
    };

    let mut params = ModelParameters {
        representation,
        frequency,
        severity,
        transitions,
    };
    normalize_sparse(&mut params);
    params
}

/// Re-expresses `params` in `target`. Sparse to Full is exact; Full to Sparse
/// averages the regression vectors across profiles.
pub fn convert_representation(params: &ModelParameters, target: Representation) -> ModelParameters {
    if params.representation == target {
        return params.clone();
    }
    let k = params.k();
    let mut out = params.clone();
    out.representation = target;
    match target {
        Representation::Full => {
            for f in &mut out.frequency {
                f.delta_a[0] += (f.a_u / f.b_u).ln();
                f.b_u = f.a_u;
            }
            for s in &mut out.severity {
                let scale = s.b_v / (s.a_v - 1.0);
                s.phi /= scale;
                s.delta_b[0] += scale.ln();
                s.b_v = s.a_v - 1.0;
            }
        }
        Representation::Sparse => {
            let p_a = params.freq_dim();
            let p_b = params.sev_dim();
            let mut da = vec![0.0; p_a];
            let mut db = vec![0.0; p_b];
            let mut ln_phi = 0.0;
            for (f, s) in params.frequency.iter().zip(&params.severity) {
                for (d, v) in da.iter_mut().zip(&f.delta_a) {
                    *d += v / k as f64;
                }
                for (d, v) in db.iter_mut().zip(&s.delta_b) {
                    *d += v / k as f64;
                }
                ln_phi += s.phi.ln() / k as f64;
            }
            for (f, orig) in out.frequency.iter_mut().zip(&params.frequency) {
                f.b_u = f.a_u * (da[0] - orig.delta_a[0]).exp();
                f.delta_a = da.clone();
            }
            for (s, orig) in out.severity.iter_mut().zip(&params.severity) {
                s.b_v = (s.a_v - 1.0) * (orig.delta_b[0] - db[0]).exp();
                s.phi = ln_phi.exp();
                s.delta_b = db.clone();
            }
            normalize_sparse(&mut out);
        }
    }
    out
}

/// Adds one profile by splitting the profile with the largest initial weight.
pub fn expand_profiles(params: &ModelParameters, rng: &mut impl Rng) -> ModelParameters {
    let k = params.k();
    let src = (0..k)
        .max_by(|&a, &b| params.transitions.w0[a].total_cmp(&params.transitions.w0[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut out = params.clone();
    let mut f = params.frequency[src].clone();
    let mut s = params.severity[src].clone();
    let jit_a = rng.random_range(-JITTER..JITTER);
    let jit_b = rng.random_range(-JITTER..JITTER);
    match params.representation {
        Representation::Full => {
            f.delta_a[0] += jit_a;
            s.delta_b[0] += jit_b;
        }
        Representation::Sparse => {
            f.b_u *= (-jit_a).exp();
            s.b_v *= jit_b.exp();
        }
    }
    out.frequency.push(f);
    out.severity.push(s);

    let tr = &params.transitions;
    let mut w0 = tr.w0.clone();
    w0[src] *= 0.5;
    w0.push(w0[src]);
    let mut w: Vec<Vec<f64>> = tr
        .w
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r[src] *= 0.5;
            r.push(r[src]);
            r
        })
        .collect();
    w.push(w[src].clone());
    out.transitions = TransitionModel { w0, w };
    normalize_sparse(&mut out);
    out
}

/// Brings a warm start to `k` profiles in `representation`.
pub fn prepare_warm_start(
    warm: &ModelParameters,
    k: usize,
    representation: Representation,
    rng: &mut impl Rng,
) -> Result<ModelParameters> {
    let converted = convert_representation(warm, representation);
    match warm.k() {
        wk if wk == k => Ok(converted),
        wk if wk + 1 == k => Ok(expand_profiles(&converted, rng)),
        wk => Err(Error::Validation(format!(
            "warm start has {wk} profiles; expected {k} or {}",
            k - 1
        ))),
    }
}

/// Prior pure premium per unit exposure of each profile at the mean design rows.
pub fn profile_premia_at_mean(portfolio: &Portfolio, params: &ModelParameters) -> Vec<f64> {
    let p_a = params.freq_dim();
    let p_b = params.sev_dim();
    let mut mean_a = vec![0.0; p_a];
    let mut mean_b = vec![0.0; p_b];
    let mut count = 0.0;
    for (_, pp) in portfolio.periods() {
        for (m, x) in mean_a.iter_mut().zip(&pp.freq_covariates) {
            *m += x;
        }
        for (m, x) in mean_b.iter_mut().zip(&pp.sev_covariates) {
            *m += x;
        }
        count += 1.0;
    }
    if count > 0.0 {
        mean_a.iter_mut().for_each(|m| *m /= count);
        mean_b.iter_mut().for_each(|m| *m /= count);
    }
    params
        .frequency
        .iter()
        .zip(&params.severity)
        .map(|(f, s)| {
            let lin_a: f64 = mean_a.iter().zip(&f.delta_a).map(|(x, d)| x * d).sum();
            let lin_b: f64 = mean_b.iter().zip(&s.delta_b).map(|(x, d)| x * d).sum();
            (lin_a + lin_b).exp() * (f.a_u / f.b_u) * (s.b_v / (s.a_v - 1.0))
        })
        .collect()
}

/// Profile order by ascending prior premium at the mean design rows.
pub fn canonical_order(portfolio: &Portfolio, params: &ModelParameters) -> Vec<usize> {
    let premia = profile_premia_at_mean(portfolio, params);
    let mut order: Vec<usize> = (0..premia.len()).collect();
    order.sort_by(|&a, &b| premia[a].total_cmp(&premia[b]).then(a.cmp(&b)));
    order
}
