//! Prior and posterior (Bonus-Malus) risk premia per unit exposure.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    dot, posterior_hyperparams, HistoryEntry, ModelParameters, ProfileFrequencyParams,
    ProfileSeverityParams,
};
use crate::error::{Error, Result};
use crate::estimation::FittedModel;
use crate::hmm::{self, posterior_assignment, prior_assignment};
use crate::portfolio::{PolicyPeriod, Portfolio};

/// One priced policy-period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PremiumBreakdown {
    pub policy_id: String,
    pub period: usize,
    pub exposure: f64,
    pub prior_premium: f64,
    pub posterior_premium: f64,
    pub prior_profile_premia: Vec<f64>,
    pub posterior_profile_premia: Vec<f64>,
    pub prior_assignment: Vec<f64>,
    pub posterior_assignment: Vec<f64>,
    pub kappa_u: Vec<f64>,
    pub kappa_v: Vec<f64>,
    pub bonus_malus_additive: f64,
    pub bonus_malus_ratio: f64,
}

/// Ratios of profile 2 to profile 1 expectations, a priori and a posteriori.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    pub r_prior: f64,
    pub s_prior: f64,
    pub r_post: f64,
    pub s_post: f64,
}

fn check_covariates(params: &ModelParameters, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != params.freq_dim() {
        return Err(Error::Dimension {
            context: "frequency covariates",
            expected: params.freq_dim(),
            got: a.len(),
        });
    }
    if b.len() != params.sev_dim() {
        return Err(Error::Dimension {
            context: "severity covariates",
            expected: params.sev_dim(),
            got: b.len(),
        });
    }
    Ok(())
}

fn check_shapes(params: &ModelParameters) -> Result<()> {
    for (j, s) in params.severity.iter().enumerate() {
        if !(s.a_v > 1.0) {
            return Err(Error::domain(format!(
                "profile {}: premium requires a_V > 1 (got {})",
                j + 1,
                s.a_v
            )));
        }
    }
    Ok(())
}

/// exp(A·δ_A + B·δ_B) (a_U / b_U) (b_V / (a_V − 1)).
pub fn profile_prior_premium(
    freq: &ProfileFrequencyParams,
    sev: &ProfileSeverityParams,
    a: &[f64],
    b: &[f64],
) -> f64 {
    (dot(a, &freq.delta_a) + dot(b, &sev.delta_b)).exp() * (freq.a_u / freq.b_u) * (sev.b_v / (sev.a_v - 1.0))
}

/// Collective premium at period `t` (1-based), the per-profile premia and the
/// assignment `w0 W^{t−1}`.
pub fn prior_premium(params: &ModelParameters, a: &[f64], b: &[f64], t: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_covariates(params, a, b)?;
    check_shapes(params)?;
    let per_profile: Vec<f64> = params
        .frequency
        .iter()
        .zip(&params.severity)
        .map(|(f, s)| profile_prior_premium(f, s, a, b))
        .collect();
    let assign = prior_assignment(&params.transitions, t);
    let premium = assign.iter().zip(&per_profile).map(|(w, p)| w * p).sum();
    Ok((premium, per_profile, assign))
}

/// Conjugate-update inputs of one profile for each historical period.
pub fn profile_history(params: &ModelParameters, j: usize, history: &[PolicyPeriod]) -> Vec<HistoryEntry> {
    let f = &params.frequency[j];
    let s = &params.severity[j];
    history
        .iter()
        .map(|pp| HistoryEntry {
            expo_lambda: pp.exposure * dot(&pp.freq_covariates, &f.delta_a).exp(),
            count: pp.claim_count(),
            mu: s.phi * dot(&pp.sev_covariates, &s.delta_b).exp(),
            total_size: pp.total_claims(),
        })
        .collect()
}

/// κ_U = b_U / (b_U + Σ eλ) and κ_V = (a_V − 1) / (a_V − 1 + Σ N μ).
pub fn credibility_weights(
    freq: &ProfileFrequencyParams,
    sev: &ProfileSeverityParams,
    history: &[HistoryEntry],
) -> (f64, f64) {
    let exposure: f64 = history.iter().map(|h| h.expo_lambda).sum();
    let shape: f64 = history.iter().map(|h| h.count as f64 * h.mu).sum();
    (
        freq.b_u / (freq.b_u + exposure),
        (sev.a_v - 1.0) / (sev.a_v - 1.0 + shape),
    )
}

/// exp(A_t·δ_A + B_t·δ_B) times the posterior means of U and V.
fn profile_posterior_premium(
    freq: &ProfileFrequencyParams,
    sev: &ProfileSeverityParams,
    history: &[HistoryEntry],
    a: &[f64],
    b: &[f64],
) -> f64 {
    let post = posterior_hyperparams(freq, sev, history);
    (dot(a, &freq.delta_a) + dot(b, &sev.delta_b)).exp() * (post.a_u / post.b_u) * (post.b_v / (post.a_v - 1.0))
}

/// Posterior premium for the period after `history`, whose covariates are
/// `a` and `b`. The returned breakdown has an empty policy id.
pub fn posterior_premium(
    params: &ModelParameters,
    history: &[PolicyPeriod],
    a: &[f64],
    b: &[f64],
) -> Result<PremiumBreakdown> {
    let k = params.k();
    let t = history.len() + 1;
    let (prior, prior_profile_premia, prior_assign) = prior_premium(params, a, b, t)?;
    for pp in history {
        check_covariates(params, &pp.freq_covariates, &pp.sev_covariates)?;
    }
    let kernels = hmm::ProfileKernel::all(params);
    let log_em = hmm::period_log_emissions(history, params, &kernels);
    let post_assign = posterior_assignment(&log_em, &params.transitions)?;

    let mut posterior_profile_premia = Vec::with_capacity(k);
    let mut kappa_u = Vec::with_capacity(k);
    let mut kappa_v = Vec::with_capacity(k);
    for j in 0..k {
        let (f, s) = (&params.frequency[j], &params.severity[j]);
        let entries = profile_history(params, j, history);
        posterior_profile_premia.push(profile_posterior_premium(f, s, &entries, a, b));
        let (ku, kv) = credibility_weights(f, s, &entries);
        kappa_u.push(ku);
        kappa_v.push(kv);
    }
    let posterior: f64 = post_assign
        .iter()
        .zip(&posterior_profile_premia)
        .map(|(w, p)| w * p)
        .sum();
    Ok(PremiumBreakdown {
        policy_id: String::new(),
        period: t,
        exposure: 1.0,
        prior_premium: prior,
        posterior_premium: posterior,
        prior_profile_premia,
        posterior_profile_premia,
        prior_assignment: prior_assign,
        posterior_assignment: post_assign,
        kappa_u,
        kappa_v,
        bonus_malus_additive: posterior - prior,
        bonus_malus_ratio: posterior / prior,
    })
}

/// `κ + (1 − κ) observed / expected`, which is 1 when nothing was expected or seen.
fn credibility_factor(kappa: f64, observed: f64, expected: f64, what: &str) -> Result<f64> {
    if expected > 0.0 {
        Ok(kappa + (1.0 - kappa) * observed / expected)
    } else if observed == 0.0 {
        Ok(1.0)
    } else {
        Err(Error::domain(format!(
            "observed {what} {observed} with zero expected {what}"
        )))
    }
}

/// The posterior premium written as credibility-weighted averages of prior
/// expectations and observed totals.
pub fn credibility_form_premium(
    params: &ModelParameters,
    history: &[PolicyPeriod],
    a: &[f64],
    b: &[f64],
) -> Result<f64> {
    let t = history.len() + 1;
    let (_, per_profile, _) = prior_premium(params, a, b, t)?;
    let kernels = hmm::ProfileKernel::all(params);
    let log_em = hmm::period_log_emissions(history, params, &kernels);
    let assign = posterior_assignment(&log_em, &params.transitions)?;
    let observed_n: f64 = history.iter().map(|pp| pp.claim_count() as f64).sum();
    let observed_x: f64 = history.iter().map(|pp| pp.total_claims()).sum();
    let mut total = 0.0;
    for j in 0..params.k() {
        let (f, s) = (&params.frequency[j], &params.severity[j]);
        let entries = profile_history(params, j, history);
        let (ku, kv) = credibility_weights(f, s, &entries);
        let expected_n: f64 = entries.iter().map(|h| h.expo_lambda).sum::<f64>() * f.a_u / f.b_u;
        let expected_x: f64 = entries
            .iter()
            .map(|h| h.count as f64 * h.mu / s.phi)
            .sum::<f64>()
            * s.b_v
            / (s.a_v - 1.0);
        let fu = credibility_factor(ku, observed_n, expected_n, "claim count")?;
        let fv = credibility_factor(kv, observed_x, expected_x, "claim amount")?;
        total += assign[j] * per_profile[j] * fu * fv;
    }
    Ok(total)
}

/// Two-profile scaling factors `r`, `s` and their Bonus-Malus corrected versions.
pub fn scaling_factors(
    params: &ModelParameters,
    a: &[f64],
    b: &[f64],
    history: &[PolicyPeriod],
) -> Result<ScalingFactors> {
    if params.k() != 2 {
        return Err(Error::Unsupported(format!(
            "scaling factors need exactly two profiles (got {})",
            params.k()
        )));
    }
    check_covariates(params, a, b)?;
    check_shapes(params)?;
    let (f1, f2) = (&params.frequency[0], &params.frequency[1]);
    let (s1, s2) = (&params.severity[0], &params.severity[1]);
    let ea = (dot(a, &f2.delta_a) - dot(a, &f1.delta_a)).exp();
    let eb = (dot(b, &s2.delta_b) - dot(b, &s1.delta_b)).exp();
    let r_prior = ea * (f2.a_u / f2.b_u) / (f1.a_u / f1.b_u);
    let s_prior = eb * (s2.b_v / (s2.a_v - 1.0)) / (s1.b_v / (s1.a_v - 1.0));
    let p1 = posterior_hyperparams(f1, s1, &profile_history(params, 0, history));
    let p2 = posterior_hyperparams(f2, s2, &profile_history(params, 1, history));
    let r_post = ea * (p2.a_u / p2.b_u) / (p1.a_u / p1.b_u);
    let s_post = eb * (p2.b_v / (p2.a_v - 1.0)) / (p1.b_v / (p1.a_v - 1.0));
    Ok(ScalingFactors {
        r_prior,
        s_prior,
        r_post,
        s_post,
    })
}

/// Fails unless the portfolio's design columns are those the model was fitted on.
pub fn check_schema(portfolio: &Portfolio, model: &FittedModel) -> Result<()> {
    if portfolio.freq_covariate_names != model.frequency_covariates
        || portfolio.sev_covariate_names != model.severity_covariates
    {
        return Err(Error::validation(format!(
            "portfolio design columns ({}; {}) do not match the fitted model ({}; {})",
            portfolio.freq_covariate_names.join(", "),
            portfolio.sev_covariate_names.join(", "),
            model.frequency_covariates.join(", "),
            model.severity_covariates.join(", ")
        )));
    }
    Ok(())
}

/// Prices every policy-period of `portfolio` under `params`, conditioning
/// each period on that policy's earlier periods only.
pub fn price_with_params(portfolio: &Portfolio, params: &ModelParameters) -> Result<Vec<PremiumBreakdown>> {
    params.validate()?;
    hmm::check_dimensions(portfolio, params)?;
    let per_policy: Vec<Vec<PremiumBreakdown>> = portfolio
        .policies
        .par_iter()
        .map(|policy| {
            policy
                .periods
                .iter()
                .enumerate()
                .map(|(t, pp)| {
                    let mut row =
                        posterior_premium(params, &policy.periods[..t], &pp.freq_covariates, &pp.sev_covariates)?;
                    row.policy_id = policy.id.clone();
                    row.period = pp.period;
                    row.exposure = pp.exposure;
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_policy.into_iter().flatten().collect())
}

/// [`price_with_params`] after checking the fitted design columns.
pub fn price_portfolio(portfolio: &Portfolio, model: &FittedModel) -> Result<Vec<PremiumBreakdown>> {
    check_schema(portfolio, model)?;
    price_with_params(portfolio, &model.params)
}

/// Header of the premium CSV for `k` profiles.
pub fn csv_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "policy_id",
        "period",
        "prior_premium",
        "posterior_premium",
        "bm_additive",
        "bm_ratio",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in 1..=k {
        for name in [
            "assign_prior",
            "assign_post",
            "premium_prior",
            "premium_post",
            "kappa_U",
            "kappa_V",
        ] {
            h.push(format!("{name}_{j}"));
        }
    }
    h
}

/// Writes rows in the layout of [`csv_header`] to `path`.
pub fn write_csv(rows: &[PremiumBreakdown], k: usize, path: &Path) -> Result<()> {
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(csv_header(k)).map_err(io_err)?;
    for r in rows {
        let mut rec = vec![
            r.policy_id.clone(),
            r.period.to_string(),
            r.prior_premium.to_string(),
            r.posterior_premium.to_string(),
            r.bonus_malus_additive.to_string(),
            r.bonus_malus_ratio.to_string(),
        ];
        for j in 0..k {
            rec.extend([
                r.prior_assignment[j].to_string(),
                r.posterior_assignment[j].to_string(),
                r.prior_profile_premia[j].to_string(),
                r.posterior_profile_premia[j].to_string(),
                r.kappa_u[j].to_string(),
                r.kappa_v[j].to_string(),
            ]);
        }
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
