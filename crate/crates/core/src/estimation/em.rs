//! E-step, analytic transition M-step, Q-function and the generalized EM loop.

use super::derivatives::{FrequencyObjective, SeverityObjective};
use super::layout::{ridge_penalty, FreqLayout, SevLayout};
use super::newton::{newton_maximize, NewtonConfig};
use super::FitConfig;
use crate::distributions::{ModelParameters, Representation, TransitionModel};
use crate::error::Result;
use crate::hmm::{self, HmmPosteriors};
use crate::portfolio::Portfolio;

/// Responsibilities and chain log-likelihood under `params`.
pub fn e_step(portfolio: &Portfolio, params: &ModelParameters) -> Result<HmmPosteriors> {
    hmm::posteriors(portfolio, params)
}

/// `w0_j = Σ_i γ_{i,1}^{(j)} / M` and `W_hj = Σ ξ^{(h,j)} / Σ γ_{t−1}^{(h)}`.
/// Rows never left during the observed transitions keep their previous values.
pub fn m_step_transitions(posteriors: &HmmPosteriors, previous: &TransitionModel) -> TransitionModel {
    let k = posteriors.k;
    let mut w0 = vec![0.0; k];
    let mut counts = vec![vec![0.0; k]; k];
    for p in &posteriors.policies {
        for j in 0..k {
            w0[j] += p.gamma[j];
        }
        for block in p.xi.chunks(k * k) {
            for h in 0..k {
                for j in 0..k {
                    counts[h][j] += block[h * k + j];
                }
            }
        }
    }
    let total: f64 = w0.iter().sum();
    w0.iter_mut().for_each(|v| *v /= total);
    let w = counts
        .into_iter()
        .zip(&previous.w)
        .map(|(row, prev)| {
            let visits: f64 = row.iter().sum();
            if visits > 0.0 {
                row.into_iter().map(|v| v / visits).collect()
            } else {
                prev.clone()
            }
        })
        .collect();
    TransitionModel { w0, w }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Expected complete log-likelihood Q(θ | θ_post) where the posteriors were
/// computed under θ_post.
pub fn q_function(portfolio: &Portfolio, posteriors: &HmmPosteriors, params: &ModelParameters) -> Result<f64> {
    let table = hmm::emissions(portfolio, params)?;
    let k = params.k();
    let tr = &params.transitions;
    let mut q = 0.0;
    for (p, em) in posteriors.policies.iter().zip(&table.policies) {
        for j in 0..k {
            q += xlogy(p.gamma[j], tr.w0[j]);
        }
        for block in p.xi.chunks(k * k) {
            for h in 0..k {
                for j in 0..k {
                    q += xlogy(block[h * k + j], tr.w[h][j]);
                }
            }
        }
        for (g, l) in p.gamma.iter().zip(em) {
            if *g != 0.0 {
                q += g * l;
            }
        }
    }
    Ok(q)
}

/// Entropy of the posterior over latent paths, so that Q(θ|θ) + H = ℓ(θ).
pub fn posterior_entropy(posteriors: &HmmPosteriors) -> f64 {
    let k = posteriors.k;
    let mut h = 0.0;
    for p in &posteriors.policies {
        for j in 0..k {
            h -= xlogy(p.gamma[j], p.gamma[j]);
        }
        for (s, block) in p.xi.chunks(k * k).enumerate() {
            for hh in 0..k {
                let prev = p.gamma[s * k + hh];
                for j in 0..k {
                    let x = block[hh * k + j];
                    if x > 0.0 {
                        h -= x * (x / prev).ln();
                    }
                }
            }
        }
    }
    h
}

/// Ridge penalty of `params` in the unconstrained coordinates.
pub fn penalty(params: &ModelParameters, lambda: f64, ridge_all: bool) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let fl = FreqLayout::new(params);
    let sl = SevLayout::new(params);
    ridge_penalty(&fl.pack(params), &fl.penalized(ridge_all), lambda)
        + ridge_penalty(&sl.pack(params), &sl.penalized(ridge_all), lambda)
}

/// Removes the two scale directions the sparse likelihood is flat in: the
/// frequency intercept against all `b_U`, and `φ` with the severity intercept
/// against all `b_V`. Afterwards `mean_j ln(b_U/a_U) = 0` and
/// `mean_j ln(b_V/(a_V − 1)) = 0`; the likelihood is unchanged.
pub fn normalize_sparse(params: &mut ModelParameters) {
    if params.representation != Representation::Sparse {
        return;
    }
    let k = params.k() as f64;
    let c_u: f64 = params
        .frequency
        .iter()
        .map(|f| (f.b_u / f.a_u).ln())
        .sum::<f64>()
        / k;
    let c_v: f64 = params
        .severity
        .iter()
        .map(|s| (s.b_v / (s.a_v - 1.0)).ln())
        .sum::<f64>()
        / k;
    for f in &mut params.frequency {
        f.b_u *= (-c_u).exp();
        f.delta_a[0] -= c_u;
    }
    for s in &mut params.severity {
        s.b_v *= (-c_v).exp();
        s.phi *= (-c_v).exp();
        s.delta_b[0] += c_v;
    }
}

pub(crate) fn gamma_weights(posteriors: &HmmPosteriors) -> Vec<Vec<f64>> {
    posteriors.policies.iter().map(|p| p.gamma.clone()).collect()
}

/// One generalized M-step: analytic transitions, Newton for ϑ_N and ϑ_X.
pub fn m_step(
    portfolio: &Portfolio,
    posteriors: &HmmPosteriors,
    params: &ModelParameters,
    cfg: &FitConfig,
) -> Result<ModelParameters> {
    let mut next = params.clone();
    next.transitions = m_step_transitions(posteriors, &params.transitions);
    let gamma = gamma_weights(posteriors);
    let newton = NewtonConfig {
        max_iter: cfg.newton_max_iter,
        grad_tol: cfg.newton_grad_tol,
    };

    let fl = FreqLayout::new(params);
    let freq = FrequencyObjective::new(portfolio, &gamma, fl, cfg.ridge_lambda, cfg.ridge_all);
    let r = newton_maximize(&freq, &fl.pack(params), newton)?;
    fl.unpack(&r.point, &mut next);

    let sl = SevLayout::new(params);
    let sev = SeverityObjective::new(portfolio, &gamma, sl, cfg.ridge_lambda, cfg.ridge_all);
    let r = newton_maximize(&sev, &sl.pack(params), newton)?;
    sl.unpack(&r.point, &mut next);

    if !cfg.ridge_all {
        normalize_sparse(&mut next);
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub penalized_objective: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct EmRun {
    pub params: ModelParameters,
    pub posteriors: HmmPosteriors,
    pub log_likelihood: f64,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
    pub rejected: usize,
}

/// Accepted iterations may not lower the penalized objective by more than this.
pub const ASCENT_SLACK: f64 = 1e-10;

/// Runs up to `max_iter` EM iterations from `start`.
pub fn run_em(portfolio: &Portfolio, start: ModelParameters, max_iter: usize, cfg: &FitConfig) -> Result<EmRun> {
    let mut params = start;
    let mut posteriors = e_step(portfolio, &params)?;
    let mut ll = posteriors.log_likelihood;
    let mut obj = ll - penalty(&params, cfg.ridge_lambda, cfg.ridge_all);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        log_likelihood: ll,
        penalized_objective: obj,
        accepted: true,
    }];
    let mut converged = false;
    let mut reason = "iteration limit".to_string();
    let mut rejected = 0;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let cand = m_step(portfolio, &posteriors, &params, cfg)?;
        let cand_post = e_step(portfolio, &cand)?;
        let cand_ll = cand_post.log_likelihood;
        let cand_obj = cand_ll - penalty(&cand, cfg.ridge_lambda, cfg.ridge_all);
        let rel = (cand_obj - obj).abs() / obj.abs().max(1.0);
        if !(cand_obj >= obj - ASCENT_SLACK) {
            rejected += 1;
            trace.push(TraceEntry {
                iteration: it,
                log_likelihood: cand_ll,
                penalized_objective: cand_obj,
                accepted: false,
            });
            if rel < cfg.em_rel_tol {
                converged = true;
                reason = "relative change below tolerance".into();
            } else {
                reason = "M-step failed to increase the objective".into();
            }
            break;
        }
        params = cand;
        posteriors = cand_post;
        ll = cand_ll;
        obj = cand_obj;
        trace.push(TraceEntry {
            iteration: it,
            log_likelihood: ll,
            penalized_objective: obj,
            accepted: true,
        });
        if rel < cfg.em_rel_tol {
            converged = true;
            reason = "relative change below tolerance".into();
            break;
        }
    }
    Ok(EmRun {
        params,
        posteriors,
        log_likelihood: ll,
        objective: obj,
        trace,
        iterations,
        converged,
        reason,
        rejected,
    })
}
