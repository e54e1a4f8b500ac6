//! Baum-Welch EM with Newton M-steps, multi-start search and standard errors.

pub mod derivatives;
pub mod em;
pub mod init;
pub mod layout;
pub mod newton;
pub mod stderr;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use derivatives::{grad_hess_frequency, grad_hess_severity, Evaluation, Objective};
pub use em::{e_step, m_step_transitions, posterior_entropy, q_function, run_em, EmRun, TraceEntry};
pub use init::{canonical_order, initial_point};
pub use newton::{newton_maximize, NewtonConfig, NewtonResult};
pub use stderr::{standard_errors, ParameterEstimate};

use crate::distributions::{ModelParameters, Representation};
use crate::error::{Error, Result};
use crate::evaluation::{count_parameters, information_criteria};
use crate::hmm::HmmPosteriors;
use crate::portfolio::{CovariateSchema, Portfolio};

fn default_lambda() -> f64 {
    4e-6
}
fn default_em_max_iter() -> usize {
    500
}
fn default_em_rel_tol() -> f64 {
    1e-8
}
fn default_newton_max_iter() -> usize {
    50
}
fn default_newton_grad_tol() -> f64 {
    1e-8
}
fn default_n_starts() -> usize {
    10
}
fn default_short_run_iters() -> usize {
    10
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub representation: Representation,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    /// Penalize intercepts and shape coordinates too.
    #[serde(default)]
    pub ridge_all: bool,
    #[serde(default = "default_em_max_iter")]
    pub em_max_iter: usize,
    #[serde(default = "default_em_rel_tol")]
    pub em_rel_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_newton_grad_tol")]
    pub newton_grad_tol: f64,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default = "default_short_run_iters")]
    pub short_run_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub warm_start: Option<ModelParameters>,
    #[serde(default = "default_true")]
    pub standard_errors: bool,
}

impl FitConfig {
    pub fn new(k: usize, representation: Representation) -> Self {
        FitConfig {
            k,
            representation,
            ridge_lambda: default_lambda(),
            ridge_all: false,
            em_max_iter: default_em_max_iter(),
            em_rel_tol: default_em_rel_tol(),
            newton_max_iter: default_newton_max_iter(),
            newton_grad_tol: default_newton_grad_tol(),
            n_starts: default_n_starts(),
            short_run_iters: default_short_run_iters(),
            seed: 0,
            warm_start: None,
            standard_errors: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("K must be at least 1"));
        }
        if self.n_starts == 0 {
            return Err(Error::validation("n_starts must be at least 1"));
        }
        let positive = [self.em_rel_tol, self.newton_grad_tol];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::validation("tolerances must be positive"));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::validation("ridge_lambda must be nonnegative"));
        }
        if let Some(w) = &self.warm_start {
            w.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loglik_trace: Vec<TraceEntry>,
    pub converged: bool,
    pub reason: String,
    pub log_likelihood: f64,
    pub penalized_objective: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    pub standard_errors: Vec<ParameterEstimate>,
    pub em_iterations: usize,
    pub rejected_steps: usize,
    /// Penalized objective after the short run of each start, in start order;
    /// empty when there is a single start.
    pub start_objectives: Vec<f64>,
    pub selected_start: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedModel {
    pub params: ModelParameters,
    pub diagnostics: FitDiagnostics,
    pub schema: CovariateSchema,
    pub frequency_covariates: Vec<String>,
    pub severity_covariates: Vec<String>,
    #[serde(skip)]
    pub posteriors: Option<HmmPosteriors>,
}

impl FittedModel {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: FittedModel = serde_json::from_str(s)?;
        model.params.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Candidate starting points: the warm start first when present, then
/// randomized points. `K = 1` without a warm start uses one deterministic point.
pub fn starting_points(portfolio: &Portfolio, cfg: &FitConfig) -> Result<Vec<ModelParameters>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::new();
    if let Some(w) = &cfg.warm_start {
        starts.push(init::prepare_warm_start(w, cfg.k, cfg.representation, &mut rng)?);
    }
    let n_random = if cfg.k == 1 {
        usize::from(starts.is_empty())
    } else {
        cfg.n_starts
    };
    for _ in 0..n_random {
        starts.push(initial_point(portfolio, cfg.k, cfg.representation, &mut rng));
    }
    Ok(starts)
}

fn check_identifiable(portfolio: &Portfolio) -> Result<()> {
    if portfolio.n_observations() == 0 {
        return Err(Error::Unidentifiable("portfolio has no observations".into()));
    }
    if portfolio.total_claims() == 0 {
        return Err(Error::Unidentifiable(
            "portfolio has no claims; severity parameters cannot be estimated".into(),
        ));
    }
    Ok(())
}

/// Multi-start EM followed by a full run from the best start.
pub fn fit(portfolio: &Portfolio, cfg: &FitConfig) -> Result<FittedModel> {
    let clock = Instant::now();
    cfg.validate()?;
    check_identifiable(portfolio)?;
    let p_a = portfolio.freq_covariate_names.len();
    let p_b = portfolio.sev_covariate_names.len();
    let n_params = count_parameters(cfg.k, cfg.representation, p_a, p_b);
    let n_obs = portfolio.n_observations();
    let mut warnings = Vec::new();
    if n_obs < 10 * n_params {
        warnings.push(format!(
            "{n_obs} observations for {n_params} parameters; estimates may be unstable"
        ));
    }

    let starts = starting_points(portfolio, cfg)?;
    let mut start_objectives = Vec::with_capacity(starts.len());
    let mut selected_start = 0;
    let best = if starts.len() == 1 {
        starts.into_iter().next().expect("one start")
    } else {
        let mut best: Option<EmRun> = None;
        for (i, s) in starts.into_iter().enumerate() {
            let run = run_em(portfolio, s, cfg.short_run_iters, cfg)?;
            start_objectives.push(run.objective);
            if best.as_ref().is_none_or(|b| run.objective > b.objective) {
                selected_start = i;
                best = Some(run);
            }
        }
        best.expect("at least one start").params
    };

    let run = run_em(portfolio, best, cfg.em_max_iter, cfg)?;
    if !run.converged {
        warnings.push(format!("EM stopped without converging: {}", run.reason));
    }
    let order = canonical_order(portfolio, &run.params);
    let params = run.params.permuted(&order);
    let posteriors = e_step(portfolio, &params)?;
    let log_likelihood = posteriors.log_likelihood;
    let (aic, bic) = information_criteria(log_likelihood, n_params, n_obs);
    let ses = if cfg.standard_errors {
        standard_errors(portfolio, &params)?
    } else {
        Vec::new()
    };

    let diagnostics = FitDiagnostics {
        loglik_trace: run.trace,
        converged: run.converged,
        reason: run.reason,
        log_likelihood,
        penalized_objective: run.objective,
        n_params,
        n_obs,
        aic,
        bic,
        standard_errors: ses,
        em_iterations: run.iterations,
        rejected_steps: run.rejected,
        start_objectives,
        selected_start,
        warnings,
        wall_time: clock.elapsed().as_secs_f64(),
    };
    Ok(FittedModel {
        params,
        diagnostics,
        schema: portfolio.schema.clone(),
        frequency_covariates: portfolio.freq_covariate_names.clone(),
        severity_covariates: portfolio.sev_covariate_names.clone(),
        posteriors: Some(posteriors),
    })
}
