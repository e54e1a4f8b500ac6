//! Scaled forward/backward recursions over the latent profile chain.
//!
//! Emissions are kept in log space. The forward pass normalizes each step and
//! records the log normalizer `c_t`, so the policy log-likelihood is `Σ c_t`
//! and the backward pass reuses the same constants.

use rayon::prelude::*;

use crate::distributions::{dot, ModelParameters, TransitionModel};
use crate::error::{Error, Result};
use crate::portfolio::{Policy, PolicyPeriod, Portfolio};
use crate::special::{ln_factorial, ln_gamma};

/// Per-profile constants shared by every emission evaluation.
#[derive(Clone, Debug)]
pub(crate) struct ProfileKernel {
    pub a_u: f64,
    pub b_u: f64,
    pub phi: f64,
    pub ln_phi: f64,
    pub a_v: f64,
    pub b_v: f64,
    pub ln_gamma_a_v: f64,
}

impl ProfileKernel {
    pub fn new(params: &ModelParameters, j: usize) -> Self {
        let f = &params.frequency[j];
        let s = &params.severity[j];
        ProfileKernel {
            a_u: f.a_u,
            b_u: f.b_u,
            phi: s.phi,
            ln_phi: s.phi.ln(),
            a_v: s.a_v,
            b_v: s.b_v,
            ln_gamma_a_v: ln_gamma(s.a_v),
        }
    }

    pub fn all(params: &ModelParameters) -> Vec<Self> {
        (0..params.k()).map(|j| Self::new(params, j)).collect()
    }

    /// NB log-pmf with ln m supplied.
    pub fn count_term(&self, n: u32, ln_m: f64) -> f64 {
        let m = ln_m.exp();
        let head = if n == 0 {
            0.0
        } else {
            let nf = n as f64;
            crate::distributions::ln_rising(self.a_u, n) - ln_factorial(n) + nf * (ln_m - (self.b_u + m).ln())
        };
        head - self.a_u * (m / self.b_u).ln_1p()
    }

    /// Σ_n GB2 log-density of the claims of one period at shape `μ = exp(ln_mu)`.
    pub fn size_term(&self, sizes: &[f64], ln_mu: f64) -> f64 {
        if sizes.is_empty() {
            return 0.0;
        }
        crate::distributions::gb2_ln_pdf_sum(sizes, ln_mu.exp(), self.a_v, self.b_v, self.phi, self.ln_gamma_a_v)
    }
}

pub(crate) fn check_dimensions(portfolio: &Portfolio, params: &ModelParameters) -> Result<()> {
    if params.freq_dim() != portfolio.freq_covariate_names.len() {
        return Err(Error::Dimension {
            context: "frequency design",
            expected: portfolio.freq_covariate_names.len(),
            got: params.freq_dim(),
        });
    }
    if params.sev_dim() != portfolio.sev_covariate_names.len() {
        return Err(Error::Dimension {
            context: "severity design",
            expected: portfolio.sev_covariate_names.len(),
            got: params.sev_dim(),
        });
    }
    Ok(())
}

/// Log emissions of one policy, row-major `T × K`.
pub fn policy_log_emissions(policy: &Policy, params: &ModelParameters) -> Vec<f64> {
    let kernels = ProfileKernel::all(params);
    policy_log_emissions_with(policy, params, &kernels)
}

pub(crate) fn policy_log_emissions_with(
    policy: &Policy,
    params: &ModelParameters,
    kernels: &[ProfileKernel],
) -> Vec<f64> {
    period_log_emissions(&policy.periods, params, kernels)
}

/// Log emissions of consecutive periods, row-major `T × K`.
pub(crate) fn period_log_emissions(periods: &[PolicyPeriod], params: &ModelParameters, kernels: &[ProfileKernel]) -> Vec<f64> {
    let k = kernels.len();
    let mut out = Vec::with_capacity(periods.len() * k);
    for pp in periods {
        let ln_e = pp.exposure.ln();
        for (j, kern) in kernels.iter().enumerate() {
            let ln_m = ln_e + dot(&pp.freq_covariates, &params.frequency[j].delta_a);
            let mut v = kern.count_term(pp.claim_count(), ln_m);
            if !pp.claim_sizes.is_empty() {
                let ln_mu = kern.ln_phi + dot(&pp.sev_covariates, &params.severity[j].delta_b);
                v += kern.size_term(&pp.claim_sizes, ln_mu);
            }
            out.push(v);
        }
    }
    out
}

/// Log emissions for every policy.
#[derive(Clone, Debug)]
pub struct EmissionTable {
    pub k: usize,
    pub policies: Vec<Vec<f64>>,
}

pub fn emissions(portfolio: &Portfolio, params: &ModelParameters) -> Result<EmissionTable> {
    check_dimensions(portfolio, params)?;
    let kernels = ProfileKernel::all(params);
    let policies = portfolio
        .policies
        .par_iter()
        .map(|p| policy_log_emissions_with(p, params, &kernels))
        .collect();
    Ok(EmissionTable {
        k: params.k(),
        policies,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    /// Filtered profile probabilities α̂_t, row-major `T × K`.
    pub alpha_hat: Vec<f64>,
    /// Log normalizers c_t.
    pub log_norm: Vec<f64>,
}

impl ForwardPass {
    pub fn log_likelihood(&self) -> f64 {
        self.log_norm.iter().sum()
    }
}

/// Scaled forward recursion. An observation with zero likelihood under every
/// reachable profile yields `DegenerateLikelihood` with the 1-based period.
pub fn forward(log_em: &[f64], transitions: &TransitionModel) -> Result<ForwardPass> {
    let k = transitions.k();
    let t_len = log_em.len() / k;
    let mut alpha_hat = vec![0.0; log_em.len()];
    let mut log_norm = Vec::with_capacity(t_len);
    let mut pred = transitions.w0.clone();
    let mut buf = vec![0.0; k];
    for t in 0..t_len {
        let row = &log_em[t * k..(t + 1) * k];
        let shift = row
            .iter()
            .zip(&pred)
            .filter(|(_, p)| **p > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(degenerate(t));
        }
        let mut total = 0.0;
        for j in 0..k {
            buf[j] = if pred[j] > 0.0 {
                pred[j] * (row[j] - shift).exp()
            } else {
                0.0
            };
            total += buf[j];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(degenerate(t));
        }
        log_norm.push(shift + total.ln());
        for j in 0..k {
            alpha_hat[t * k + j] = buf[j] / total;
        }
        predict(&alpha_hat[t * k..(t + 1) * k], transitions, &mut pred);
    }
    Ok(ForwardPass {
        alpha_hat,
        log_norm,
    })
}

fn degenerate(t: usize) -> Error {
    Error::DegenerateLikelihood {
        policy: String::new(),
        period: t + 1,
    }
}

/// `out = alpha · W`.
fn predict(alpha: &[f64], transitions: &TransitionModel, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (h, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&transitions.w[h]) {
            *o += a * w;
        }
    }
}

/// Scaled backward recursion with `β̂_T = 1`, using the forward normalizers.
pub fn backward(log_em: &[f64], transitions: &TransitionModel, log_norm: &[f64]) -> Vec<f64> {
    let k = transitions.k();
    let t_len = log_norm.len();
    let mut beta = vec![1.0; t_len * k];
    let mut scaled = vec![0.0; k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let next = t + 1;
        for h in 0..k {
            scaled[h] = (log_em[next * k + h] - log_norm[next]).exp() * beta[next * k + h];
        }
        for j in 0..k {
            beta[t * k + j] = transitions.w[j]
                .iter()
                .zip(&scaled)
                .map(|(w, s)| if *w == 0.0 { 0.0 } else { w * s })
                .sum();
        }
    }
    beta
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPosteriors {
    /// γ_t^{(j)}, row-major `T × K`.
    pub gamma: Vec<f64>,
    /// ξ_t^{(h,j)} for t = 2..T, laid out `[(t−2) K + h] K + j`.
    pub xi: Vec<f64>,
    pub forward: ForwardPass,
    pub beta_hat: Vec<f64>,
    pub log_likelihood: f64,
}

/// γ ∝ α̂ β̂ and ξ_t(h, j) = α̂_{t−1}(h) W_hj e^{ℓ_t(j) − c_t} β̂_t(j).
pub fn responsibilities(
    fwd: &ForwardPass,
    beta_hat: &[f64],
    log_em: &[f64],
    transitions: &TransitionModel,
) -> (Vec<f64>, Vec<f64>) {
    let k = transitions.k();
    let t_len = fwd.log_norm.len();
    let mut gamma = vec![0.0; t_len * k];
    for t in 0..t_len {
        let row = &mut gamma[t * k..(t + 1) * k];
        let mut total = 0.0;
        for j in 0..k {
            row[j] = fwd.alpha_hat[t * k + j] * beta_hat[t * k + j];
            total += row[j];
        }
        row.iter_mut().for_each(|g| *g /= total);
    }
    let mut xi = vec![0.0; t_len.saturating_sub(1) * k * k];
    for t in 1..t_len {
        let base = (t - 1) * k * k;
        let mut total = 0.0;
        for h in 0..k {
            let a = fwd.alpha_hat[(t - 1) * k + h];
            for j in 0..k {
                let w = transitions.w[h][j];
                let v = if a == 0.0 || w == 0.0 {
                    0.0
                } else {
                    a * w * (log_em[t * k + j] - fwd.log_norm[t]).exp() * beta_hat[t * k + j]
                };
                xi[base + h * k + j] = v;
                total += v;
            }
        }
        xi[base..base + k * k].iter_mut().for_each(|v| *v /= total);
    }
    (gamma, xi)
}

pub fn policy_posteriors(log_em: &[f64], transitions: &TransitionModel) -> Result<PolicyPosteriors> {
    let fwd = forward(log_em, transitions)?;
    let beta_hat = backward(log_em, transitions, &fwd.log_norm);
    let (gamma, xi) = responsibilities(&fwd, &beta_hat, log_em, transitions);
    let log_likelihood = fwd.log_likelihood();
    Ok(PolicyPosteriors {
        gamma,
        xi,
        forward: fwd,
        beta_hat,
        log_likelihood,
    })
}

#[derive(Clone, Debug)]
pub struct HmmPosteriors {
    pub k: usize,
    pub policies: Vec<PolicyPosteriors>,
    pub log_likelihood: f64,
}

fn tag_policy(err: Error, id: &str) -> Error {
    match err {
        Error::DegenerateLikelihood { period, .. } => Error::DegenerateLikelihood {
            policy: id.to_string(),
            period,
        },
        other => other,
    }
}

/// Forward/backward passes and responsibilities for every policy.
pub fn posteriors(portfolio: &Portfolio, params: &ModelParameters) -> Result<HmmPosteriors> {
    check_dimensions(portfolio, params)?;
    let kernels = ProfileKernel::all(params);
    let policies: Vec<PolicyPosteriors> = portfolio
        .policies
        .par_iter()
        .map(|p| {
            let em = policy_log_emissions_with(p, params, &kernels);
            policy_posteriors(&em, &params.transitions).map_err(|e| tag_policy(e, &p.id))
        })
        .collect::<Result<_>>()?;
    let log_likelihood = policies.iter().map(|p| p.log_likelihood).sum();
    Ok(HmmPosteriors {
        k: params.k(),
        policies,
        log_likelihood,
    })
}

/// `w0 W^{t−1}`.
pub fn prior_assignment(transitions: &TransitionModel, t: usize) -> Vec<f64> {
    let mut p = transitions.w0.clone();
    let mut next = vec![0.0; p.len()];
    for _ in 1..t.max(1) {
        predict(&p, transitions, &mut next);
        std::mem::swap(&mut p, &mut next);
    }
    p
}

/// Filtered assignment P*[Z_t = j] given the log emissions of periods 1..t−1
/// (row-major, possibly empty).
pub fn posterior_assignment(history_log_em: &[f64], transitions: &TransitionModel) -> Result<Vec<f64>> {
    let k = transitions.k();
    if history_log_em.is_empty() {
        return Ok(transitions.w0.clone());
    }
    let fwd = forward(history_log_em, transitions)?;
    let t_last = fwd.log_norm.len() - 1;
    let mut out = vec![0.0; k];
    predict(&fwd.alpha_hat[t_last * k..], transitions, &mut out);
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Chain log-likelihood Σ_i Σ_t c_{i,t}.
pub fn marginal_log_likelihood(portfolio: &Portfolio, params: &ModelParameters) -> Result<f64> {
    check_dimensions(portfolio, params)?;
    let kernels = ProfileKernel::all(params);
    let per_policy: Vec<f64> = portfolio
        .policies
        .par_iter()
        .map(|p| {
            let em = policy_log_emissions_with(p, params, &kernels);
            forward(&em, &params.transitions)
                .map(|f| f.log_likelihood())
                .map_err(|e| tag_policy(e, &p.id))
        })
        .collect::<Result<_>>()?;
    Ok(per_policy.iter().sum())
}

/// Σ_{i,t} ln Σ_j (w0 W^{t−1})_j emission_{i,t}^{(j)}: the log-likelihood that
/// treats periods as independent mixtures under the marginal assignment.
pub fn pseudo_marginal_log_likelihood(portfolio: &Portfolio, params: &ModelParameters) -> Result<f64> {
    check_dimensions(portfolio, params)?;
    let kernels = ProfileKernel::all(params);
    let k = params.k();
    let t_max = portfolio
        .policies
        .iter()
        .map(|p| p.periods.len())
        .max()
        .unwrap_or(0);
    let assign: Vec<Vec<f64>> = (1..=t_max)
        .map(|t| prior_assignment(&params.transitions, t))
        .collect();
    let per_policy: Vec<f64> = portfolio
        .policies
        .par_iter()
        .map(|p| {
            let em = policy_log_emissions_with(p, params, &kernels);
            let mut total = 0.0;
            for t in 0..p.periods.len() {
                let row = &em[t * k..(t + 1) * k];
                let terms: Vec<f64> = row
                    .iter()
                    .zip(&assign[t])
                    .map(|(l, w)| if *w > 0.0 { l + w.ln() } else { f64::NEG_INFINITY })
                    .collect();
                total += crate::numeric::log_sum_exp(&terms);
            }
            total
        })
        .collect();
    Ok(per_policy.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transitions(k: usize, rng: &mut ChaCha8Rng) -> TransitionModel {
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        TransitionModel {
            w0: norm((0..k).map(|_| rng.random_range(0.05..1.0)).collect()),
            w: (0..k)
                .map(|_| norm((0..k).map(|_| rng.random_range(0.05..1.0)).collect()))
                .collect(),
        }
    }

    fn enumerate_paths(k: usize, t: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..t {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |j| {
                        let mut q = p.clone();
                        q.push(j);
                        q
                    })
                })
                .collect();
        }
        paths
    }

    fn path_weight(path: &[usize], em: &[f64], tr: &TransitionModel) -> f64 {
        let k = tr.k();
        let mut w = tr.w0[path[0]] * em[path[0]].exp();
        for t in 1..path.len() {
            w *= tr.w[path[t - 1]][path[t]] * em[t * k + path[t]].exp();
        }
        w
    }

    #[test]
    fn forward_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = rng.random_range(2..=3);
            let t = rng.random_range(1..=4);
            let tr = random_transitions(k, &mut rng);
            let em: Vec<f64> = (0..t * k).map(|_| rng.random_range(-8.0..-0.5)).collect();
            let brute: f64 = enumerate_paths(k, t)
                .iter()
                .map(|p| path_weight(p, &em, &tr))
                .sum();
            let fwd = forward(&em, &tr).unwrap();
            assert!((fwd.log_likelihood() - brute.ln()).abs() < 1e-12 * brute.ln().abs());
        }
    }

    #[test]
    fn responsibilities_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = 2;
            let t = 3;
            let tr = random_transitions(k, &mut rng);
            let em: Vec<f64> = (0..t * k).map(|_| rng.random_range(-5.0..0.0)).collect();
            let paths = enumerate_paths(k, t);
            let total: f64 = paths.iter().map(|p| path_weight(p, &em, &tr)).sum();
            let post = policy_posteriors(&em, &tr).unwrap();
            for s in 0..t {
                for j in 0..k {
                    let g: f64 = paths
                        .iter()
                        .filter(|p| p[s] == j)
                        .map(|p| path_weight(p, &em, &tr))
                        .sum::<f64>()
                        / total;
                    assert!((post.gamma[s * k + j] - g).abs() < 1e-12);
                }
            }
            for s in 1..t {
                for h in 0..k {
                    for j in 0..k {
                        let x: f64 = paths
                            .iter()
                            .filter(|p| p[s - 1] == h && p[s] == j)
                            .map(|p| path_weight(p, &em, &tr))
                            .sum::<f64>()
                            / total;
                        assert!((post.xi[((s - 1) * k + h) * k + j] - x).abs() < 1e-12);
                    }
                }
            }
            // backward: β̂_t(j) e^{Σ_{τ>t} c_τ} = P(future | Z_t = j)
            for s in 0..t {
                let future: f64 = post.forward.log_norm[s + 1..].iter().sum();
                for j in 0..k {
                    let mut p_future = 0.0;
                    for p in paths.iter().filter(|p| p[s] == j && p[..s].iter().all(|&z| z == 0)) {
                        let mut w = 1.0;
                        for u in s + 1..t {
                            w *= tr.w[p[u - 1]][p[u]] * em[u * k + p[u]].exp();
                        }
                        p_future += w;
                    }
                    let ours = post.beta_hat[s * k + j] * future.exp();
                    assert!((ours - p_future).abs() < 1e-12 * p_future.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn posterior_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 3;
        let t = 6;
        let tr = random_transitions(k, &mut rng);
        let em: Vec<f64> = (0..t * k).map(|_| rng.random_range(-30.0..0.0)).collect();
        let post = policy_posteriors(&em, &tr).unwrap();
        for s in 0..t {
            let g: f64 = post.gamma[s * k..(s + 1) * k].iter().sum();
            assert!((g - 1.0).abs() < 1e-10);
            assert!(s + 1 < t || post.beta_hat[s * k..].iter().all(|&b| b == 1.0));
        }
        for s in 1..t {
            let block = &post.xi[(s - 1) * k * k..s * k * k];
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for h in 0..k {
                let row: f64 = block[h * k..(h + 1) * k].iter().sum();
                assert!((row - post.gamma[(s - 1) * k + h]).abs() < 1e-10);
            }
        }
        // Σ_j α_t β_t is the same for every t
        let mut cum = 0.0;
        let mut levels = Vec::new();
        for s in 0..t {
            cum += post.forward.log_norm[s];
            let rest: f64 = post.forward.log_norm[s + 1..].iter().sum();
            let ab: f64 = (0..k)
                .map(|j| post.forward.alpha_hat[s * k + j] * post.beta_hat[s * k + j])
                .sum();
            levels.push(cum + rest + ab.ln());
        }
        for l in &levels {
            assert!((l - levels[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_profile_is_trivial() {
        let tr = TransitionModel::uniform(1);
        let em = vec![-1.0, -2.5, -0.3];
        let post = policy_posteriors(&em, &tr).unwrap();
        assert!((post.log_likelihood + 3.8).abs() < 1e-14);
        assert!(post.gamma.iter().all(|&g| (g - 1.0).abs() < 1e-15));
        assert!(post.xi.iter().all(|&g| (g - 1.0).abs() < 1e-15));
    }

    #[test]
    fn symmetric_emissions_give_uniform_gamma() {
        let tr = TransitionModel::uniform(3);
        let em = vec![-1.0; 12];
        let post = policy_posteriors(&em, &tr).unwrap();
        assert!(post.gamma.iter().all(|&g| (g - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn assignment_examples() {
        let tr = TransitionModel {
            w0: vec![1.0, 0.0],
            w: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        };
        assert_eq!(prior_assignment(&tr, 1), vec![1.0, 0.0]);
        let p3 = prior_assignment(&tr, 3);
        assert!((p3[0] - 0.83).abs() < 1e-15 && (p3[1] - 0.17).abs() < 1e-15);
        let ident = TransitionModel {
            w0: vec![0.3, 0.7],
            w: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert_eq!(prior_assignment(&ident, 7), vec![0.3, 0.7]);

        let rows = TransitionModel {
            w0: vec![0.5, 0.5],
            w: vec![vec![0.25, 0.75], vec![0.25, 0.75]],
        };
        let post = posterior_assignment(&[-1.0, -7.0], &rows).unwrap();
        assert!((post[0] - 0.25).abs() < 1e-15);

        // Bayes over Z_1 by hand
        let tr = TransitionModel {
            w0: vec![0.4, 0.6],
            w: vec![vec![0.7, 0.3], vec![0.1, 0.9]],
        };
        let em = [0.2f64.ln(), 0.05f64.ln()];
        let z1 = [0.4 * 0.2 / (0.4 * 0.2 + 0.6 * 0.05), 0.6 * 0.05 / (0.4 * 0.2 + 0.6 * 0.05)];
        let expected = [z1[0] * 0.7 + z1[1] * 0.1, z1[0] * 0.3 + z1[1] * 0.9];
        let post = posterior_assignment(&em, &tr).unwrap();
        assert!((post[0] - expected[0]).abs() < 1e-15);
        assert!((post[1] - expected[1]).abs() < 1e-15);
        assert_eq!(posterior_assignment(&[], &tr).unwrap(), tr.w0);
    }

    #[test]
    fn degenerate_row_is_reported() {
        let tr = TransitionModel::uniform(2);
        let em = vec![-1.0, -1.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        match forward(&em, &tr) {
            Err(Error::DegenerateLikelihood { period, .. }) => assert_eq!(period, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
