//! Frequency-severity dependence implied by the profile mixture: covariance,
//! the copula of (N/e, X₁), Spearman's rho and Kendall's tau.
//!
//! The count margin is discrete, so the copula is taken to be the multilinear
//! extension of the joint distribution function. Its rho and tau equal the
//! population rank statistics with average ranks for tied counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaLaw};
use statrs::function::beta::inv_beta_reg;

use crate::distributions::{dot, gb2_cdf, nb_ln_pmf, posterior_hyperparams, ModelParameters, GB2_GAMMA_LIMIT};
use crate::error::{Error, Result};
use crate::estimation::FittedModel;
use crate::hmm::{self, posterior_assignment, prior_assignment};
use crate::numeric::integrate;
use crate::portfolio::{PolicyPeriod, Portfolio};
use crate::pricing::{check_schema, profile_history};

/// Σ_j P_j E_j[N/e] (E_j[X] − Σ_h P_h E_h[X]).
pub fn mixture_covariance(assign: &[f64], freq_means: &[f64], sev_means: &[f64]) -> f64 {
    let mean_x: f64 = assign.iter().zip(sev_means).map(|(p, x)| p * x).sum();
    assign
        .iter()
        .zip(freq_means)
        .zip(sev_means)
        .map(|((p, f), x)| p * f * (x - mean_x))
        .sum()
}

/// Two-profile covariance with profile 2 means `rλ` and `sμ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoProfileCovariance {
    /// w(1−w)λμ(r−1)(s−1).
    pub closed_form: f64,
    /// w(1−w)λμ[s(r−2)+1], the variant printed in the source derivation.
    pub printed_variant: f64,
}

pub fn two_profile_covariance_closed_form(w: f64, lambda: f64, mu: f64, r: f64, s: f64) -> TwoProfileCovariance {
    let scale = w * (1.0 - w) * lambda * mu;
    TwoProfileCovariance {
        closed_form: scale * (r - 1.0) * (s - 1.0),
        printed_variant: scale * (s * (r - 2.0) + 1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Prior,
    Posterior,
}

/// Negative binomial with `a` successes and success probability `b / (b + m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountLaw {
    pub a: f64,
    pub b: f64,
    pub m: f64,
}

/// GB2 with shapes `(μ, a)` and scale `b / φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeLaw {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl SizeLaw {
    fn cdf(&self, x: f64) -> f64 {
        gb2_cdf(x, self.mu, self.a, self.b, self.phi)
    }

    /// Bound on the distribution-function error when the gamma limit stands
    /// in for the GB2.
    fn limit_error(&self) -> f64 {
        if self.a > GB2_GAMMA_LIMIT {
            (self.mu + 1.0).powi(2) / self.a
        } else {
            0.0
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        if self.a > GB2_GAMMA_LIMIT {
            let g = GammaLaw::new(self.mu, 1.0).expect("positive shape");
            return self.b / (self.a * self.phi) * g.inverse_cdf(p);
        }
        let z = inv_beta_reg(self.mu, self.a, p);
        self.b / self.phi * z / (1.0 - z)
    }

    fn mean(&self) -> f64 {
        self.mu / self.phi * self.b / (self.a - 1.0)
    }
}

/// The distribution of (N, X₁) in one policy-period: a finite mixture of
/// independent count and size laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodMixture {
    pub exposure: f64,
    pub weights: Vec<f64>,
    pub counts: Vec<CountLaw>,
    pub sizes: Vec<SizeLaw>,
}

const COUNT_TAIL: f64 = 1e-14;
const MAX_COUNT: usize = 100_000;
const QUAD_TOL: f64 = 1e-11;
/// Reported error bound of the quadrature rank correlations.
pub const QUADRATURE_ERROR: f64 = 1e-8;
pub const MIN_MC_DRAWS: usize = 10_000;
const MC_CHUNK: usize = 1 << 15;
const MC_BATCHES: usize = 20;

impl PeriodMixture {
    /// A priori: assignment `w0 W^{t−1}` and the prior hyperparameters.
    pub fn prior(params: &ModelParameters, a: &[f64], b: &[f64], exposure: f64, t: usize) -> Result<Self> {
        Self::build(params, a, b, exposure, prior_assignment(&params.transitions, t), &[])
    }

    /// A posteriori: filtered assignment and hyperparameters updated with `history`.
    pub fn posterior(
        params: &ModelParameters,
        history: &[PolicyPeriod],
        a: &[f64],
        b: &[f64],
        exposure: f64,
    ) -> Result<Self> {
        let kernels = hmm::ProfileKernel::all(params);
        let log_em = hmm::period_log_emissions(history, params, &kernels);
        let assign = posterior_assignment(&log_em, &params.transitions)?;
        Self::build(params, a, b, exposure, assign, history)
    }

    fn build(
        params: &ModelParameters,
        a: &[f64],
        b: &[f64],
        exposure: f64,
        weights: Vec<f64>,
        history: &[PolicyPeriod],
    ) -> Result<Self> {
        params.validate()?;
        if a.len() != params.freq_dim() || b.len() != params.sev_dim() {
            return Err(Error::Dimension {
                context: "period covariates",
                expected: params.freq_dim() + params.sev_dim(),
                got: a.len() + b.len(),
            });
        }
        if !(exposure > 0.0) {
            return Err(Error::domain(format!("exposure must be positive (got {exposure})")));
        }
        let mut counts = Vec::with_capacity(params.k());
        let mut sizes = Vec::with_capacity(params.k());
        for j in 0..params.k() {
            let (f, s) = (&params.frequency[j], &params.severity[j]);
            let post = posterior_hyperparams(f, s, &profile_history(params, j, history));
            counts.push(CountLaw {
                a: post.a_u,
                b: post.b_u,
                m: exposure * dot(a, &f.delta_a).exp(),
            });
            sizes.push(SizeLaw {
                mu: s.phi * dot(b, &s.delta_b).exp(),
                a: post.a_v,
                b: post.b_v,
                phi: s.phi,
            });
        }
        Ok(PeriodMixture {
            exposure,
            weights,
            counts,
            sizes,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// E_j[N/e] for every profile.
    pub fn frequency_means(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c.a * c.m / c.b / self.exposure).collect()
    }

    /// E_j[X] for every profile.
    pub fn severity_means(&self) -> Vec<f64> {
        self.sizes.iter().map(SizeLaw::mean).collect()
    }

    pub fn covariance(&self) -> f64 {
        mixture_covariance(&self.weights, &self.frequency_means(), &self.severity_means())
    }

    /// Per-profile count pmfs on a common support covering all but
    /// `COUNT_TAIL` of every profile's mass.
    fn count_pmfs(&self) -> Vec<Vec<f64>> {
        let mut pmfs: Vec<Vec<f64>> = vec![Vec::new(); self.k()];
        let mut cdfs = vec![0.0; self.k()];
        for n in 0..MAX_COUNT {
            for (j, c) in self.counts.iter().enumerate() {
                let p = nb_ln_pmf(n as u32, c.a, c.b, c.m).exp();
                pmfs[j].push(p);
                cdfs[j] += p;
            }
            let mean_passed = self.counts.iter().all(|c| n as f64 > c.a * c.m / c.b);
            if mean_passed && cdfs.iter().all(|f| *f >= 1.0 - COUNT_TAIL) {
                break;
            }
        }
        pmfs
    }

    fn mixture_count_pmf(&self, pmfs: &[Vec<f64>]) -> Vec<f64> {
        let len = pmfs[0].len();
        (0..len)
            .map(|n| self.weights.iter().zip(pmfs).map(|(w, p)| w * p[n]).sum())
            .collect()
    }

    /// Mixture size distribution function.
    pub fn size_cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.sizes)
            .map(|(w, s)| w * s.cdf(x))
            .sum()
    }

    /// Mixture count distribution function.
    pub fn count_cdf(&self, n: u32) -> f64 {
        let pmfs = self.count_pmfs();
        let mix = self.mixture_count_pmf(&pmfs);
        mix.iter().take(n as usize + 1).sum::<f64>().min(1.0)
    }

    fn size_quantile(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return f64::INFINITY;
        }
        let qs: Vec<f64> = self.sizes.iter().map(|s| s.quantile(v)).collect();
        let mut lo = qs.iter().copied().fold(f64::INFINITY, f64::min).ln();
        let mut hi = qs.iter().copied().fold(0.0, f64::max).ln();
        if hi - lo < 1e-14 {
            return lo.exp();
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.size_cdf(mid.exp()) < v {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    /// C(u, v) of the multilinear extension: exact at `u = F_N(n)` and linear
    /// in `u` between consecutive atoms of the count margin.
    pub fn copula_cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        let u = u.min(1.0);
        let v = v.min(1.0);
        let pmfs = self.count_pmfs();
        let mix = self.mixture_count_pmf(&pmfs);
        let x = self.size_quantile(v);
        let size_cdfs: Vec<f64> = self.sizes.iter().map(|s| s.cdf(x)).collect();
        let joint = |cum: &[f64]| -> f64 {
            self.weights
                .iter()
                .zip(cum)
                .zip(&size_cdfs)
                .map(|((w, c), f)| w * c * f)
                .sum()
        };
        let mut cum_profiles = vec![0.0; self.k()];
        let mut cum = 0.0;
        for (n, &p) in mix.iter().enumerate() {
            let prev_joint = joint(&cum_profiles);
            for (c, pm) in cum_profiles.iter_mut().zip(&pmfs) {
                *c += pm[n];
            }
            let next = cum + p;
            if u <= next || n + 1 == mix.len() {
                if p <= 0.0 {
                    return joint(&cum_profiles);
                }
                let frac = ((u - cum) / p).clamp(0.0, 1.0);
                return prev_joint + frac * (joint(&cum_profiles) - prev_joint);
            }
            cum = next;
        }
        v
    }

    /// `I[h][j] = P(X_h ≤ X_j)` for independent draws from profiles h and j.
    fn size_order_probabilities(&self) -> Vec<Vec<f64>> {
        let k = self.k();
        let mut out = vec![vec![0.5; k]; k];
        for j in 0..k {
            for h in 0..k {
                if h == j {
                    continue;
                }
                if h > j && self.sizes[h] == self.sizes[j] {
                    continue;
                }
                let (sh, sj) = (self.sizes[h], self.sizes[j]);
                out[h][j] = integrate(|p| sh.cdf(sj.quantile(p)), 0.0, 1.0, QUAD_TOL, QUAD_TOL).clamp(0.0, 1.0);
            }
        }
        for j in 0..k {
            for h in 0..j {
                if self.sizes[h] == self.sizes[j] {
                    out[j][h] = 0.5;
                    out[h][j] = 0.5;
                }
            }
        }
        out
    }

    /// Spearman's rho and Kendall's tau by summation over the count support
    /// and one-dimensional quadrature over the size margins.
    pub fn rank_correlations_quadrature(&self) -> RankCorrelations {
        let k = self.k();
        let pmfs = self.count_pmfs();
        let mix = self.mixture_count_pmf(&pmfs);
        let len = mix.len();
        let mut mid = Vec::with_capacity(len);
        let mut cum = 0.0;
        for &p in &mix {
            mid.push(cum + 0.5 * p);
            cum += p;
        }
        let order = self.size_order_probabilities();

        let mut rho = 0.0;
        for j in 0..k {
            let e_mid: f64 = pmfs[j].iter().zip(&mid).map(|(p, m)| p * m).sum();
            let e_fx: f64 = (0..k).map(|h| self.weights[h] * order[h][j]).sum();
            rho += self.weights[j] * e_mid * e_fx;
        }
        let rho = 12.0 * rho - 3.0;

        let cdfs: Vec<Vec<f64>> = pmfs
            .iter()
            .map(|pm| {
                let mut c = 0.0;
                pm.iter()
                    .map(|p| {
                        c += p;
                        c
                    })
                    .collect()
            })
            .collect();
        let mut tau = 0.0;
        for j in 0..k {
            for h in 0..k {
                // P(N_j > N_h) − P(N_j < N_h)
                let mut greater = 0.0;
                let mut less = 0.0;
                for n in 0..len {
                    let below = if n == 0 { 0.0 } else { cdfs[h][n - 1] };
                    greater += pmfs[j][n] * below;
                    less += pmfs[j][n] * (1.0 - cdfs[h][n]).max(0.0);
                }
                let sign_x = 1.0 - 2.0 * order[j][h];
                tau += self.weights[j] * self.weights[h] * (greater - less) * sign_x;
            }
        }
        // each P(X_h ≤ X_j) moves by at most twice the limit error
        let limit = 2.0 * self.sizes.iter().map(SizeLaw::limit_error).fold(0.0, f64::max);
        RankCorrelations {
            spearman_rho: rho.clamp(-1.0, 1.0),
            kendall_tau: tau.clamp(-1.0, 1.0),
            rho_error: QUADRATURE_ERROR + 12.0 * limit,
            tau_error: QUADRATURE_ERROR + 2.0 * limit,
        }
    }

    fn sample_chunk(&self, seed: u64, chunk: usize, len: usize) -> Vec<(u32, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64 + 1);
        let count_gammas: Vec<Gamma<f64>> = self
            .counts
            .iter()
            .map(|c| Gamma::new(c.a, 1.0 / c.b).expect("positive shape"))
            .collect();
        let size_gammas: Vec<(Gamma<f64>, Gamma<f64>)> = self
            .sizes
            .iter()
            .map(|s| {
                (
                    Gamma::new(s.a, 1.0).expect("positive shape"),
                    Gamma::new(s.mu, 1.0).expect("positive shape"),
                )
            })
            .collect();
        (0..len)
            .map(|_| {
                let u: f64 = rng.random();
                let mut j = 0;
                let mut acc = self.weights[0];
                while u >= acc && j + 1 < self.k() {
                    j += 1;
                    acc += self.weights[j];
                }
                let rate = self.counts[j].m * count_gammas[j].sample(&mut rng);
                let n = if rate > 0.0 {
                    Poisson::new(rate).map(|p| p.sample(&mut rng) as u32).unwrap_or(0)
                } else {
                    0
                };
                let s = &self.sizes[j];
                let (ga, gm) = &size_gammas[j];
                let v = s.b / ga.sample(&mut rng);
                let x = v / s.phi * gm.sample(&mut rng);
                (n, x)
            })
            .collect()
    }

    /// Draws `n` pairs (N, X₁) in fixed-size chunks, each from its own stream
    /// of `seed`, so the sample does not depend on the thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(u32, f64)> {
        let chunks = n.div_ceil(MC_CHUNK);
        let parts: Vec<Vec<(u32, f64)>> = (0..chunks)
            .into_par_iter()
            .map(|c| self.sample_chunk(seed, c, MC_CHUNK.min(n - c * MC_CHUNK)))
            .collect();
        parts.into_iter().flatten().collect()
    }

    /// Sample rank correlations of `n` Monte Carlo draws with batch-means
    /// standard errors.
    pub fn rank_correlations_monte_carlo(&self, n: usize, seed: u64) -> Result<RankCorrelations> {
        if n < MIN_MC_DRAWS {
            return Err(Error::validation(format!(
                "Monte Carlo rank correlations need at least {MIN_MC_DRAWS} draws (got {n})"
            )));
        }
        let draws = self.sample(n, seed);
        let (rho, tau) = sample_rank_correlations(&draws);
        let batch = n / MC_BATCHES;
        let stats: Vec<(f64, f64)> = draws
            .par_chunks(batch)
            .filter(|c| c.len() == batch)
            .map(sample_rank_correlations)
            .collect();
        let se = |vals: Vec<f64>| {
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        };
        Ok(RankCorrelations {
            spearman_rho: rho,
            kendall_tau: tau,
            rho_error: se(stats.iter().map(|s| s.0).collect()),
            tau_error: se(stats.iter().map(|s| s.1).collect()),
        })
    }

    pub fn rank_correlations(&self, method: RankMethod) -> Result<RankCorrelations> {
        match method {
            RankMethod::Quadrature => Ok(self.rank_correlations_quadrature()),
            RankMethod::MonteCarlo { draws, seed } => self.rank_correlations_monte_carlo(draws, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelations {
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    /// Standard error (Monte Carlo) or error bound (quadrature).
    pub rho_error: f64,
    pub tau_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RankMethod {
    MonteCarlo { draws: usize, seed: u64 },
    Quadrature,
}

/// Average ranks (1-based) of `values`.
fn average_ranks<T: PartialOrd + Copy>(values: &[T]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("comparable values"));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = 0.5 * (start + 1 + end) as f64;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Counts inversions of `v` while sorting it.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Spearman's rho `12 mean(r s) − 3` with ranks scaled to (0, 1) and
/// Kendall's tau-a, ties in the count counted as neither concordant nor
/// discordant.
pub fn sample_rank_correlations(draws: &[(u32, f64)]) -> (f64, f64) {
    let n = draws.len();
    let nf = n as f64;
    let counts: Vec<u32> = draws.iter().map(|d| d.0).collect();
    let sizes: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let rn = average_ranks(&counts);
    let rx = average_ranks(&sizes);
    let cross: f64 = rn
        .iter()
        .zip(&rx)
        .map(|(a, b)| (a - 0.5) / nf * ((b - 0.5) / nf))
        .sum();
    let rho = 12.0 * cross / nf - 3.0;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        counts[a]
            .cmp(&counts[b])
            .then(sizes[a].partial_cmp(&sizes[b]).expect("comparable sizes"))
    });
    let mut tied = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && counts[order[end]] == counts[order[start]] {
            end += 1;
        }
        let t = (end - start) as u64;
        tied += t * (t - 1) / 2;
        start = end;
    }
    let mut xs: Vec<f64> = order.iter().map(|&i| sizes[i]).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = merge_count(&mut xs, &mut buf);
    let total = (n as u64) * (n as u64 - 1) / 2;
    let tau = (total as f64 - tied as f64 - 2.0 * swaps as f64) / total as f64;
    (rho, tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

/// Relative tolerance for calling a covariance zero.
pub const COVARIANCE_ZERO_TOL: f64 = 1e-12;

pub fn classify(value: f64, tolerance: f64) -> Sign {
    if value > tolerance {
        Sign::Positive
    } else if value < -tolerance {
        Sign::Negative
    } else {
        Sign::Zero
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignHistogram {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl SignHistogram {
    fn add(&mut self, s: Sign) {
        match s {
            Sign::Positive => self.positive += 1,
            Sign::Negative => self.negative += 1,
            Sign::Zero => self.zero += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceMeasures {
    pub covariance: f64,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub sign: Sign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceRow {
    pub policy_id: String,
    pub period: usize,
    pub prior: DependenceMeasures,
    pub posterior: DependenceMeasures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantHistograms {
    pub covariance: SignHistogram,
    pub spearman_rho: SignHistogram,
    pub kendall_tau: SignHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub rows: Vec<DependenceRow>,
    pub prior: VariantHistograms,
    pub posterior: VariantHistograms,
}

fn measures(mix: &PeriodMixture) -> DependenceMeasures {
    let covariance = mix.covariance();
    let scale: f64 = mix
        .frequency_means()
        .iter()
        .zip(mix.severity_means())
        .zip(&mix.weights)
        .map(|((f, x), w)| w * f * x)
        .sum();
    let rc = if mix.k() == 1 {
        RankCorrelations {
            spearman_rho: 0.0,
            kendall_tau: 0.0,
            rho_error: 0.0,
            tau_error: 0.0,
        }
    } else {
        mix.rank_correlations_quadrature()
    };
    DependenceMeasures {
        covariance,
        spearman_rho: rc.spearman_rho,
        kendall_tau: rc.kendall_tau,
        sign: classify(covariance, COVARIANCE_ZERO_TOL * scale),
    }
}

fn histograms<'a>(rows: impl Iterator<Item = &'a DependenceMeasures>) -> VariantHistograms {
    let mut h = VariantHistograms {
        covariance: SignHistogram::default(),
        spearman_rho: SignHistogram::default(),
        kendall_tau: SignHistogram::default(),
    };
    for m in rows {
        h.covariance.add(m.sign);
        h.spearman_rho.add(classify(m.spearman_rho, QUADRATURE_ERROR));
        h.kendall_tau.add(classify(m.kendall_tau, QUADRATURE_ERROR));
    }
    h
}

/// Dependence measures of every policy-period, a priori and given the
/// policy's earlier periods, with sign histograms.
pub fn dependence_summary_with_params(portfolio: &Portfolio, params: &ModelParameters) -> Result<DependenceReport> {
    hmm::check_dimensions(portfolio, params)?;
    let per_policy: Vec<Vec<DependenceRow>> = portfolio
        .policies
        .par_iter()
        .map(|policy| {
            policy
                .periods
                .iter()
                .enumerate()
                .map(|(t, pp)| {
                    let (a, b) = (&pp.freq_covariates, &pp.sev_covariates);
                    let prior = measures(&PeriodMixture::prior(params, a, b, pp.exposure, t + 1)?);
                    let posterior = if t == 0 {
                        prior.clone()
                    } else {
                        measures(&PeriodMixture::posterior(params, &policy.periods[..t], a, b, pp.exposure)?)
                    };
                    Ok(DependenceRow {
                        policy_id: policy.id.clone(),
                        period: pp.period,
                        prior,
                        posterior,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<DependenceRow> = per_policy.into_iter().flatten().collect();
    Ok(DependenceReport {
        prior: histograms(rows.iter().map(|r| &r.prior)),
        posterior: histograms(rows.iter().map(|r| &r.posterior)),
        rows,
    })
}

/// [`dependence_summary_with_params`] after checking the fitted design columns.
pub fn dependence_summary(portfolio: &Portfolio, model: &FittedModel) -> Result<DependenceReport> {
    check_schema(portfolio, model)?;
    dependence_summary_with_params(portfolio, &model.params)
}
