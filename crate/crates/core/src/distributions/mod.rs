//! Per-profile GLM mean predictors, conjugate updates and the Negative-Binomial /
//! GB2 marginal kernels.
//!
//! Conditional on profile `j`, counts are Poisson with rate `e λ U` where
//! `U ~ Gamma(a_U, b_U)`, and claim sizes are Gamma with shape `μ` and rate
//! `φ / V` where `V ~ InvGamma(a_V, b_V)`. Marginalising the heterogeneity
//! factors gives NB counts and GB2 sizes. `μ` is stored as the Gamma shape
//! `φ exp(B·δ_B)`, so the severity mean predictor is `μ / φ`.

mod params;

pub use params::{
    ModelParameters, ProfileFrequencyParams, ProfileSeverityParams, Representation,
    TransitionModel,
};

use crate::error::{Error, Result};
use crate::special::{ln_gamma_shift, ln_factorial, ln_gamma};

pub(crate) fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

/// λ = exp(A·δ_A).
pub fn lambda_mean(freq: &ProfileFrequencyParams, a: &[f64]) -> Result<f64> {
    check_dim("frequency covariates", freq.delta_a.len(), a.len())?;
    Ok(dot(a, &freq.delta_a).exp())
}

/// μ = φ exp(B·δ_B), the conditional Gamma shape.
pub fn mu_shape(sev: &ProfileSeverityParams, b: &[f64]) -> Result<f64> {
    check_dim("severity covariates", sev.delta_b.len(), b.len())?;
    Ok(sev.phi * dot(b, &sev.delta_b).exp())
}

/// ln Γ(n + a) − ln Γ(a).
pub(crate) fn ln_rising(a: f64, n: u32) -> f64 {
    if n <= 8 {
        (0..n).map(|i| (a + i as f64).ln()).sum()
    } else {
        let nf = n as f64;
        ln_gamma_shift(a, nf) + nf * a.ln()
    }
}

/// Unchecked NB log-pmf; `expo_lambda = 0` gives 0 for `n = 0` and −∞ otherwise.
pub(crate) fn nb_ln_pmf(n: u32, a_u: f64, b_u: f64, expo_lambda: f64) -> f64 {
    if expo_lambda == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_total = (b_u + expo_lambda).ln();
    let nf = n as f64;
    let count_term = if n == 0 {
        0.0
    } else {
        nf * (expo_lambda.ln() - ln_total)
    };
    ln_rising(a_u, n) - ln_factorial(n) + count_term - a_u * (expo_lambda / b_u).ln_1p()
}

/// Log-probability of `n` claims under the NB with `a_U` successes and success
/// probability `b_U / (b_U + eλ)`.
pub fn nb_log_pmf(n: u32, a_u: f64, b_u: f64, expo_lambda: f64) -> Result<f64> {
    if !(a_u > 0.0 && b_u > 0.0) {
        return Err(Error::domain(format!("NB needs a_U, b_U > 0 (got {a_u}, {b_u})")));
    }
    if !(expo_lambda >= 0.0) || !expo_lambda.is_finite() {
        return Err(Error::domain(format!("NB needs e*lambda >= 0 (got {expo_lambda})")));
    }
    Ok(nb_ln_pmf(n, a_u, b_u, expo_lambda))
}

/// Unchecked GB2 log-density.
pub(crate) fn gb2_ln_pdf(x: f64, mu: f64, a_v: f64, b_v: f64, phi: f64) -> f64 {
    gb2_ln_pdf_sum(&[x], mu, a_v, b_v, phi, ln_gamma(a_v))
}

/// Σ GB2 log-densities over `sizes`, arranged so that no term cancels when
/// `μ` or `a_V` is large.
pub(crate) fn gb2_ln_pdf_sum(sizes: &[f64], mu: f64, a_v: f64, b_v: f64, phi: f64, ln_gamma_a_v: f64) -> f64 {
    let n = sizes.len() as f64;
    let mut total = 0.0;
    if mu <= a_v {
        let ln_a_phi = (a_v * phi).ln();
        total += n * (ln_gamma_shift(a_v, mu) - ln_gamma(mu) + mu * ln_a_phi);
        for &x in sizes {
            let y = phi * x;
            total += -mu * (b_v + y).ln() - a_v * (y / b_v).ln_1p() + (mu - 1.0) * x.ln();
        }
    } else {
        let ln_mu_b = (mu * b_v).ln();
        total += n * (ln_gamma_shift(mu, a_v) - ln_gamma_a_v + a_v * ln_mu_b);
        for &x in sizes {
            let y = phi * x;
            total += -a_v * (b_v + y).ln() - mu * (b_v / y).ln_1p() - x.ln();
        }
    }
    total
}

/// Log-density of one claim size under the GB2 with shapes `(μ, a_V, 1)` and
/// scale `b_V / φ`.
pub fn gb2_log_pdf(x: f64, mu: f64, a_v: f64, b_v: f64, phi: f64) -> Result<f64> {
    let all_positive = [x, mu, a_v, b_v, phi]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
    if !all_positive {
        return Err(Error::domain(format!(
            "GB2 needs positive x, mu, a_V, b_V, phi (got {x}, {mu}, {a_v}, {b_v}, {phi})"
        )));
    }
    Ok(gb2_ln_pdf(x, mu, a_v, b_v, phi))
}

/// Above this `a_V` the GB2 distribution function is evaluated through its
/// gamma limit `a_V φ X / b_V ~ Gamma(μ)`, whose error is at most about
/// `(μ + 1)² / a_V`; the incomplete beta loses accuracy well before.
pub const GB2_GAMMA_LIMIT: f64 = 1e6;

/// GB2 distribution function, `I_z(μ, a_V)` with `z = φx / (b_V + φx)`.
pub fn gb2_cdf(x: f64, mu: f64, a_v: f64, b_v: f64, phi: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if a_v > GB2_GAMMA_LIMIT {
        return statrs::function::gamma::gamma_lr(mu, a_v * phi * x / b_v);
    }
    let z = phi * x / (b_v + phi * x);
    statrs::function::beta::beta_reg(mu, a_v, z)
}

/// NB distribution function P[N ≤ n].
pub fn nb_cdf(n: u32, a_u: f64, b_u: f64, expo_lambda: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..=n {
        total += nb_ln_pmf(k, a_u, b_u, expo_lambda).exp();
    }
    total.min(1.0)
}

/// NB mean and variance: `a eλ / b` and `mean (1 + eλ / b)`.
pub fn nb_mean_variance(a_u: f64, b_u: f64, expo_lambda: f64) -> Result<(f64, f64)> {
    if !(a_u > 0.0 && b_u > 0.0 && expo_lambda >= 0.0) {
        return Err(Error::domain("NB moments need a_U, b_U > 0 and e*lambda >= 0"));
    }
    let mean = a_u * expo_lambda / b_u;
    Ok((mean, mean * (1.0 + expo_lambda / b_u)))
}

/// GB2 mean `(μ/φ) b_V / (a_V − 1)`; requires `a_V > 1`.
pub fn gb2_mean(mu: f64, a_v: f64, b_v: f64, phi: f64) -> Result<f64> {
    if !(a_v > 1.0) {
        return Err(Error::domain(format!("GB2 mean requires a_V > 1 (got {a_v})")));
    }
    Ok(mu / phi * b_v / (a_v - 1.0))
}

/// One period of a profile's claims history as seen by the conjugate update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HistoryEntry {
    /// e·λ for this profile and period.
    pub expo_lambda: f64,
    pub count: u32,
    /// Gamma shape μ for this profile and period.
    pub mu: f64,
    /// Sum of the period's claim sizes.
    pub total_size: f64,
}

/// Posterior Gamma / Inverse-Gamma hyperparameters of U and V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorHyperparams {
    pub a_u: f64,
    pub b_u: f64,
    pub a_v: f64,
    pub b_v: f64,
}

impl PosteriorHyperparams {
    pub fn prior(freq: &ProfileFrequencyParams, sev: &ProfileSeverityParams) -> Self {
        PosteriorHyperparams {
            a_u: freq.a_u,
            b_u: freq.b_u,
            a_v: sev.a_v,
            b_v: sev.b_v,
        }
    }

    /// Folds one more period into the posterior.
    pub fn update(&mut self, phi: f64, entry: &HistoryEntry) {
        let n = entry.count as f64;
        self.a_u += n;
        self.b_u += entry.expo_lambda;
        self.a_v += n * entry.mu;
        self.b_v += phi * entry.total_size;
    }
}

/// `(a_U + ΣN, b_U + Σeλ)` and `(a_V + ΣNμ, b_V + φ ΣΣX)`.
pub fn posterior_hyperparams(
    freq: &ProfileFrequencyParams,
    sev: &ProfileSeverityParams,
    history: &[HistoryEntry],
) -> PosteriorHyperparams {
    let mut post = PosteriorHyperparams::prior(freq, sev);
    for entry in history {
        post.update(sev.phi, entry);
    }
    post
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn freq(delta: Vec<f64>) -> ProfileFrequencyParams {
        ProfileFrequencyParams { delta_a: delta, a_u: 2.0, b_u: 3.0 }
    }

    fn sev(delta: Vec<f64>, phi: f64) -> ProfileSeverityParams {
        ProfileSeverityParams { delta_b: delta, phi, a_v: 2.0, b_v: 1.0 }
    }

    /// Composite Gauss-Legendre (5 points) over [lo, hi] with `n` panels.
    fn gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let mid = lo + (i as f64 + 0.5) * h;
            for (x, w) in X.iter().zip(W) {
                total += w * f(mid + 0.5 * h * x);
            }
        }
        total * 0.5 * h
    }

    /// Poisson(n; m u) mixed over u ~ Gamma(a, rate b), integrated in log u.
    fn nb_oracle(n: u32, a: f64, b: f64, m: f64) -> f64 {
        let f = |y: f64| {
            let u: f64 = y.exp();
            let ln_pois = n as f64 * (m * u).ln() - m * u - statrs::function::factorial::ln_factorial(n as u64);
            let ln_gam = a * b.ln() + (a - 1.0) * u.ln() - b * u - statrs::function::gamma::ln_gamma(a);
            (ln_pois + ln_gam + y).exp()
        };
        gauss_legendre(f, -120.0, 8.0, 8000)
    }

    /// Gamma(x; μ, rate φ/v) mixed over v ~ InvGamma(a, b), integrated in log v.
    fn gb2_oracle(x: f64, mu: f64, a: f64, b: f64, phi: f64) -> f64 {
        use statrs::function::gamma::ln_gamma as lg;
        let f = |y: f64| {
            let v: f64 = y.exp();
            let rate = phi / v;
            let ln_g = mu * rate.ln() + (mu - 1.0) * x.ln() - rate * x - lg(mu);
            let ln_ig = a * b.ln() - (a + 1.0) * v.ln() - b / v - lg(a);
            (ln_g + ln_ig + y).exp()
        };
        gauss_legendre(f, -15.0, 30.0, 4000)
    }

    #[test]
    fn lambda_and_mu_examples() {
        assert_eq!(lambda_mean(&freq(vec![0.0, 0.0]), &[1.0, 5.0]).unwrap(), 1.0);
        assert!((lambda_mean(&freq(vec![0.5, -0.25]), &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambda_mean(&freq(vec![3f64.ln()]), &[1.0]).unwrap() - 3.0).abs() < 1e-14);
        assert!(lambda_mean(&freq(vec![0.0]), &[1.0, 2.0]).is_err());

        let mu = mu_shape(&sev(vec![0.0], 2.0), &[1.0]).unwrap();
        assert_eq!(mu, 2.0);
        assert_eq!(mu / 2.0, 1.0);
        assert!((mu_shape(&sev(vec![5f64.ln()], 1.0), &[1.0]).unwrap() - 5.0).abs() < 1e-14);
        assert!((mu_shape(&sev(vec![4f64.ln()], 0.5), &[1.0]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn nb_matches_poisson_gamma_mixture() {
        let p0 = nb_log_pmf(0, 1.0, 1.0, 1.0).unwrap();
        let p1 = nb_log_pmf(1, 1.0, 1.0, 1.0).unwrap();
        assert!((p0 - 0.5f64.ln()).abs() < 1e-14);
        assert!((p1 - 0.25f64.ln()).abs() < 1e-14);
        assert!((nb_oracle(0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-10);
        assert!((nb_oracle(1, 1.0, 1.0, 1.0) - 0.25).abs() < 1e-10);
        for &(n, a, b, m) in &[(3, 2.5, 0.7, 1.3), (0, 0.4, 2.0, 0.05), (12, 7.0, 3.0, 4.0)] {
            let ours = nb_log_pmf(n, a, b, m).unwrap().exp();
            let oracle = nb_oracle(n, a, b, m);
            assert!((ours - oracle).abs() < 1e-9 * oracle.max(1e-3), "{n} {a} {b} {m}");
        }
        assert_eq!(nb_log_pmf(0, 1.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(nb_log_pmf(2, 1.0, 1.0, 0.0).unwrap(), f64::NEG_INFINITY);
        assert!(nb_log_pmf(0, -1.0, 1.0, 1.0).is_err());
        assert!(nb_log_pmf(0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn gb2_matches_gamma_inverse_gamma_mixture() {
        assert!((gb2_log_pdf(1.0, 1.0, 2.0, 1.0, 1.0).unwrap() - 0.25f64.ln()).abs() < 1e-14);
        assert!((gb2_log_pdf(3.0, 1.0, 2.0, 1.0, 1.0).unwrap() - (2.0f64 / 64.0).ln()).abs() < 1e-14);
        assert!((gb2_oracle(1.0, 1.0, 2.0, 1.0, 1.0) - 0.25).abs() < 1e-10);
        assert!((gb2_oracle(3.0, 1.0, 2.0, 1.0, 1.0) - 2.0 / 64.0).abs() < 1e-10);
        for &(x, mu, a, b, phi) in &[(0.3, 2.0, 3.0, 5.0, 0.7), (250.0, 0.8, 2.2, 400.0, 1.5)] {
            let ours = gb2_log_pdf(x, mu, a, b, phi).unwrap().exp();
            let oracle = gb2_oracle(x, mu, a, b, phi);
            assert!((ours - oracle).abs() < 1e-9 * oracle, "{ours} vs {oracle}");
        }
        assert!(gb2_log_pdf(0.0, 1.0, 2.0, 1.0, 1.0).is_err());
        assert!(gb2_log_pdf(1.0, 1.0, 2.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn gb2_integrates_to_one() {
        let (mu, a, b, phi) = (2.0, 3.0, 5.0, 0.7);
        let total = gauss_legendre(
            |y| {
                let x: f64 = y.exp();
                (gb2_ln_pdf(x, mu, a, b, phi) + y).exp()
            },
            -40.0,
            40.0,
            4000,
        );
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gb2_cdf_consistent_with_density() {
        let (mu, a, b, phi) = (1.7, 2.5, 3.0, 0.8);
        let x: f64 = 2.3;
        let integral = gauss_legendre(
            |y| {
                let t: f64 = y.exp();
                (gb2_ln_pdf(t, mu, a, b, phi) + y).exp()
            },
            -40.0,
            x.ln(),
            3000,
        );
        assert!((gb2_cdf(x, mu, a, b, phi) - integral).abs() < 1e-9);
    }

    #[test]
    fn gb2_cdf_is_continuous_at_the_gamma_limit() {
        let (mu, phi) = (1.7, 2e-3);
        for x in [50.0, 800.0, 3000.0] {
            let below = GB2_GAMMA_LIMIT;
            let above = GB2_GAMMA_LIMIT * (1.0 + 1e-9);
            let beta = gb2_cdf(x, mu, below, below - 1.0, phi);
            let gamma = gb2_cdf(x, mu, above, above - 1.0, phi);
            assert!((beta - gamma).abs() < (mu + 1.0f64).powi(2) / below, "{beta} vs {gamma}");
        }
        let huge: f64 = 1.9e15;
        let c = gb2_cdf(1000.0, 2.0, huge, huge - 1.0, 1e-3);
        let oracle = 1.0 - (-1.0f64).exp() * 2.0;
        assert!((c - oracle).abs() < 1e-12);
    }

    #[test]
    fn nb_moments() {
        let (m, v) = nb_mean_variance(1.0, 1.0, 1.0).unwrap();
        assert_eq!((m, v), (1.0, 2.0));
        let (m, _) = nb_mean_variance(2.5, 2.5, 0.3).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
        assert_eq!(nb_mean_variance(2.0, 1.0, 0.0).unwrap(), (0.0, 0.0));
        // geometric oracle: a = 1 gives P(n) = p (1-p)^n, mean (1-p)/p
        let p: f64 = 0.5;
        let mean: f64 = (0..400).map(|n| n as f64 * p * (1.0 - p).powi(n)).sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_hyperparameter_examples() {
        let f = freq(vec![0.0]);
        let s = sev(vec![0.0], 1.0);
        let prior = posterior_hyperparams(&f, &s, &[]);
        assert_eq!((prior.a_u, prior.b_u, prior.a_v, prior.b_v), (2.0, 3.0, 2.0, 1.0));
        let post = posterior_hyperparams(
            &f,
            &s,
            &[HistoryEntry { expo_lambda: 0.5, count: 1, mu: 1.0, total_size: 2.0 }],
        );
        assert_eq!((post.a_u, post.b_u), (3.0, 3.5));
        assert_eq!((post.a_v, post.b_v), (3.0, 3.0));
    }

    proptest! {
        #[test]
        fn posterior_update_is_additive(
            hist in proptest::collection::vec((0.01f64..3.0, 0u32..4, 0.1f64..5.0, 1.0f64..500.0), 0..8),
            split in 0usize..8,
        ) {
            let f = freq(vec![0.0]);
            let s = sev(vec![0.0], 1.3);
            let entries: Vec<HistoryEntry> = hist
                .iter()
                .map(|&(el, n, mu, x)| HistoryEntry {
                    expo_lambda: el,
                    count: n,
                    mu,
                    total_size: if n == 0 { 0.0 } else { x },
                })
                .collect();
            let whole = posterior_hyperparams(&f, &s, &entries);
            let cut = split.min(entries.len());
            let mut seq = posterior_hyperparams(&f, &s, &entries[..cut]);
            for e in &entries[cut..] {
                seq.update(s.phi, e);
            }
            prop_assert!((whole.a_u - seq.a_u).abs() < 1e-12 * whole.a_u);
            prop_assert!((whole.b_u - seq.b_u).abs() < 1e-12 * whole.b_u);
            prop_assert!((whole.a_v - seq.a_v).abs() < 1e-12 * whole.a_v);
            prop_assert!((whole.b_v - seq.b_v).abs() < 1e-12 * whole.b_v);
        }

        #[test]
        fn nb_normalizes(a in 0.2f64..20.0, b in 0.2f64..20.0, m in 0.001f64..10.0) {
            let (mean, var) = nb_mean_variance(a, b, m).unwrap();
            prop_assert!(var >= mean);
            let n_max = (mean + 40.0 * var.sqrt()).ceil() as u32 + 10;
            let total: f64 = (0..=n_max).map(|n| nb_ln_pmf(n, a, b, m).exp()).sum();
            prop_assert!(total >= 1.0 - 1e-8 && total <= 1.0 + 1e-10, "total {}", total);
        }
    }
}
