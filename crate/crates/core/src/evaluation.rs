//! Information criteria, loss ratios, ordered Lorenz curves and ratio Gini comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{dot, posterior_hyperparams, ModelParameters, Representation};
use crate::error::{Error, Result};
use crate::estimation::FittedModel;
use crate::portfolio::{summarize_claims_experience, ExperienceRow, Portfolio};
use crate::pricing::{price_portfolio, profile_history, PremiumBreakdown};

/// `(AIC, BIC) = (2P − 2ℓ, P ln n_obs − 2ℓ)`.
pub fn information_criteria(log_likelihood: f64, n_params: usize, n_obs: usize) -> (f64, f64) {
    let p = n_params as f64;
    (2.0 * p - 2.0 * log_likelihood, p * (n_obs as f64).ln() - 2.0 * log_likelihood)
}

/// Free parameter count. `p_a` and `p_b` include the intercepts. Transitions
/// are counted as `(K + 1) K` when `K > 1`.
pub fn count_parameters(k: usize, representation: Representation, p_a: usize, p_b: usize) -> usize {
    let transitions = if k > 1 { (k + 1) * k } else { 0 };
    let profiles = match representation {
        Representation::Full => k * (p_a + p_b + 3),
        Representation::Sparse => p_a + p_b + 1 + 4 * k,
    };
    profiles + transitions
}

/// `100 ΣL / Σ e π` with `premia` aligned with [`Portfolio::periods`].
pub fn loss_ratio(portfolio: &Portfolio, premia: &[f64]) -> Result<f64> {
    if premia.len() != portfolio.n_observations() {
        return Err(Error::Dimension {
            context: "premia",
            expected: portfolio.n_observations(),
            got: premia.len(),
        });
    }
    let mut losses = 0.0;
    let mut earned = 0.0;
    for ((_, pp), &p) in portfolio.periods().zip(premia) {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::domain(format!("premia must be positive (got {p})")));
        }
        losses += pp.total_claims();
        earned += pp.exposure * p;
    }
    if !(earned > 0.0) {
        return Err(Error::domain("earned premium is zero"));
    }
    Ok(100.0 * losses / earned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    /// One point per policy in relative-premium order, starting at (0, 0).
    pub points: Vec<(f64, f64)>,
    /// The same curve with every class of tied relative premia merged into
    /// one segment.
    pub merged: Vec<(f64, f64)>,
    pub gini: f64,
}

const TIE_TOL: f64 = 1e-12;

/// Ordered Lorenz curve of `losses` against the benchmark premium `e π_b`,
/// policies sorted by `alternative / benchmark`. Gini is twice the signed
/// area between the diagonal and the merged curve.
pub fn ordered_lorenz(benchmark: &[f64], alternative: &[f64], losses: &[f64], exposures: &[f64]) -> Result<LorenzCurve> {
    let n = benchmark.len();
    for (name, len) in [("alternative premia", alternative.len()), ("losses", losses.len()), ("exposures", exposures.len())] {
        if len != n {
            return Err(Error::Dimension {
                context: name,
                expected: n,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::validation("ordered Lorenz curve needs at least one policy"));
    }
    if let Some(p) = benchmark.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::domain(format!("benchmark premia must be positive (got {p})")));
    }
    if let Some(e) = exposures.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::domain(format!("exposures must be positive (got {e})")));
    }
    if let Some(l) = losses.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::domain(format!("losses must be nonnegative (got {l})")));
    }
    let ratio: Vec<f64> = alternative.iter().zip(benchmark).map(|(a, b)| a / b).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ratio[i].total_cmp(&ratio[j]));
    let premium: Vec<f64> = benchmark.iter().zip(exposures).map(|(b, e)| b * e).collect();
    let total_premium: f64 = premium.iter().sum();
    let total_loss: f64 = losses.iter().sum();
    let loss_share = |l: f64| if total_loss > 0.0 { l / total_loss } else { 0.0 };

    let mut points = Vec::with_capacity(n + 1);
    let mut merged = vec![(0.0, 0.0)];
    points.push((0.0, 0.0));
    let (mut cx, mut cy) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        cx += premium[i];
        cy += losses[i];
        let pt = (cx / total_premium, loss_share(cy));
        points.push(pt);
        let class_ends = match order.get(pos + 1) {
            Some(&next) => (ratio[next] - ratio[i]).abs() > TIE_TOL * ratio[i].abs().max(ratio[next].abs()),
            None => true,
        };
        if class_ends {
            merged.push(pt);
        }
    }
    if total_loss > 0.0 {
        if let Some(last) = points.last_mut() {
            *last = (1.0, 1.0);
        }
        if let Some(last) = merged.last_mut() {
            *last = (1.0, 1.0);
        }
    }
    let area: f64 = merged
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    let gini = if total_loss > 0.0 { 2.0 * (0.5 - area) } else { 0.0 };
    Ok(LorenzCurve { points, merged, gini })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub models: Vec<String>,
    /// `gini[b][a]`: benchmark `b`, alternative `a`.
    pub gini: Vec<Vec<f64>>,
    /// Ginis of each model against a constant premium per unit exposure.
    pub constant_benchmark: Vec<f64>,
    pub row_max: Vec<f64>,
    /// argmin_b max_a gini[b][a]; the first index wins ties.
    pub minimax: usize,
}

/// Ratio Gini coefficients of every model against every other as benchmark.
pub fn ratio_gini_matrix(
    models: &[String],
    premia: &[Vec<f64>],
    losses: &[f64],
    exposures: &[f64],
) -> Result<ComparisonMatrix> {
    if premia.len() < 2 || premia.len() != models.len() {
        return Err(Error::validation(format!(
            "ratio Gini comparison needs at least two named models (got {} names and {} premium vectors)",
            models.len(),
            premia.len()
        )));
    }
    let m = premia.len();
    let mut gini = vec![vec![0.0; m]; m];
    for b in 0..m {
        for a in 0..m {
            if a != b {
                gini[b][a] = ordered_lorenz(&premia[b], &premia[a], losses, exposures)?.gini;
            }
        }
    }
    let ones = vec![1.0; losses.len()];
    let constant_benchmark = premia
        .iter()
        .map(|p| ordered_lorenz(&ones, p, losses, exposures).map(|c| c.gini))
        .collect::<Result<Vec<_>>>()?;
    let row_max: Vec<f64> = gini
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut minimax = 0;
    for (b, v) in row_max.iter().enumerate() {
        if *v < row_max[minimax] {
            minimax = b;
        }
    }
    Ok(ComparisonMatrix {
        models: models.to_vec(),
        gini,
        constant_benchmark,
        row_max,
        minimax,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Width of the prior claim-amount buckets.
    pub amount_bucket_width: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            amount_bucket_width: 2500.0,
        }
    }
}

/// One cell of a bucketed experience table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    /// Whole years of prior exposure.
    pub exposure_years: u32,
    /// Prior claim count, or the lower edge of the prior claim-amount bucket.
    pub experience: f64,
    pub observations: usize,
    pub mean_posterior_assignment: Vec<f64>,
    pub mean_correction: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub profile: usize,
    /// Exposure-weighted.
    pub prior_frequency: Location,
    pub posterior_frequency: Location,
    pub prior_severity: Location,
    pub posterior_severity: Location,
    pub prior_premium: Location,
    pub posterior_premium: Location,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceReport {
    pub by_claim_count: Vec<BucketRow>,
    pub by_claim_amount: Vec<BucketRow>,
    pub profiles: Vec<ProfileSummary>,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    assign: Vec<f64>,
    correction: f64,
    ratio: f64,
}

impl Accumulator {
    fn add(&mut self, row: &PremiumBreakdown) {
        if self.assign.is_empty() {
            self.assign = vec![0.0; row.posterior_assignment.len()];
        }
        self.n += 1;
        for (a, p) in self.assign.iter_mut().zip(&row.posterior_assignment) {
            *a += p;
        }
        self.correction += row.bonus_malus_additive;
        self.ratio += row.bonus_malus_ratio;
    }

    fn finish(self, key: (u32, f64)) -> BucketRow {
        let n = self.n as f64;
        BucketRow {
            exposure_years: key.0,
            experience: key.1,
            observations: self.n,
            mean_posterior_assignment: self.assign.into_iter().map(|a| a / n).collect(),
            mean_correction: self.correction / n,
            mean_ratio: self.ratio / n,
        }
    }
}

fn bucket_table(keys: impl Iterator<Item = (u32, u64)>, rows: &[PremiumBreakdown], scale: f64) -> Vec<BucketRow> {
    let mut cells: BTreeMap<(u32, u64), Accumulator> = BTreeMap::new();
    for (key, row) in keys.zip(rows) {
        cells.entry(key).or_default().add(row);
    }
    cells
        .into_iter()
        .map(|((e, x), acc)| acc.finish((e, x as f64 * scale)))
        .collect()
}

fn weighted_location(values: &[f64], weights: &[f64]) -> Location {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut acc = 0.0;
    let mut median = values[order[order.len() - 1]];
    for &i in &order {
        acc += weights[i];
        if acc >= 0.5 * total {
            median = values[i];
            break;
        }
    }
    Location { mean, median }
}

/// Experience tables of a priced portfolio: posterior assignments and
/// Bonus-Malus corrections bucketed by prior exposure and claims experience,
/// and per-profile summaries of predicted frequencies, severities and premia.
pub fn experience_report_with_params(
    portfolio: &Portfolio,
    params: &ModelParameters,
    priced: &[PremiumBreakdown],
    cfg: &ReportConfig,
) -> Result<ExperienceReport> {
    if priced.len() != portfolio.n_observations() {
        return Err(Error::Dimension {
            context: "priced periods",
            expected: portfolio.n_observations(),
            got: priced.len(),
        });
    }
    if !(cfg.amount_bucket_width > 0.0) {
        return Err(Error::validation("claim-amount bucket width must be positive"));
    }
    let experience = summarize_claims_experience(portfolio);
    let years = |r: &ExperienceRow| (r.prior_exposure + 1e-9).floor() as u32;
    let by_claim_count = bucket_table(
        experience.iter().map(|r| (years(r), r.prior_claim_count as u64)),
        priced,
        1.0,
    );
    let by_claim_amount = bucket_table(
        experience
            .iter()
            .map(|r| (years(r), (r.prior_claim_amount / cfg.amount_bucket_width).floor() as u64)),
        priced,
        cfg.amount_bucket_width,
    );

    let k = params.k();
    let n = portfolio.n_observations();
    let mut exposures = Vec::with_capacity(n);
    let mut freq = vec![[Vec::with_capacity(n), Vec::with_capacity(n)]; k];
    let mut sev = vec![[Vec::with_capacity(n), Vec::with_capacity(n)]; k];
    for policy in &portfolio.policies {
        for (t, pp) in policy.periods.iter().enumerate() {
            exposures.push(pp.exposure);
            let history = &policy.periods[..t];
            for j in 0..k {
                let (f, s) = (&params.frequency[j], &params.severity[j]);
                let lambda = dot(&pp.freq_covariates, &f.delta_a).exp();
                let scale = dot(&pp.sev_covariates, &s.delta_b).exp();
                let post = posterior_hyperparams(f, s, &profile_history(params, j, history));
                freq[j][0].push(lambda * f.a_u / f.b_u);
                freq[j][1].push(lambda * post.a_u / post.b_u);
                sev[j][0].push(scale * s.b_v / (s.a_v - 1.0));
                sev[j][1].push(scale * post.b_v / (post.a_v - 1.0));
            }
        }
    }
    let ones = vec![1.0; n];
    let profiles = (0..k)
        .map(|j| {
            let prior_premia: Vec<f64> = priced.iter().map(|r| r.prior_profile_premia[j]).collect();
            let post_premia: Vec<f64> = priced.iter().map(|r| r.posterior_profile_premia[j]).collect();
            ProfileSummary {
                profile: j + 1,
                prior_frequency: weighted_location(&freq[j][0], &exposures),
                posterior_frequency: weighted_location(&freq[j][1], &exposures),
                prior_severity: weighted_location(&sev[j][0], &ones),
                posterior_severity: weighted_location(&sev[j][1], &ones),
                prior_premium: weighted_location(&prior_premia, &ones),
                posterior_premium: weighted_location(&post_premia, &ones),
            }
        })
        .collect();
    Ok(ExperienceReport {
        by_claim_count,
        by_claim_amount,
        profiles,
    })
}

/// Prices the portfolio with the fitted model and builds the experience tables.
pub fn experience_report(portfolio: &Portfolio, model: &FittedModel, cfg: &ReportConfig) -> Result<ExperienceReport> {
    let priced = price_portfolio(portfolio, model)?;
    experience_report_with_params(portfolio, &model.params, &priced, cfg)
}
