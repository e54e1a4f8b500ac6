//! Synthetic portfolios drawn from known parameters.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    dot, ModelParameters, ProfileFrequencyParams, ProfileSeverityParams, Representation, TransitionModel,
};
use crate::error::{Error, Result};
use crate::estimation::{self, canonical_order, FitConfig, ParameterEstimate};
use crate::estimation::em::penalty;
use crate::hmm;
use crate::portfolio::{
    encode_covariates, ClaimRow, ColumnSpec, ColumnType, CovariateSchema, PolicyRow,
    Portfolio, Role,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Generator {
    Continuous {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sd: f64,
    },
    Categorical {
        levels: Vec<String>,
        #[serde(default)]
        probs: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub name: String,
    pub role: Role,
    #[serde(flatten)]
    pub generator: Generator,
}

/// A fixed number of periods or a uniform draw in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeriodSpec {
    Fixed(usize),
    Range { min: usize, max: usize },
}

/// A fixed exposure or a uniform draw in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExposureSpec {
    Fixed(f64),
    Range { min: f64, max: f64 },
}

impl Default for ExposureSpec {
    fn default() -> Self {
        ExposureSpec::Fixed(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policies: usize,
    pub periods: PeriodSpec,
    #[serde(default)]
    pub covariates: Vec<CovariateGenerator>,
    /// Redraw covariates every period instead of once per policy.
    #[serde(default)]
    pub time_varying_covariates: bool,
    #[serde(default)]
    pub exposure: ExposureSpec,
    #[serde(default)]
    pub seed: u64,
    pub truth: ModelParameters,
    /// Draw U and V once per policy and profile instead of drawing U per period
    /// and V per claim.
    #[serde(default)]
    pub persistent_heterogeneity: bool,
}

impl SimConfig {
    pub fn schema(&self) -> CovariateSchema {
        let mut schema = CovariateSchema::default();
        for c in &self.covariates {
            let spec = match &c.generator {
                Generator::Continuous { .. } => ColumnSpec {
                    role: c.role,
                    kind: ColumnType::Continuous,
                    reference: None,
                    levels: None,
                },
                Generator::Categorical { levels, .. } => ColumnSpec {
                    role: c.role,
                    kind: ColumnType::Categorical,
                    reference: levels.first().cloned(),
                    levels: Some(levels.clone()),
                },
            };
            schema.columns.insert(c.name.clone(), spec);
        }
        schema
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies == 0 {
            return Err(Error::validation("policies must be at least 1"));
        }
        match self.periods {
            PeriodSpec::Fixed(0) => return Err(Error::validation("periods must be at least 1")),
            PeriodSpec::Range { min, max } if min == 0 || max < min => {
                return Err(Error::validation("period range must satisfy 1 <= min <= max"))
            }
            _ => {}
        }
        match self.exposure {
            ExposureSpec::Fixed(e) if !(e > 0.0) => {
                return Err(Error::validation("exposure must be positive"))
            }
            ExposureSpec::Range { min, max } if !(min > 0.0 && max >= min) => {
                return Err(Error::validation("exposure range must satisfy 0 < min <= max"))
            }
            _ => {}
        }
        for c in &self.covariates {
            if let Generator::Categorical { levels, probs } = &c.generator {
                if levels.is_empty() {
                    return Err(Error::validation(format!("covariate {} has no levels", c.name)));
                }
                if let Some(p) = probs {
                    if p.len() != levels.len() || p.iter().any(|v| !(*v >= 0.0)) {
                        return Err(Error::validation(format!("bad level probabilities for {}", c.name)));
                    }
                }
            }
        }
        self.truth.validate()?;
        let freq = 1 + self
            .covariates
            .iter()
            .map(|c| usize::from(matches!(c.role, Role::Frequency | Role::Both)) * width(c))
            .sum::<usize>();
        let sev = 1 + self
            .covariates
            .iter()
            .map(|c| usize::from(matches!(c.role, Role::Severity | Role::Both)) * width(c))
            .sum::<usize>();
        if self.truth.freq_dim() != freq {
            return Err(Error::Dimension {
                context: "truth frequency coefficients",
                expected: freq,
                got: self.truth.freq_dim(),
            });
        }
        if self.truth.sev_dim() != sev {
            return Err(Error::Dimension {
                context: "truth severity coefficients",
                expected: sev,
                got: self.truth.sev_dim(),
            });
        }
        Ok(())
    }
}

fn width(c: &CovariateGenerator) -> usize {
    match &c.generator {
        Generator::Continuous { .. } => 1,
        Generator::Categorical { levels, .. } => levels.len() - 1,
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedPortfolio {
    pub portfolio: Portfolio,
    /// Latent profile (0-based) per policy and period.
    pub paths: Vec<Vec<usize>>,
    pub truth: ModelParameters,
}

fn categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

fn draw_covariates(gens: &[CovariateGenerator], rng: &mut impl Rng) -> Vec<String> {
    gens.iter()
        .map(|g| match &g.generator {
            Generator::Continuous { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                format!("{}", mean + sd * z)
            }
            Generator::Categorical { levels, probs } => {
                let i = match probs {
                    Some(p) => categorical(p, rng),
                    None => rng.random_range(0..levels.len()),
                };
                levels[i].clone()
            }
        })
        .collect()
}

fn gamma(shape: f64, rng: &mut impl Rng) -> f64 {
    Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
}

fn poisson(mean: f64, rng: &mut impl Rng) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    n as u32
}

/// Claim count given the period's mean `eλ` and the Gamma factor `u` with mean
/// `a_U / b_U`.
fn draw_count(expo_lambda: f64, u: f64, rng: &mut impl Rng) -> u32 {
    poisson(expo_lambda * u, rng)
}

/// One claim size given the Gamma shape μ and the factor `v = b_V / G(a_V)`.
fn draw_size(mu: f64, phi: f64, v: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let x = v / phi * gamma(mu, rng);
        if x > 0.0 && x.is_finite() {
            return x;
        }
    }
}

struct RawPolicy {
    rows: Vec<PolicyRow>,
    claims: Vec<ClaimRow>,
    path: Vec<usize>,
}

fn policy_id(i: usize, m: usize) -> String {
    let width = m.to_string().len().max(1);
    format!("P{:0width$}", i + 1)
}

fn simulate_policy(cfg: &SimConfig, schema: &CovariateSchema, i: usize) -> Result<RawPolicy> {
    let truth = &cfg.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64 + 1);
    let id = policy_id(i, cfg.policies);
    let t_i = match cfg.periods {
        PeriodSpec::Fixed(t) => t,
        PeriodSpec::Range { min, max } => rng.random_range(min..=max),
    };
    let k = truth.k();
    let persistent: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let f = &truth.frequency[j];
            let s = &truth.severity[j];
            (gamma(f.a_u, &mut rng) / f.b_u, s.b_v / gamma(s.a_v, &mut rng))
        })
        .collect();
    let fixed_cov = draw_covariates(&cfg.covariates, &mut rng);
    let names: Vec<String> = cfg.covariates.iter().map(|c| c.name.clone()).collect();

    let mut rows = Vec::with_capacity(t_i);
    let mut claims = Vec::new();
    let mut path = Vec::with_capacity(t_i);
    let mut z = 0;
    for t in 0..t_i {
        z = if t == 0 {
            categorical(&truth.transitions.w0, &mut rng)
        } else {
            categorical(&truth.transitions.w[z], &mut rng)
        };
        path.push(z);
        let exposure = match cfg.exposure {
            ExposureSpec::Fixed(e) => e,
            ExposureSpec::Range { min, max } => {
                if max > min {
                    rng.random_range(min..max)
                } else {
                    min
                }
            }
        };
        let covariates = if cfg.time_varying_covariates && t > 0 {
            draw_covariates(&cfg.covariates, &mut rng)
        } else {
            fixed_cov.clone()
        };
        let (a_row, b_row) = encode_covariates(&names, std::slice::from_ref(&covariates), schema)?;
        let f = &truth.frequency[z];
        let s = &truth.severity[z];
        let expo_lambda = exposure * dot(&a_row[0], &f.delta_a).exp();
        let mu = s.phi * dot(&b_row[0], &s.delta_b).exp();
        let u = if cfg.persistent_heterogeneity {
            persistent[z].0
        } else {
            gamma(f.a_u, &mut rng) / f.b_u
        };
        let n = draw_count(expo_lambda, u, &mut rng);
        for _ in 0..n {
            let v = if cfg.persistent_heterogeneity {
                persistent[z].1
            } else {
                s.b_v / gamma(s.a_v, &mut rng)
            };
            claims.push(ClaimRow {
                policy_id: id.clone(),
                period: t + 1,
                amount: draw_size(mu, s.phi, v, &mut rng),
            });
        }
        rows.push(PolicyRow {
            policy_id: id.clone(),
            period: t + 1,
            exposure,
            covariates,
        });
    }
    Ok(RawPolicy { rows, claims, path })
}

/// Draws a portfolio. Every policy uses its own ChaCha stream of `seed`, so
/// the output does not depend on the thread count.
pub fn simulate_portfolio(cfg: &SimConfig) -> Result<SimulatedPortfolio> {
    cfg.validate()?;
    let schema = cfg.schema();
    let raw: Vec<RawPolicy> = (0..cfg.policies)
        .into_par_iter()
        .map(|i| simulate_policy(cfg, &schema, i))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut claims = Vec::new();
    let mut paths = Vec::with_capacity(raw.len());
    for r in raw {
        rows.extend(r.rows);
        claims.extend(r.claims);
        paths.push(r.path);
    }
    let names = cfg.covariates.iter().map(|c| c.name.clone()).collect();
    let portfolio = Portfolio::from_rows(names, rows, claims, &schema)?;
    Ok(SimulatedPortfolio {
        portfolio,
        paths,
        truth: cfg.truth.clone(),
    })
}

impl SimulatedPortfolio {
    /// Writes `policies.csv`, `claims.csv`, `truth.json`, `schema.json` and
    /// `latent_paths.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.portfolio
            .write_csv(&dir.join("policies.csv"), &dir.join("claims.csv"))?;
        let truth = dir.join("truth.json");
        std::fs::write(&truth, self.truth.to_json_string()? + "\n").map_err(|e| Error::io(&truth, e))?;
        let schema = dir.join("schema.json");
        let text = serde_json::to_string_pretty(&self.portfolio.schema)? + "\n";
        std::fs::write(&schema, text).map_err(|e| Error::io(&schema, e))?;
        let paths = dir.join("latent_paths.csv");
        let mut w = csv::Writer::from_path(&paths).map_err(|e| csv_io(&paths, e))?;
        w.write_record(["policy_id", "period", "profile"])
            .map_err(|e| csv_io(&paths, e))?;
        for (policy, path) in self.portfolio.policies.iter().zip(&self.paths) {
            for (t, z) in path.iter().enumerate() {
                w.write_record([policy.id.as_str(), &(t + 1).to_string(), &(z + 1).to_string()])
                    .map_err(|e| csv_io(&paths, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&paths, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn continuous(name: &str) -> CovariateGenerator {
    CovariateGenerator {
        name: name.into(),
        role: Role::Both,
        generator: Generator::Continuous { mean: 0.0, sd: 1.0 },
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["independent", "negative-sparse", "negative-full", "positive-full"];

/// Built-in scenarios with one standard-normal covariate used by both GLMs.
///
/// * `independent`: one profile.
/// * `negative-sparse`, `negative-full`: a frequent profile with small claims
///   and a rare profile with large claims.
/// * `positive-full`: the frequent profile also has the large claims.
pub fn preset(name: &str, policies: usize, periods: usize, seed: u64) -> Result<SimConfig> {
    let sticky = TransitionModel {
        w0: vec![0.6, 0.4],
        w: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
    };
    let truth = match name {
        "independent" => ModelParameters {
            representation: Representation::Full,
            frequency: vec![ProfileFrequencyParams {
                delta_a: vec![(0.15f64).ln(), 0.2],
                a_u: 1.5,
                b_u: 1.5,
            }],
            severity: vec![ProfileSeverityParams {
                delta_b: vec![(1000.0f64).ln(), -0.1],
                phi: 1.5e-3,
                a_v: 3.0,
                b_v: 2.0,
            }],
            transitions: TransitionModel::uniform(1),
        },
        "negative-sparse" => ModelParameters {
            representation: Representation::Sparse,
            frequency: vec![
                ProfileFrequencyParams {
                    delta_a: vec![(0.3f64).ln(), 0.2],
                    a_u: 1.0,
                    b_u: 0.5,
                },
                ProfileFrequencyParams {
                    delta_a: vec![(0.3f64).ln(), 0.2],
                    a_u: 0.8,
                    b_u: 1.6,
                },
            ],
            severity: vec![
                ProfileSeverityParams {
                    delta_b: vec![(1000.0f64).ln(), -0.1],
                    phi: 1.5e-3,
                    a_v: 4.0,
                    b_v: 1.0,
                },
                ProfileSeverityParams {
                    delta_b: vec![(1000.0f64).ln(), -0.1],
                    phi: 1.5e-3,
                    a_v: 2.5,
                    b_v: 4.5,
                },
            ],
            transitions: sticky,
        },
        "negative-full" | "positive-full" => {
            let rare_large = name == "negative-full";
            let (sev_small, sev_large) = ((300.0f64).ln(), (2000.0f64).ln());
            ModelParameters {
                representation: Representation::Full,
                frequency: vec![
                    ProfileFrequencyParams {
                        delta_a: vec![(0.6f64).ln(), 0.2],
                        a_u: 1.2,
                        b_u: 1.2,
                    },
                    ProfileFrequencyParams {
                        delta_a: vec![(0.15f64).ln(), 0.2],
                        a_u: 2.0,
                        b_u: 2.0,
                    },
                ],
                severity: vec![
                    ProfileSeverityParams {
                        delta_b: vec![if rare_large { sev_small } else { sev_large }, -0.1],
                        phi: 1.5e-3,
                        a_v: 3.0,
                        b_v: 2.0,
                    },
                    ProfileSeverityParams {
                        delta_b: vec![if rare_large { sev_large } else { sev_small }, -0.1],
                        phi: 1.5e-3,
                        a_v: 2.5,
                        b_v: 1.5,
                    },
                ],
                transitions: sticky,
            }
        }
        other => {
            return Err(Error::validation(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(SimConfig {
        policies,
        periods: PeriodSpec::Fixed(periods),
        covariates: vec![continuous("x1")],
        time_varying_covariates: false,
        exposure: ExposureSpec::Fixed(1.0),
        seed,
        truth,
        persistent_heterogeneity: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredParameter {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub relative_error: f64,
    pub std_error: Option<f64>,
    /// Truth inside estimate ± 2 SE; `None` without a standard error.
    pub covered: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub truth_log_likelihood: f64,
    pub truth_penalized_objective: f64,
    pub fitted_log_likelihood: f64,
    pub fitted_penalized_objective: f64,
    pub fitted_at_least_truth: bool,
    pub parameters: Vec<RecoveredParameter>,
    pub transition_max_abs_error: f64,
    pub shape_max_relative_error: f64,
    pub coverage: f64,
}

fn is_shape(name: &str) -> bool {
    [".a_U", ".b_U", ".a_V", ".b_V"].iter().any(|s| name.ends_with(s))
}

/// Simulates from `sim`, fits with `fit_cfg` and compares the canonically
/// ordered estimates with the truth.
pub fn recovery_experiment(sim: &SimConfig, fit_cfg: &FitConfig) -> Result<RecoveryReport> {
    let data = simulate_portfolio(sim)?;
    let portfolio = &data.portfolio;
    let mut truth = estimation::init::convert_representation(&sim.truth, fit_cfg.representation);
    if truth.k() != fit_cfg.k {
        return Err(Error::validation("recovery needs the fitted K to match the truth"));
    }
    truth = truth.permuted(&canonical_order(portfolio, &truth));
    let truth_ll = hmm::marginal_log_likelihood(portfolio, &truth)?;
    let truth_obj = truth_ll - penalty(&truth, fit_cfg.ridge_lambda, fit_cfg.ridge_all);

    let fitted = estimation::fit(portfolio, fit_cfg)?;
    let fitted_obj = fitted.diagnostics.penalized_objective;
    let ses: &[ParameterEstimate] = &fitted.diagnostics.standard_errors;
    let fitted_named = estimation::stderr::named_parameters(portfolio, &fitted.params);
    let truth_named = estimation::stderr::named_parameters(portfolio, &truth);
    let mut parameters = Vec::with_capacity(fitted_named.len());
    for (i, ((name, est), (_, tru))) in fitted_named.into_iter().zip(truth_named).enumerate() {
        let se = ses.get(i).and_then(|s| s.std_error);
        parameters.push(RecoveredParameter {
            relative_error: (est - tru).abs() / tru.abs().max(1e-300),
            covered: se.map(|s| (est - tru).abs() <= 2.0 * s),
            std_error: se,
            name,
            truth: tru,
            estimate: est,
        });
    }
    let transition_max_abs_error = fitted
        .params
        .transitions
        .w
        .iter()
        .flatten()
        .zip(truth.transitions.w.iter().flatten())
        .chain(fitted.params.transitions.w0.iter().zip(&truth.transitions.w0))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let shape_max_relative_error = parameters
        .iter()
        .filter(|p| is_shape(&p.name))
        .map(|p| p.relative_error)
        .fold(0.0, f64::max);
    let covered: Vec<bool> = parameters.iter().filter_map(|p| p.covered).collect();
    let coverage = if covered.is_empty() {
        f64::NAN
    } else {
        covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64
    };
    Ok(RecoveryReport {
        truth_log_likelihood: truth_ll,
        truth_penalized_objective: truth_obj,
        fitted_log_likelihood: fitted.diagnostics.log_likelihood,
        fitted_penalized_objective: fitted_obj,
        fitted_at_least_truth: fitted_obj >= truth_obj,
        parameters,
        transition_max_abs_error,
        shape_max_relative_error,
        coverage,
    })
}
