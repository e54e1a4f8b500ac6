//! Command-line front end: simulate, fit, price, dependence, evaluate and report.
//!
//! Every subcommand writes its artifacts into `--out` together with a
//! `manifest.json` that records input and output hashes, the effective
//! configuration and wall-clock timestamps. The artifacts themselves carry no
//! timestamps, so reruns with the same inputs, seed and thread count are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use freqsev::dependence::dependence_summary;
use freqsev::distributions::{ModelParameters, Representation};
use freqsev::estimation::{fit, FitConfig, FittedModel};
use freqsev::evaluation::{
    experience_report, loss_ratio, ordered_lorenz, ratio_gini_matrix, BucketRow, ComparisonMatrix, ReportConfig,
};
use freqsev::portfolio::{load_portfolio, CovariateSchema, Portfolio};
use freqsev::pricing::{price_portfolio, write_csv, PremiumBreakdown};
use freqsev::simulate::{preset, simulate_portfolio, SimConfig, PRESETS};

#[derive(Debug, Parser)]
#[command(name = "freqsev", version, about = "Hidden Markov frequency-severity experience rating")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a portfolio from known parameters.
    Simulate(SimulateArgs),
    /// Fit a model by EM.
    Fit(FitArgs),
    /// Prior and posterior premia for every policy-period.
    Price(ModelArgs),
    /// Frequency-severity dependence implied by a fitted model.
    Dependence(ModelArgs),
    /// Compare fitted models: information criteria, loss ratios, ratio Gini coefficients.
    Evaluate(EvaluateArgs),
    /// Experience tables: posterior assignments and Bonus-Malus corrections.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub claims: PathBuf,
    /// Covariate schema JSON; inferred from the data when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario used instead of a config file.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub policies: usize,
    #[arg(long, default_value_t = 5)]
    pub periods: usize,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RepresentationArg {
    Full,
    Sparse,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Full => Representation::Full,
            RepresentationArg::Sparse => Representation::Sparse,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit config JSON; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub representation: Option<RepresentationArg>,
    /// Fitted model or parameter JSON with K or K − 1 profiles.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub no_standard_errors: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Model names, in the order of `--models`; file stems by default.
    #[arg(long, num_args = 1..)]
    pub names: Vec<String>,
    #[arg(long)]
    pub policies: PathBuf,
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Width of the prior claim-amount buckets.
    #[arg(long, default_value_t = 2500.0)]
    pub amount_bucket_width: f64,
}

/// Artifacts written by a successful command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Exit code for a failed command: 1 for invalid input, 2 for numerical
/// failure, 3 for I/O errors.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<freqsev::Error>() {
            return match e {
                freqsev::Error::Io { .. } => 3,
                freqsev::Error::Domain(_)
                | freqsev::Error::Numerical(_)
                | freqsev::Error::DegenerateLikelihood { .. }
                | freqsev::Error::Unidentifiable(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if matches!(e.kind(), csv::ErrorKind::Io(_)) { 3 } else { 1 };
        }
    }
    1
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(freqsev::Error::Validation("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("cannot start worker threads")?;
    let threads = pool.current_num_threads();
    pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate_cmd(a, threads),
        Command::Fit(a) => fit_cmd(a, threads),
        Command::Price(a) => price_cmd(a, threads),
        Command::Dependence(a) => dependence_cmd(a, threads),
        Command::Evaluate(a) => evaluate_cmd(a, threads),
        Command::Report(a) => report_cmd(a, threads),
    })
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<Value> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(json!({ "path": path.display().to_string(), "sha256": sha256_hex(&bytes) }))
}

/// Tracks inputs and outputs of one command and writes the manifest.
struct Run {
    command: &'static str,
    out: PathBuf,
    started: f64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            started: unix_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write_text(name, &text)
    }

    fn record(&mut self, name: &str) -> PathBuf {
        let path = self.path(name);
        self.outputs.push(path.clone());
        path
    }

    fn finish(self, config: Value, seed: Option<u64>, threads: usize) -> Result<Outcome> {
        let config_text = serde_json::to_string(&config)?;
        let inputs = self.inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
        let outputs = self.outputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "threads": threads,
            "config_sha256": sha256_hex(config_text.as_bytes()),
            "config": config,
            "inputs": inputs,
            "outputs": outputs,
            "started_unix": self.started,
            "finished_unix": unix_now(),
        });
        let path = self.out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(Outcome {
            artifacts: self.outputs,
            manifest: path,
        })
    }
}

fn read_json_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_model(path: &Path) -> Result<FittedModel> {
    let text = read_json_file(path)?;
    FittedModel::from_json_str(&text).with_context(|| format!("invalid model file {}", path.display()))
}

fn load_with_model(run: &mut Run, model: &FittedModel, policies: &Path, claims: &Path) -> Result<Portfolio> {
    run.input(policies);
    run.input(claims);
    Ok(load_portfolio(policies, claims, Some(&model.schema))?)
}

fn simulate_cmd(a: &SimulateArgs, threads: usize) -> Result<Outcome> {
    let mut run = Run::start("simulate", &a.out)?;
    let mut cfg: SimConfig = match (&a.config, &a.preset) {
        (Some(path), _) => {
            run.input(path);
            serde_json::from_str(&read_json_file(path)?)
                .with_context(|| format!("invalid simulation config {}", path.display()))?
        }
        (None, Some(name)) => preset(name, a.policies, a.periods, 0)?,
        (None, None) => bail!(freqsev::Error::Validation(format!(
            "simulate needs --config or --preset (one of {})",
            PRESETS.join(", ")
        ))),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let sim = simulate_portfolio(&cfg)?;
    sim.write(&a.out)?;
    for name in ["policies.csv", "claims.csv", "truth.json", "schema.json", "latent_paths.csv"] {
        run.record(name);
    }
    run.write_json("config.json", &cfg)?;
    eprintln!(
        "simulated {} policies, {} policy-periods, {} claims",
        sim.portfolio.n_policies(),
        sim.portfolio.n_observations(),
        sim.portfolio.total_claims()
    );
    let seed = cfg.seed;
    run.finish(serde_json::to_value(&cfg)?, Some(seed), threads)
}

fn fit_cmd(a: &FitArgs, threads: usize) -> Result<Outcome> {
    let mut run = Run::start("fit", &a.out)?;
    let mut cfg = match &a.config {
        Some(path) => {
            run.input(path);
            serde_json::from_str::<FitConfig>(&read_json_file(path)?)
                .with_context(|| format!("invalid fit config {}", path.display()))?
        }
        None => FitConfig::new(
            a.k.unwrap_or(1),
            a.representation.map(Into::into).unwrap_or(Representation::Full),
        ),
    };
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(r) = a.representation {
        cfg.representation = r.into();
    }
    if let Some(l) = a.ridge {
        cfg.ridge_lambda = l;
    }
    if let Some(s) = a.starts {
        cfg.n_starts = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_iter {
        cfg.em_max_iter = m;
    }
    if a.no_standard_errors {
        cfg.standard_errors = false;
    }
    if let Some(path) = &a.warm_start {
        run.input(path);
        let text = read_json_file(path)?;
        let params = match FittedModel::from_json_str(&text) {
            Ok(m) => m.params,
            Err(_) => ModelParameters::from_json_str(&text)
                .with_context(|| format!("invalid warm start {}", path.display()))?,
        };
        cfg.warm_start = Some(params);
    }
    let schema = match &a.data.schema {
        Some(path) => {
            run.input(path);
            Some(CovariateSchema::load(path)?)
        }
        None => None,
    };
    run.input(&a.data.policies);
    run.input(&a.data.claims);
    let portfolio = load_portfolio(&a.data.policies, &a.data.claims, schema.as_ref())?;
    let model = fit(&portfolio, &cfg)?;
    let d = &model.diagnostics;
    eprintln!(
        "K={} log-likelihood {:.4}, AIC {:.4}, BIC {:.4}, {} EM iterations ({})",
        cfg.k, d.log_likelihood, d.aic, d.bic, d.em_iterations, d.reason
    );
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    run.write_text("model.json", &(model.to_json_string()? + "\n"))?;
    let seed = cfg.seed;
    run.finish(serde_json::to_value(&cfg)?, Some(seed), threads)
}

fn price_cmd(a: &ModelArgs, threads: usize) -> Result<Outcome> {
    let mut run = Run::start("price", &a.out)?;
    run.input(&a.model);
    let model = load_model(&a.model)?;
    let portfolio = load_with_model(&mut run, &model, &a.policies, &a.claims)?;
    let rows = price_portfolio(&portfolio, &model)?;
    let path = run.record("premia.csv");
    write_csv(&rows, model.params.k(), &path)?;
    run.finish(json!({ "model": a.model.display().to_string() }), None, threads)
}

fn dependence_cmd(a: &ModelArgs, threads: usize) -> Result<Outcome> {
    let mut run = Run::start("dependence", &a.out)?;
    run.input(&a.model);
    let model = load_model(&a.model)?;
    let portfolio = load_with_model(&mut run, &model, &a.policies, &a.claims)?;
    let report = dependence_summary(&portfolio, &model)?;
    run.write_json("dependence.json", &report)?;
    run.finish(json!({ "model": a.model.display().to_string(), "rank_method": "quadrature" }), None, threads)
}

#[derive(Serialize)]
struct ModelSummary {
    name: String,
    k: usize,
    representation: Representation,
    log_likelihood: f64,
    n_params: usize,
    n_obs: usize,
    aic: f64,
    bic: f64,
    loss_ratio_prior: f64,
    loss_ratio_posterior: f64,
    gini_prior: f64,
    gini_posterior: f64,
}

#[derive(Serialize)]
struct Comparison {
    models: Vec<ModelSummary>,
    prior: Option<ComparisonMatrix>,
    posterior: Option<ComparisonMatrix>,
}

fn lorenz_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("x,y\n");
    for (x, y) in points {
        s.push_str(&format!("{x},{y}\n"));
    }
    s
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn evaluate_cmd(a: &EvaluateArgs, threads: usize) -> Result<Outcome> {
    let mut run = Run::start("evaluate", &a.out)?;
    if !a.names.is_empty() && a.names.len() != a.models.len() {
        bail!(freqsev::Error::Validation(format!(
            "{} names given for {} models",
            a.names.len(),
            a.models.len()
        )));
    }
    let names: Vec<String> = if a.names.is_empty() {
        a.models
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("model{}", i + 1))
            })
            .collect()
    } else {
        a.names.clone()
    };
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != names.len() {
        bail!(freqsev::Error::Validation(
            "model names must be distinct; pass --names".into()
        ));
    }
    run.input(&a.policies);
    run.input(&a.claims);

    let mut summaries = Vec::new();
    let mut prior = Vec::new();
    let mut posterior = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut exposures: Vec<f64> = Vec::new();
    for (path, name) in a.models.iter().zip(&names) {
        run.input(path);
        let model = load_model(path)?;
        let portfolio = load_portfolio(&a.policies, &a.claims, Some(&model.schema))?;
        let rows: Vec<PremiumBreakdown> = price_portfolio(&portfolio, &model)?;
        let pri: Vec<f64> = rows.iter().map(|r| r.prior_premium).collect();
        let post: Vec<f64> = rows.iter().map(|r| r.posterior_premium).collect();
        if losses.is_empty() {
            losses = portfolio.periods().map(|(_, pp)| pp.total_claims()).collect();
            exposures = portfolio.periods().map(|(_, pp)| pp.exposure).collect();
        }
        let ones = vec![1.0; losses.len()];
        let d = &model.diagnostics;
        summaries.push(ModelSummary {
            name: name.clone(),
            k: model.params.k(),
            representation: model.params.representation,
            log_likelihood: d.log_likelihood,
            n_params: d.n_params,
            n_obs: d.n_obs,
            aic: d.aic,
            bic: d.bic,
            loss_ratio_prior: loss_ratio(&portfolio, &pri)?,
            loss_ratio_posterior: loss_ratio(&portfolio, &post)?,
            gini_prior: ordered_lorenz(&ones, &pri, &losses, &exposures)?.gini,
            gini_posterior: ordered_lorenz(&ones, &post, &losses, &exposures)?.gini,
        });
        prior.push(pri);
        posterior.push(post);
    }

    let ones = vec![1.0; losses.len()];
    let mut matrices = Vec::new();
    for (variant, premia) in [("prior", &prior), ("posterior", &posterior)] {
        for (ia, alt) in premia.iter().enumerate() {
            let curve = ordered_lorenz(&ones, alt, &losses, &exposures)?;
            let file = format!("lorenz/{variant}_constant_vs_{}.csv", safe_name(&names[ia]));
            run.write_text(&file, &lorenz_csv(&curve.points))?;
            for (ib, bench) in premia.iter().enumerate() {
                if ib == ia {
                    continue;
                }
                let curve = ordered_lorenz(bench, alt, &losses, &exposures)?;
                let file = format!("lorenz/{variant}_{}_vs_{}.csv", safe_name(&names[ib]), safe_name(&names[ia]));
                run.write_text(&file, &lorenz_csv(&curve.points))?;
            }
        }
        matrices.push(if premia.len() >= 2 {
            Some(ratio_gini_matrix(&names, premia, &losses, &exposures)?)
        } else {
            None
        });
    }
    let posterior_matrix = matrices.pop().flatten();
    let prior_matrix = matrices.pop().flatten();
    let comparison = Comparison {
        models: summaries,
        prior: prior_matrix,
        posterior: posterior_matrix,
    };
    run.write_json("comparison.json", &comparison)?;
    let config = json!({
        "models": a.models.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "names": names,
    });
    run.finish(config, None, threads)
}

fn bucket_csv(rows: &[BucketRow], k: usize, experience: &str) -> String {
    let mut s = format!("exposure_years,{experience},observations,mean_correction,mean_ratio");
    for j in 1..=k {
        s.push_str(&format!(",mean_assign_post_{j}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}",
            r.exposure_years, r.experience, r.observations, r.mean_correction, r.mean_ratio
        ));
        for p in &r.mean_posterior_assignment {
            s.push_str(&format!(",{p}"));
        }
        s.push('\n');
    }
    s
}

fn report_cmd(a: &ReportArgs, threads: usize) -> Result<Outcome> {
    let m = &a.model;
    let mut run = Run::start("report", &m.out)?;
    run.input(&m.model);
    let model = load_model(&m.model)?;
    let portfolio = load_with_model(&mut run, &model, &m.policies, &m.claims)?;
    let cfg = ReportConfig {
        amount_bucket_width: a.amount_bucket_width,
    };
    let report = experience_report(&portfolio, &model, &cfg)?;
    let k = model.params.k();
    run.write_json("report.json", &report)?;
    run.write_text("by_claim_count.csv", &bucket_csv(&report.by_claim_count, k, "prior_claims"))?;
    run.write_text(
        "by_claim_amount.csv",
        &bucket_csv(&report.by_claim_amount, k, "prior_amount_from"),
    )?;
    let mut profiles = String::from("profile,variant,quantity,mean,median\n");
    for p in &report.profiles {
        for (variant, quantity, loc) in [
            ("prior", "frequency", &p.prior_frequency),
            ("posterior", "frequency", &p.posterior_frequency),
            ("prior", "severity", &p.prior_severity),
            ("posterior", "severity", &p.posterior_severity),
            ("prior", "premium", &p.prior_premium),
            ("posterior", "premium", &p.posterior_premium),
        ] {
            profiles.push_str(&format!("{},{variant},{quantity},{},{}\n", p.profile, loc.mean, loc.median));
        }
    }
    run.write_text("profiles.csv", &profiles)?;
    run.finish(
        json!({ "model": m.model.display().to_string(), "amount_bucket_width": a.amount_bucket_width }),
        None,
        threads,
    )
}

