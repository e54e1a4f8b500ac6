//! Longitudinal policy data: CSV ingestion, covariate encoding and claims
//! experience summaries.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Frequency,
    Severity,
    Both,
    Ignore,
}

impl Role {
    fn frequency(self) -> bool {
        matches!(self, Role::Frequency | Role::Both)
    }

    fn severity(self) -> bool {
        matches!(self, Role::Severity | Role::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub role: Role,
    #[serde(rename = "type")]
    pub kind: ColumnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Category levels in encoding order. Filled in from the data when absent;
    /// once set, values outside this list are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Column name → encoding spec, in schema order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateSchema {
    pub columns: IndexMap<String, ColumnSpec>,
}

impl CovariateSchema {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Numeric columns become continuous, anything else categorical with the
    /// smallest level as reference; every column is used by both GLMs.
    pub fn infer(headers: &[String], rows: &[Vec<String>]) -> Self {
        let mut columns = IndexMap::new();
        for (c, name) in headers.iter().enumerate() {
            let numeric = rows.iter().all(|r| r[c].trim().parse::<f64>().is_ok());
            let kind = if numeric {
                ColumnType::Continuous
            } else {
                ColumnType::Categorical
            };
            columns.insert(
                name.clone(),
                ColumnSpec {
                    role: Role::Both,
                    kind,
                    reference: None,
                    levels: None,
                },
            );
        }
        CovariateSchema { columns }
    }

    /// Fills in missing levels and references from the observed values and
    /// checks that the schema covers exactly the given columns.
    pub fn resolve(&self, headers: &[String], rows: &[Vec<String>]) -> Result<Self> {
        for name in headers {
            if !self.columns.contains_key(name) {
                return Err(Error::validation(format!(
                    "covariate column '{name}' is not described by the schema"
                )));
            }
        }
        let mut columns = IndexMap::new();
        for (name, spec) in &self.columns {
            let Some(c) = headers.iter().position(|h| h == name) else {
                return Err(Error::validation(format!(
                    "schema column '{name}' is missing from the policies file"
                )));
            };
            let mut spec = spec.clone();
            if spec.kind == ColumnType::Categorical && spec.role != Role::Ignore {
                let observed: BTreeSet<&str> = rows.iter().map(|r| r[c].trim()).collect();
                let levels = match &spec.levels {
                    Some(levels) => levels.clone(),
                    None => observed.iter().map(|s| s.to_string()).collect(),
                };
                let reference = match &spec.reference {
                    Some(r) => r.clone(),
                    None => levels.first().cloned().ok_or_else(|| {
                        Error::validation(format!("categorical column '{name}' has no levels"))
                    })?,
                };
                if !levels.contains(&reference) {
                    return Err(Error::validation(format!(
                        "reference level '{reference}' of '{name}' is not among its levels"
                    )));
                }
                spec.levels = Some(levels);
                spec.reference = Some(reference);
            }
            columns.insert(name.clone(), spec);
        }
        Ok(CovariateSchema { columns })
    }

    fn design_names(&self, pick: fn(Role) -> bool) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string()];
        for (name, spec) in &self.columns {
            if pick(spec.role) && spec.kind == ColumnType::Continuous {
                names.push(name.clone());
            }
        }
        for (name, spec) in &self.columns {
            if pick(spec.role) && spec.kind == ColumnType::Categorical {
                let reference = spec.reference.as_deref().unwrap_or_default();
                for level in spec.levels.iter().flatten() {
                    if level != reference {
                        names.push(format!("{name}={level}"));
                    }
                }
            }
        }
        names
    }

    pub fn frequency_names(&self) -> Vec<String> {
        self.design_names(Role::frequency)
    }

    pub fn severity_names(&self) -> Vec<String> {
        self.design_names(Role::severity)
    }
}

/// Design rows for the frequency and severity GLMs, intercept first.
pub type DesignMatrix = Vec<Vec<f64>>;

/// Encodes raw covariate rows under a resolved schema. Columns are ordered as
/// intercept, continuous columns in schema order, then categorical dummies in
/// level order with the reference level dropped.
pub fn encode_covariates(
    headers: &[String],
    rows: &[Vec<String>],
    schema: &CovariateSchema,
) -> Result<(DesignMatrix, DesignMatrix)> {
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let lookup = |name: &str| {
        index.get(name).copied().ok_or_else(|| {
            Error::validation(format!("schema column '{name}' is missing from the data"))
        })
    };
    let mut continuous: Vec<(usize, Role)> = Vec::new();
    let mut categorical: Vec<(usize, Role, &str, &[String], &str)> = Vec::new();
    for (name, spec) in &schema.columns {
        if spec.role == Role::Ignore {
            continue;
        }
        let c = lookup(name)?;
        match spec.kind {
            ColumnType::Continuous => continuous.push((c, spec.role)),
            ColumnType::Categorical => {
                let levels = spec.levels.as_deref().ok_or_else(|| {
                    Error::validation(format!("categorical column '{name}' has unresolved levels"))
                })?;
                let reference = spec.reference.as_deref().ok_or_else(|| {
                    Error::validation(format!("categorical column '{name}' has no reference"))
                })?;
                categorical.push((c, spec.role, name.as_str(), levels, reference));
            }
        }
    }

    let mut freq = Vec::with_capacity(rows.len());
    let mut sev = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        for &(c, role) in &continuous {
            let raw = row[c].trim();
            let value: f64 = raw.parse().map_err(|_| {
                Error::validation(format!(
                    "row {}: column '{}' value '{raw}' is not a number",
                    r + 1,
                    headers[c]
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::validation(format!(
                    "row {}: column '{}' is not finite",
                    r + 1,
                    headers[c]
                )));
            }
            if role.frequency() {
                a.push(value);
            }
            if role.severity() {
                b.push(value);
            }
        }
        for &(c, role, name, levels, reference) in &categorical {
            let raw = row[c].trim();
            if !levels.iter().any(|l| l == raw) {
                return Err(Error::validation(format!(
                    "row {}: unseen level '{raw}' in categorical column '{name}'",
                    r + 1
                )));
            }
            for level in levels.iter().filter(|l| l.as_str() != reference) {
                let d = if level == raw { 1.0 } else { 0.0 };
                if role.frequency() {
                    a.push(d);
                }
                if role.severity() {
                    b.push(d);
                }
            }
        }
        freq.push(a);
        sev.push(b);
    }
    Ok((freq, sev))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPeriod {
    pub period: usize,
    pub exposure: f64,
    pub freq_covariates: Vec<f64>,
    pub sev_covariates: Vec<f64>,
    pub claim_sizes: Vec<f64>,
}

impl PolicyPeriod {
    pub fn claim_count(&self) -> u32 {
        self.claim_sizes.len() as u32
    }

    /// Aggregate claim amount L of the period.
    pub fn total_claims(&self) -> f64 {
        self.claim_sizes.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub id: String,
    pub periods: Vec<PolicyPeriod>,
    /// Raw covariate values per period, aligned with `Portfolio::covariate_columns`.
    pub raw_covariates: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PortfolioMetadata {
    pub policies_path: Option<PathBuf>,
    pub claims_path: Option<PathBuf>,
    pub policy_rows: usize,
    pub claim_rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    pub policies: Vec<Policy>,
    pub freq_covariate_names: Vec<String>,
    pub sev_covariate_names: Vec<String>,
    pub covariate_columns: Vec<String>,
    /// Schema with levels and references resolved against the data.
    pub schema: CovariateSchema,
    pub metadata: PortfolioMetadata,
}

/// One raw row of the policies table.
#[derive(Clone, Debug)]
pub struct PolicyRow {
    pub policy_id: String,
    pub period: usize,
    pub exposure: f64,
    pub covariates: Vec<String>,
}

/// One raw row of the claims table.
#[derive(Clone, Debug)]
pub struct ClaimRow {
    pub policy_id: String,
    pub period: usize,
    pub amount: f64,
}

impl Portfolio {
    pub fn n_policies(&self) -> usize {
        self.policies.len()
    }

    /// Σ T_i.
    pub fn n_observations(&self) -> usize {
        self.policies.iter().map(|p| p.periods.len()).sum()
    }

    pub fn total_claims(&self) -> usize {
        self.policies
            .iter()
            .flat_map(|p| &p.periods)
            .map(|pp| pp.claim_sizes.len())
            .sum()
    }

    pub fn periods(&self) -> impl Iterator<Item = (&Policy, &PolicyPeriod)> {
        self.policies
            .iter()
            .flat_map(|p| p.periods.iter().map(move |pp| (p, pp)))
    }

    /// Builds a validated portfolio from raw rows. Policies appear in order of
    /// first occurrence; claim sizes keep row order.
    pub fn from_rows(
        covariate_columns: Vec<String>,
        policy_rows: Vec<PolicyRow>,
        claim_rows: Vec<ClaimRow>,
        schema: &CovariateSchema,
    ) -> Result<Self> {
        if policy_rows.is_empty() {
            return Err(Error::validation("portfolio has no policies"));
        }
        let raw: Vec<Vec<String>> = policy_rows.iter().map(|r| r.covariates.clone()).collect();
        let schema = schema.resolve(&covariate_columns, &raw)?;
        let (freq, sev) = encode_covariates(&covariate_columns, &raw, &schema)?;

        let mut order: Vec<String> = Vec::new();
        let mut by_policy: HashMap<String, Vec<usize>> = HashMap::new();
        for (r, row) in policy_rows.iter().enumerate() {
            if !(row.exposure > 0.0 && row.exposure <= 1.0) {
                return Err(Error::validation(format!(
                    "policy {} period {}: exposure {} outside (0, 1]",
                    row.policy_id, row.period, row.exposure
                )));
            }
            by_policy
                .entry(row.policy_id.clone())
                .or_insert_with(|| {
                    order.push(row.policy_id.clone());
                    Vec::new()
                })
                .push(r);
        }

        let mut policies = Vec::with_capacity(order.len());
        let mut slot: HashMap<(&str, usize), (usize, usize)> = HashMap::new();
        for (pi, id) in order.iter().enumerate() {
            let mut rows = by_policy.remove(id).unwrap_or_default();
            rows.sort_by_key(|&r| policy_rows[r].period);
            let mut periods = Vec::with_capacity(rows.len());
            let mut raw_covariates = Vec::with_capacity(rows.len());
            for (k, &r) in rows.iter().enumerate() {
                let row = &policy_rows[r];
                if row.period != k + 1 {
                    return Err(Error::validation(format!(
                        "policy {id}: periods must be 1..T without gaps or duplicates (found {} at position {})",
                        row.period,
                        k + 1
                    )));
                }
                periods.push(PolicyPeriod {
                    period: row.period,
                    exposure: row.exposure,
                    freq_covariates: freq[r].clone(),
                    sev_covariates: sev[r].clone(),
                    claim_sizes: Vec::new(),
                });
                raw_covariates.push(row.covariates.clone());
            }
            policies.push(Policy {
                id: id.clone(),
                periods,
                raw_covariates,
            });
            for k in 0..rows.len() {
                slot.insert((order[pi].as_str(), k + 1), (pi, k));
            }
        }

        let mut targets = Vec::with_capacity(claim_rows.len());
        for claim in &claim_rows {
            if !(claim.amount > 0.0 && claim.amount.is_finite()) {
                return Err(Error::validation(format!(
                    "claim for policy {} period {} has nonpositive amount {}",
                    claim.policy_id, claim.period, claim.amount
                )));
            }
            let &(pi, k) = slot
                .get(&(claim.policy_id.as_str(), claim.period))
                .ok_or_else(|| {
                    Error::Referential(format!(
                        "claim references unknown policy period ({}, {})",
                        claim.policy_id, claim.period
                    ))
                })?;
            targets.push((pi, k, claim.amount));
        }
        drop(slot);
        for (pi, k, amount) in targets {
            policies[pi].periods[k].claim_sizes.push(amount);
        }

        Ok(Portfolio {
            policies,
            freq_covariate_names: schema.frequency_names(),
            sev_covariate_names: schema.severity_names(),
            covariate_columns,
            schema,
            metadata: PortfolioMetadata {
                policies_path: None,
                claims_path: None,
                policy_rows: policy_rows.len(),
                claim_rows: claim_rows.len(),
            },
        })
    }

    /// Writes the two CSV files that `load_portfolio` reads back.
    pub fn write_csv(&self, policies_csv: &Path, claims_csv: &Path) -> Result<()> {
        let csv_err = |path: &Path, e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::validation(format!("{}: {other:?}", path.display())),
        };
        let file = File::create(policies_csv).map_err(|e| Error::io(policies_csv, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = vec!["policy_id".to_string(), "period".into(), "exposure".into()];
        header.extend(self.covariate_columns.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(policies_csv, e))?;
        for p in &self.policies {
            for (pp, raw) in p.periods.iter().zip(&p.raw_covariates) {
                let mut rec = vec![p.id.clone(), pp.period.to_string(), pp.exposure.to_string()];
                rec.extend(raw.iter().cloned());
                w.write_record(&rec).map_err(|e| csv_err(policies_csv, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(policies_csv, e))?;

        let file = File::create(claims_csv).map_err(|e| Error::io(claims_csv, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["policy_id", "period", "amount"])
            .map_err(|e| csv_err(claims_csv, e))?;
        for p in &self.policies {
            for pp in &p.periods {
                for x in &pp.claim_sizes {
                    w.write_record([p.id.as_str(), &pp.period.to_string(), &x.to_string()])
                        .map_err(|e| csv_err(claims_csv, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(claims_csv, e))?;
        Ok(())
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut reader = open_csv(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    Ok((headers, records))
}

fn expect_columns(path: &Path, headers: &[String], expected: &[&str]) -> Result<()> {
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i).map(String::as_str) != Some(*name) {
            return Err(parse_error(
                path,
                1,
                format!("expected column {} to be '{name}'", i + 1),
            ));
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_error(path, line, format!("invalid {name} '{raw}'")))
}

/// Reads both CSVs without validating them against each other.
pub fn read_rows(
    policies_csv: &Path,
    claims_csv: &Path,
) -> Result<(Vec<String>, Vec<PolicyRow>, Vec<ClaimRow>)> {
    let (headers, records) = read_records(policies_csv)?;
    expect_columns(policies_csv, &headers, &["policy_id", "period", "exposure"])?;
    let covariate_columns = headers[3..].to_vec();
    let mut policy_rows = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.len() != headers.len() {
            return Err(parse_error(policies_csv, line, "wrong number of fields"));
        }
        let covariates: Vec<String> = rec.iter().skip(3).map(str::to_string).collect();
        if covariates.iter().any(|c| c.is_empty()) {
            return Err(parse_error(policies_csv, line, "missing covariate value"));
        }
        policy_rows.push(PolicyRow {
            policy_id: rec[0].to_string(),
            period: parse_field(policies_csv, line, "period", &rec[1])?,
            exposure: parse_field(policies_csv, line, "exposure", &rec[2])?,
            covariates,
        });
    }

    let (headers, records) = read_records(claims_csv)?;
    expect_columns(claims_csv, &headers, &["policy_id", "period", "amount"])?;
    let mut claim_rows = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.len() != 3 {
            return Err(parse_error(claims_csv, line, "wrong number of fields"));
        }
        claim_rows.push(ClaimRow {
            policy_id: rec[0].to_string(),
            period: parse_field(claims_csv, line, "period", &rec[1])?,
            amount: parse_field(claims_csv, line, "amount", &rec[2])?,
        });
    }
    Ok((covariate_columns, policy_rows, claim_rows))
}

/// Loads and validates a portfolio. Without a schema every covariate column is
/// used by both GLMs, numeric columns as continuous and the rest as categorical.
pub fn load_portfolio(
    policies_csv: &Path,
    claims_csv: &Path,
    schema: Option<&CovariateSchema>,
) -> Result<Portfolio> {
    let (columns, policy_rows, claim_rows) = read_rows(policies_csv, claims_csv)?;
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            let raw: Vec<Vec<String>> = policy_rows.iter().map(|r| r.covariates.clone()).collect();
            inferred = CovariateSchema::infer(&columns, &raw);
            &inferred
        }
    };
    let mut portfolio = Portfolio::from_rows(columns, policy_rows, claim_rows, schema)?;
    portfolio.metadata.policies_path = Some(policies_csv.to_path_buf());
    portfolio.metadata.claims_path = Some(claims_csv.to_path_buf());
    Ok(portfolio)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperienceRow {
    pub policy_id: String,
    pub period: usize,
    pub prior_exposure: f64,
    pub prior_claim_count: u32,
    pub prior_claim_amount: f64,
}

/// Totals over periods 1..t−1 for every policy period.
pub fn summarize_claims_experience(portfolio: &Portfolio) -> Vec<ExperienceRow> {
    let mut out = Vec::with_capacity(portfolio.n_observations());
    for p in &portfolio.policies {
        let (mut e, mut n, mut l) = (0.0, 0u32, 0.0);
        for pp in &p.periods {
            out.push(ExperienceRow {
                policy_id: p.id.clone(),
                period: pp.period,
                prior_exposure: e,
                prior_claim_count: n,
                prior_claim_amount: l,
            });
            e += pp.exposure;
            n += pp.claim_count();
            l += pp.total_claims();
        }
    }
    out
}
