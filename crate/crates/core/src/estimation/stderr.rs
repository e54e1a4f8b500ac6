//! Observed-information standard errors.
//!
//! The score of the observed log-likelihood equals the gradient of the EM
//! surrogate at its own posteriors; central differences of that score give
//! the observed Hessian. Transition probabilities enter through softmax
//! logits with the largest entry of each row as reference.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::derivatives::{FrequencyObjective, Objective, SeverityObjective};
use super::em::{e_step, gamma_weights};
use super::layout::{FreqLayout, SevLayout};
use crate::distributions::{ModelParameters, Representation, TransitionModel};
use crate::error::{Error, Result};
use crate::portfolio::Portfolio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    /// `None` when the information matrix is singular along this parameter.
    pub std_error: Option<f64>,
}

/// Eigenvalues at or below this fraction of the largest are treated as null.
const NULL_EIGEN_REL: f64 = 1e-9;
const NULL_LOADING: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

struct Softmax {
    /// Index of the first logit in the full coordinate vector.
    start: usize,
    reference: usize,
}

struct Coordinates {
    fl: FreqLayout,
    sl: SevLayout,
    w0: Option<Softmax>,
    rows: Vec<Softmax>,
    dim: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Coordinates {
    fn new(params: &ModelParameters) -> Self {
        let fl = FreqLayout::new(params);
        let sl = SevLayout::new(params);
        let k = params.k();
        let mut dim = fl.dim() + sl.dim();
        let mut w0 = None;
        let mut rows = Vec::new();
        if k > 1 {
            w0 = Some(Softmax {
                start: dim,
                reference: argmax(&params.transitions.w0),
            });
            dim += k - 1;
            for row in &params.transitions.w {
                rows.push(Softmax {
                    start: dim,
                    reference: argmax(row),
                });
                dim += k - 1;
            }
        }
        Coordinates { fl, sl, w0, rows, dim }
    }

    fn logit_slot(sm: &Softmax, k: usize) -> Option<usize> {
        if k == sm.reference {
            None
        } else if k < sm.reference {
            Some(sm.start + k)
        } else {
            Some(sm.start + k - 1)
        }
    }

    fn pack_block(sm: &Softmax, probs: &[f64], v: &mut [f64]) {
        let ln_ref = probs[sm.reference].ln();
        for (k, p) in probs.iter().enumerate() {
            if let Some(i) = Self::logit_slot(sm, k) {
                v[i] = p.max(1e-300).ln() - ln_ref;
            }
        }
    }

    fn unpack_block(sm: &Softmax, v: &[f64], k: usize) -> Vec<f64> {
        let z: Vec<f64> = (0..k)
            .map(|c| Self::logit_slot(sm, c).map_or(0.0, |i| v[i]))
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    fn pack(&self, params: &ModelParameters) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let nf = self.fl.dim();
        v[..nf].copy_from_slice(&self.fl.pack(params));
        v[nf..nf + self.sl.dim()].copy_from_slice(&self.sl.pack(params));
        if let Some(sm) = &self.w0 {
            Self::pack_block(sm, &params.transitions.w0, &mut v);
            for (sm, row) in self.rows.iter().zip(&params.transitions.w) {
                Self::pack_block(sm, row, &mut v);
            }
        }
        v
    }

    fn unpack(&self, v: &[f64], template: &ModelParameters) -> ModelParameters {
        let mut p = template.clone();
        let nf = self.fl.dim();
        self.fl.unpack(&v[..nf], &mut p);
        self.sl.unpack(&v[nf..nf + self.sl.dim()], &mut p);
        if let Some(sm) = &self.w0 {
            let k = template.k();
            p.transitions = TransitionModel {
                w0: Self::unpack_block(sm, v, k),
                w: self.rows.iter().map(|sm| Self::unpack_block(sm, v, k)).collect(),
            };
        }
        p
    }

    /// Score of the observed log-likelihood at `v`.
    fn score(&self, portfolio: &Portfolio, v: &[f64], template: &ModelParameters) -> Result<Vec<f64>> {
        let params = self.unpack(v, template);
        let post = e_step(portfolio, &params)?;
        let gamma = gamma_weights(&post);
        let nf = self.fl.dim();
        let ns = self.sl.dim();
        let freq = FrequencyObjective::new(portfolio, &gamma, self.fl, 0.0, false);
        let sev = SeverityObjective::new(portfolio, &gamma, self.sl, 0.0, false);
        let mut g = vec![0.0; self.dim];
        g[..nf].copy_from_slice(&freq.evaluate(&v[..nf]).grad);
        g[nf..nf + ns].copy_from_slice(&sev.evaluate(&v[nf..nf + ns]).grad);
        if let Some(sm) = &self.w0 {
            let k = params.k();
            let mut first = vec![0.0; k];
            let mut trans = vec![vec![0.0; k]; k];
            for p in &post.policies {
                for j in 0..k {
                    first[j] += p.gamma[j];
                }
                for block in p.xi.chunks(k * k) {
                    for h in 0..k {
                        for j in 0..k {
                            trans[h][j] += block[h * k + j];
                        }
                    }
                }
            }
            let mut block_score = |sm: &Softmax, counts: &[f64], probs: &[f64]| {
                let total: f64 = counts.iter().sum();
                for c in 0..k {
                    if let Some(i) = Self::logit_slot(sm, c) {
                        g[i] = counts[c] - total * probs[c];
                    }
                }
            };
            block_score(sm, &first, &params.transitions.w0);
            for (h, sm) in self.rows.iter().enumerate() {
                block_score(sm, &trans[h], &params.transitions.w[h]);
            }
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("score coordinate {i} is not finite")));
        }
        Ok(g)
    }

    /// Linear constraints removing the sparse scale directions.
    fn constraints(&self) -> Vec<Vec<f64>> {
        if self.fl.representation != Representation::Sparse {
            return Vec::new();
        }
        let k = self.fl.k as f64;
        let mut cu = vec![0.0; self.dim];
        let mut cv = vec![0.0; self.dim];
        let nf = self.fl.dim();
        for j in 0..self.fl.k {
            cu[self.fl.theta_b(j)] += 1.0 / k;
            cu[self.fl.theta_a(j)] -= 1.0 / k;
            cv[nf + self.sl.theta_b(j)] += 1.0 / k;
            cv[nf + self.sl.theta_a(j)] -= 1.0 / k;
        }
        vec![cu, cv]
    }
}

/// Observed information `−∂²ℓ/∂v²` by central differences of the score.
fn observed_information(
    portfolio: &Portfolio,
    coords: &Coordinates,
    params: &ModelParameters,
) -> Result<DMatrix<f64>> {
    let v = coords.pack(params);
    let d = coords.dim;
    let mut info = DMatrix::zeros(d, d);
    for i in 0..d {
        let h = FD_STEP * v[i].abs().max(1.0);
        let mut plus = v.clone();
        plus[i] += h;
        let mut minus = v.clone();
        minus[i] -= h;
        let gp = coords.score(portfolio, &plus, params)?;
        let gm = coords.score(portfolio, &minus, params)?;
        for r in 0..d {
            info[(r, i)] = -(gp[r] - gm[r]) / (2.0 * h);
        }
    }
    Ok((&info + info.transpose()) * 0.5)
}

/// Orthonormal basis of the complement of the constraint rows.
fn free_basis(d: usize, constraints: &[Vec<f64>]) -> DMatrix<f64> {
    if constraints.is_empty() {
        return DMatrix::identity(d, d);
    }
    let c = DMatrix::from_fn(constraints.len(), d, |r, s| constraints[r][s]);
    let cct = &c * c.transpose();
    let inv = cct.try_inverse().unwrap_or_else(|| DMatrix::identity(constraints.len(), constraints.len()));
    let proj = DMatrix::identity(d, d) - c.transpose() * inv * &c;
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<_> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Covariance of the unconstrained coordinates with per-coordinate flags for
/// directions the information does not determine.
fn covariance(info: &DMatrix<f64>, basis: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let d = info.nrows();
    let reduced = basis.transpose() * info * basis;
    let eig = SymmetricEigen::new(reduced);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let r = eig.eigenvalues.len();
    let mut pinv = DMatrix::zeros(r, r);
    let mut flagged = vec![false; d];
    for e in 0..r {
        let lam = eig.eigenvalues[e];
        let dir = basis * eig.eigenvectors.column(e);
        if lam > NULL_EIGEN_REL * max && max > 0.0 {
            let col = eig.eigenvectors.column(e);
            pinv += col * col.transpose() / lam;
        } else {
            for (i, x) in dir.iter().enumerate() {
                if x * x > NULL_LOADING {
                    flagged[i] = true;
                }
            }
        }
    }
    (basis * pinv * basis.transpose(), flagged)
}

type Row = (String, f64, Vec<(usize, f64)>);

/// Natural-scale parameters with their Jacobian rows in the coordinates.
fn parameter_rows(portfolio: &Portfolio, params: &ModelParameters, coords: &Coordinates) -> Vec<Row> {
    let mut rows: Vec<Row> = Vec::new();
    let fl = coords.fl;
    let sl = coords.sl;
    let nf = fl.dim();
    let sparse = params.representation == Representation::Sparse;
    let k = params.k();
    let fa = &portfolio.freq_covariate_names;
    let sb = &portfolio.sev_covariate_names;
    for j in 0..k {
        let f = &params.frequency[j];
        if !sparse || j == 0 {
            let prefix = if sparse { "frequency".to_string() } else { format!("frequency[{}]", j + 1) };
            for (c, i) in fl.delta(j).enumerate() {
                rows.push((format!("{prefix}.delta_A[{}]", fa[c]), f.delta_a[c], vec![(i, 1.0)]));
            }
        }
        rows.push((format!("frequency[{}].a_U", j + 1), f.a_u, vec![(fl.theta_a(j), f.a_u)]));
        if sparse {
            rows.push((format!("frequency[{}].b_U", j + 1), f.b_u, vec![(fl.theta_b(j), f.b_u)]));
        }
    }
    for j in 0..k {
        let s = &params.severity[j];
        if !sparse || j == 0 {
            let prefix = if sparse { "severity".to_string() } else { format!("severity[{}]", j + 1) };
            rows.push((format!("{prefix}.phi"), s.phi, vec![(nf + sl.rho(j), s.phi)]));
            for (c, i) in sl.delta(j).enumerate() {
                rows.push((format!("{prefix}.delta_B[{}]", sb[c]), s.delta_b[c], vec![(nf + i, 1.0)]));
            }
        }
        rows.push((
            format!("severity[{}].a_V", j + 1),
            s.a_v,
            vec![(nf + sl.theta_a(j), s.a_v - 1.0)],
        ));
        if sparse {
            rows.push((format!("severity[{}].b_V", j + 1), s.b_v, vec![(nf + sl.theta_b(j), s.b_v)]));
        }
    }
    if let Some(sm) = &coords.w0 {
        let mut softmax_rows = |label: String, sm: &Softmax, probs: &[f64]| {
            for c in 0..k {
                let jac = (0..k)
                    .filter_map(|l| {
                        let delta = if c == l { 1.0 } else { 0.0 };
                        Coordinates::logit_slot(sm, l).map(|i| (i, probs[c] * (delta - probs[l])))
                    })
                    .collect();
                rows.push((format!("{label}[{}]", c + 1), probs[c], jac));
            }
        };
        softmax_rows("w0".into(), sm, &params.transitions.w0);
        for (h, sm) in coords.rows.iter().enumerate() {
            softmax_rows(format!("W[{}]", h + 1), sm, &params.transitions.w[h]);
        }
    }

    rows
}

/// Names and natural-scale values in the order used by [`standard_errors`].
pub fn named_parameters(portfolio: &Portfolio, params: &ModelParameters) -> Vec<(String, f64)> {
    let coords = Coordinates::new(params);
    parameter_rows(portfolio, params, &coords)
        .into_iter()
        .map(|(n, v, _)| (n, v))
        .collect()
}

/// Named natural-scale parameters with their standard errors.
pub fn standard_errors(
    portfolio: &Portfolio,
    params: &ModelParameters,
) -> Result<Vec<ParameterEstimate>> {
    let coords = Coordinates::new(params);
    let info = observed_information(portfolio, &coords, params)?;
    let basis = free_basis(coords.dim, &coords.constraints());
    let (cov, flagged) = covariance(&info, &basis);

    let rows = parameter_rows(portfolio, params, &coords);
    Ok(rows
        .into_iter()
        .map(|(name, estimate, jac)| {
            let any_flag = jac.iter().any(|(i, w)| *w != 0.0 && flagged[*i]);
            let var: f64 = jac
                .iter()
                .flat_map(|(i, wi)| jac.iter().map(move |(l, wl)| (*i, *wi, *l, *wl)))
                .map(|(i, wi, l, wl)| wi * wl * cov[(i, l)])
                .sum();
            let std_error = if any_flag || !(var >= 0.0) {
                None
            } else {
                Some(var.sqrt())
            };
            ParameterEstimate {
                name,
                estimate,
                std_error,
            }
        })
        .collect())
}
