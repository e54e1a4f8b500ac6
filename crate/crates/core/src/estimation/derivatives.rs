//! γ-weighted expected complete log-likelihoods of the frequency and severity
//! M-steps, with analytic gradients and Hessians in unconstrained coordinates.
//!
//! Each (policy, period, profile) cell contributes derivatives in a handful of
//! local coordinates (the linear predictor and log shape parameters), which
//! are then scattered into the global vector through the covariate rows.

use rayon::prelude::*;

use super::layout::{ridge_penalty, FreqLayout, SevLayout};
use crate::distributions::{dot, gb2_ln_pdf_sum, ln_rising, ModelParameters};
use crate::error::{Error, Result};
use crate::portfolio::{Policy, Portfolio};
use crate::special::{digamma_shift, ln_factorial, ln_gamma, trigamma, trigamma_shift};

const CHUNK: usize = 256;

/// Value, gradient and row-major Hessian of an objective.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Evaluation {
    fn zeros(dim: usize) -> Self {
        Evaluation {
            value: 0.0,
            grad: vec![0.0; dim],
            hess: vec![0.0; dim * dim],
        }
    }

    fn add(&mut self, other: &Evaluation) {
        self.value += other.value;
        self.grad.iter_mut().zip(&other.grad).for_each(|(a, b)| *a += b);
        self.hess.iter_mut().zip(&other.hess).for_each(|(a, b)| *a += b);
    }
}

/// A smooth objective to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    fn evaluate(&self, u: &[f64]) -> Evaluation;
}

/// How a local coordinate depends on the global vector.
#[derive(Clone, Copy)]
enum Coord<'x> {
    Scalar(usize),
    /// `Σ_i x_i u_{start+i}`, optionally with a leading unit coefficient.
    Linear { start: usize, lead_one: bool, x: &'x [f64] },
}

impl Coord<'_> {
    fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match *self {
            Coord::Scalar(i) => f(i, 1.0),
            Coord::Linear { start, lead_one, x } => {
                let mut i = start;
                if lead_one {
                    f(i, 1.0);
                    i += 1;
                }
                for (o, &v) in x.iter().enumerate() {
                    f(i + o, v);
                }
            }
        }
    }
}

/// Adds `w (value, g, H)` given in local coordinates.
fn scatter<const M: usize>(
    acc: &mut Evaluation,
    coords: &[Coord; M],
    w: f64,
    value: f64,
    g: &[f64; M],
    h: &[[f64; M]; M],
) {
    let d = acc.grad.len();
    acc.value += w * value;
    for c in 0..M {
        let gc = w * g[c];
        coords[c].for_each(|i, x| acc.grad[i] += gc * x);
        for e in 0..M {
            let hce = w * h[c][e];
            if hce == 0.0 {
                continue;
            }
            coords[c].for_each(|i, xi| {
                let row = i * d;
                let s = hce * xi;
                coords[e].for_each(|j, xj| acc.hess[row + j] += s * xj);
            });
        }
    }
}

fn add_ridge(acc: &mut Evaluation, u: &[f64], mask: &[bool], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let d = u.len();
    acc.value -= ridge_penalty(u, mask, lambda);
    for i in 0..d {
        if mask[i] {
            acc.grad[i] -= 2.0 * lambda * u[i];
            acc.hess[i * d + i] -= 2.0 * lambda;
        }
    }
}

/// `ψ(n + a) − ψ(a)` and `ψ₁(n + a) − ψ₁(a)`.
fn digamma_differences(n: u32, a: f64) -> (f64, f64) {
    if n <= 64 {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in 0..n {
            let r = 1.0 / (a + i as f64);
            d1 += r;
            d2 -= r * r;
        }
        (d1, d2)
    } else {
        let nf = n as f64;
        (digamma_shift(a, nf), trigamma_shift(a, nf))
    }
}

struct FreqCell {
    value: f64,
    g: [f64; 3],
    h: [[f64; 3]; 3],
}

/// NB log-pmf and its derivatives in (η = ln m, ln a, ln b).
fn nb_cell(n: u32, a: f64, b: f64, ln_m: f64, with_derivatives: bool) -> FreqCell {
    let m = ln_m.exp();
    let s = b + m;
    let nf = n as f64;
    let ln1p_mb = (m / b).ln_1p();
    let mut value = -a * ln1p_mb;
    if n > 0 {
        value += ln_rising(a, n) - ln_factorial(n) + nf * (ln_m - s.ln());
    }
    if !with_derivatives {
        return FreqCell {
            value,
            g: [0.0; 3],
            h: [[0.0; 3]; 3],
        };
    }
    let (d1, d2) = digamma_differences(n, a);
    let s2 = s * s;
    let l_e = (nf * b - a * m) / s;
    let l_a = d1 - ln1p_mb;
    let bl_b = (a * m - nf * b) / s;
    let l_ee = -(nf + a) * m * b / s2;
    let h_ea = -a * m / s;
    let h_eb = (nf + a) * m * b / s2;
    let h_ab = a * m / s;
    let bbl_bb = (nf * b * b - a * m * (2.0 * b + m)) / s2;
    FreqCell {
        value,
        g: [l_e, a * l_a, bl_b],
        h: [
            [l_ee, h_ea, h_eb],
            [h_ea, a * a * d2 + a * l_a, h_ab],
            [h_eb, h_ab, bbl_bb + bl_b],
        ],
    }
}

/// γ for every policy, row-major `T × K`.
pub type Weights = [Vec<f64>];

pub struct FrequencyObjective<'a> {
    pub portfolio: &'a Portfolio,
    pub gamma: &'a Weights,
    pub layout: FreqLayout,
    pub mask: Vec<bool>,
    pub lambda: f64,
}

impl<'a> FrequencyObjective<'a> {
    pub fn new(
        portfolio: &'a Portfolio,
        gamma: &'a Weights,
        layout: FreqLayout,
        lambda: f64,
        ridge_all: bool,
    ) -> Self {
        FrequencyObjective {
            portfolio,
            gamma,
            mask: layout.penalized(ridge_all),
            layout,
            lambda,
        }
    }

    fn accumulate(&self, policies: &[Policy], gammas: &Weights, u: &[f64], full: bool) -> Evaluation {
        let l = &self.layout;
        let k = l.k;
        let mut acc = if full {
            Evaluation::zeros(l.dim())
        } else {
            Evaluation::zeros(0)
        };
        let shapes: Vec<(f64, f64)> = (0..k)
            .map(|j| (u[l.theta_a(j)].exp(), u[l.theta_b(j)].exp()))
            .collect();
        for (policy, gamma) in policies.iter().zip(gammas) {
            for (t, pp) in policy.periods.iter().enumerate() {
                let ln_e = pp.exposure.ln();
                let n = pp.claim_count();
                for (j, &(a, b)) in shapes.iter().enumerate() {
                    let w = gamma[t * k + j];
                    if w == 0.0 {
                        continue;
                    }
                    let delta = l.delta(j);
                    let ln_m = ln_e + dot(&pp.freq_covariates, &u[delta.clone()]);
                    let cell = nb_cell(n, a, b, ln_m, full);
                    if full {
                        let coords = [
                            Coord::Linear {
                                start: delta.start,
                                lead_one: false,
                                x: &pp.freq_covariates,
                            },
                            Coord::Scalar(l.theta_a(j)),
                            Coord::Scalar(l.theta_b(j)),
                        ];
                        scatter(&mut acc, &coords, w, cell.value, &cell.g, &cell.h);
                    } else {
                        acc.value += w * cell.value;
                    }
                }
            }
        }
        acc
    }
}

fn reduce(parts: Vec<Evaluation>, dim: usize) -> Evaluation {
    let mut total = Evaluation::zeros(dim);
    for p in &parts {
        if dim == 0 {
            total.value += p.value;
        } else {
            total.add(p);
        }
    }
    total
}

fn chunked<F>(portfolio: &Portfolio, gamma: &Weights, dim: usize, f: F) -> Evaluation
where
    F: Fn(&[Policy], &Weights) -> Evaluation + Sync,
{
    let parts: Vec<Evaluation> = portfolio
        .policies
        .par_chunks(CHUNK)
        .zip(gamma.par_chunks(CHUNK))
        .map(|(p, g)| f(p, g))
        .collect();
    reduce(parts, dim)
}

impl Objective for FrequencyObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        let acc = chunked(self.portfolio, self.gamma, 0, |p, g| self.accumulate(p, g, u, false));
        acc.value - ridge_penalty(u, &self.mask, self.lambda)
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let mut acc = chunked(self.portfolio, self.gamma, self.dim(), |p, g| {
            self.accumulate(p, g, u, true)
        });
        add_ridge(&mut acc, u, &self.mask, self.lambda);
        acc
    }
}

struct SevCell {
    value: f64,
    g: [f64; 4],
    h: [[f64; 4]; 4],
}

/// Per-profile constants of the severity objective.
struct SevShape {
    a: f64,
    b: f64,
    phi: f64,
    ln_gamma_a: f64,
}

/// Σ_n GB2 log-density of one period's claims and derivatives in
/// (ln μ, ln φ, ln(a − 1), ln b). With y = φx and d = b + y every term is
/// written without differences of large quantities.
fn gb2_cell(sizes: &[f64], mu: f64, sh: &SevShape, with_derivatives: bool) -> SevCell {
    let (a, b, phi) = (sh.a, sh.b, sh.phi);
    let value = gb2_ln_pdf_sum(sizes, mu, a, b, phi, sh.ln_gamma_a);
    if !with_derivatives {
        return SevCell {
            value,
            g: [0.0; 4],
            h: [[0.0; 4]; 4],
        };
    }
    let nf = sizes.len() as f64;
    let (mut s1, mut s2, mut s3, mut s4, mut s5) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut l1, mut l2) = (0.0, 0.0);
    for &x in sizes {
        let y = phi * x;
        let r = 1.0 / (b + y);
        s1 += y * r;
        s2 += b * r;
        s3 += y * y * r * r;
        s4 += b * y * r * r;
        s5 += b * b * r * r;
        l1 += (b / y).ln_1p();
        l2 += (y / b).ln_1p();
    }
    let ea = a - 1.0;
    let l_m = nf * digamma_shift(mu, a) - l1;
    let l_a = nf * digamma_shift(a, mu) - l2;
    let pl_p = mu * s2 - a * s1;
    let bl_b = a * s1 - mu * s2;
    let l_mm = nf * trigamma_shift(mu, a);
    let l_aa = nf * trigamma_shift(a, mu);
    let l_ma = nf * trigamma(mu + a);
    let ppl_pp = a * s3 - mu * (s5 + 2.0 * s4);
    let bbl_bb = mu * s5 - a * (2.0 * s4 + s3);
    let h01 = mu * s2;
    let h02 = mu * ea * l_ma;
    let h03 = -mu * s2;
    let h12 = -ea * s1;
    let h13 = (mu + a) * s4;
    let h23 = ea * s1;
    SevCell {
        value,
        g: [mu * l_m, pl_p, ea * l_a, bl_b],
        h: [
            [mu * mu * l_mm + mu * l_m, h01, h02, h03],
            [h01, ppl_pp + pl_p, h12, h13],
            [h02, h12, ea * ea * l_aa + ea * l_a, h23],
            [h03, h13, h23, bbl_bb + bl_b],
        ],
    }
}

pub struct SeverityObjective<'a> {
    pub portfolio: &'a Portfolio,
    pub gamma: &'a Weights,
    pub layout: SevLayout,
    pub mask: Vec<bool>,
    pub lambda: f64,
}

impl<'a> SeverityObjective<'a> {
    pub fn new(
        portfolio: &'a Portfolio,
        gamma: &'a Weights,
        layout: SevLayout,
        lambda: f64,
        ridge_all: bool,
    ) -> Self {
        SeverityObjective {
            portfolio,
            gamma,
            mask: layout.penalized(ridge_all),
            layout,
            lambda,
        }
    }

    fn accumulate(&self, policies: &[Policy], gammas: &Weights, u: &[f64], full: bool) -> Evaluation {
        let l = &self.layout;
        let k = l.k;
        let mut acc = if full {
            Evaluation::zeros(l.dim())
        } else {
            Evaluation::zeros(0)
        };
        let shapes: Vec<SevShape> = (0..k)
            .map(|j| {
                let a = 1.0 + u[l.theta_a(j)].exp();
                SevShape {
                    a,
                    b: u[l.theta_b(j)].exp(),
                    phi: u[l.rho(j)].exp(),
                    ln_gamma_a: ln_gamma(a),
                }
            })
            .collect();
        for (policy, gamma) in policies.iter().zip(gammas) {
            for (t, pp) in policy.periods.iter().enumerate() {
                if pp.claim_sizes.is_empty() {
                    continue;
                }
                for (j, sh) in shapes.iter().enumerate() {
                    let w = gamma[t * k + j];
                    if w == 0.0 {
                        continue;
                    }
                    let block = l.shape_block(j);
                    let ln_mu = u[block.start] + dot(&pp.sev_covariates, &u[block.start + 1..block.end]);
                    let cell = gb2_cell(&pp.claim_sizes, ln_mu.exp(), sh, full);
                    if full {
                        let coords = [
                            Coord::Linear {
                                start: block.start,
                                lead_one: true,
                                x: &pp.sev_covariates,
                            },
                            Coord::Scalar(l.rho(j)),
                            Coord::Scalar(l.theta_a(j)),
                            Coord::Scalar(l.theta_b(j)),
                        ];
                        scatter(&mut acc, &coords, w, cell.value, &cell.g, &cell.h);
                    } else {
                        acc.value += w * cell.value;
                    }
                }
            }
        }
        acc
    }
}

impl Objective for SeverityObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        let acc = chunked(self.portfolio, self.gamma, 0, |p, g| self.accumulate(p, g, u, false));
        acc.value - ridge_penalty(u, &self.mask, self.lambda)
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let mut acc = chunked(self.portfolio, self.gamma, self.dim(), |p, g| {
            self.accumulate(p, g, u, true)
        });
        add_ridge(&mut acc, u, &self.mask, self.lambda);
        acc
    }
}

pub(crate) fn check_finite(eval: &Evaluation, what: &str) -> Result<()> {
    if !eval.value.is_finite() {
        return Err(Error::Numerical(format!("{what} objective is not finite")));
    }
    if let Some(i) = eval.grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("{what} gradient coordinate {i} is not finite")));
    }
    if let Some(i) = eval.hess.iter().position(|h| !h.is_finite()) {
        let d = eval.grad.len();
        return Err(Error::Numerical(format!(
            "{what} Hessian entry ({}, {}) is not finite",
            i / d,
            i % d
        )));
    }
    Ok(())
}

/// Gradient and Hessian of the penalized frequency M-step objective at the
/// current parameters, in the unconstrained coordinates of `FreqLayout`.
pub fn grad_hess_frequency(
    portfolio: &Portfolio,
    gamma: &Weights,
    params: &ModelParameters,
    lambda: f64,
    ridge_all: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = FreqLayout::new(params);
    let obj = FrequencyObjective::new(portfolio, gamma, layout, lambda, ridge_all);
    let eval = obj.evaluate(&layout.pack(params));
    check_finite(&eval, "frequency")?;
    Ok((eval.grad, eval.hess))
}

/// Severity analogue of [`grad_hess_frequency`] in `SevLayout` coordinates.
pub fn grad_hess_severity(
    portfolio: &Portfolio,
    gamma: &Weights,
    params: &ModelParameters,
    lambda: f64,
    ridge_all: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = SevLayout::new(params);
    let obj = SeverityObjective::new(portfolio, gamma, layout, lambda, ridge_all);
    let eval = obj.evaluate(&layout.pack(params));
    check_finite(&eval, "severity")?;
    Ok((eval.grad, eval.hess))
}
