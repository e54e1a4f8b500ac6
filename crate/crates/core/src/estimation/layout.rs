//! Unconstrained coordinates for the frequency and severity M-steps.
//!
//! Frequency, full: per profile `[δ_A, ln a_U]` with `b_U = a_U`.
//! Frequency, sparse: `[δ_A, ln a_U^1..K, ln b_U^1..K]`.
//! Severity, full: per profile `[ln φ, δ_B, ln(a_V − 1)]` with `b_V = a_V − 1`.
//! Severity, sparse: `[ln φ, δ_B, ln(a_V^1..K − 1), ln b_V^1..K]`.
//!
//! In the full layouts the `a` and `b` coordinates share one index, so
//! scattering derivatives by index applies the chain rule for the tie.

use std::ops::Range;

use crate::distributions::{ModelParameters, Representation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreqLayout {
    pub representation: Representation,
    pub k: usize,
    pub p: usize,
}

impl FreqLayout {
    pub fn new(params: &ModelParameters) -> Self {
        FreqLayout {
            representation: params.representation,
            k: params.k(),
            p: params.freq_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.representation {
            Representation::Full => self.k * (self.p + 1),
            Representation::Sparse => self.p + 2 * self.k,
        }
    }

    pub fn delta(&self, j: usize) -> Range<usize> {
        match self.representation {
            Representation::Full => {
                let s = j * (self.p + 1);
                s..s + self.p
            }
            Representation::Sparse => 0..self.p,
        }
    }

    pub fn theta_a(&self, j: usize) -> usize {
        match self.representation {
            Representation::Full => j * (self.p + 1) + self.p,
            Representation::Sparse => self.p + j,
        }
    }

    pub fn theta_b(&self, j: usize) -> usize {
        match self.representation {
            Representation::Full => self.theta_a(j),
            Representation::Sparse => self.p + self.k + j,
        }
    }

    pub fn pack(&self, params: &ModelParameters) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        for (j, f) in params.frequency.iter().enumerate() {
            u[self.delta(j)].copy_from_slice(&f.delta_a);
            u[self.theta_a(j)] = f.a_u.ln();
            u[self.theta_b(j)] = match self.representation {
                Representation::Full => f.a_u.ln(),
                Representation::Sparse => f.b_u.ln(),
            };
        }
        u
    }

    pub fn unpack(&self, u: &[f64], params: &mut ModelParameters) {
        for (j, f) in params.frequency.iter_mut().enumerate() {
            f.delta_a.copy_from_slice(&u[self.delta(j)]);
            f.a_u = u[self.theta_a(j)].exp();
            f.b_u = u[self.theta_b(j)].exp();
        }
    }

    /// Coordinates carrying the ridge penalty.
    pub fn penalized(&self, ridge_all: bool) -> Vec<bool> {
        let mut mask = vec![ridge_all; self.dim()];
        for j in 0..self.k {
            for i in self.delta(j).skip(1) {
                mask[i] = true;
            }
        }
        mask
    }

    pub fn intercept(&self, j: usize) -> usize {
        self.delta(j).start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SevLayout {
    pub representation: Representation,
    pub k: usize,
    pub p: usize,
}

impl SevLayout {
    pub fn new(params: &ModelParameters) -> Self {
        SevLayout {
            representation: params.representation,
            k: params.k(),
            p: params.sev_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.representation {
            Representation::Full => self.k * (self.p + 2),
            Representation::Sparse => self.p + 1 + 2 * self.k,
        }
    }

    pub fn rho(&self, j: usize) -> usize {
        match self.representation {
            Representation::Full => j * (self.p + 2),
            Representation::Sparse => 0,
        }
    }

    /// `ln φ` followed by `δ_B`: the coordinates that ln μ is linear in.
    pub fn shape_block(&self, j: usize) -> Range<usize> {
        let s = self.rho(j);
        s..s + 1 + self.p
    }

    pub fn delta(&self, j: usize) -> Range<usize> {
        let s = self.rho(j) + 1;
        s..s + self.p
    }

    pub fn theta_a(&self, j: usize) -> usize {
        match self.representation {
            Representation::Full => j * (self.p + 2) + self.p + 1,
            Representation::Sparse => self.p + 1 + j,
        }
    }

    pub fn theta_b(&self, j: usize) -> usize {
        match self.representation {
            Representation::Full => self.theta_a(j),
            Representation::Sparse => self.p + 1 + self.k + j,
        }
    }

    pub fn pack(&self, params: &ModelParameters) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        for (j, s) in params.severity.iter().enumerate() {
            u[self.rho(j)] = s.phi.ln();
            u[self.delta(j)].copy_from_slice(&s.delta_b);
            u[self.theta_a(j)] = (s.a_v - 1.0).ln();
            u[self.theta_b(j)] = match self.representation {
                Representation::Full => (s.a_v - 1.0).ln(),
                Representation::Sparse => s.b_v.ln(),
            };
        }
        u
    }

    pub fn unpack(&self, u: &[f64], params: &mut ModelParameters) {
        for (j, s) in params.severity.iter_mut().enumerate() {
            s.phi = u[self.rho(j)].exp();
            s.delta_b.copy_from_slice(&u[self.delta(j)]);
            s.a_v = 1.0 + u[self.theta_a(j)].exp();
            s.b_v = u[self.theta_b(j)].exp();
        }
    }

    pub fn penalized(&self, ridge_all: bool) -> Vec<bool> {
        let mut mask = vec![ridge_all; self.dim()];
        for j in 0..self.k {
            for i in self.delta(j).skip(1) {
                mask[i] = true;
            }
        }
        mask
    }
}

/// λ Σ u_i² over the penalized coordinates.
pub fn ridge_penalty(u: &[f64], mask: &[bool], lambda: f64) -> f64 {
    lambda
        * u.iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| v * v)
            .sum::<f64>()
}
