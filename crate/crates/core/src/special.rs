//! Log-gamma, digamma and trigamma on the positive real axis.
//!
//! All three use a recurrence shift into a region where either a convergent
//! power series (log-gamma near 2) or the Stirling/asymptotic expansion is
//! accurate to machine precision.
//!
//! The `*_checked` forms return a domain error for `x <= 0`; the plain forms
//! are the hot-path kernels and return NaN outside the domain.

use crate::error::{Error, Result};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// ζ(k) − 1 for k = 2..=41, used by the Taylor series of ln Γ(2 + z).
const ZETA_MINUS_ONE: [f64; 40] = [
    6.44934066848226406e-01,
    2.02056903159594292e-01,
    8.23232337111381857e-02,
    3.69277551433699266e-02,
    1.73430619844491402e-02,
    8.34927738192282713e-03,
    4.07735619794433960e-03,
    2.00839282608221426e-03,
    9.94575127818085256e-04,
    4.94188604119464529e-04,
    2.46086553308048320e-04,
    1.22713347578489145e-04,
    6.12481350587048277e-05,
    3.05882363070204933e-05,
    1.52822594086518710e-05,
    7.63719763789976257e-06,
    3.81729326499984022e-06,
    1.90821271655393897e-06,
    9.53962033872796212e-07,
    4.76932986787806447e-07,
    2.38450502727733004e-07,
    1.19219925965311064e-07,
    5.96081890512594801e-08,
    2.98035035146522793e-08,
    1.49015548283650427e-08,
    7.45071178983543006e-09,
    3.72533402478845728e-09,
    1.86265972351304914e-09,
    9.31327432419668166e-10,
    4.65662906503378366e-10,
    2.32831183367650534e-10,
    1.16415501727005193e-10,
    5.82077208790270145e-11,
    2.91038504449710001e-11,
    1.45519218910419849e-11,
    7.27595983505748180e-12,
    3.63797954737865086e-12,
    1.81898965030706607e-12,
    9.09494784026388841e-13,
    4.54747378304215422e-13,
];

/// B_{2k} / (2k (2k − 1)) for the Stirling series.
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// B_{2k} for k = 1..=8.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

const ASYMPTOTIC_FROM: f64 = 10.0;

/// ln Γ(2 + z) for |z| ≤ 0.5 by its Taylor series around 2.
fn ln_gamma_near_two(z: f64) -> f64 {
    let mut sum = (1.0 - EULER_GAMMA) * z;
    let mut power = -z;
    for (i, zm1) in ZETA_MINUS_ONE.iter().enumerate() {
        power *= -z;
        let k = (i + 2) as f64;
        let term = zm1 * power / k;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn ln_gamma_stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv;
    for c in STIRLING {
        series += c * p;
        p *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series
}

/// ln Γ(x) for x > 0; NaN otherwise.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if x < 0.5 {
        // Γ(x) = Γ(x + 2) / (x (x + 1))
        return ln_gamma_near_two(x) - x.ln() - x.ln_1p();
    }
    if x < 1.5 {
        // Γ(x) = Γ(x + 1) / x, with x + 1 in [1.5, 2.5)
        return ln_gamma_near_two(x - 1.0) - (x - 1.0).ln_1p();
    }
    if x <= 2.5 {
        return ln_gamma_near_two(x - 2.0);
    }
    if x < 15.0 {
        let mut y = x;
        let mut prod = 1.0;
        while y > 2.5 {
            y -= 1.0;
            prod *= y;
        }
        return ln_gamma_near_two(y - 2.0) + prod.ln();
    }
    ln_gamma_stirling(x)
}

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0; NaN otherwise.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    let mut y = x;
    let mut shift = 0.0;
    while y < ASYMPTOTIC_FROM {
        shift += 1.0 / y;
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv2;
    for (k, b) in BERNOULLI.iter().enumerate() {
        series += b / (2.0 * (k + 1) as f64) * p;
        p *= inv2;
    }
    y.ln() - 0.5 * inv - series - shift
}

/// Trigamma ψ₁(x) = d/dx ψ(x) for x > 0; NaN otherwise.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    let mut y = x;
    let mut shift = 0.0;
    while y < ASYMPTOTIC_FROM {
        shift += 1.0 / (y * y);
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv2 * inv;
    for b in BERNOULLI {
        series += b * p;
        p *= inv2;
    }
    inv + 0.5 * inv2 + series + shift
}

const SHIFT_ASYMPTOTIC_FROM: f64 = 50.0;

/// `1/(a+m)^p − 1/a^p`.
fn inverse_power_difference(a: f64, m: f64, p: i32) -> f64 {
    (a + m).powi(-p) - a.powi(-p)
}

/// ln Γ(a + m) − ln Γ(a) − m ln a, accurate for large `a` where the direct
/// difference cancels.
pub fn ln_gamma_shift(a: f64, m: f64) -> f64 {
    if a < SHIFT_ASYMPTOTIC_FROM {
        return ln_gamma(a + m) - ln_gamma(a) - m * a.ln();
    }
    let mut series = 0.0;
    for (k, c) in STIRLING.iter().enumerate() {
        series += c * inverse_power_difference(a, m, 2 * k as i32 + 1);
    }
    let x = m / a;
    (a + m - 0.5) * ln_1p_minus_identity(x) + (m - 0.5) * x + series
}

/// ln(1 + x) − x without cancellation for small x.
fn ln_1p_minus_identity(x: f64) -> f64 {
    if x.abs() > 1e-2 {
        return x.ln_1p() - x;
    }
    let mut term = x;
    let mut sum = 0.0;
    for k in 2..30 {
        term *= -x;
        let t = term / k as f64;
        sum += t;
        if t.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// ψ(a + m) − ψ(a).
pub fn digamma_shift(a: f64, m: f64) -> f64 {
    if a < SHIFT_ASYMPTOTIC_FROM {
        return digamma(a + m) - digamma(a);
    }
    let mut series = 0.0;
    for (k, b) in BERNOULLI.iter().enumerate() {
        series += b / (2.0 * (k + 1) as f64) * inverse_power_difference(a, m, 2 * (k as i32 + 1));
    }
    (m / a).ln_1p() + 0.5 * m / (a * (a + m)) - series
}

/// ψ₁(a + m) − ψ₁(a).
pub fn trigamma_shift(a: f64, m: f64) -> f64 {
    if a < SHIFT_ASYMPTOTIC_FROM {
        return trigamma(a + m) - trigamma(a);
    }
    let mut series = 0.0;
    for (k, b) in BERNOULLI.iter().enumerate() {
        series += b * inverse_power_difference(a, m, 2 * k as i32 + 3);
    }
    -m / (a * (a + m)) + 0.5 * inverse_power_difference(a, m, 2) + series
}

fn check_domain(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} requires x > 0, got {x}")))
    }
}

pub fn log_gamma_checked(x: f64) -> Result<f64> {
    check_domain("log_gamma", x)?;
    Ok(ln_gamma(x))
}

pub fn digamma_checked(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma(x))
}

pub fn trigamma_checked(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma(x))
}

/// ln n! via ln Γ(n + 1).
pub fn ln_factorial(n: u32) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}
