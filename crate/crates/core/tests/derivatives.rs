mod common;

use common::{max_abs, random_gamma, random_params, simulate};
use freqsev::distributions::Representation;
use freqsev::estimation::derivatives::{FrequencyObjective, SeverityObjective};
use freqsev::estimation::layout::{FreqLayout, SevLayout};
use freqsev::estimation::Objective;
use freqsev::simulate::PeriodSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

/// Largest relative deviation of the analytic gradient and Hessian from
/// central differences of the value and of the analytic gradient.
fn fd_errors(obj: &dyn Objective, u: &[f64]) -> (f64, f64) {
    let d = obj.dim();
    let ev = obj.evaluate(u);
    let mut fd_grad = vec![0.0; d];
    let mut fd_hess = vec![0.0; d * d];
    for i in 0..d {
        let h = STEP * u[i].abs().max(1.0);
        let mut p = u.to_vec();
        p[i] += h;
        let mut m = u.to_vec();
        m[i] -= h;
        fd_grad[i] = (obj.value(&p) - obj.value(&m)) / (2.0 * h);
        let gp = obj.evaluate(&p).grad;
        let gm = obj.evaluate(&m).grad;
        for r in 0..d {
            fd_hess[r * d + i] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    let g_err = max_abs(ev.grad.iter().zip(&fd_grad).map(|(a, b)| a - b)) / max_abs(fd_grad).max(1.0);
    let h_err = max_abs(ev.hess.iter().zip(&fd_hess).map(|(a, b)| a - b)) / max_abs(fd_hess.iter().copied()).max(1.0);
    (g_err, h_err)
}

fn check(rep: Representation) {
    let mut rng = ChaCha8Rng::seed_from_u64(11 + rep as u64);
    for case in 0..20 {
        let k = 1 + case % 3;
        let params = random_params(k, rep, &mut rng);
        let portfolio = simulate(&params, 40, PeriodSpec::Range { min: 1, max: 4 }, case as u64);
        let gamma = random_gamma(&portfolio, k, &mut rng);
        let fl = FreqLayout::new(&params);
        let freq = FrequencyObjective::new(&portfolio, &gamma, fl, 1e-2, false);
        let (g, h) = fd_errors(&freq, &fl.pack(&params));
        assert!(g < 1e-5 && h < 1e-4, "{rep} frequency case {case}: gradient {g:e}, Hessian {h:e}");
        let sl = SevLayout::new(&params);
        let sev = SeverityObjective::new(&portfolio, &gamma, sl, 1e-2, true);
        let (g, h) = fd_errors(&sev, &sl.pack(&params));
        assert!(g < 1e-5 && h < 1e-4, "{rep} severity case {case}: gradient {g:e}, Hessian {h:e}");
    }
}

#[test]
fn full_derivatives_match_finite_differences() {
    check(Representation::Full);
}

#[test]
fn sparse_derivatives_match_finite_differences() {
    check(Representation::Sparse);
}

#[test]
fn zero_weight_profile_has_pure_ridge_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = random_params(2, Representation::Full, &mut rng);
    let portfolio = simulate(&params, 30, PeriodSpec::Fixed(2), 1);
    let gamma: Vec<Vec<f64>> = portfolio
        .policies
        .iter()
        .map(|p| (0..p.periods.len()).flat_map(|_| [1.0, 0.0]).collect())
        .collect();
    let lambda = 0.3;
    let fl = FreqLayout::new(&params);
    let u = fl.pack(&params);
    let ev = FrequencyObjective::new(&portfolio, &gamma, fl, lambda, false).evaluate(&u);
    let mask = fl.penalized(false);
    for i in fl.delta(1).chain([fl.theta_a(1)]) {
        let ridge = if mask[i] { -2.0 * lambda * u[i] } else { 0.0 };
        assert_eq!(ev.grad[i], ridge);
    }
}
