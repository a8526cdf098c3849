//! Single-path regression baselines and a multi-restart numerical optimiser
//! used to certify the closed forms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SufficientStats};
use crate::error::{MediationError, Result};
use crate::objective::Objective;
use crate::primal::DEFAULT_RIDGE_SCALE;

/// Cholesky of `m`, retrying with a trace-scaled ridge when `m` is singular.
fn factor_with_fallback(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let p = m.nrows();
    let ridge = DEFAULT_RIDGE_SCALE * m.trace().max(0.0) / p.max(1) as f64;
    let mut r = m.clone();
    for i in 0..p {
        r[(i, i)] += ridge;
    }
    Cholesky::new(r)
        .ok_or_else(|| MediationError::FactorisationFailure("XᵀX is not positive definite".into()))
}

fn ols(d: &Dataset, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if !d.is_centred() {
        return Err(MediationError::NotCentred);
    }
    if d.p() >= d.n() {
        return Err(MediationError::RegimeUnsupported(format!(
            "regression baselines need p < n (p = {}, n = {})",
            d.p(),
            d.n()
        )));
    }
    let x = d.mediators();
    let chol = factor_with_fallback(&x.tr_mul(x))?;
    let w = chol.solve(&x.tr_mul(rhs));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(MediationError::FactorisationFailure("OLS solve produced non-finite values".into()));
    }
    Ok(w)
}

/// `(XᵀX)⁻¹XᵀY`: best predictor of the outcome, ignoring the treatment.
pub fn reg_y_on_x(d: &Dataset) -> Result<DVector<f64>> {
    ols(d, d.outcome())
}

/// `(XᵀX)⁻¹XᵀA`: best predictor of the treatment, ignoring the outcome.
pub fn reg_a_on_x(d: &Dataset) -> Result<DVector<f64>> {
    ols(d, d.treatment())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖ ≤ grad_tol·|f|` on the unit sphere.
    pub grad_tol: f64,
    pub seed: u64,
    /// Compare analytic and finite-difference gradients at 5 random points.
    pub verify_gradient: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 1000,
            grad_tol: 1e-9,
            seed: 0,
            verify_gradient: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Best direction found, unit Euclidean norm.
    pub w: DVector<f64>,
    pub value: f64,
    /// Whether the best restart met the gradient tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Largest relative analytic-vs-finite-difference gradient discrepancy.
    pub gradient_check: Option<f64>,
}

const GRADIENT_CHECK_POINTS: usize = 5;

fn random_direction(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    loop {
        let w = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(&mut *rng));
        let norm = w.norm();
        if norm > 0.0 {
            return w / norm;
        }
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Largest relative error between the analytic gradient and central
/// differences at `points` random unit directions.
pub fn gradient_check(
    objective: Objective,
    s: &SufficientStats,
    points: usize,
    seed: u64,
) -> f64 {
    let mut rng = stream(seed, u64::MAX);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let w = random_direction(&mut rng, s.p);
        let analytic = objective.gradient(&w, s);
        let step = 1e-6;
        let numeric = DVector::from_fn(s.p, |i, _| {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += step;
            down[i] -= step;
            (objective.value(&up, s) - objective.value(&down, s)) / (2.0 * step)
        });
        let scale = analytic.norm().max(numeric.norm());
        if scale > 0.0 {
            worst = worst.max((&analytic - &numeric).norm() / scale);
        }
    }
    worst
}

struct Ascent {
    w: DVector<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

/// BFGS ascent on the unit sphere: tangent gradients, retraction by
/// normalisation, Armijo backtracking.
fn sphere_bfgs(objective: Objective, s: &SufficientStats, start: DVector<f64>, cfg: &OracleConfig) -> Ascent {
    let p = s.p;
    let mut w = start;
    let mut f = objective.value(&w, s);
    let mut g = objective.gradient(&w, s);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol * f.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let mut d = &h_inv * &g;
        d -= &w * w.dot(&d);
        let mut slope = g.dot(&d);
        if !(slope > 0.0) {
            h_inv.fill_with_identity();
            d = g.clone();
            slope = gnorm * gnorm;
        }
        let mut t = 1.0;
        // keep the first trial step on the scale of the sphere
        let dnorm = d.norm();
        if dnorm > 1.0 {
            t = 1.0 / dnorm;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial = (&w + &d * t).normalize();
            let ft = objective.value(&trial, s);
            if ft >= f + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, f_new)) = accepted else {
            // no ascent possible at working precision
            converged = gnorm <= 1e-6 * f.abs().max(f64::MIN_POSITIVE);
            break;
        };
        let g_new = objective.gradient(&w_new, s);
        let step = &w_new - &w;
        // curvature pair for minimising −f
        let y = &g - &g_new;
        let sy = step.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded
            h_inv -= (&hy * step.transpose() + &step * hy.transpose()) * rho;
            h_inv += &step * step.transpose() * (rho * rho * yhy + rho);
        }
        w = w_new;
        f = f_new;
        g = g_new;
    }
    Ascent {
        w,
        value: f,
        converged,
        iterations,
    }
}

/// Maximises `objective` over unit-norm directions from `cfg.restarts`
/// random starts and returns the best.
///
/// Each restart draws its start from an independent stream keyed by the
/// restart index, so the result does not depend on the thread count.
pub fn numerical_oracle(
    s: &SufficientStats,
    objective: Objective,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if s.p >= s.n {
        return Err(MediationError::RegimeUnsupported(format!(
            "numerical oracle needs p < n (p = {}, n = {})",
            s.p, s.n
        )));
    }
    if cfg.restarts == 0 {
        return Err(MediationError::InvalidArgument("oracle needs at least one restart".into()));
    }
    let runs: Vec<Ascent> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let start = random_direction(&mut stream(cfg.seed, r), s.p);
            sphere_bfgs(objective, s, start, cfg)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.value > best.value { run } else { best })
        .expect("at least one restart");
    let gradient_check = cfg
        .verify_gradient
        .then(|| gradient_check(objective, s, GRADIENT_CHECK_POINTS, cfg.seed));
    Ok(OracleResult {
        w: best.w,
        value: best.value,
        converged: best.converged,
        iterations: best.iterations,
        gradient_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_sufficient_stats;
    use crate::primal::maxie_fit_primal;
    use crate::testutil::random_dataset;

    #[test]
    fn single_mediator_ols() {
        let d = random_dataset(40, 1, 3);
        let x = d.mediators().column(0).into_owned();
        let w = reg_y_on_x(&d).unwrap();
        assert!((w[0] - x.dot(d.outcome()) / x.norm_squared()).abs() < 1e-12);
        let w = reg_a_on_x(&d).unwrap();
        assert!((w[0] - x.dot(d.treatment()) / x.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_outcome_gives_zero_weight() {
        let d = random_dataset(50, 3, 9);
        let x = d.mediators();
        // centred vector with the column space of X projected out
        let mut r = DVector::from_fn(50, |i, _| ((i * 7 % 11) as f64).sin());
        r.add_scalar_mut(-r.mean());
        let y = &r - x * x.tr_mul(x).lu().solve(&x.tr_mul(&r)).unwrap();
        let d = d.with_outcome(y).unwrap();
        assert!(reg_y_on_x(&d).unwrap().norm() < 1e-12);
    }

    #[test]
    fn ols_identity_through_sufficient_statistics() {
        // (XᵀX)⁻¹XᵀY = V_X⁻¹(z + τa)
        let d = random_dataset(200, 9, 14);
        let s = compute_sufficient_stats(&d).unwrap();
        let via_stats = s.gram().lu().solve(&s.x_t_y()).unwrap();
        let w = reg_y_on_x(&d).unwrap();
        assert!((&w - &via_stats).norm() <= 1e-9 * w.norm());
    }

    #[test]
    fn oracle_finds_known_optimum() {
        let d = random_dataset(120, 5, 31);
        let mut s = compute_sufficient_stats(&d).unwrap();
        s.z = &s.a * 3.0;
        let fit = maxie_fit_primal(&s).unwrap();
        let res = numerical_oracle(&s, Objective::H, &OracleConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.value - fit.path_strength).abs() <= 1e-8 * fit.path_strength);
    }

    #[test]
    fn oracle_matches_closed_form_and_checks_gradient() {
        let s = compute_sufficient_stats(&random_dataset(300, 12, 2)).unwrap();
        let fit = maxie_fit_primal(&s).unwrap();
        let res = numerical_oracle(&s, Objective::H, &OracleConfig::default()).unwrap();
        assert!((res.value - fit.coef_plus.h).abs() <= 1e-6 * fit.coef_plus.h.abs());
        assert!(res.gradient_check.unwrap() < 1e-5);
        assert!((res.w.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_deterministic() {
        let s = compute_sufficient_stats(&random_dataset(100, 6, 5)).unwrap();
        let cfg = OracleConfig { seed: 77, ..OracleConfig::default() };
        let a = numerical_oracle(&s, Objective::FStar, &cfg).unwrap();
        let b = numerical_oracle(&s, Objective::FStar, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_refuses_wide_data() {
        let s = compute_sufficient_stats(&random_dataset(8, 8, 1)).unwrap();
        assert!(matches!(
            numerical_oracle(&s, Objective::H, &OracleConfig::default()),
            Err(MediationError::RegimeUnsupported(_))
        ));
    }
}
