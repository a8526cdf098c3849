//! Maximiser of the mediation index `f*(w) = cor(Xw, A)·cor(Zw, Y)`.
//!
//! Whitening by `V` shows that any component of `V^{1/2}w` outside the span
//! of `V^{-1/2}a` and `V^{-1/2}z` only inflates the denominators, so the
//! maximiser lies in `span{p, q}`. On a V-orthonormal basis `e₁, e₂` of that
//! plane, `w(θ) = cos θ·e₁ + sin θ·e₂` has `wᵀVw = 1` and `f*` reduces to a
//! cheap periodic function of θ, searched on a grid and refined by golden
//! section.

use nalgebra::DVector;

use crate::baselines::{numerical_oracle, OracleConfig};
use crate::data::{path_coefficients, SufficientStats};
use crate::error::{MediationError, Result};
use crate::objective::{fstar_gradient, fstar_value, Objective};
use crate::primal::{orient, path_vectors, DEFAULT_RIDGE_SCALE};

const GRID_POINTS: usize = 720;
const THETA_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;
/// Relative tangent-gradient norm above which the planar optimum is not
/// trusted and the unrestricted optimiser takes over.
const STATIONARITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct MaxCorFit {
    /// Unit Euclidean norm, oriented so that `α ≥ 0`.
    pub w: DVector<f64>,
    pub fstar: f64,
    /// Angle in the plane of the path vectors, in `[0, π)`.
    pub theta: f64,
    /// False when the planar search failed its stationarity check and the
    /// multi-restart optimiser supplied `w`.
    pub converged: bool,
}

struct Plane {
    e1: DVector<f64>,
    e2: Option<DVector<f64>>,
    // wᵀa and wᵀz along each basis vector
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
    scale: f64,
    norm_a2: f64,
}

impl Plane {
    fn value(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let wa = c * self.a1 + s * self.a2;
        let wz = c * self.z1 + s * self.z2;
        wa * wz / (self.scale * (1.0 + wa * wa / self.norm_a2).sqrt())
    }

    fn direction(&self, theta: f64) -> DVector<f64> {
        match &self.e2 {
            Some(e2) => &self.e1 * theta.cos() + e2 * theta.sin(),
            None => self.e1.clone(),
        }
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..MAX_ITER {
        if hi - lo <= THETA_TOL {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Maximises `f*` for `p < n`.
pub fn maxcor_fit(s: &SufficientStats) -> Result<MaxCorFit> {
    let g = path_vectors(s, DEFAULT_RIDGE_SCALE)?;
    g.require_paths()?;
    if !(s.norm_y2 > 0.0) {
        return Err(MediationError::DegeneratePath("outcome path (z) is empty"));
    }
    let e1 = &g.p_vec / g.norm_p;
    let vq = &s.v * &g.q_vec;
    let mut r = &g.q_vec - &e1 * e1.dot(&vq);
    let r_norm = r.dot(&(&s.v * &r)).max(0.0).sqrt();
    let e2 = if r_norm > 1e-12 * g.norm_q {
        r /= r_norm;
        Some(r)
    } else {
        None
    };
    let plane = Plane {
        a1: e1.dot(&s.a),
        z1: e1.dot(&s.z),
        a2: e2.as_ref().map_or(0.0, |e| e.dot(&s.a)),
        z2: e2.as_ref().map_or(0.0, |e| e.dot(&s.z)),
        e1,
        e2,
        scale: (s.norm_a2 * s.norm_y2).sqrt(),
        norm_a2: s.norm_a2,
    };

    let theta = if plane.e2.is_none() {
        0.0
    } else {
        let step = std::f64::consts::PI / GRID_POINTS as f64;
        let best = (0..GRID_POINTS)
            .map(|k| (k, plane.value(k as f64 * step)))
            .fold((0, f64::NEG_INFINITY), |acc, kv| if kv.1 > acc.1 { kv } else { acc })
            .0;
        let centre = best as f64 * step;
        // f*(θ + π) = f*(θ), so the bracket may straddle 0
        golden_max(|t| plane.value(t), centre - step, centre + step).rem_euclid(std::f64::consts::PI)
    };

    let w = plane.direction(theta);
    let grad = fstar_gradient(&w, s);
    let f = fstar_value(&w, s);
    let stationary = grad.norm() * w.norm() <= STATIONARITY_TOL * f.abs().max(f64::MIN_POSITIVE);
    let (w, converged) = if stationary {
        (w, true)
    } else {
        let res = numerical_oracle(s, Objective::FStar, &OracleConfig { verify_gradient: false, ..OracleConfig::default() })?;
        (res.w, false)
    };
    let coef = path_coefficients(&w, s)?;
    let (w, _, _) = orient(w, coef);
    let fstar = fstar_value(&w, s);
    Ok(MaxCorFit {
        w,
        fstar,
        theta,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_sufficient_stats, evaluate_composite};
    use crate::primal::maxie_fit_primal;
    use crate::testutil::random_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_mediator() {
        let d = random_dataset(50, 1, 6);
        let s = compute_sufficient_stats(&d).unwrap();
        let fit = maxcor_fit(&s).unwrap();
        assert!((fit.w[0].abs() - 1.0).abs() < 1e-15);
        let summary = evaluate_composite(&fit.w, &d).unwrap();
        assert!((fit.fstar - summary.r_ma * summary.r_mperp_y).abs() < 1e-12);
    }

    #[test]
    fn collinear_paths_share_the_maxie_direction() {
        let mut s = compute_sufficient_stats(&random_dataset(100, 6, 8)).unwrap();
        s.z = &s.a * 3.0;
        let fit = maxcor_fit(&s).unwrap();
        let maxie = maxie_fit_primal(&s).unwrap();
        assert!((fit.w.dot(&maxie.w_plus).abs() - 1.0).abs() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn stored_value_matches_data_evaluation() {
        let d = random_dataset(200, 10, 17);
        let s = compute_sufficient_stats(&d).unwrap();
        let fit = maxcor_fit(&s).unwrap();
        let summary = evaluate_composite(&fit.w, &d).unwrap();
        assert!((fit.fstar - summary.fstar).abs() < 1e-9);
        assert!(fit.fstar.abs() <= 1.0);
        assert!(fit.converged);
        assert!((0.0..std::f64::consts::PI).contains(&fit.theta));
    }

    #[test]
    fn dominates_maxie_on_fstar_and_is_dominated_on_h() {
        for seed in 0..10 {
            let s = compute_sufficient_stats(&random_dataset(150, 8, seed)).unwrap();
            let fit = maxcor_fit(&s).unwrap();
            let maxie = maxie_fit_primal(&s).unwrap();
            assert!(fit.fstar >= fstar_value(&maxie.w_plus, &s) - 1e-9);
            let h_cor = path_coefficients(&fit.w, &s).unwrap().h;
            assert!(maxie.coef_plus.h >= h_cor - 1e-9);
        }
    }

    #[test]
    fn beats_random_directions() {
        let s = compute_sufficient_stats(&random_dataset(300, 12, 40)).unwrap();
        let fit = maxcor_fit(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let w = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
            assert!(fstar_value(&w, &s) <= fit.fstar + 1e-12);
        }
    }

    #[test]
    fn refuses_wide_data() {
        let s = compute_sufficient_stats(&random_dataset(10, 12, 1)).unwrap();
        assert!(matches!(maxcor_fit(&s), Err(MediationError::RegimeUnsupported(_))));
    }
}
