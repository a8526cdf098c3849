//! Closed-form MaxIE solver for the classical regime (p < n).
//!
//! In the `V`-inner product the objective factorises into a data-only path
//! strength `‖p‖_V‖q‖_V/‖A‖²` times the alignment
//! `cos∠(w,p)·cos∠(w,q)`, which is maximised by the bisector of the two path
//! vectors `p = V⁻¹a` and `q = V⁻¹z`. The suppression optimum is the
//! bisector of `p` and `−q`.

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{path_coefficients, tau_tolerance, PathCoefficients, SufficientStats, DEGENERACY_TOL};
use crate::error::{MediationError, Result};

/// Ridge `ε = scale·trace(V)/p` added to `V` before factorising.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 2;

/// `1 ± cos φ` below this and the corresponding bisector vanishes.
const BISECTOR_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectType {
    Concordant,
    Suppression,
    Degenerate,
}

/// Path vectors and their `V`-metric geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    /// `(V + εI)⁻¹ a`
    pub p_vec: DVector<f64>,
    /// `(V + εI)⁻¹ z`
    pub q_vec: DVector<f64>,
    /// `√(aᵀp)`, zero when the treatment path is empty
    pub norm_p: f64,
    /// `√(zᵀq)`, zero when the outcome path is empty
    pub norm_q: f64,
    /// `aᵀq/(‖p‖_V‖q‖_V)`; defined as 0 when either path is empty
    pub cos_phi: f64,
    pub ridge: f64,
}

impl PathGeometry {
    pub fn has_empty_path(&self) -> bool {
        self.norm_p == 0.0 || self.norm_q == 0.0
    }

    pub fn path_strength(&self, norm_a2: f64) -> f64 {
        self.norm_p * self.norm_q / norm_a2
    }

    pub(crate) fn require_paths(&self) -> Result<()> {
        if self.norm_p == 0.0 {
            Err(MediationError::DegeneratePath("treatment path (a) is empty"))
        } else if self.norm_q == 0.0 {
            Err(MediationError::DegeneratePath("outcome path (z) is empty"))
        } else {
            Ok(())
        }
    }
}

/// Optimal concordant and suppression composites.
#[derive(Debug, Clone, PartialEq)]
pub struct MediatorFit {
    /// Concordant weight, unit Euclidean norm (zero when degenerate).
    pub w_plus: DVector<f64>,
    /// Suppression weight, unit Euclidean norm (zero when degenerate).
    pub w_minus: DVector<f64>,
    pub coef_plus: PathCoefficients,
    pub coef_minus: PathCoefficients,
    pub cos_phi: f64,
    /// `‖p‖_V‖q‖_V/‖A‖²`
    pub path_strength: f64,
    pub regime: Regime,
    pub effect_plus: EffectType,
    pub effect_minus: EffectType,
}

/// True when the treatment (resp. outcome) cross-product carries no signal
/// relative to the scale of the data.
pub(crate) fn empty_paths(s: &SufficientStats) -> (bool, bool) {
    let trace_v = s.trace_v().max(0.0);
    let a2 = s.a.norm_squared();
    let trace_x = trace_v + a2 / s.norm_a2;
    let tol2 = DEGENERACY_TOL * DEGENERACY_TOL;
    let a_empty = !(a2 > tol2 * s.norm_a2 * trace_x);
    let z_empty = !(s.z.norm_squared() > tol2 * s.norm_y2.max(0.0) * trace_v);
    (a_empty, z_empty)
}

/// Solves `(V + εI)x = a` and `(V + εI)x = z` with one Cholesky factorisation.
pub fn path_vectors(s: &SufficientStats, ridge_scale: f64) -> Result<PathGeometry> {
    if s.p >= s.n {
        return Err(MediationError::RegimeUnsupported(format!(
            "primal solver needs p < n (p = {}, n = {}); use the dual regime",
            s.p, s.n
        )));
    }
    if !(ridge_scale >= 0.0) {
        return Err(MediationError::InvalidArgument(format!(
            "ridge scale must be non-negative, got {ridge_scale}"
        )));
    }
    let ridge = ridge_scale * s.trace_v().max(0.0) / s.p as f64;
    let mut m = s.v.clone();
    for i in 0..s.p {
        m[(i, i)] += ridge;
    }
    let chol = Cholesky::new(m).ok_or_else(|| {
        MediationError::FactorisationFailure("V + εI is not positive definite".into())
    })?;
    // iterative refinement towards V⁻¹ rather than (V + εI)⁻¹; contractive
    // with factor ε/(λ + ε) per step, so it is safe for near-singular V too
    let refine = |rhs: &DVector<f64>| {
        let mut x = chol.solve(rhs);
        if ridge > 0.0 {
            for _ in 0..REFINEMENT_STEPS {
                let r = rhs - &s.v * &x;
                x += chol.solve(&r);
            }
        }
        x
    };
    let p_vec = refine(&s.a);
    let q_vec = refine(&s.z);
    if p_vec.iter().chain(q_vec.iter()).any(|v| !v.is_finite()) {
        return Err(MediationError::FactorisationFailure(
            "back-substitution produced non-finite values".into(),
        ));
    }
    let (a_empty, z_empty) = empty_paths(s);
    // norms in V itself rather than aᵀp, so the ridge does not bias the
    // bisector geometry
    let vp = &s.v * &p_vec;
    let norm_p = if a_empty { 0.0 } else { p_vec.dot(&vp).max(0.0).sqrt() };
    let norm_q = if z_empty { 0.0 } else { q_vec.dot(&(&s.v * &q_vec)).max(0.0).sqrt() };
    let cos_phi = if norm_p > 0.0 && norm_q > 0.0 {
        (vp.dot(&q_vec) / (norm_p * norm_q)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(PathGeometry {
        p_vec,
        q_vec,
        norm_p,
        norm_q,
        cos_phi,
        ridge,
    })
}

/// Closed-form concordant and suppression optima for p < n.
pub fn maxie_fit_primal(s: &SufficientStats) -> Result<MediatorFit> {
    let g = path_vectors(s, DEFAULT_RIDGE_SCALE)?;
    maxie_fit_from_geometry(s, &g)
}

/// Bisector step given precomputed path vectors.
pub fn maxie_fit_from_geometry(s: &SufficientStats, g: &PathGeometry) -> Result<MediatorFit> {
    g.require_paths()?;
    let unit_p = &g.p_vec / g.norm_p;
    let unit_q = &g.q_vec / g.norm_q;
    let tau = s.total_effect();
    let tau_tol = tau_tolerance(s);

    let solve = |sign: f64| -> Result<(DVector<f64>, PathCoefficients, EffectType)> {
        if 1.0 + sign * g.cos_phi <= BISECTOR_TOL {
            return Ok((
                DVector::zeros(s.p),
                PathCoefficients::zero(tau, tau_tol),
                EffectType::Degenerate,
            ));
        }
        let w = &unit_p + &unit_q * sign;
        let coef = path_coefficients(&w, s)?;
        Ok(orient(w, coef))
    };
    let (w_plus, coef_plus, effect_plus) = solve(1.0)?;
    let (w_minus, coef_minus, effect_minus) = solve(-1.0)?;

    Ok(MediatorFit {
        w_plus,
        w_minus,
        coef_plus,
        coef_minus,
        cos_phi: g.cos_phi,
        path_strength: g.path_strength(s.norm_a2),
        regime: Regime::Primal,
        effect_plus,
        effect_minus,
    })
}

/// Flips `w` so that `α ≥ 0` (ties broken by `β ≥ 0`), normalises it to unit
/// Euclidean length and classifies the effect by the sign of `β`.
pub(crate) fn orient(
    w: DVector<f64>,
    coef: PathCoefficients,
) -> (DVector<f64>, PathCoefficients, EffectType) {
    let sign = if coef.alpha != 0.0 {
        coef.alpha.signum()
    } else if coef.beta != 0.0 {
        coef.beta.signum()
    } else {
        return (w.normalize(), coef, EffectType::Degenerate);
    };
    let coef = PathCoefficients {
        alpha: sign * coef.alpha,
        beta: sign * coef.beta,
        ..coef
    };
    let effect = if coef.beta > 0.0 {
        EffectType::Concordant
    } else if coef.beta < 0.0 {
        EffectType::Suppression
    } else {
        EffectType::Degenerate
    };
    ((w * sign).normalize(), coef, effect)
}

/// `cos∠_V(w,p)·cos∠_V(w,q)`; `h(w)` equals path strength times this.
pub fn alignment(w: &DVector<f64>, g: &PathGeometry, s: &SufficientStats) -> Result<f64> {
    g.require_paths()?;
    let quad = w.dot(&(&s.v * w));
    if !(quad > s.composite_tolerance(w)) {
        return Err(MediationError::DegenerateComposite);
    }
    Ok(w.dot(&s.a) * w.dot(&s.z) / (quad * g.norm_p * g.norm_q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_sufficient_stats;
    use crate::testutil::random_dataset;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn stats_with(v: DMatrix<f64>, a: DVector<f64>, z: DVector<f64>) -> SufficientStats {
        let p = a.len();
        SufficientStats {
            a,
            z,
            v,
            norm_a2: 4.0,
            a_t_y: 1.0,
            norm_y2: 9.0,
            n: p + 50,
            p,
        }
    }

    fn random_spd(p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(p + 5, p, |_, _| StandardNormal.sample(&mut rng));
        b.tr_mul(&b)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn identity_metric_returns_raw_statistics() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let z = DVector::from_vec(vec![0.3, 0.7, -1.1]);
        let s = stats_with(DMatrix::identity(3, 3), a.clone(), z.clone());
        let g = path_vectors(&s, DEFAULT_RIDGE_SCALE).unwrap();
        assert!((&g.p_vec - &a).abs().max() < 1e-9);
        assert!((&g.q_vec - &z).abs().max() < 1e-9);
    }

    #[test]
    fn proportional_paths() {
        let v = random_spd(4, 1);
        let a = DVector::from_vec(vec![1.0, 0.5, -0.3, 2.0]);
        let s = stats_with(v, a.clone(), &a * 3.0);
        let g = path_vectors(&s, DEFAULT_RIDGE_SCALE).unwrap();
        assert!((&g.q_vec - &g.p_vec * 3.0).abs().max() < 1e-12 * g.q_vec.abs().max());
        assert!((g.cos_phi - 1.0).abs() < 1e-12);

        let fit = maxie_fit_from_geometry(&s, &g).unwrap();
        assert!(rel(fit.coef_plus.h, fit.path_strength) < 1e-10);
        let cos_wp = fit.w_plus.dot(&g.p_vec) / (fit.w_plus.norm() * g.p_vec.norm());
        assert!((cos_wp - 1.0).abs() < 1e-10);
        assert_eq!(fit.effect_minus, EffectType::Degenerate);
        assert_eq!(fit.coef_minus.h, 0.0);
    }

    #[test]
    fn orthogonal_paths_halve_the_alignment() {
        let v = random_spd(5, 2);
        let a = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.8, 0.1]);
        let p = v.clone().cholesky().unwrap().solve(&a);
        let mut q = DVector::from_vec(vec![0.2, 1.0, -0.4, 0.3, 0.9]);
        q -= &p * (a.dot(&q) / a.dot(&p));
        let z = &v * &q;
        let s = stats_with(v, a, z);
        let fit = maxie_fit_primal(&s).unwrap();
        assert!(fit.cos_phi.abs() < 1e-9);
        assert!(rel(fit.coef_plus.h, fit.path_strength / 2.0) < 1e-8);
        assert!(rel(fit.coef_minus.h, -fit.path_strength / 2.0) < 1e-8);
        assert_eq!(fit.effect_plus, EffectType::Concordant);
        assert_eq!(fit.effect_minus, EffectType::Suppression);
    }

    #[test]
    fn path_vector_matches_dense_lu_solve() {
        let d = random_dataset(100, 10, 5);
        let s = compute_sufficient_stats(&d).unwrap();
        let g = path_vectors(&s, 0.0).unwrap();
        assert_eq!(g.ridge, 0.0);
        let lu = s.v.clone().lu();
        let p_ref = lu.solve(&s.a).unwrap();
        assert!((&g.p_vec - &p_ref).norm() <= 1e-9 * p_ref.norm());
    }

    #[test]
    fn primal_refuses_wide_data() {
        let d = random_dataset(10, 10, 1);
        let s = compute_sufficient_stats(&d).unwrap();
        assert!(matches!(
            path_vectors(&s, DEFAULT_RIDGE_SCALE),
            Err(MediationError::RegimeUnsupported(_))
        ));
    }

    #[test]
    fn empty_treatment_path_is_degenerate() {
        let v = random_spd(3, 9);
        let s = stats_with(v, DVector::zeros(3), DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let g = path_vectors(&s, DEFAULT_RIDGE_SCALE).unwrap();
        assert_eq!(g.norm_p, 0.0);
        assert_eq!(g.cos_phi, 0.0);
        assert!(matches!(
            maxie_fit_from_geometry(&s, &g),
            Err(MediationError::DegeneratePath(_))
        ));
    }

    #[test]
    fn closed_form_dominates_random_directions() {
        let d = random_dataset(500, 20, 8);
        let s = compute_sufficient_stats(&d).unwrap();
        let fit = maxie_fit_primal(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let w = DVector::from_fn(20, |_, _| StandardNormal.sample(&mut rng)).normalize();
            let c = path_coefficients(&w, &s).unwrap();
            assert!(c.h <= fit.coef_plus.h * (1.0 + 1e-12));
            assert!(c.h >= fit.coef_minus.h * (1.0 + 1e-12));
        }
    }

    #[test]
    fn alignment_special_directions() {
        let d = random_dataset(80, 6, 12);
        let s = compute_sufficient_stats(&d).unwrap();
        let g = path_vectors(&s, DEFAULT_RIDGE_SCALE).unwrap();
        let fit = maxie_fit_from_geometry(&s, &g).unwrap();

        let at_bisector = alignment(&fit.w_plus, &g, &s).unwrap();
        assert!((at_bisector - (1.0 + g.cos_phi) / 2.0).abs() < 1e-10);
        let at_p = alignment(&g.p_vec, &g, &s).unwrap();
        assert!((at_p - g.cos_phi).abs() < 1e-10);

        // w with wᵀa = wᵀz = 0 is V-orthogonal to both path vectors
        let mut w = DVector::from_fn(6, |i, _| (i as f64 * 0.7).sin() + 0.2);
        let ua = s.a.normalize();
        let mut uz = &s.z - &ua * ua.dot(&s.z);
        uz.normalize_mut();
        w -= &ua * ua.dot(&w);
        w -= &uz * uz.dot(&w);
        assert!(alignment(&w, &g, &s).unwrap().abs() < 1e-10);

        let h = path_coefficients(&fit.w_minus, &s).unwrap().h;
        let via_alignment = fit.path_strength * alignment(&fit.w_minus, &g, &s).unwrap();
        assert!(rel(h, via_alignment) < 1e-8);
    }

    #[test]
    fn orientation_makes_alpha_non_negative() {
        let d = random_dataset(60, 4, 3);
        let s = compute_sufficient_stats(&d).unwrap();
        let fit = maxie_fit_primal(&s).unwrap();
        assert!(fit.coef_plus.alpha >= 0.0 && fit.coef_minus.alpha >= 0.0);
        assert!((fit.w_plus.norm() - 1.0).abs() < 1e-12);
        assert!((fit.w_minus.norm() - 1.0).abs() < 1e-12);
        assert_eq!(
            fit.effect_plus,
            if fit.coef_plus.beta > 0.0 { EffectType::Concordant } else { EffectType::Suppression }
        );
    }

    #[test]
    fn orientation_tie_break_uses_beta() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let coef = PathCoefficients::new(0.0, -2.0, 1.0, 0.0);
        let (w2, c2, e) = orient(w.clone(), coef);
        assert_eq!(c2.beta, 2.0);
        assert!((w2 + w.normalize()).norm() < 1e-15);
        assert_eq!(e, EffectType::Concordant);
        let (_, _, e0) = orient(w, PathCoefficients::new(0.0, 0.0, 1.0, 0.0));
        assert_eq!(e0, EffectType::Degenerate);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::data::compute_sufficient_stats;
    use crate::testutil::random_dataset;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn bisector_has_equal_angles(seed in 0u64..10_000, p in 2usize..15) {
            let s = compute_sufficient_stats(&random_dataset(4 * p + 10, p, seed)).unwrap();
            let g = path_vectors(&s, DEFAULT_RIDGE_SCALE).unwrap();
            prop_assume!(g.cos_phi > -1.0 + 1e-6);
            let fit = maxie_fit_from_geometry(&s, &g).unwrap();
            let w = &fit.w_plus;
            let wv = w.dot(&(&s.v * w)).sqrt();
            let cos_p = w.dot(&s.a) / (wv * g.norm_p);
            let cos_q = w.dot(&s.z) / (wv * g.norm_q);
            prop_assert!((cos_p - cos_q).abs() < 1e-8);
        }

        #[test]
        fn optimum_values_follow_closed_form(seed in 0u64..10_000, p in 1usize..15) {
            let s = compute_sufficient_stats(&random_dataset(4 * p + 10, p, seed)).unwrap();
            let fit = maxie_fit_primal(&s).unwrap();
            let plus = fit.path_strength * (1.0 + fit.cos_phi) / 2.0;
            let minus = -fit.path_strength * (1.0 - fit.cos_phi) / 2.0;
            prop_assert!((fit.coef_plus.h - plus).abs() <= (1e-8 * plus.abs()).max(1e-12 * fit.path_strength));
            prop_assert!((fit.coef_minus.h - minus).abs() <= (1e-8 * minus.abs()).max(1e-12 * fit.path_strength));
            // gain over the single-path extremes
            let gain = fit.coef_plus.h / fit.path_strength - fit.cos_phi;
            prop_assert!((gain - (1.0 - fit.cos_phi) / 2.0).abs() < 1e-8);
            prop_assert!(gain >= -1e-12);
        }

        #[test]
        fn suppression_mirrors_concordant(seed in 0u64..10_000, p in 2usize..12) {
            let d = random_dataset(5 * p + 10, p, seed);
            let s = compute_sufficient_stats(&d).unwrap();
            let fit = maxie_fit_primal(&s).unwrap();
            let flipped = maxie_fit_primal(&compute_sufficient_stats(&d.negate_outcome()).unwrap()).unwrap();
            let scale = fit.path_strength;
            prop_assert!((flipped.coef_plus.h + fit.coef_minus.h).abs() <= 1e-10 * scale);
            prop_assert!((flipped.coef_minus.h + fit.coef_plus.h).abs() <= 1e-10 * scale);
        }
    }
}
