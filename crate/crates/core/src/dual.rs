//! Kernel (dual) formulation for p ≥ n.
//!
//! Works with the n×n kernel `K_Z = Q_A X Xᵀ Q_A` instead of the singular
//! p×p residual Gram matrix. The dual path vectors `p̃ = K_Z⁺ K A` and
//! `q̃ = K_Z⁺ K Q_A Y` equal `Zp` and `Zq`, so their Euclidean angle is the
//! primal `V`-metric angle, and the optimal weight is recovered in the row
//! space of `Z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{symmetrise, Dataset, PathCoefficients, DEGENERACY_TOL};
use crate::error::{MediationError, Result};
use crate::primal::{orient, EffectType, MediatorFit, Regime};

/// Eigenvalues below `cutoff·λ_max` are treated as zero in `K_Z⁺`.
pub const DEFAULT_EIG_CUTOFF: f64 = 1e-10;

/// Dual sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStatistics {
    /// `K A`
    pub a_tilde: DVector<f64>,
    /// `K Q_A Y`
    pub z_tilde: DVector<f64>,
    /// `Q_A K Q_A`
    pub k_z: DMatrix<f64>,
    pub norm_a2: f64,
    /// `‖Q_A Y‖²`
    pub resid_y_norm2: f64,
    pub norm_y2: f64,
}

/// Primal or dual, whichever is feasible: primal iff p < n.
pub fn select_regime(n: usize, p: usize) -> Regime {
    if p < n {
        Regime::Primal
    } else {
        Regime::Dual
    }
}

/// Forms `K = XXᵀ` once and projects it on both sides.
pub fn dual_statistics(d: &Dataset) -> Result<DualStatistics> {
    if !d.is_centred() {
        return Err(MediationError::NotCentred);
    }
    let x = d.mediators();
    let a = d.treatment();
    let norm_a2 = a.norm_squared();
    if norm_a2 <= 0.0 {
        return Err(MediationError::DegenerateTreatment);
    }
    let k = x * x.transpose();
    let a_tilde = &k * a;
    let resid_y = d.outcome() - a * (a.dot(d.outcome()) / norm_a2);
    let z_tilde = &k * &resid_y;
    // Q_A K Q_A = K − (kaAᵀ + Akaᵀ)/‖A‖² + (AᵀKA)AAᵀ/‖A‖⁴
    let aka = a.dot(&a_tilde);
    let mut k_z = k;
    k_z.ger(-1.0 / norm_a2, &a_tilde, a, 1.0);
    k_z.ger(-1.0 / norm_a2, a, &a_tilde, 1.0);
    k_z.ger(aka / (norm_a2 * norm_a2), a, a, 1.0);
    symmetrise(&mut k_z);
    Ok(DualStatistics {
        a_tilde,
        z_tilde,
        k_z,
        norm_a2,
        resid_y_norm2: resid_y.norm_squared(),
        norm_y2: d.outcome().norm_squared(),
    })
}

/// Pseudoinverse of a symmetric PSD matrix via its eigendecomposition.
#[derive(Debug, Clone)]
pub struct KernelPseudoInverse {
    eigenvectors: DMatrix<f64>,
    inv_eigenvalues: DVector<f64>,
    rank: usize,
}

impl KernelPseudoInverse {
    pub fn new(k: &DMatrix<f64>, cutoff: f64) -> Result<Self> {
        let eig = SymmetricEigen::new(k.clone());
        let lambda_max = eig.eigenvalues.max();
        if !(lambda_max > 0.0) {
            return Err(MediationError::ZeroKernel);
        }
        let threshold = cutoff * lambda_max;
        let kept: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > threshold)
            .collect();
        if kept.is_empty() {
            return Err(MediationError::ZeroKernel);
        }
        let eigenvectors = eig.eigenvectors.select_columns(&kept);
        let inv_eigenvalues =
            DVector::from_iterator(kept.len(), kept.iter().map(|&i| 1.0 / eig.eigenvalues[i]));
        Ok(Self {
            eigenvectors,
            inv_eigenvalues,
            rank: kept.len(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let coords = self.eigenvectors.tr_mul(v).component_mul(&self.inv_eigenvalues);
        &self.eigenvectors * coords
    }

    /// Orthogonal projection onto the column space.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * self.eigenvectors.tr_mul(v)
    }
}

/// Dual path vectors and the angle between them.
#[derive(Debug, Clone)]
pub struct DualGeometry {
    pub a_tilde: DVector<f64>,
    pub z_tilde: DVector<f64>,
    /// `K_Z⁺ ã`
    pub p_tilde: DVector<f64>,
    /// `K_Z⁺ z̃`
    pub q_tilde: DVector<f64>,
    /// Euclidean cosine between `p̃` and `q̃`; 0 when either is empty
    pub cos_phi: f64,
    pub rank_kz: usize,
    pub eig_cutoff: f64,
    pinv: KernelPseudoInverse,
}

impl DualGeometry {
    pub fn norm_p(&self) -> f64 {
        self.p_tilde.norm()
    }

    pub fn norm_q(&self) -> f64 {
        self.q_tilde.norm()
    }

    pub fn pseudo_inverse(&self) -> &KernelPseudoInverse {
        &self.pinv
    }

    pub fn has_empty_path(&self) -> bool {
        self.cos_phi_defined().is_none()
    }

    fn cos_phi_defined(&self) -> Option<f64> {
        let (np, nq) = (self.norm_p(), self.norm_q());
        (np > 0.0 && nq > 0.0).then(|| (self.p_tilde.dot(&self.q_tilde) / (np * nq)).clamp(-1.0, 1.0))
    }
}

/// Eigendecomposes `K_Z` and applies its pseudoinverse to `ã` and `z̃`.
pub fn dual_path_vectors(stats: &DualStatistics, eig_cutoff: f64) -> Result<DualGeometry> {
    let pinv = KernelPseudoInverse::new(&stats.k_z, eig_cutoff)?;
    let mut p_tilde = pinv.apply(&stats.a_tilde);
    let mut q_tilde = pinv.apply(&stats.z_tilde);
    // An input with no signal along a path leaves only rounding noise in the
    // projected statistic; treat it as exactly empty.
    let tol2 = DEGENERACY_TOL * DEGENERACY_TOL;
    let scale2 = stats.k_z.trace().max(0.0).powi(2);
    if !(pinv.project(&stats.a_tilde).norm_squared() > tol2 * scale2 * stats.norm_a2) {
        p_tilde.fill(0.0);
    }
    if !(stats.resid_y_norm2 > tol2 * stats.norm_y2)
        || !(pinv.project(&stats.z_tilde).norm_squared() > tol2 * scale2 * stats.resid_y_norm2)
    {
        q_tilde.fill(0.0);
    }
    let mut geom = DualGeometry {
        a_tilde: stats.a_tilde.clone(),
        z_tilde: stats.z_tilde.clone(),
        p_tilde,
        q_tilde,
        cos_phi: 0.0,
        rank_kz: pinv.rank(),
        eig_cutoff,
        pinv,
    };
    geom.cos_phi = geom.cos_phi_defined().unwrap_or(0.0);
    Ok(geom)
}

/// MaxIE through the kernel; weights recovered as `Zᵀ K_Z⁺ (p̂ ± q̂)`.
pub fn maxie_fit_dual(d: &Dataset) -> Result<MediatorFit> {
    let stats = dual_statistics(d)?;
    let geom = dual_path_vectors(&stats, DEFAULT_EIG_CUTOFF)?;
    maxie_fit_dual_from_geometry(d, &geom)
}

pub fn maxie_fit_dual_from_geometry(d: &Dataset, geom: &DualGeometry) -> Result<MediatorFit> {
    let (np, nq) = (geom.norm_p(), geom.norm_q());
    if np == 0.0 {
        return Err(MediationError::DegeneratePath("treatment path (ã) is empty"));
    }
    if nq == 0.0 {
        return Err(MediationError::DegeneratePath("outcome path (z̃) is empty"));
    }
    let unit_p = &geom.p_tilde / np;
    let unit_q = &geom.q_tilde / nq;
    let a = d.treatment();
    let norm_a2 = a.norm_squared();
    let tau = a.dot(d.outcome()) / norm_a2;
    let dof = (d.n() - 1) as f64;
    let tau_tol = DEGENERACY_TOL * (d.outcome().norm_squared() / dof).sqrt() / (norm_a2 / dof).sqrt();

    let solve = |sign: f64| -> Result<(DVector<f64>, PathCoefficients, EffectType)> {
        if 1.0 + sign * geom.cos_phi <= 1e-14 {
            return Ok((
                DVector::zeros(d.p()),
                PathCoefficients::zero(tau, tau_tol),
                EffectType::Degenerate,
            ));
        }
        let b = &unit_p + &unit_q * sign;
        let mut u = geom.pinv.apply(&b);
        // Zᵀu = Xᵀ Q_A u
        u -= a * (a.dot(&u) / norm_a2);
        let w = d.mediators().tr_mul(&u);
        let coef = coefficients_from_data(&w, d, tau, tau_tol)?;
        Ok(orient(w, coef))
    };
    let (w_plus, coef_plus, effect_plus) = solve(1.0)?;
    let (w_minus, coef_minus, effect_minus) = solve(-1.0)?;
    Ok(MediatorFit {
        w_plus,
        w_minus,
        coef_plus,
        coef_minus,
        cos_phi: geom.cos_phi,
        path_strength: np * nq / norm_a2,
        regime: Regime::Dual,
        effect_plus,
        effect_minus,
    })
}

/// `α`, `β` of `M = Xw` computed from the raw data without forming `V`.
fn coefficients_from_data(
    w: &DVector<f64>,
    d: &Dataset,
    tau: f64,
    tau_tol: f64,
) -> Result<PathCoefficients> {
    let a = d.treatment();
    let norm_a2 = a.norm_squared();
    let m = d.mediators() * w;
    let m_t_a = m.dot(a);
    let m_perp = &m - a * (m_t_a / norm_a2);
    let quad = m_perp.norm_squared();
    if !(quad > DEGENERACY_TOL * m.norm_squared()) {
        return Err(MediationError::DegenerateComposite);
    }
    Ok(PathCoefficients::new(
        m_t_a / norm_a2,
        m_perp.dot(d.outcome()) / quad,
        tau,
        tau_tol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_sufficient_stats, evaluate_composite};
    use crate::primal::{maxie_fit_primal, path_vectors};
    use crate::testutil::random_dataset;

    #[test]
    fn regime_selection() {
        assert_eq!(select_regime(200, 20), Regime::Primal);
        assert_eq!(select_regime(40, 200), Regime::Dual);
        assert_eq!(select_regime(100, 100), Regime::Dual);
    }

    #[test]
    fn diagonal_pseudo_inverse() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let pinv = KernelPseudoInverse::new(&k, DEFAULT_EIG_CUTOFF).unwrap();
        assert_eq!(pinv.rank(), 1);
        let p = pinv.apply(&DVector::from_vec(vec![4.0, 0.0]));
        assert!((p[0] - 2.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        // null-space component is annihilated
        let p2 = pinv.apply(&DVector::from_vec(vec![4.0, 3.0]));
        assert!((p2 - p).norm() < 1e-15);
    }

    #[test]
    fn zero_kernel_is_an_error() {
        let k = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(KernelPseudoInverse::new(&k, DEFAULT_EIG_CUTOFF), Err(MediationError::ZeroKernel)));
    }

    #[test]
    fn identity_kernel() {
        // orthonormal rows give K = I
        let a = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.0, -2.0]);
        let y = DVector::from_vec(vec![0.5, 0.1, -0.3, 0.2, -0.5]);
        let d = Dataset::new(DMatrix::identity(5, 5), a.clone(), y.clone())
            .unwrap()
            .assume_centred();
        let st = dual_statistics(&d).unwrap();
        let resid = &y - &a * (a.dot(&y) / a.norm_squared());
        assert!((&st.a_tilde - &a).norm() < 1e-15);
        assert!((&st.z_tilde - &resid).norm() < 1e-15);
    }

    #[test]
    fn empty_outcome_path_is_detected() {
        let d = random_dataset(20, 60, 5);
        let echo = d.with_outcome(d.treatment() * 2.0).unwrap();
        let g = dual_path_vectors(&dual_statistics(&echo).unwrap(), DEFAULT_EIG_CUTOFF).unwrap();
        assert!(g.has_empty_path());
        assert_eq!(g.cos_phi, 0.0);
        assert!(matches!(maxie_fit_dual(&echo), Err(MediationError::DegeneratePath(_))));
    }

    #[test]
    fn projected_kernel_annihilates_treatment() {
        let d = random_dataset(20, 50, 3);
        let st = dual_statistics(&d).unwrap();
        let ka = &st.k_z * d.treatment();
        assert!(ka.norm() < 1e-10 * st.k_z.norm() * d.treatment().norm());
    }

    #[test]
    fn kernel_matches_explicit_projection() {
        let d = random_dataset(30, 100, 17);
        let st = dual_statistics(&d).unwrap();
        let a = d.treatment();
        let z = d.mediators() - a * (a.transpose() * d.mediators()) / a.norm_squared();
        let diff = (&st.k_z - &z * z.transpose()).abs().max();
        assert!(diff <= 1e-9, "diff {diff}");
    }

    #[test]
    fn dual_angle_equals_primal_angle() {
        for seed in 0..10 {
            let d = random_dataset(60, 8, seed);
            let s = compute_sufficient_stats(&d).unwrap();
            let primal = path_vectors(&s, 0.0).unwrap();
            let dual = dual_path_vectors(&dual_statistics(&d).unwrap(), DEFAULT_EIG_CUTOFF).unwrap();
            assert!((primal.cos_phi - dual.cos_phi).abs() <= 1e-9);
            assert!((dual.norm_p() - primal.norm_p).abs() <= 1e-8 * primal.norm_p);
        }
    }

    #[test]
    fn dual_path_vectors_lie_in_kernel_column_space() {
        let d = random_dataset(30, 90, 2);
        let st = dual_statistics(&d).unwrap();
        let g = dual_path_vectors(&st, DEFAULT_EIG_CUTOFF).unwrap();
        let kk = &st.k_z * g.pseudo_inverse().apply(&g.p_tilde);
        assert!((&kk - &g.p_tilde).norm() <= 1e-8 * g.p_tilde.norm());
        assert!(g.rank_kz == 28 || g.rank_kz == 29, "rank {}", g.rank_kz);
    }

    #[test]
    fn recovered_weights_reproduce_closed_form_values() {
        for seed in 0..4 {
            let d = random_dataset(40, 200, 100 + seed);
            let fit = maxie_fit_dual(&d).unwrap();
            let plus = fit.path_strength * (1.0 + fit.cos_phi) / 2.0;
            let minus = -fit.path_strength * (1.0 - fit.cos_phi) / 2.0;
            let summary = evaluate_composite(&fit.w_plus, &d).unwrap();
            assert!((summary.h - plus).abs() <= 1e-6 * plus.abs(), "{} vs {plus}", summary.h);
            assert!((fit.coef_minus.h - minus).abs() <= 1e-6 * minus.abs());
            assert!(fit.coef_plus.alpha >= 0.0 && fit.coef_minus.alpha >= 0.0);
        }
    }

    #[test]
    fn dual_matches_primal_fit_when_tall() {
        let d = random_dataset(80, 10, 4);
        let primal = maxie_fit_primal(&compute_sufficient_stats(&d).unwrap()).unwrap();
        let dual = maxie_fit_dual(&d).unwrap();
        assert!((primal.coef_plus.h - dual.coef_plus.h).abs() < 1e-7 * primal.coef_plus.h.abs());
        assert!((&primal.w_plus - &dual.w_plus).norm() < 1e-6);
    }

    #[test]
    fn negating_outcome_swaps_objectives() {
        let d = random_dataset(30, 120, 9);
        let fit = maxie_fit_dual(&d).unwrap();
        let neg = maxie_fit_dual(&d.negate_outcome()).unwrap();
        assert!((neg.coef_plus.h + fit.coef_minus.h).abs() < 1e-8 * fit.path_strength);
        assert!((neg.coef_minus.h + fit.coef_plus.h).abs() < 1e-8 * fit.path_strength);
    }
}
