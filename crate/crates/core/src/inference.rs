//! Cosine global test, intersection–union baseline and analytic power.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SufficientStats;
use crate::error::{MediationError, Result};
use crate::primal::Regime;
use crate::special::{beta_cdf, f_sf, ks_p_value, ks_statistic, noncentral_t_cdf, t_cdf, t_quantile};

/// Slack allowed on `|cos φ| ≤ 1` before the input is rejected.
const COSINE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CosineTest {
    pub cos_phi: f64,
    #[serde(rename = "T")]
    pub t_stat: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// Upper tail `P(t ≥ T)`: evidence for a concordant composite.
    pub p_concordant: f64,
    /// Lower tail `P(t ≤ T)`: evidence for a suppression composite.
    pub p_suppression: f64,
    pub regime: Regime,
}

/// Tests `H₀: cos φ = 0` using `T = cos φ·√(df/(1 − cos²φ)) ~ t(df)`.
///
/// Use `df = p − 1` for the primal statistic and `n − 2` for the dual.
pub fn cosine_test(cos_phi: f64, df: f64, regime: Regime) -> Result<CosineTest> {
    if !(cos_phi.abs() <= 1.0 + COSINE_SLACK) {
        return Err(MediationError::InvalidCosine(cos_phi));
    }
    if !(df >= 1.0) {
        return Err(MediationError::InsufficientDf(format!(
            "cosine test needs df ≥ 1, got {df}"
        )));
    }
    let c = cos_phi.clamp(-1.0, 1.0);
    let (t_stat, upper, lower) = if c.abs() == 1.0 {
        let t = c * f64::INFINITY;
        if c > 0.0 {
            (t, 0.0, 1.0)
        } else {
            (t, 1.0, 0.0)
        }
    } else {
        let t = c * (df / (1.0 - c * c)).sqrt();
        // the smaller tail is computed directly so it keeps its precision
        if t >= 0.0 {
            let up = t_cdf(-t, df);
            (t, up, 1.0 - up)
        } else {
            let low = t_cdf(t, df);
            (t, 1.0 - low, low)
        }
    };
    Ok(CosineTest {
        cos_phi: c,
        t_stat,
        df,
        p_two_sided: (2.0 * upper.min(lower)).min(1.0),
        p_concordant: upper,
        p_suppression: lower,
        regime,
    })
}

/// Primal cosine test, `df = p − 1`.
pub fn cosine_test_primal(cos_phi: f64, p: usize) -> Result<CosineTest> {
    cosine_test(cos_phi, p as f64 - 1.0, Regime::Primal)
}

/// Dual cosine test, `df = n − 2`.
pub fn cosine_test_dual(cos_phi: f64, n: usize) -> Result<CosineTest> {
    cosine_test(cos_phi, n as f64 - 2.0, Regime::Dual)
}

/// Goodness of fit of simulated `cos²φ` values to `Beta(1/2, (p − 1)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BetaFitSummary {
    pub samples: usize,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub sample_mean: f64,
    /// `1/p`
    pub theoretical_mean: f64,
}

pub fn null_beta_check(cos2_samples: &[f64], p: usize) -> Result<BetaFitSummary> {
    if p < 2 {
        return Err(MediationError::InvalidArgument(format!(
            "Beta(1/2, (p−1)/2) needs p ≥ 2, got {p}"
        )));
    }
    if cos2_samples.is_empty() {
        return Err(MediationError::InvalidArgument("no samples".into()));
    }
    if let Some(bad) = cos2_samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MediationError::InvalidArgument(format!(
            "cos² sample {bad} outside [0, 1]"
        )));
    }
    let b = (p as f64 - 1.0) / 2.0;
    let d = ks_statistic(cos2_samples, |x| beta_cdf(x, 0.5, b));
    Ok(BetaFitSummary {
        samples: cos2_samples.len(),
        ks_statistic: d,
        ks_p_value: ks_p_value(d, cos2_samples.len()),
        sample_mean: cos2_samples.iter().sum::<f64>() / cos2_samples.len() as f64,
        theoretical_mean: 1.0 / p as f64,
    })
}

/// Intersection–union test: both single-path F-tests must reject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IutTest {
    pub f_alpha: f64,
    pub p_alpha: f64,
    pub f_beta: f64,
    pub p_beta: f64,
    /// `max(p_alpha, p_beta)`
    pub p_value: f64,
}

impl IutTest {
    pub fn from_p_values(p_alpha: f64, p_beta: f64) -> Self {
        Self {
            f_alpha: f64::NAN,
            p_alpha,
            f_beta: f64::NAN,
            p_beta,
            p_value: p_alpha.max(p_beta),
        }
    }
}

fn quad_form_inv(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| {
        MediationError::FactorisationFailure("cross-product matrix is not positive definite".into())
    })?;
    Ok(v.dot(&chol.solve(v)))
}

/// Omnibus F of `A` on `X` and of `Y` on `Z = Q_A X`, both with df
/// `(p, n−p−1)` and both from sufficient statistics.
///
/// The β-path regression deliberately leaves `A` out of the model, so the
/// variation of `Y` along `A` stays in the residual.
pub fn iut_test(s: &SufficientStats) -> Result<IutTest> {
    if s.n <= s.p + 2 {
        return Err(MediationError::InsufficientDf(format!(
            "IUT needs n > p + 2 (n = {}, p = {})",
            s.n, s.p
        )));
    }
    let (n, p) = (s.n as f64, s.p as f64);
    let df = n - p - 1.0;
    let omnibus = |r2: f64| if r2 >= 1.0 { f64::INFINITY } else { (r2 / p) / ((1.0 - r2) / df) };

    let r2_a = (quad_form_inv(&s.gram(), &s.a)? / s.norm_a2).clamp(0.0, 1.0);
    let f_alpha = omnibus(r2_a);

    let explained = quad_form_inv(&s.v, &s.z)?.max(0.0);
    let r2_b = if s.norm_y2 > 0.0 { (explained / s.norm_y2).clamp(0.0, 1.0) } else { 0.0 };
    let f_beta = omnibus(r2_b);

    let p_alpha = f_sf(f_alpha, p, df);
    let p_beta = f_sf(f_beta, p, df);
    Ok(IutTest {
        f_alpha,
        p_alpha,
        f_beta,
        p_beta,
        p_value: p_alpha.max(p_beta),
    })
}

/// `δ = cot φ₀·√(p − 1)`.
pub fn noncentrality_primal(phi0: f64, p: usize) -> f64 {
    phi0.cos() / phi0.sin() * (p as f64 - 1.0).sqrt()
}

/// `δ = cot φ₀·√(n − 2)`.
pub fn noncentrality_dual(phi0: f64, n: usize) -> f64 {
    phi0.cos() / phi0.sin() * (n as f64 - 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerResult {
    pub phi0: Option<f64>,
    pub df: f64,
    pub delta: f64,
    pub alpha_level: f64,
    pub critical_value: f64,
    pub power: f64,
    /// `|δ|` exceeds the critical value, so power tends to one as the
    /// sample grows.
    pub detectable: bool,
}

/// `P(|t(df, δ)| ≥ t_{1−α/2, df})`.
pub fn power_noncentral_t(delta: f64, df: f64, alpha_level: f64) -> Result<PowerResult> {
    if !(df >= 1.0) {
        return Err(MediationError::InsufficientDf(format!("power needs df ≥ 1, got {df}")));
    }
    if !(alpha_level > 0.0 && alpha_level < 0.5) {
        return Err(MediationError::InvalidArgument(format!(
            "significance level must lie in (0, 0.5), got {alpha_level}"
        )));
    }
    let crit = t_quantile(1.0 - alpha_level / 2.0, df);
    let power = 1.0 - noncentral_t_cdf(crit, df, delta) + noncentral_t_cdf(-crit, df, delta);
    Ok(PowerResult {
        phi0: None,
        df,
        delta,
        alpha_level,
        critical_value: crit,
        power: power.clamp(0.0, 1.0),
        detectable: delta.abs() > crit,
    })
}

/// Power at a population metric angle; `dim` is `p` (primal) or `n` (dual).
pub fn power_at_angle(phi0: f64, dim: usize, regime: Regime, alpha_level: f64) -> Result<PowerResult> {
    if !(phi0 > 0.0 && phi0 < std::f64::consts::PI) {
        return Err(MediationError::InvalidArgument(format!(
            "angle must lie in (0, π), got {phi0}"
        )));
    }
    let (delta, df) = match regime {
        Regime::Primal => {
            if dim < 2 {
                return Err(MediationError::InsufficientDf("primal power needs p ≥ 2".into()));
            }
            (noncentrality_primal(phi0, dim), dim as f64 - 1.0)
        }
        Regime::Dual => {
            if dim < 3 {
                return Err(MediationError::InsufficientDf("dual power needs n ≥ 3".into()));
            }
            (noncentrality_dual(phi0, dim), dim as f64 - 2.0)
        }
    };
    Ok(PowerResult {
        phi0: Some(phi0),
        ..power_noncentral_t(delta, df, alpha_level)?
    })
}

/// Angle between `α₀` and `β₀` in the `Σ_Z⁻¹` inner product.
pub fn population_angle(alpha0: &DVector<f64>, beta0: &DVector<f64>, sigma_z: &DMatrix<f64>) -> Result<f64> {
    let p = sigma_z.nrows();
    if sigma_z.ncols() != p || alpha0.len() != p || beta0.len() != p {
        return Err(MediationError::DimensionMismatch(
            "population angle inputs disagree on p".into(),
        ));
    }
    if alpha0.norm() == 0.0 || beta0.norm() == 0.0 {
        return Err(MediationError::ZeroPathVector);
    }
    let chol = Cholesky::new(sigma_z.clone()).ok_or(MediationError::SingularMetric)?;
    let ia = chol.solve(alpha0);
    let ib = chol.solve(beta0);
    let cos = alpha0.dot(&ib) / (alpha0.dot(&ia) * beta0.dot(&ib)).sqrt();
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Metric angle of the two-entry population (identity covariance, entries of
/// size `signal`, treatment noise `sigma`) whose Euclidean angle between `α`
/// and `β` is `l2_angle`.
///
/// With `α = s·e₁`, `β = s(cos θ·e₁ + sin θ·e₂)` and
/// `Σ_Z = I − ααᵀ/(‖α‖² + σ²)`, the metric cosine depends only on θ and
/// `k = s²/(s² + σ²)`.
pub fn two_entry_metric_angle(l2_angle: f64, signal: f64, sigma: f64) -> Result<f64> {
    let p = 2;
    let alpha = DVector::from_vec(vec![signal, 0.0]);
    let beta = DVector::from_vec(vec![signal * l2_angle.cos(), signal * l2_angle.sin()]);
    let sigma_z = DMatrix::identity(p, p) - &alpha * alpha.transpose() / (signal * signal + sigma * sigma);
    // population path vectors: α₀ = Σα, β₀ = Σ_Zβ with Σ = I
    population_angle(&alpha, &(&sigma_z * &beta), &sigma_z)
}
