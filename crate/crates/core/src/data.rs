//! Data model, centring, sufficient statistics and path coefficients.
//!
//! Everything downstream of [`compute_sufficient_stats`] sees the data only
//! through the cross-products
//!
//! ```text
//! a = XᵀA,   z = XᵀY − (AᵀY/‖A‖²)·a,   V = XᵀX − aaᵀ/‖A‖²
//! ```
//!
//! so the residualised mediator matrix `Z = Q_A X` is never formed here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MediationError, Result};

/// Relative tolerance used for every degeneracy check in the crate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Mediators `X` (n×p), treatment `A` and outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    a: DVector<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    centred: bool,
    standardised: bool,
}

impl Dataset {
    /// Builds a raw (uncentred) dataset, checking shapes and finiteness.
    ///
    /// Feature names default to `x1..xp`.
    pub fn new(x: DMatrix<f64>, a: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, a, y, names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        a: DVector<f64>,
        y: DVector<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(MediationError::DimensionMismatch(format!(
                "mediator matrix is {}x{}",
                n,
                x.ncols()
            )));
        }
        if a.len() != n || y.len() != n {
            return Err(MediationError::DimensionMismatch(format!(
                "X has {n} rows but A has {} and Y has {}",
                a.len(),
                y.len()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(MediationError::DimensionMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        for i in 0..n {
            for (j, name) in feature_names.iter().enumerate() {
                if !x[(i, j)].is_finite() {
                    return Err(MediationError::NonFiniteInput {
                        row: i,
                        column: name.clone(),
                    });
                }
            }
            if !a[i].is_finite() {
                return Err(MediationError::NonFiniteInput {
                    row: i,
                    column: "treatment".into(),
                });
            }
            if !y[i].is_finite() {
                return Err(MediationError::NonFiniteInput {
                    row: i,
                    column: "outcome".into(),
                });
            }
        }
        Ok(Self {
            x,
            a,
            y,
            feature_names,
            centred: false,
            standardised: false,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn mediators(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn treatment(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn is_centred(&self) -> bool {
        self.centred
    }

    pub fn is_standardised(&self) -> bool {
        self.standardised
    }

    /// Copy of the dataset with the outcome replaced (flags preserved when
    /// the replacement keeps the dataset centred).
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(MediationError::DimensionMismatch(format!(
                "outcome has {} entries, expected {}",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            let row = y.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(MediationError::NonFiniteInput {
                row,
                column: "outcome".into(),
            });
        }
        let centred = self.centred && is_centred_vector(&y);
        Ok(Self {
            y,
            centred,
            ..self.clone()
        })
    }

    #[cfg(test)]
    pub(crate) fn assume_centred(mut self) -> Self {
        self.centred = true;
        self
    }

    /// Dataset with `Y` negated; maps concordant to suppression problems.
    pub fn negate_outcome(&self) -> Self {
        Self {
            y: -&self.y,
            ..self.clone()
        }
    }

    /// Rows `indices` of the raw data, as a new uncentred dataset.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(MediationError::InvalidArgument(format!(
                "row index {bad} out of range"
            )));
        }
        let x = self.x.select_rows(indices);
        let a = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.a[i]));
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i]));
        Self::with_names(x, a, y, self.feature_names.clone())
    }

    /// Removes column means from `X`, `A` and `Y`; optionally scales each
    /// mediator column to unit sample standard deviation (divisor n−1).
    ///
    /// Centring always happens first.
    pub fn center_and_standardise(&self, standardise: bool) -> Result<Self> {
        let n = self.n();
        if n < 3 {
            return Err(MediationError::TooFewObservations { required: 3, got: n });
        }
        let mut x = self.x.clone();
        for (j, name) in self.feature_names.iter().enumerate() {
            let mut col = x.column_mut(j);
            let scale = max_abs(col.iter());
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            if max_abs(col.iter()) <= DEGENERACY_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(MediationError::ZeroVarianceColumn(name.clone()));
            }
            if standardise {
                let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
                col /= sd;
            }
        }
        let a = centre_named(&self.a, "treatment")?;
        let y = centre_named(&self.y, "outcome")?;
        Ok(Self {
            x,
            a,
            y,
            feature_names: self.feature_names.clone(),
            centred: true,
            standardised: standardise,
        })
    }
}

impl Dataset {
    /// Centres every column without the zero-variance checks; simulated
    /// designs may legitimately produce a constant outcome.
    pub(crate) fn centre_unchecked(&self) -> Self {
        let mut x = self.x.clone();
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Self {
            x,
            a: self.a.add_scalar(-self.a.mean()),
            y: self.y.add_scalar(-self.y.mean()),
            feature_names: self.feature_names.clone(),
            centred: true,
            standardised: false,
        }
    }
}

fn max_abs<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn centre_named(v: &DVector<f64>, name: &str) -> Result<DVector<f64>> {
    let scale = max_abs(v.iter());
    let c = v.add_scalar(-v.mean());
    if max_abs(c.iter()) <= DEGENERACY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(MediationError::ZeroVarianceColumn(name.to_string()));
    }
    Ok(c)
}

fn is_centred_vector(v: &DVector<f64>) -> bool {
    let scale = max_abs(v.iter()).max(f64::MIN_POSITIVE);
    v.mean().abs() <= 1e-10 * scale
}

/// Cross-product summaries that determine estimation and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `XᵀA`
    pub a: DVector<f64>,
    /// `XᵀY − (AᵀY/‖A‖²)·a`, equal to `ZᵀY`
    pub z: DVector<f64>,
    /// Residual Gram matrix `ZᵀZ`
    pub v: DMatrix<f64>,
    pub norm_a2: f64,
    pub a_t_y: f64,
    pub norm_y2: f64,
    pub n: usize,
    pub p: usize,
}

impl SufficientStats {
    /// Assembles statistics from already-centred cross-products.
    ///
    /// `xtx`, `xta`, `xty` and the scalars must come from globally centred
    /// data; `z` and `V` are derived here.
    pub fn from_centred_cross_products(
        xtx: &DMatrix<f64>,
        xta: &DVector<f64>,
        xty: &DVector<f64>,
        ata: f64,
        aty: f64,
        yty: f64,
        n: usize,
    ) -> Result<Self> {
        let p = xtx.ncols();
        if xtx.nrows() != p || xta.len() != p || xty.len() != p {
            return Err(MediationError::DimensionMismatch(
                "cross-product blocks disagree on p".into(),
            ));
        }
        if !(ata > 0.0) {
            return Err(MediationError::DegenerateTreatment);
        }
        let a = xta.clone();
        let z = xty - &a * (aty / ata);
        let mut v = xtx - &a * a.transpose() / ata;
        symmetrise(&mut v);
        Ok(Self {
            a,
            z,
            v,
            norm_a2: ata,
            a_t_y: aty,
            norm_y2: yty,
            n,
            p,
        })
    }

    /// Full Gram matrix `XᵀX = V + aaᵀ/‖A‖²`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.v + &self.a * self.a.transpose() / self.norm_a2
    }

    /// `XᵀY = z + (AᵀY/‖A‖²)·a`.
    pub fn x_t_y(&self) -> DVector<f64> {
        &self.z + &self.a * (self.a_t_y / self.norm_a2)
    }

    /// Statistics of the same data with `Y` negated.
    pub fn negate_outcome(&self) -> Self {
        Self {
            z: -&self.z,
            a_t_y: -self.a_t_y,
            ..self.clone()
        }
    }

    /// Total effect `τ = AᵀY/‖A‖²`.
    pub fn total_effect(&self) -> f64 {
        self.a_t_y / self.norm_a2
    }

    pub fn trace_v(&self) -> f64 {
        self.v.trace()
    }

    /// Tolerance below which `wᵀVw` counts as zero.
    pub fn composite_tolerance(&self, w: &DVector<f64>) -> f64 {
        DEGENERACY_TOL * (self.trace_v() / self.p as f64).max(0.0) * w.norm_squared()
    }

    fn tau_tolerance(&self) -> f64 {
        let dof = (self.n.max(2) - 1) as f64;
        let sd_a = (self.norm_a2 / dof).sqrt();
        let sd_y = (self.norm_y2 / dof).sqrt();
        DEGENERACY_TOL * sd_y / sd_a
    }
}

pub(crate) fn symmetrise(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Computes `(a, z, V, ‖A‖², AᵀY, ‖Y‖²)` from a centred dataset.
pub fn compute_sufficient_stats(d: &Dataset) -> Result<SufficientStats> {
    if !d.is_centred() {
        return Err(MediationError::NotCentred);
    }
    let norm_a2 = d.a.norm_squared();
    if norm_a2 <= 0.0 {
        return Err(MediationError::DegenerateTreatment);
    }
    // explicit transpose routes through the blocked GEMM kernel; tr_mul
    // computes one dot product per entry and is several times slower
    let xtx = d.x.transpose() * &d.x;
    let xta = d.x.tr_mul(&d.a);
    let xty = d.x.tr_mul(&d.y);
    SufficientStats::from_centred_cross_products(
        &xtx,
        &xta,
        &xty,
        norm_a2,
        d.a.dot(&d.y),
        d.y.norm_squared(),
        d.n(),
    )
}

/// Path coefficients of a composite mediator `M = Xw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
    pub tau: f64,
    /// `h/τ`; `None` when the total effect is numerically zero.
    pub prop_mediated: Option<f64>,
}

impl PathCoefficients {
    pub(crate) fn new(alpha: f64, beta: f64, tau: f64, tau_tol: f64) -> Self {
        let h = alpha * beta;
        let prop_mediated = (tau.abs() >= tau_tol && tau != 0.0).then(|| h / tau);
        Self {
            alpha,
            beta,
            h,
            tau,
            prop_mediated,
        }
    }

    pub(crate) fn zero(tau: f64, tau_tol: f64) -> Self {
        Self::new(0.0, 0.0, tau, tau_tol)
    }
}

/// `α = wᵀa/‖A‖²`, `β = wᵀz/(wᵀVw)`, `h = αβ`.
pub fn path_coefficients(w: &DVector<f64>, s: &SufficientStats) -> Result<PathCoefficients> {
    if w.len() != s.p {
        return Err(MediationError::DimensionMismatch(format!(
            "weight has {} entries, expected {}",
            w.len(),
            s.p
        )));
    }
    let vw = &s.v * w;
    let quad = w.dot(&vw);
    if !(quad > s.composite_tolerance(w)) {
        return Err(MediationError::DegenerateComposite);
    }
    let alpha = w.dot(&s.a) / s.norm_a2;
    let beta = w.dot(&s.z) / quad;
    Ok(PathCoefficients::new(
        alpha,
        beta,
        s.total_effect(),
        s.tau_tolerance(),
    ))
}

pub(crate) fn tau_tolerance(s: &SufficientStats) -> f64 {
    s.tau_tolerance()
}

/// Mediation summary of a composite evaluated on (possibly held-out) data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MediationSummary {
    /// `cor(Xw, A)`
    pub r_ma: f64,
    /// `cor(Q_A Xw, Y)`
    pub r_mperp_y: f64,
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
    pub tau: f64,
    /// Mediation index `r_MA · r_M⊥Y`.
    pub fstar: f64,
    pub prop_mediated: Option<f64>,
}

/// Evaluates a fixed weight vector on a centred dataset.
pub fn evaluate_composite(w: &DVector<f64>, d: &Dataset) -> Result<MediationSummary> {
    if !d.is_centred() {
        return Err(MediationError::NotCentred);
    }
    if w.len() != d.p() {
        return Err(MediationError::DimensionMismatch(format!(
            "weight has {} entries, expected {}",
            w.len(),
            d.p()
        )));
    }
    let norm_a2 = d.a.norm_squared();
    if norm_a2 <= 0.0 {
        return Err(MediationError::DegenerateTreatment);
    }
    let m = &d.x * w;
    let m_norm2 = m.norm_squared();
    let m_t_a = m.dot(&d.a);
    let m_perp = &m - &d.a * (m_t_a / norm_a2);
    let perp_norm2 = m_perp.norm_squared();
    if !(perp_norm2 > DEGENERACY_TOL * m_norm2) || m_norm2 == 0.0 {
        return Err(MediationError::DegenerateComposite);
    }
    let y_norm2 = d.y.norm_squared();
    let r_ma = m_t_a / (m_norm2 * norm_a2).sqrt();
    let perp_t_y = m_perp.dot(&d.y);
    let r_mperp_y = if y_norm2 > 0.0 {
        perp_t_y / (perp_norm2 * y_norm2).sqrt()
    } else {
        0.0
    };
    let alpha = m_t_a / norm_a2;
    let beta = perp_t_y / perp_norm2;
    let tau = d.a.dot(&d.y) / norm_a2;
    let dof = (d.n() - 1) as f64;
    let tau_tol = DEGENERACY_TOL * (y_norm2 / dof).sqrt() / (norm_a2 / dof).sqrt();
    let coef = PathCoefficients::new(alpha, beta, tau, tau_tol);
    Ok(MediationSummary {
        r_ma,
        r_mperp_y,
        alpha,
        beta,
        h: coef.h,
        tau,
        fstar: r_ma * r_mperp_y,
        prop_mediated: coef.prop_mediated,
    })
}
