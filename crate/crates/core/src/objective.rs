//! The two scale-invariant objectives on weight vectors and their gradients.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::SufficientStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Indirect effect `h(w) = α(w)β(w)`.
    H,
    /// Mediation index `f*(w) = cor(Xw, A)·cor(Zw, Y)`.
    FStar,
}

impl Objective {
    pub fn value(self, w: &DVector<f64>, s: &SufficientStats) -> f64 {
        match self {
            Objective::H => h_value(w, s),
            Objective::FStar => fstar_value(w, s),
        }
    }

    pub fn gradient(self, w: &DVector<f64>, s: &SufficientStats) -> DVector<f64> {
        match self {
            Objective::H => h_gradient(w, s),
            Objective::FStar => fstar_gradient(w, s),
        }
    }
}

/// `h(w) = (wᵀa)(wᵀz) / (‖A‖²·wᵀVw)`. Returns 0 for `wᵀVw = 0`.
pub fn h_value(w: &DVector<f64>, s: &SufficientStats) -> f64 {
    let quad = w.dot(&(&s.v * w));
    if !(quad > 0.0) {
        return 0.0;
    }
    w.dot(&s.a) * w.dot(&s.z) / (s.norm_a2 * quad)
}

pub fn h_gradient(w: &DVector<f64>, s: &SufficientStats) -> DVector<f64> {
    let vw = &s.v * w;
    let quad = w.dot(&vw);
    if !(quad > 0.0) {
        return DVector::zeros(w.len());
    }
    let wa = w.dot(&s.a);
    let wz = w.dot(&s.z);
    let denom = s.norm_a2 * quad;
    (&s.a * wz + &s.z * wa) / denom - vw * (2.0 * wa * wz / (denom * quad))
}

/// The two variances in the correlation denominators: `wᵀV_Xw` and `wᵀVw`,
/// with `V_X = V + aaᵀ/‖A‖²`.
fn variances(w: &DVector<f64>, s: &SufficientStats) -> (DVector<f64>, f64, f64, f64) {
    let vw = &s.v * w;
    let quad = w.dot(&vw);
    let wa = w.dot(&s.a);
    (vw, quad + wa * wa / s.norm_a2, quad, wa)
}

pub fn fstar_value(w: &DVector<f64>, s: &SufficientStats) -> f64 {
    let (_, qx, q, wa) = variances(w, s);
    if !(q > 0.0) || !(s.norm_y2 > 0.0) {
        return 0.0;
    }
    wa * w.dot(&s.z) / ((s.norm_a2 * s.norm_y2).sqrt() * (qx * q).sqrt())
}

pub fn fstar_gradient(w: &DVector<f64>, s: &SufficientStats) -> DVector<f64> {
    let (vw, qx, q, wa) = variances(w, s);
    if !(q > 0.0) || !(s.norm_y2 > 0.0) {
        return DVector::zeros(w.len());
    }
    let wz = w.dot(&s.z);
    let c = (s.norm_a2 * s.norm_y2).sqrt() * (qx * q).sqrt();
    let f = wa * wz / c;
    let vxw = &vw + &s.a * (wa / s.norm_a2);
    (&s.a * wz + &s.z * wa) / c - (vxw / qx + vw / q) * f
}
