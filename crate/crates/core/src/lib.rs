//! Optimal composite mediators for high-dimensional mediation analysis.

pub mod baselines;
pub mod data;
pub mod dual;
pub mod error;
pub mod federate;
pub mod inference;
pub mod maxcor;
pub mod objective;
pub mod primal;
pub mod simulate;
pub mod special;

#[cfg(test)]
mod testutil;

pub use baselines::{numerical_oracle, OracleConfig, OracleResult};
pub use data::{
    compute_sufficient_stats, evaluate_composite, path_coefficients, Dataset, MediationSummary, PathCoefficients,
    SufficientStats,
};
pub use dual::{maxie_fit_dual, select_regime};
pub use federate::{combine, site_extract, SiteSummary};
pub use inference::{cosine_test, iut_test, power_at_angle, CosineTest, IutTest, PowerResult};
pub use maxcor::{maxcor_fit, MaxCorFit};
pub use objective::Objective;
pub use primal::{maxie_fit_primal, EffectType, MediatorFit, Regime};
pub use error::{MediationError, Result};
