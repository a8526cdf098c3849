//! Data-generating processes and experiment runners.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, cell, replicate)`, so results are identical whatever the number
//! of worker threads. Replicates run in parallel and are collected in order.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{numerical_oracle, reg_a_on_x, reg_y_on_x, OracleConfig};
use crate::data::{compute_sufficient_stats, path_coefficients, Dataset, SufficientStats};
use crate::dual::{dual_path_vectors, dual_statistics, maxie_fit_dual, select_regime, DEFAULT_EIG_CUTOFF};
use crate::error::{MediationError, Result};
use crate::inference::{
    cosine_test, iut_test, noncentrality_dual, noncentrality_primal, power_at_angle,
    two_entry_metric_angle, CosineTest,
};
use crate::maxcor::maxcor_fit;
use crate::objective::{fstar_value, Objective};
use crate::primal::{maxie_fit_primal, path_vectors, Regime, DEFAULT_RIDGE_SCALE};
use crate::special::t_quantile;

pub const AR1_RHO: f64 = 0.75;
pub const DIRECT_EFFECT: f64 = 0.25;
pub const NOISE_SD: f64 = 0.5;
/// Magnitude of the single active entry in the null scenarios.
pub const NULL_SIGNAL: f64 = 1.0;
pub const TWO_ENTRY_SIGNAL: f64 = 0.5;
pub const DENSE_SNR: f64 = 0.5;
pub const SIGNIFICANCE: f64 = 0.05;

/// How `X` is sampled; echoed into run manifests.
pub const SAMPLER: &str =
    "AR(1) rows by the recursion x_j = rho*x_{j-1} + sqrt(1-rho^2)*e_j (the Cholesky factor of Sigma)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Scenario {
    /// Disjoint supports.
    S1,
    /// Shared set of size p/16.
    S2,
    /// Shared set of size p/8.
    S3,
    /// `β = α`.
    S4,
    NullBoth,
    /// `α = γe₁`, `β = 0`.
    NullBeta,
    /// `α = 0`, `β = γe₁`.
    NullAlpha,
    /// `α₁ = β₁ = γ`, all other entries zero.
    SharedEntry,
    /// `α = s·e₁`, `β = s(cos θ·e₁ + sin θ·e₂)`.
    TwoEntry,
    /// Dense latent-factor design with `X` driven by `A`.
    DenseDual,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
            Scenario::NullBoth => "null_both",
            Scenario::NullBeta => "null_beta",
            Scenario::NullAlpha => "null_alpha",
            Scenario::SharedEntry => "shared_entry",
            Scenario::TwoEntry => "two_entry",
            Scenario::DenseDual => "dense_dual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub tau: f64,
    pub sigma_eps: f64,
    pub scenario: Scenario,
    /// γ for the single-entry scenarios, `s` for the two-entry design, the
    /// SNR for the dense design.
    pub signal: f64,
    pub angle_deg: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl SimConfig {
    /// The AR(1) design used for the sparse scenarios.
    pub fn ar1(scenario: Scenario, n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            rho: AR1_RHO,
            tau: DIRECT_EFFECT,
            sigma_eps: NOISE_SD,
            scenario,
            signal: NULL_SIGNAL,
            angle_deg: 0.0,
            seed: 0,
            replicates: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(MediationError::InvalidArgument(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if self.n < 3 {
            return Err(MediationError::TooFewObservations { required: 3, got: self.n });
        }
        if self.p == 0 || self.replicates == 0 {
            return Err(MediationError::InvalidArgument("p and replicates must be positive".into()));
        }
        if matches!(self.scenario, Scenario::TwoEntry) && self.p < 2 {
            return Err(MediationError::InvalidArgument("two-entry design needs p ≥ 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    /// AR(1) parameter of `Σ_X`; zero means identity.
    pub rho: f64,
}

impl PopulationModel {
    pub fn sigma_x(&self) -> DMatrix<f64> {
        let p = self.alpha0.len();
        DMatrix::from_fn(p, p, |i, j| self.rho.powi((i as i32 - j as i32).abs()))
    }
}

/// Independent stream for one replicate of one cell.
pub fn replicate_rng(seed: u64, cell: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&cell.to_le_bytes());
    key[16..24].copy_from_slice(&replicate.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Size of the index set shared by `α` and `β` (S2 rounds p/16).
pub fn shared_size(scenario: Scenario, p: usize) -> usize {
    let support = support_size(p);
    match scenario {
        Scenario::S2 => ((p as f64 / 16.0).round() as usize).min(support),
        Scenario::S3 => ((p as f64 / 8.0).round() as usize).min(support),
        Scenario::S4 => support,
        _ => 0,
    }
}

fn support_size(p: usize) -> usize {
    (p / 4).max(1)
}

fn unit_vector(p: usize, index: usize, value: f64) -> DVector<f64> {
    let mut v = DVector::zeros(p);
    v[index] = value;
    v
}

/// Population path vectors for a scenario.
pub fn make_scenario_paths(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> PopulationModel {
    let p = cfg.p;
    let (alpha0, beta0) = match cfg.scenario {
        Scenario::S1 | Scenario::S2 | Scenario::S3 | Scenario::S4 => {
            let k = support_size(p);
            let s = shared_size(cfg.scenario, p);
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(rng);
            let mut alpha = DVector::zeros(p);
            let mut beta = DVector::zeros(p);
            for &j in &perm[..s] {
                let v = normal(rng);
                alpha[j] = v;
                beta[j] = v;
            }
            let unique = k - s;
            // when p is too small for disjoint unique sets they overlap
            let a_set = &perm[s..(s + unique).min(p)];
            let b_start = (s + unique).min(p - unique.min(p - s));
            let b_set = &perm[b_start..b_start + unique.min(p - b_start)];
            for &j in a_set {
                alpha[j] = normal(rng);
            }
            for &j in b_set {
                beta[j] = normal(rng);
            }
            (alpha.normalize(), beta.normalize())
        }
        Scenario::NullBoth => (DVector::zeros(p), DVector::zeros(p)),
        Scenario::NullBeta => (unit_vector(p, 0, cfg.signal), DVector::zeros(p)),
        Scenario::NullAlpha => (DVector::zeros(p), unit_vector(p, 0, cfg.signal)),
        Scenario::SharedEntry => (unit_vector(p, 0, cfg.signal), unit_vector(p, 0, cfg.signal)),
        Scenario::TwoEntry => {
            let th = cfg.angle_deg.to_radians();
            let mut beta = DVector::zeros(p);
            beta[0] = cfg.signal * th.cos();
            beta[1] = cfg.signal * th.sin();
            (unit_vector(p, 0, cfg.signal), beta)
        }
        Scenario::DenseDual => {
            let alpha = DVector::from_fn(p, |_, _| normal(rng)).normalize();
            let th = cfg.angle_deg.to_radians();
            let beta = if p == 1 {
                &alpha * th.cos().signum()
            } else {
                let mut v = DVector::from_fn(p, |_, _| normal(rng));
                v -= &alpha * alpha.dot(&v);
                &alpha * th.cos() + v.normalize() * th.sin()
            };
            (alpha, beta)
        }
    };
    PopulationModel {
        alpha0,
        beta0,
        rho: if cfg.scenario == Scenario::DenseDual { 0.0 } else { cfg.rho },
    }
}

/// `n×p` matrix whose rows are i.i.d. AR(1) with unit marginal variance.
fn ar1_design(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    let c = (1.0 - rho * rho).sqrt();
    let data = x.as_mut_slice();
    for j in 0..p {
        let (prev, cur) = data.split_at_mut(j * n);
        let cur = &mut cur[..n];
        for v in cur.iter_mut() {
            *v = normal(rng);
        }
        if j > 0 && rho != 0.0 {
            let prev = &prev[(j - 1) * n..];
            for (v, pv) in cur.iter_mut().zip(prev) {
                *v = rho * pv + c * *v;
            }
        }
    }
    x
}

/// Draws one centred dataset from the model.
pub fn generate_dataset(cfg: &SimConfig, model: &PopulationModel, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (n, p) = (cfg.n, cfg.p);
    if model.alpha0.len() != p || model.beta0.len() != p {
        return Err(MediationError::DimensionMismatch("population model does not match p".into()));
    }
    let (x, a, y) = if cfg.scenario == Scenario::DenseDual {
        let scale = cfg.signal * (p as f64).sqrt();
        let a = DVector::from_fn(n, |_, _| normal(rng));
        let mut x = DMatrix::from_fn(n, p, |_, _| normal(rng));
        x.ger(scale, &a, &model.alpha0, 1.0);
        let y = &x * &model.beta0 * scale + DVector::from_fn(n, |_, _| normal(rng));
        (x, a, y)
    } else {
        let x = ar1_design(n, p, model.rho, rng);
        let a = &x * &model.alpha0 + DVector::from_fn(n, |_, _| normal(rng)) * cfg.sigma_eps;
        let y = &x * &model.beta0 + &a * cfg.tau + DVector::from_fn(n, |_, _| normal(rng)) * cfg.sigma_eps;
        (x, a, y)
    };
    Ok(Dataset::new(x, a, y)?.centre_unchecked())
}

/// Draws the model and then the data from one replicate stream.
pub fn draw_replicate(cfg: &SimConfig, cell: u64, replicate: u64) -> Result<(PopulationModel, Dataset)> {
    let mut rng = replicate_rng(cfg.seed, cell, replicate);
    let model = make_scenario_paths(cfg, &mut rng);
    let d = generate_dataset(cfg, &model, &mut rng)?;
    Ok((model, d))
}

/// Cosine test of a centred dataset in the regime its shape calls for.
pub fn cosine_statistic(d: &Dataset) -> Result<CosineTest> {
    match select_regime(d.n(), d.p()) {
        Regime::Primal => {
            let s = compute_sufficient_stats(d)?;
            let g = path_vectors(&s, DEFAULT_RIDGE_SCALE)?;
            cosine_test(g.cos_phi, s.p as f64 - 1.0, Regime::Primal)
        }
        Regime::Dual => {
            let stats = dual_statistics(d)?;
            let g = dual_path_vectors(&stats, DEFAULT_EIG_CUTOFF)?;
            cosine_test(g.cos_phi, d.n() as f64 - 2.0, Regime::Dual)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Desk,
}

/// One line of the tidy results table. Summary rows leave `replicate` empty;
/// `param` carries the sweep variable (signal, angle or quantile) when there
/// is one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub cell: usize,
    pub scenario: &'static str,
    pub n: usize,
    pub p: usize,
    pub param: Option<f64>,
    pub replicate: Option<usize>,
    pub method: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn par_replicates<T: Send>(replicates: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..replicates as u64).into_par_iter().map(f).collect()
}

// ---------------------------------------------------------------- Table 1

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
}

pub fn table1_grid(scale: Scale) -> Vec<Table1Cell> {
    let sizes: &[(usize, usize)] = match scale {
        Scale::Full => &[(500, 20), (1000, 100), (1000, 500), (500, 1000)],
        Scale::Desk => &[(500, 20), (1000, 100)],
    };
    [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4]
        .iter()
        .flat_map(|&scenario| sizes.iter().map(move |&(n, p)| Table1Cell { scenario, n, p }))
        .collect()
}

/// Per-replicate `(h, f*)` of each method; the dual regime runs MaxIE only.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Replicate {
    pub methods: Vec<(&'static str, f64, f64)>,
}

fn table1_replicate(s: &SufficientStats, d: &Dataset) -> Result<Table1Replicate> {
    let mut methods = Vec::with_capacity(4);
    if select_regime(d.n(), d.p()) == Regime::Dual {
        let fit = maxie_fit_dual(d)?;
        methods.push(("maxie", fit.coef_plus.h, fstar_value(&fit.w_plus, s)));
        return Ok(Table1Replicate { methods });
    }
    let fit = maxie_fit_primal(s)?;
    methods.push(("maxie", fit.coef_plus.h, fstar_value(&fit.w_plus, s)));
    let cor = maxcor_fit(s)?;
    methods.push(("maxcor", path_coefficients(&cor.w, s)?.h, cor.fstar));
    for (name, w) in [("reg_y_on_x", reg_y_on_x(d)?), ("reg_a_on_x", reg_a_on_x(d)?)] {
        let h = path_coefficients(&w, s).map(|c| c.h).unwrap_or(0.0);
        methods.push((name, h, fstar_value(&w, s)));
    }
    Ok(Table1Replicate { methods })
}

pub fn run_table1_cell(cell: &Table1Cell, index: usize, replicates: usize, seed: u64) -> Result<Vec<Table1Replicate>> {
    let cfg = SimConfig { seed, replicates, ..SimConfig::ar1(cell.scenario, cell.n, cell.p) };
    cfg.validate()?;
    par_replicates(replicates, |r| {
        let (_, d) = draw_replicate(&cfg, index as u64, r)?;
        let s = compute_sufficient_stats(&d)?;
        table1_replicate(&s, &d)
    })
}

pub fn run_table1(cells: &[Table1Cell], replicates: usize, seed: u64) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (index, cell) in cells.iter().enumerate() {
        let reps = run_table1_cell(cell, index, replicates, seed)?;
        let row = |replicate, method, metric, value| ResultRow {
            experiment: "table1",
            cell: index,
            scenario: cell.scenario.label(),
            n: cell.n,
            p: cell.p,
            param: None,
            replicate,
            method,
            metric,
            value,
        };
        for (r, rep) in reps.iter().enumerate() {
            for &(method, h, f) in &rep.methods {
                rows.push(row(Some(r), method, "h", h));
                rows.push(row(Some(r), method, "fstar", f));
            }
        }
        let names: Vec<&'static str> = reps[0].methods.iter().map(|m| m.0).collect();
        for (k, method) in names.into_iter().enumerate() {
            let hs: Vec<f64> = reps.iter().map(|r| r.methods[k].1).collect();
            let fs: Vec<f64> = reps.iter().map(|r| r.methods[k].2).collect();
            let (hm, hsd) = mean_sd(&hs);
            let (fm, fsd) = mean_sd(&fs);
            rows.push(row(None, method, "h_mean", hm));
            rows.push(row(None, method, "h_sd", hsd));
            rows.push(row(None, method, "fstar_mean", fm));
            rows.push(row(None, method, "fstar_sd", fsd));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- Table 3

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table3Cell {
    pub regime: Regime,
    pub scenario: Scenario,
    pub signal: f64,
    pub n: usize,
    pub p: usize,
}

impl Table3Cell {
    /// Primal panel: AR(1) design with direct effect; dual panel: identity
    /// covariance and no direct effect.
    pub fn config(&self, seed: u64, replicates: usize) -> SimConfig {
        let base = SimConfig::ar1(self.scenario, self.n, self.p);
        let (rho, tau) = match self.regime {
            Regime::Primal => (AR1_RHO, DIRECT_EFFECT),
            Regime::Dual => (0.0, 0.0),
        };
        SimConfig { rho, tau, signal: self.signal, seed, replicates, ..base }
    }
}

pub fn table3_grid(_scale: Scale) -> Vec<Table3Cell> {
    let mut cells = Vec::new();
    let rows = |power: [f64; 2]| {
        [
            (Scenario::NullBoth, NULL_SIGNAL),
            (Scenario::NullBeta, NULL_SIGNAL),
            (Scenario::NullAlpha, NULL_SIGNAL),
            (Scenario::SharedEntry, power[0]),
            (Scenario::SharedEntry, power[1]),
        ]
    };
    for p in [20, 40, 80] {
        for (scenario, signal) in rows([0.10, 0.20]) {
            cells.push(Table3Cell { regime: Regime::Primal, scenario, signal, n: 200, p });
        }
    }
    for n in [40, 60, 80, 100, 120, 140] {
        for (scenario, signal) in rows([0.30, 0.50]) {
            cells.push(Table3Cell { regime: Regime::Dual, scenario, signal, n, p: 200 });
        }
    }
    cells
}

/// Per-replicate two-sided cosine p-values and, in the primal panel, IUT
/// p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table3CellResult {
    pub cosine: Vec<f64>,
    pub iut: Option<Vec<f64>>,
}

impl Table3CellResult {
    pub fn cosine_rate(&self, level: f64) -> f64 {
        rejection_rate(&self.cosine, level)
    }

    pub fn iut_rate(&self, level: f64) -> Option<f64> {
        self.iut.as_ref().map(|v| rejection_rate(v, level))
    }
}

pub fn rejection_rate(p_values: &[f64], level: f64) -> f64 {
    p_values.iter().filter(|&&p| p < level).count() as f64 / p_values.len() as f64
}

pub fn run_table3_cell(cell: &Table3Cell, index: usize, replicates: usize, seed: u64) -> Result<Table3CellResult> {
    let cfg = cell.config(seed, replicates);
    cfg.validate()?;
    let with_iut = cell.regime == Regime::Primal && cell.n > cell.p + 2;
    let reps = par_replicates(replicates, |r| {
        let (_, d) = draw_replicate(&cfg, index as u64, r)?;
        let cos = cosine_statistic(&d)?.p_two_sided;
        let iut = if with_iut {
            Some(iut_test(&compute_sufficient_stats(&d)?)?.p_value)
        } else {
            None
        };
        Ok((cos, iut))
    })?;
    Ok(Table3CellResult {
        cosine: reps.iter().map(|r| r.0).collect(),
        iut: with_iut.then(|| reps.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect()),
    })
}

pub fn run_table3(cells: &[Table3Cell], replicates: usize, seed: u64) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (index, cell) in cells.iter().enumerate() {
        let res = run_table3_cell(cell, index, replicates, seed)?;
        let row = |replicate, method, metric, value| ResultRow {
            experiment: "table3",
            cell: index,
            scenario: cell.scenario.label(),
            n: cell.n,
            p: cell.p,
            param: Some(cell.signal),
            replicate,
            method,
            metric,
            value,
        };
        let cosine_name = match cell.regime {
            Regime::Primal => "cosine_primal",
            Regime::Dual => "cosine_dual",
        };
        for (r, &pv) in res.cosine.iter().enumerate() {
            rows.push(row(Some(r), cosine_name, "p_value", pv));
        }
        if let Some(iut) = &res.iut {
            for (r, &pv) in iut.iter().enumerate() {
                rows.push(row(Some(r), "iut", "p_value", pv));
            }
        }
        rows.push(row(None, cosine_name, "rejection_rate", res.cosine_rate(SIGNIFICANCE)));
        if let Some(rate) = res.iut_rate(SIGNIFICANCE) {
            rows.push(row(None, "iut", "rejection_rate", rate));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- Figures

/// `T` statistics of `replicates` null datasets.
pub fn null_t_values(scenario: Scenario, n: usize, p: usize, replicates: usize, seed: u64, cell: u64) -> Result<Vec<f64>> {
    let cfg = SimConfig { tau: 0.0, seed, replicates, ..SimConfig::ar1(scenario, n, p) };
    cfg.validate()?;
    par_replicates(replicates, |r| {
        let (_, d) = draw_replicate(&cfg, cell, r)?;
        Ok(cosine_statistic(&d)?.t_stat)
    })
}

/// QQ data of the null `T` against `t(p−1)` (primal) and `t(n−2)` (dual).
pub fn run_fig1(scale: Scale, replicates: Option<usize>, seed: u64) -> Result<Vec<ResultRow>> {
    let reps = replicates.unwrap_or(1000);
    let settings: &[(usize, usize)] = match scale {
        Scale::Full | Scale::Desk => &[(1000, 100), (100, 1000)],
    };
    let mut rows = Vec::new();
    let mut index = 0;
    for &(n, p) in settings {
        let df = match select_regime(n, p) {
            Regime::Primal => p as f64 - 1.0,
            Regime::Dual => n as f64 - 2.0,
        };
        for scenario in [Scenario::NullBoth, Scenario::NullBeta, Scenario::NullAlpha] {
            let mut t = null_t_values(scenario, n, p, reps, seed, index as u64)?;
            let row = |param, replicate, metric, value| ResultRow {
                experiment: "fig1",
                cell: index,
                scenario: scenario.label(),
                n,
                p,
                param,
                replicate,
                method: "cosine",
                metric,
                value,
            };
            for (r, &v) in t.iter().enumerate() {
                rows.push(row(None, Some(r), "T", v));
            }
            t.sort_by(|a, b| a.total_cmp(b));
            let m = t.len() as f64;
            for (i, &v) in t.iter().enumerate() {
                let q = t_quantile((i as f64 + 0.5) / m, df);
                rows.push(row(Some(q), None, "empirical_quantile", v));
            }
            index += 1;
        }
    }
    Ok(rows)
}

fn power_cell(cfg: &SimConfig, cell: u64) -> Result<Vec<CosineTest>> {
    cfg.validate()?;
    par_replicates(cfg.replicates, |r| {
        let (_, d) = draw_replicate(cfg, cell, r)?;
        cosine_statistic(&d)
    })
}

fn empirical_power(tests: &[CosineTest]) -> f64 {
    rejection_rate(&tests.iter().map(|t| t.p_two_sided).collect::<Vec<_>>(), SIGNIFICANCE)
}

/// Primal power study on the two-entry design at `p = 40`.
pub fn run_fig2(scale: Scale, replicates: Option<usize>, seed: u64) -> Result<Vec<ResultRow>> {
    let p = 40;
    let reps = replicates.unwrap_or(match scale {
        Scale::Full => 1000,
        Scale::Desk => 200,
    });
    let angle_step = match scale {
        Scale::Full => 5,
        Scale::Desk => 15,
    };
    let base = SimConfig {
        n: 0,
        p,
        rho: 0.0,
        tau: 0.0,
        sigma_eps: NOISE_SD,
        scenario: Scenario::TwoEntry,
        signal: TWO_ENTRY_SIGNAL,
        angle_deg: 0.0,
        seed,
        replicates: reps,
    };
    let mut rows = Vec::new();
    let mut index = 0usize;
    let push = |rows: &mut Vec<ResultRow>, index: usize, n, param, method, metric, value| {
        rows.push(ResultRow {
            experiment: "fig2",
            cell: index,
            scenario: Scenario::TwoEntry.label(),
            n,
            p,
            param: Some(param),
            replicate: None,
            method,
            metric,
            value,
        })
    };
    let delta_of = |deg: f64| -> Result<f64> {
        let phi = two_entry_metric_angle(deg.to_radians(), TWO_ENTRY_SIGNAL, NOISE_SD)?;
        Ok(noncentrality_primal(phi, p))
    };
    let analytic = |deg: f64| -> Result<f64> {
        let phi = two_entry_metric_angle(deg.to_radians(), TWO_ENTRY_SIGNAL, NOISE_SD)?;
        Ok(power_at_angle(phi, p, Regime::Primal, SIGNIFICANCE)?.power)
    };

    // left: mean and sd of T against δ as n grows
    for deg in [55.0, 70.0, 84.0] {
        for n in [50, 100, 200, 400, 800, 1600, 3200] {
            let cfg = SimConfig { n, angle_deg: deg, ..base };
            let t: Vec<f64> = power_cell(&cfg, index as u64)?.iter().map(|c| c.t_stat).collect();
            let (m, sd) = mean_sd(&t);
            push(&mut rows, index, n, deg, "cosine", "T_mean", m);
            push(&mut rows, index, n, deg, "cosine", "T_sd", sd);
            push(&mut rows, index, n, deg, "analytic", "delta", delta_of(deg)?);
            index += 1;
        }
    }
    // centre: power against the angle
    for n in [100, 200, 1000] {
        for deg in (1..180 / angle_step).map(|k| (k * angle_step) as f64) {
            let cfg = SimConfig { n, angle_deg: deg, ..base };
            let power = empirical_power(&power_cell(&cfg, index as u64)?);
            push(&mut rows, index, n, deg, "cosine", "power", power);
            push(&mut rows, index, n, deg, "analytic", "power", analytic(deg)?);
            index += 1;
        }
    }
    // right: power against n above, below and at the null
    for deg in [55.0, 84.0, 90.0] {
        for n in [50, 100, 200, 400, 800, 1600] {
            let cfg = SimConfig { n, angle_deg: deg, ..base };
            let power = empirical_power(&power_cell(&cfg, index as u64)?);
            push(&mut rows, index, n, deg, "cosine", "power", power);
            push(&mut rows, index, n, deg, "analytic", "power", analytic(deg)?);
            index += 1;
        }
    }
    Ok(rows)
}

/// Dual saturation study on the dense design at `n = 40`.
pub fn run_fig3(scale: Scale, replicates: Option<usize>, seed: u64) -> Result<Vec<ResultRow>> {
    let n = 40;
    let reps = replicates.unwrap_or(match scale {
        Scale::Full => 1000,
        Scale::Desk => 200,
    });
    let (angle_step, p_sweep): (usize, &[usize]) = match scale {
        Scale::Full => (5, &[40, 80, 160, 320, 640, 1000]),
        Scale::Desk => (15, &[40, 80, 160, 320]),
    };
    let base = SimConfig {
        n,
        p: 0,
        rho: 0.0,
        tau: 0.0,
        sigma_eps: 1.0,
        scenario: Scenario::DenseDual,
        signal: DENSE_SNR,
        angle_deg: 0.0,
        seed,
        replicates: reps,
    };
    let limit = |deg: f64| -> Result<f64> {
        Ok(power_at_angle(deg.to_radians(), n, Regime::Dual, SIGNIFICANCE)?.power)
    };
    let mut rows = Vec::new();
    let mut index = 0usize;
    let row = |index, p, param, replicate, method, metric, value| ResultRow {
        experiment: "fig3",
        cell: index,
        scenario: Scenario::DenseDual.label(),
        n,
        p,
        param: Some(param),
        replicate,
        method,
        metric,
        value,
    };

    // left: T at 60° for growing p
    for p in [40, 80, 160, 1000] {
        let cfg = SimConfig { p, angle_deg: 60.0, ..base };
        for (r, t) in power_cell(&cfg, index as u64)?.iter().enumerate() {
            rows.push(row(index, p, 60.0, Some(r), "cosine", "T", t.t_stat));
        }
        rows.push(row(index, p, 60.0, None, "analytic", "delta", noncentrality_dual(60f64.to_radians(), n)));
        index += 1;
    }
    // centre: U-shaped power against the angle
    for p in [40, 80, 160] {
        for deg in (1..180 / angle_step).map(|k| (k * angle_step) as f64) {
            let cfg = SimConfig { p, angle_deg: deg, ..base };
            let power = empirical_power(&power_cell(&cfg, index as u64)?);
            rows.push(row(index, p, deg, None, "cosine", "power", power));
            rows.push(row(index, p, deg, None, "analytic", "power_limit", limit(deg)?));
            index += 1;
        }
    }
    // right: saturation in p
    for deg in [60.0, 70.0, 80.0, 90.0] {
        for &p in p_sweep {
            let cfg = SimConfig { p, angle_deg: deg, ..base };
            let power = empirical_power(&power_cell(&cfg, index as u64)?);
            rows.push(row(index, p, deg, None, "cosine", "power", power));
            rows.push(row(index, p, deg, None, "analytic", "power_limit", limit(deg)?));
            index += 1;
        }
    }
    Ok(rows)
}

pub fn run_figures(scale: Scale, replicates: Option<usize>, seed: u64) -> Result<Vec<ResultRow>> {
    let mut rows = run_fig1(scale, replicates, seed)?;
    rows.extend(run_fig2(scale, replicates, seed)?);
    rows.extend(run_fig3(scale, replicates, seed)?);
    Ok(rows)
}

// ---------------------------------------------------------------- Timing

const TIMING_RUNS: usize = 5;

/// Median wall-clock milliseconds of `TIMING_RUNS` calls after one warm-up,
/// plus the value of the last call.
pub fn time_median<T>(mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut last = f()?;
    let mut ms = Vec::with_capacity(TIMING_RUNS);
    for _ in 0..TIMING_RUNS {
        let start = Instant::now();
        last = f()?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(|a, b| a.total_cmp(b));
    Ok((ms[TIMING_RUNS / 2], last))
}

/// Closed forms against the numerical optimiser on scenario S3.
pub fn run_timing(scale: Scale, replicates: Option<usize>, seed: u64) -> Result<Vec<ResultRow>> {
    let reps = replicates.unwrap_or(5);
    let sizes: &[(usize, usize)] = match scale {
        Scale::Full => &[(500, 20), (1000, 100), (1000, 500), (500, 1000)],
        Scale::Desk => &[(500, 20), (1000, 100)],
    };
    let oracle_cfg = OracleConfig { verify_gradient: false, seed, ..OracleConfig::default() };
    let mut rows = Vec::new();
    for (index, &(n, p)) in sizes.iter().enumerate() {
        let cfg = SimConfig { seed, replicates: reps, ..SimConfig::ar1(Scenario::S3, n, p) };
        // sequential so timings are not disturbed by sibling replicates
        for r in 0..reps {
            let (_, d) = draw_replicate(&cfg, index as u64, r as u64)?;
            let s = compute_sufficient_stats(&d)?;
            let mut push = |method, ms: f64, value: f64| {
                for (metric, v) in [("time_ms", ms), ("value", value)] {
                    rows.push(ResultRow {
                        experiment: "timing",
                        cell: index,
                        scenario: Scenario::S3.label(),
                        n,
                        p,
                        param: None,
                        replicate: Some(r),
                        method,
                        metric,
                        value: v,
                    });
                }
            };
            if select_regime(n, p) == Regime::Dual {
                let (ms, fit) = time_median(|| maxie_fit_dual(&d))?;
                push("maxie", ms, fit.coef_plus.h);
                continue;
            }
            let (ms, fit) = time_median(|| maxie_fit_primal(&s))?;
            push("maxie", ms, fit.coef_plus.h);
            let (ms, cor) = time_median(|| maxcor_fit(&s))?;
            push("maxcor", ms, cor.fstar);
            let (ms, w) = time_median(|| reg_y_on_x(&d))?;
            push("reg_y_on_x", ms, path_coefficients(&w, &s)?.h);
            let (ms, w) = time_median(|| reg_a_on_x(&d))?;
            push("reg_a_on_x", ms, path_coefficients(&w, &s)?.h);
            if p <= 100 {
                let (ms, res) = time_median(|| numerical_oracle(&s, Objective::H, &oracle_cfg))?;
                push("oracle_h", ms, res.value);
                let (ms, res) = time_median(|| numerical_oracle(&s, Objective::FStar, &oracle_cfg))?;
                push("oracle_fstar", ms, res.value);
            }
        }
    }
    Ok(rows)
}
