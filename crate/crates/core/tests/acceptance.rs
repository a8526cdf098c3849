//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any gated criterion fails; the timing ratio is reported
//! only.

use std::time::Instant;

use optmed::baselines::gradient_check;
use optmed::dual::{dual_path_vectors, dual_statistics, DEFAULT_EIG_CUTOFF};
use optmed::inference::{noncentrality_dual, power_noncentral_t};
use optmed::primal::path_vectors;
use optmed::simulate::{
    draw_replicate, null_t_values, run_table1_cell, run_table3_cell, time_median, Scenario,
    SimConfig, Table1Cell, Table3Cell, SIGNIFICANCE,
};
use optmed::special::{ks_p_value, ks_statistic, t_cdf};
use optmed::{
    combine, compute_sufficient_stats, cosine_test, maxcor_fit, maxie_fit_primal, numerical_oracle,
    site_extract, Objective, OracleConfig, Regime, Result,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

const SPARSE: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

fn closed_form_optimality() -> Result<Outcome> {
    let cfg = OracleConfig { verify_gradient: false, ..OracleConfig::default() };
    let (mut worst_h, mut worst_f) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut fails = 0;
    for i in 0..50u64 {
        let p = [5, 10, 20][(i % 3) as usize];
        let sim = SimConfig { seed: 100, ..SimConfig::ar1(SPARSE[(i % 4) as usize], 200, p) };
        let (_, d) = draw_replicate(&sim, 0, i)?;
        let s = compute_sufficient_stats(&d)?;
        let h = maxie_fit_primal(&s)?.coef_plus.h;
        let f = maxcor_fit(&s)?.fstar;
        let oh = numerical_oracle(&s, Objective::H, &OracleConfig { seed: i, ..cfg })?.value;
        let of = numerical_oracle(&s, Objective::FStar, &OracleConfig { seed: i, ..cfg })?.value;
        // positive margins mean the oracle did better
        worst_h = worst_h.max((oh - h) / h.abs().max(f64::MIN_POSITIVE));
        worst_f = worst_f.max(of - f);
        if h < oh - 1e-6 * h.abs() || f < of - 1e-6 {
            fails += 1;
        }
    }
    outcome(fails == 0, format!("50 instances, oracle excess: h {worst_h:.1e} (rel), f* {worst_f:.1e}"))
}

fn primal_size() -> Result<Outcome> {
    let mut rates = Vec::new();
    for (k, scenario) in [Scenario::NullBoth, Scenario::NullBeta, Scenario::NullAlpha].into_iter().enumerate() {
        let cell = Table3Cell { regime: Regime::Primal, scenario, signal: 1.0, n: 200, p: 20 };
        rates.push(run_table3_cell(&cell, k, 1000, 11)?.cosine_rate(SIGNIFICANCE));
    }
    let band = |r: f64| (0.035..=0.065).contains(&r);
    outcome(
        band(rates[0]) && band(rates[1]) && rates[2] <= 0.065,
        format!("both-null {:.3}, beta-null {:.3}, alpha-null {:.3}", rates[0], rates[1], rates[2]),
    )
}

fn primal_power() -> Result<Outcome> {
    let cell = Table3Cell { regime: Regime::Primal, scenario: Scenario::SharedEntry, signal: 0.20, n: 200, p: 20 };
    let res = run_table3_cell(&cell, 0, 1000, 12)?;
    let cos = res.cosine_rate(SIGNIFICANCE);
    let iut = res.iut_rate(SIGNIFICANCE).unwrap_or(f64::NAN);
    outcome(
        (cos - 0.84).abs() <= 0.04 && (iut - 0.66).abs() <= 0.05,
        format!("cosine {cos:.3} (0.84 ± 0.04), IUT {iut:.3} (0.66 ± 0.05)"),
    )
}

fn biobank_statistic() -> Result<Outcome> {
    let t = cosine_test(0.107, 2915.0, Regime::Primal)?;
    outcome((5e-9..=8e-9).contains(&t.p_two_sided), format!("p = {:.3e}", t.p_two_sided))
}

fn dual_saturation() -> Result<Outcome> {
    let delta = noncentrality_dual(60f64.to_radians(), 40);
    let formula = 60f64.to_radians().tan().recip() * 38f64.sqrt();
    let mut ok = (delta - formula).abs() <= 1e-10 && (delta - 3.56).abs() < 0.005;
    let mut levels = Vec::new();
    for (deg, target) in [(60.0, 0.93), (70.0, 0.59), (80.0, 0.19), (90.0, 0.05)] {
        let power = power_noncentral_t(noncentrality_dual(f64::to_radians(deg), 40), 38.0, 0.05)?.power;
        ok &= (power - target).abs() <= 0.02;
        levels.push(format!("{power:.3}"));
    }
    outcome(ok, format!("delta(60°) = {delta:.4}, power {}", levels.join("/")))
}

fn primal_dual_agreement() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let p = 3 + (i as usize % 5) * 4;
        let sim = SimConfig { seed: 200, ..SimConfig::ar1(SPARSE[(i % 4) as usize], 60, p) };
        let (_, d) = draw_replicate(&sim, 0, i)?;
        let primal = path_vectors(&compute_sufficient_stats(&d)?, 0.0)?.cos_phi;
        let dual = dual_path_vectors(&dual_statistics(&d)?, DEFAULT_EIG_CUTOFF)?.cos_phi;
        worst = worst.max((primal - dual).abs());
    }
    outcome(worst <= 1e-9, format!("max |cos_primal − cos_dual| = {worst:.1e}"))
}

fn null_shape() -> Result<Outcome> {
    let mut passes = [0usize; 2];
    for meta in 0..20u64 {
        for (k, (n, p, df)) in [(1000, 100, 99.0), (100, 1000, 98.0)].into_iter().enumerate() {
            let t = null_t_values(Scenario::NullBoth, n, p, 2000, 300 + meta, k as u64)?;
            let d = ks_statistic(&t, |x| t_cdf(x, df));
            if ks_p_value(d, t.len()) > 0.01 {
                passes[k] += 1;
            }
        }
    }
    outcome(
        passes[0] >= 18 && passes[1] >= 18,
        format!("KS not rejected: primal {}/20, dual {}/20", passes[0], passes[1]),
    )
}

fn table1_cells() -> Result<Outcome> {
    let cells = [
        (Table1Cell { scenario: Scenario::S1, n: 500, p: 20 }, 0.86),
        (Table1Cell { scenario: Scenario::S4, n: 500, p: 20 }, 0.80),
        (Table1Cell { scenario: Scenario::S1, n: 500, p: 1000 }, 1.02),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (cell, target)) in cells.iter().enumerate() {
        let reps = run_table1_cell(cell, k, 20, 400)?;
        let h: Vec<f64> = reps.iter().map(|r| r.methods[0].1).collect();
        let mean = h.iter().sum::<f64>() / 20.0;
        let sd = (h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        let band = 3.0 * sd / 20f64.sqrt();
        ok &= (mean - target).abs() <= band;
        parts.push(format!(
            "{} ({}, {}) {mean:.3} vs {target} ± {band:.3}",
            cell.scenario.label(),
            cell.n,
            cell.p
        ));
    }
    outcome(ok, parts.join("; "))
}

fn federated_equivalence() -> Result<Outcome> {
    let mut worst_stats: f64 = 0.0;
    let mut worst_w: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for i in 0..10u64 {
        let sim = SimConfig { seed: 500, ..SimConfig::ar1(SPARSE[(i % 4) as usize], 150, 12) };
        let (_, centred) = draw_replicate(&sim, 0, i)?;
        // shift to make the raw sums non-trivial
        let d = optmed::Dataset::new(
            centred.mediators().add_scalar(2.0),
            centred.treatment().add_scalar(1.0),
            centred.outcome().add_scalar(-3.0),
        )?;
        let sites = rng.random_range(2..=5);
        let mut idx: Vec<usize> = (0..d.n()).collect();
        idx.shuffle(&mut rng);
        let chunk = d.n().div_ceil(sites);
        let summaries = idx
            .chunks(chunk)
            .enumerate()
            .map(|(k, rows)| site_extract(&format!("site{k}"), &d.select_rows(rows)?))
            .collect::<Result<Vec<_>>>()?;
        let fed = combine(&summaries)?;
        let pooled = compute_sufficient_stats(&d.center_and_standardise(false)?)?;
        let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(1.0);
        worst_stats = worst_stats
            .max((&fed.v - &pooled.v).amax() / pooled.v.amax().max(1.0))
            .max((&fed.a - &pooled.a).amax() / pooled.a.amax().max(1.0))
            .max((&fed.z - &pooled.z).amax() / pooled.z.amax().max(1.0))
            .max(rel(fed.norm_a2, pooled.norm_a2, pooled.norm_a2))
            .max(rel(fed.norm_y2, pooled.norm_y2, pooled.norm_y2));
        let wf = maxie_fit_primal(&fed)?;
        let wp = maxie_fit_primal(&pooled)?;
        worst_w = worst_w.max((&wf.w_plus - &wp.w_plus).amax()).max((&wf.w_minus - &wp.w_minus).amax());
    }
    outcome(
        worst_stats <= 1e-10 && worst_w <= 1e-8,
        format!("stats {worst_stats:.1e}, weights {worst_w:.1e}"),
    )
}

fn gradient_checks() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let sim = SimConfig { seed: 600, ..SimConfig::ar1(SPARSE[(i % 4) as usize], 200, 10) };
        let (_, d) = draw_replicate(&sim, 0, i)?;
        let s = compute_sufficient_stats(&d)?;
        for obj in [Objective::H, Objective::FStar] {
            worst = worst.max(gradient_check(obj, &s, 5, i));
        }
    }
    outcome(worst <= 1e-5, format!("max relative gradient error {worst:.1e}"))
}

fn timing_ratio() -> Result<Outcome> {
    let sim = SimConfig { seed: 700, ..SimConfig::ar1(Scenario::S3, 1000, 100) };
    let (_, d) = draw_replicate(&sim, 0, 0)?;
    let s = compute_sufficient_stats(&d)?;
    let cfg = OracleConfig { verify_gradient: false, ..OracleConfig::default() };
    let (closed, _) = time_median(|| maxie_fit_primal(&s))?;
    let (oracle, _) = time_median(|| numerical_oracle(&s, Objective::H, &cfg))?;
    let ratio = oracle / closed;
    outcome(ratio >= 50.0, format!("oracle {oracle:.2} ms / closed form {closed:.3} ms = {ratio:.0}x"))
}

fn main() {
    type Check = fn() -> Result<Outcome>;
    let criteria: [(&str, Check, bool); 11] = [
        ("closed-form optimality", closed_form_optimality, true),
        ("primal size", primal_size, true),
        ("primal power", primal_power, true),
        ("biobank statistic", biobank_statistic, true),
        ("dual noncentrality and saturation", dual_saturation, true),
        ("primal/dual agreement", primal_dual_agreement, true),
        ("null distribution shape", null_shape, true),
        ("table 1 spot cells", table1_cells, true),
        ("federated equivalence", federated_equivalence, true),
        ("gradient check", gradient_checks, true),
        ("timing ratio (soft)", timing_ratio, false),
    ];
    let mut gated_failures = 0;
    for (k, (name, check, gated)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let tag = if pass { "PASS" } else { "FAIL" };
        let soft = if *gated { "" } else { " [reported, not gated]" };
        println!("criterion {:>2} {tag}: {name} — {detail} ({secs:.1}s){soft}", k + 1);
        if !pass && *gated {
            gated_failures += 1;
        }
    }
    if gated_failures > 0 {
        println!("{gated_failures} gated criteria failed");
        std::process::exit(1);
    }
}
