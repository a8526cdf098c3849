//! Distribution functions used by the cosine test, the IUT and the power
//! calculations.
//!
//! The regularised incomplete beta and the log-gamma function come from
//! `statrs`; everything else is assembled here. Tail probabilities are
//! computed directly from the incomplete beta rather than as `1 − cdf`, so
//! p-values far below machine epsilon keep their relative accuracy.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// `P(T ≥ |t|)` for `T ~ t(df)`.
fn t_tail(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    // for small t the complementary form loses less precision
    if t2 < df {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * df, t2 / (df + t2))
    } else {
        0.5 * beta_reg(0.5 * df, 0.5, df / (df + t2))
    }
}

/// Student-t CDF. `t_cdf(0, ν)` is exactly 0.5.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t > 0.0 {
        1.0 - t_tail(t, df)
    } else {
        t_tail(t, df)
    }
}

/// Upper tail `P(T ≥ t)`.
pub fn t_sf(t: f64, df: f64) -> f64 {
    t_cdf(-t, df)
}

pub fn t_pdf(t: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

/// Quantile of `t(df)` by safeguarded Newton iteration on the CDF.
pub fn t_quantile(prob: f64, df: f64) -> f64 {
    if !(0.0..=1.0).contains(&prob) || prob.is_nan() {
        return f64::NAN;
    }
    if prob == 0.5 {
        return 0.0;
    }
    if prob == 0.0 {
        return f64::NEG_INFINITY;
    }
    if prob == 1.0 {
        return f64::INFINITY;
    }
    if prob < 0.5 {
        return -t_quantile(1.0 - prob, df);
    }
    // solve t_tail(t) = 1 − prob on t > 0
    let target = 1.0 - prob;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while t_tail(hi, df) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = t_tail(t, df) - target;
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let step = f / t_pdf(t, df);
        let mut next = t + step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * t.abs() || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        t = next;
    }
    t
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Regularised incomplete beta `I_x(a, b)`, i.e. the Beta(a, b) CDF.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(a, b, x)
    }
}

/// Upper tail of the F(d1, d2) distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f))
}

/// CDF of the noncentral t distribution (Lenth's series, AS 243).
///
/// For `t ≥ 0`,
/// `F(t) = Φ(−δ) + ½ Σⱼ [pⱼ I_x(j+½, ν/2) + qⱼ I_x(j+1, ν/2)]` with
/// `x = t²/(t²+ν)`, `pⱼ` the Poisson(δ²/2) weights and `qⱼ` their
/// half-integer counterparts. Negative `t` uses `F(t; δ) = 1 − F(−t; −δ)`.
pub fn noncentral_t_cdf(t: f64, df: f64, delta: f64) -> f64 {
    if t.is_nan() || delta.is_nan() {
        return f64::NAN;
    }
    if delta == 0.0 {
        return t_cdf(t, df);
    }
    if t < 0.0 {
        return 1.0 - nct_cdf_nonneg(-t, df, -delta);
    }
    nct_cdf_nonneg(t, df, delta)
}

fn nct_cdf_nonneg(t: f64, df: f64, delta: f64) -> f64 {
    let base = normal_cdf(-delta);
    if t == 0.0 {
        return base;
    }
    if t.is_infinite() {
        return 1.0;
    }
    let x = t * t / (t * t + df);
    let lambda = 0.5 * delta * delta;
    let ln_lambda = lambda.ln();
    let half_df = 0.5 * df;
    let j_max = (lambda + 12.0 * lambda.sqrt() + 60.0).ceil() as usize;
    let mut sum = 0.0;
    for j in 0..=j_max {
        let jf = j as f64;
        let ln_pois = -lambda + jf * ln_lambda - ln_gamma(jf + 1.0);
        let pj = ln_pois.exp();
        let qj = delta / std::f64::consts::SQRT_2
            * (-lambda + jf * ln_lambda - ln_gamma(jf + 1.5)).exp();
        let term = pj * beta_reg(jf + 0.5, half_df, x) + qj * beta_reg(jf + 1.0, half_df, x);
        sum += term;
        if jf > lambda && pj + qj.abs() < 1e-17 {
            break;
        }
    }
    (base + 0.5 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let i = i as f64;
            ((i + 1.0) / n - f).max(f - i / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` for `n` samples, with
/// Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
