//! Hypothesis tests for comparing ordering strategies.
//!
//! F-distribution tails come from the regularized incomplete beta function;
//! the studentized range distribution behind Tukey HSD is evaluated by direct
//! quadrature of its double-integral definition.

pub mod quadrature;
pub mod special;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use quadrature::{integrate, Tolerance};
pub use special::{f_upper_tail, t_upper_tail};
use special::{ln_gamma, normal_cdf, normal_pdf, normal_sf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub label: String,
    pub values: Vec<f64>,
}

impl GroupSample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "group `{label}` needs at least 2 values"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(label));
        }
        Ok(Self { label, values })
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    pub fn sd(&self) -> f64 {
        sample_sd(&self.values)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `n - 1` denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// A seeded normal sample affinely mapped onto an exact mean and SD.
///
/// Used to rebuild groups from published summary statistics.
pub fn synthesize_group(label: &str, target_mean: f64, target_sd: f64, n: usize, seed: u64) -> Result<GroupSample> {
    if n < 2 || target_sd.is_nan() || target_sd < 0.0 {
        return Err(Error::InvalidInput("synthesis needs n >= 2 and sd >= 0".into()));
    }
    let mut rng = seed::rng(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (m, s) = (mean(&raw), sample_sd(&raw));
    let values = raw
        .iter()
        .map(|x| target_mean + target_sd * (x - m) / s)
        .collect();
    GroupSample::new(label, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnovaFlag {
    /// Every observation equal within its group and all means equal.
    NoVariance,
    /// Zero residual variance with differing means; F is infinite.
    ZeroResidualVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// Serialized as `null` when infinite.
    #[serde(rename = "F")]
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    pub ms_within: f64,
    pub group_means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<AnovaFlag>,
}

fn f_test(ss_effect: f64, df_effect: usize, ss_error: f64, df_error: usize, means: Vec<f64>) -> AnovaResult {
    let ms_effect = ss_effect / df_effect as f64;
    let ms_error = ss_error / df_error as f64;
    let scale = ss_effect.abs() + ss_error.abs();
    let (f, p, flag) = if ss_error <= 1e-14 * scale || scale == 0.0 {
        if ss_effect <= 1e-14 * scale || scale == 0.0 {
            (0.0, 1.0, Some(AnovaFlag::NoVariance))
        } else {
            (f64::INFINITY, 0.0, Some(AnovaFlag::ZeroResidualVariance))
        }
    } else {
        let f = ms_effect / ms_error;
        (f, f_upper_tail(f, df_effect as f64, df_error as f64), None)
    };
    AnovaResult {
        f,
        df_between: df_effect,
        df_within: df_error,
        p,
        ms_within: ms_error,
        group_means: means,
        flag,
    }
}

/// Between-group over within-group mean squares.
pub fn one_way_anova(groups: &[GroupSample]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("ANOVA needs at least 2 groups".into()));
    }
    let n_total: usize = groups.iter().map(|g| g.values.len()).sum();
    let grand = groups.iter().flat_map(|g| &g.values).sum::<f64>() / n_total as f64;
    let means: Vec<f64> = groups.iter().map(GroupSample::mean).collect();
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.values.len() as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.values.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    Ok(f_test(ss_between, groups.len() - 1, ss_within, n_total - groups.len(), means))
}

/// Repeated-measures ANOVA on a subjects x conditions table: conditions
/// against the subject-by-condition residual.
pub fn rm_anova(table: &[Vec<f64>]) -> Result<AnovaResult> {
    let n = table.len();
    let k = table.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InvalidInput(
            "repeated-measures ANOVA needs at least 2 subjects and 2 conditions".into(),
        ));
    }
    if table.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidInput("missing cells in repeated-measures table".into()));
    }
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("repeated-measures table".into()));
    }
    let grand = table.iter().flatten().sum::<f64>() / (n * k) as f64;
    let subject_means: Vec<f64> = table.iter().map(|r| mean(r)).collect();
    let condition_means: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_conditions: f64 = condition_means.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
    let mut ss_error = 0.0;
    for (row, sm) in table.iter().zip(&subject_means) {
        for (x, cm) in row.iter().zip(&condition_means) {
            ss_error += (x - sm - cm + grand).powi(2);
        }
    }
    Ok(f_test(ss_conditions, k - 1, ss_error, (n - 1) * (k - 1), condition_means))
}

// ---------------------------------------------------------------------------
// Studentized range distribution

/// Beyond this many degrees of freedom the pooled SD is treated as exact.
const DF_INFINITE: f64 = 1e6;

/// `P(range of k standard normals > w)`.
fn normal_range_sf(w: f64, k: usize) -> Result<f64> {
    if w <= 0.0 {
        return Ok(1.0);
    }
    let power = (k - 1) as i32;
    let band = |z: f64| {
        // Mass of N(0,1) on [z - w, z], from whichever tail is accurate.
        let mass = if z - w > 0.0 {
            normal_sf(z - w) - normal_sf(z)
        } else {
            normal_cdf(z) - normal_cdf(z - w)
        };
        normal_pdf(z) * mass.max(0.0).powi(power)
    };
    let peak = (0.5 * w).min(8.0);
    let tol = Tolerance { abs: 1e-14, rel: 1e-13, ..Tolerance::default() };
    let cdf = k as f64 * integrate(band, &[-9.0, peak, 9.0 + w.min(9.0)], tol)?;
    Ok((1.0 - cdf).clamp(0.0, 1.0))
}

/// Upper tail `P(Q > q)` of the studentized range with `k` means and `df`
/// degrees of freedom for the pooled SD.
pub fn q_upper_tail(q: f64, k: usize, df: f64) -> Result<f64> {
    if k < 2 || df.is_nan() || df < 1.0 || q.is_nan() {
        return Err(Error::InvalidInput(format!(
            "studentized range needs k >= 2 and df >= 1 (k={k}, df={df})"
        )));
    }
    if q <= 0.0 {
        return Ok(1.0);
    }
    if q.is_infinite() {
        return Ok(0.0);
    }
    if df >= DF_INFINITE {
        return normal_range_sf(q, k);
    }
    // Density of s = sqrt(chi2_df / df).
    //   f(s) = 2 (df/2)^(df/2) s^(df-1) exp(-df s^2 / 2) / Gamma(df/2)
    let ln_norm = std::f64::consts::LN_2 + 0.5 * df * (0.5 * df).ln() - ln_gamma(0.5 * df);
    let density = |s: f64| -> f64 {
        if s <= 0.0 {
            return if df == 1.0 { ln_norm.exp() } else { 0.0 };
        }
        (ln_norm + (df - 1.0) * s.ln() - 0.5 * df * s * s).exp()
    };
    let failure = std::cell::Cell::new(None);
    let integrand = |s: f64| -> f64 {
        let d = density(s);
        if d == 0.0 {
            return 0.0;
        }
        match normal_range_sf(q * s, k) {
            Ok(tail) => d * tail,
            Err(e) => {
                failure.set(Some(e.to_string()));
                f64::NAN
            }
        }
    };
    let mode = ((df - 1.0) / df).sqrt();
    let spread = (0.5 / df).sqrt();
    let upper = ((df + 20.0 * (2.0 * df).sqrt() + 60.0) / df).sqrt();
    let mut breaks = vec![0.0];
    for c in [-4.0, -2.0, 0.0, 2.0, 4.0] {
        let s = mode + c * spread;
        if s > breaks[breaks.len() - 1] && s < upper {
            breaks.push(s);
        }
    }
    breaks.push(upper);
    let tol = Tolerance { abs: 1e-12, rel: 1e-11, ..Tolerance::default() };
    match integrate(integrand, &breaks, tol) {
        Ok(p) => Ok(p.clamp(0.0, 1.0)),
        Err(e) => Err(match failure.take() {
            Some(inner) => Error::Quadrature(format!("q={q} k={k} df={df}: {inner}")),
            None => Error::Quadrature(format!("q={q} k={k} df={df}: {e}")),
        }),
    }
}

/// Critical value `q` with `P(Q > q) = alpha`, by bisection to 1e-7.
pub fn q_critical(alpha: f64, k: usize, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = 4.0;
    while q_upper_tail(hi, k, df)? > alpha {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Quadrature(format!("no critical value below {hi} for alpha={alpha}")));
        }
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if q_upper_tail(mid, k, df)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Tukey HSD

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub a: String,
    pub b: String,
    /// `mean(b) - mean(a)`.
    pub diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_adj: f64,
}

/// All pairwise comparisons (in input order) with simultaneous confidence
/// intervals at level `1 - alpha`. Requires equal group sizes.
pub fn tukey_hsd(groups: &[GroupSample], alpha: f64) -> Result<Vec<TukeyPair>> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("Tukey HSD needs at least 2 groups".into()));
    }
    let n = groups[0].values.len();
    if groups.iter().any(|g| g.values.len() != n) {
        return Err(Error::InvalidInput(
            "Tukey HSD requires equal group sizes".into(),
        ));
    }
    let anova = one_way_anova(groups)?;
    let k = groups.len();
    let df = anova.df_within as f64;
    let se = (anova.ms_within / n as f64).sqrt();
    let q_crit = q_critical(alpha, k, df)?;
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let diff = anova.group_means[j] - anova.group_means[i];
            let p_adj = if se > 0.0 {
                q_upper_tail(diff.abs() / se, k, df)?
            } else if diff == 0.0 {
                1.0
            } else {
                0.0
            };
            out.push(TukeyPair {
                a: groups[i].label.clone(),
                b: groups[j].label.clone(),
                diff,
                ci_low: diff - q_crit * se,
                ci_high: diff + q_crit * se,
                p_adj,
            });
        }
    }
    Ok(out)
}
