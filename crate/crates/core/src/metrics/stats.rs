//! Descriptive statistics, two-sample t-tests and least-squares fits.

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when n = 1.
    pub std: f64,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    /// Set when n = 1, where the sample deviation is undefined.
    pub degenerate: bool,
}

pub fn summarize_distribution(values: &[f64]) -> Result<SummaryStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput("no values to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::DegenerateInput("non-finite value".into()));
    }
    // Welford's update
    let (mut mean, mut m2) = (0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let n = values.len();
    let std = if n > 1 {
        (m2 / (n - 1) as f64).max(0.0).sqrt()
    } else {
        0.0
    };
    Ok(SummaryStats {
        mean,
        std,
        n,
        min,
        max,
        degenerate: n == 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestVariant {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Equal variances, pooled standard deviation, n1 + n2 - 2 df.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub variant: TTestVariant,
    pub mean1: f64,
    pub sd1: f64,
    pub n1: usize,
    pub mean2: f64,
    pub sd2: f64,
    pub n2: usize,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value_two_tailed: f64,
}

pub fn welch_t_test(
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
) -> Result<TTestResult, MetricsError> {
    t_test(TTestVariant::Welch, mean1, sd1, n1, mean2, sd2, n2)
}

pub fn pooled_t_test(
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
) -> Result<TTestResult, MetricsError> {
    t_test(TTestVariant::Pooled, mean1, sd1, n1, mean2, sd2, n2)
}

pub fn t_test(
    variant: TTestVariant,
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
) -> Result<TTestResult, MetricsError> {
    if n1 < 2 || n2 < 2 {
        return Err(MetricsError::DegenerateInput(
            "each group needs at least 2 observations".into(),
        ));
    }
    if !(sd1 > 0.0 && sd2 > 0.0 && sd1.is_finite() && sd2.is_finite()) {
        return Err(MetricsError::DegenerateInput(
            "standard deviations must be positive".into(),
        ));
    }
    if !(mean1.is_finite() && mean2.is_finite()) {
        return Err(MetricsError::DegenerateInput("means must be finite".into()));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let (v1, v2) = (sd1 * sd1 / n1f, sd2 * sd2 / n2f);
    let (se, df) = match variant {
        TTestVariant::Welch => {
            let df = (v1 + v2).powi(2) / (v1 * v1 / (n1f - 1.0) + v2 * v2 / (n2f - 1.0));
            ((v1 + v2).sqrt(), df)
        }
        TTestVariant::Pooled => {
            let df = n1f + n2f - 2.0;
            let sp2 = ((n1f - 1.0) * sd1 * sd1 + (n2f - 1.0) * sd2 * sd2) / df;
            ((sp2 * (1.0 / n1f + 1.0 / n2f)).sqrt(), df)
        }
    };
    let t = (mean1 - mean2) / se;
    Ok(TTestResult {
        variant,
        mean1,
        sd1,
        n1,
        mean2,
        sd2,
        n2,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value_two_tailed: student_t_two_tailed(t, df),
    })
}

/// Two-tailed tail probability P(|T| ≥ |t|) for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// I_x(a, b) by the continued fraction (modified Lentz), using the
/// symmetry I_x(a, b) = 1 - I_{1-x}(b, a) where it converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares of y on x.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<RegressionResult, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::DegenerateInput("a fit needs at least 2 points".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MetricsError::DegenerateInput("non-finite coordinate".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateInput("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - (slope * x + intercept)).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        n: points.len(),
    })
}
