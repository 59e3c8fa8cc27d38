//! Descriptive statistics, Shapiro-Wilk normality, Wilcoxon-Mann-Whitney and
//! Pearson correlation over per-iteration measurement vectors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Significance level gating %DEC reporting.
pub const ALPHA: f64 = 0.05;

/// Largest smaller-sample size for which the U distribution is enumerated.
pub const EXACT_U_MAX: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {given}")]
    TooFewValues { given: usize, needed: usize },
    #[error("value at index {0} is not finite")]
    NonFinite(usize),
    #[error("sample size {0} outside the supported range 3..=5000")]
    OutOfRangeN(usize),
    #[error("all values are equal")]
    ZeroVariance,
    #[error("input is constant")]
    ConstantInput,
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// A finite measurement vector with at least three values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SampleVector(Vec<f64>);

impl SampleVector {
    pub fn new(values: Vec<f64>) -> Result<Self, StatsError> {
        if values.len() < 3 {
            return Err(StatsError::TooFewValues {
                given: values.len(),
                needed: 3,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.0)
    }
}

impl TryFrom<Vec<f64>> for SampleVector {
    type Error = StatsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SampleVector> for Vec<f64> {
    fn from(v: SampleVector) -> Self {
        v.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// `std / mean`; absent when the mean is zero.
    pub rsec: Option<f64>,
    /// Half-width of the 95% confidence interval of the mean.
    pub ci95_half_width: f64,
}

pub fn descriptive(v: &SampleVector) -> Descriptive {
    let n = v.len();
    let m = v.mean();
    let ss: f64 = v.values().iter().map(|x| (x - m).powi(2)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    let rsec = (m != 0.0).then(|| (std / m).abs());
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("n >= 3 gives positive degrees of freedom")
        .inverse_cdf(0.975);
    Descriptive {
        n,
        mean: m,
        std,
        rsec,
        ci95_half_width: t * std / (n as f64).sqrt(),
    }
}

/// Per-variant summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub aec: f64,
    pub std: f64,
    pub rsec: Option<f64>,
    pub ci95_half_width: f64,
    /// Absent when the test is undefined for the data (e.g. zero variance).
    pub shapiro_p: Option<f64>,
}

pub fn stat_report(v: &SampleVector) -> StatReport {
    let d = descriptive(v);
    StatReport {
        aec: d.mean,
        std: d.std,
        rsec: d.rsec,
        ci95_half_width: d.ci95_half_width,
        shapiro_p: shapiro(v).ok().map(|s| s.p_value),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    /// U statistic of the first sample.
    pub u_statistic: f64,
    pub p_value: f64,
    /// `100 * (mean(a) - mean(b)) / mean(b)`, only when `p_value < ALPHA`.
    pub dec_percent: Option<f64>,
    pub method: UMethod,
}

/// Number of label assignments producing each U value, for sample sizes
/// `n` and `m`. These are the coefficients of the Gaussian binomial
/// `[n+m choose n]_q`.
fn u_distribution(n: usize, m: usize) -> Vec<i128> {
    let (small, large) = if n <= m { (n, m) } else { (m, n) };
    let len = small * large + 1;
    let mut c = vec![0i128; len];
    c[0] = 1;
    for i in 1..=small {
        // multiply by (1 - q^(large + i))
        let shift = large + i;
        for k in (shift..len).rev() {
            c[k] -= c[k - shift];
        }
        // divide by (1 - q^i)
        for k in i..len {
            c[k] += c[k - i];
        }
    }
    c
}

/// Mid-ranks (1-based) of the pooled values and the tie group sizes.
fn rank_with_ties(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon-Mann-Whitney test.
///
/// The exact null distribution is used when the smaller sample has at most
/// [`EXACT_U_MAX`] values and there are no ties; otherwise the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney(a: &SampleVector, b: &SampleVector) -> PairwiseComparison {
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    let (ranks, ties) = rank_with_ties(&pooled);
    let rank_sum_a: f64 = ranks[..n].iter().sum();
    let u_a = rank_sum_a - (n * (n + 1)) as f64 / 2.0;
    let nm = (n * m) as f64;

    let (p, method) = if ties.is_empty() && n.min(m) <= EXACT_U_MAX {
        let counts = u_distribution(n, m);
        let total: i128 = counts.iter().sum();
        let u = u_a.round() as usize;
        let lower: i128 = counts[..=u].iter().sum();
        let upper: i128 = counts[u..].iter().sum();
        let tail = lower.min(upper) as f64 / total as f64;
        ((2.0 * tail).min(1.0), UMethod::Exact)
    } else {
        let big_n = (n + m) as f64;
        let tie_term: f64 = ties
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / (big_n * (big_n - 1.0));
        let variance = nm / 12.0 * ((big_n + 1.0) - tie_term);
        let p = if variance <= 0.0 {
            1.0
        } else {
            let z = ((u_a - nm / 2.0).abs() - 0.5).max(0.0) / variance.sqrt();
            (2.0 * standard_normal().sf(z)).min(1.0)
        };
        (p, UMethod::Normal)
    };

    let baseline = b.mean();
    let dec_percent =
        (p < ALPHA && baseline != 0.0).then(|| 100.0 * (a.mean() - baseline) / baseline);
    PairwiseComparison {
        u_statistic: u_a,
        p_value: p,
        dec_percent,
        method,
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
}

/// Pearson product-moment correlation with a two-sided Student-t p-value.
pub fn pearson(x: &SampleVector, y: &SampleVector) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    let (mx, my) = (x.mean(), y.mean());
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.values().iter().zip(y.values()) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if n == 2 {
        1.0
    } else if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p_value })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

/// Evaluates `c[0] + c[1] x + c[2] x^2 + ...`.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W and its p-value by Royston's approximation (AS R94).
pub fn shapiro(v: &SampleVector) -> Result<ShapiroWilk, StatsError> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];
    const SMALL: f64 = 1e-19;

    let n = v.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::OutOfRangeN(n));
    }
    let mut x = v.values().to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL * x[n - 1].abs().max(1.0) {
        return Err(StatsError::ZeroVariance);
    }

    let half = n / 2;
    let an = n as f64;
    let normal = standard_normal();
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        // Expected normal order statistics of the lower half (negative).
        let m: Vec<f64> = (1..=half)
            .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first_scaled, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first_scaled..half {
            a[i] = -m[i] / fac;
        }
    }

    let mean = mean(&x);
    let ssq: f64 = x.iter().map(|xi| (xi - mean).powi(2)).sum();
    let b: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = ((b * b) / ssq).min(1.0);

    let p_value = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        (1.0 - pi6 * w.sqrt().acos()).max(0.0)
    } else {
        let y = (1.0 - w).ln();
        if n <= 11 {
            let gamma = poly(&G, an);
            if y >= gamma {
                SMALL
            } else {
                let y = -(gamma - y).ln();
                let mu = poly(&C3, an);
                let sigma = poly(&C4, an).exp();
                normal.sf((y - mu) / sigma)
            }
        } else {
            let ln_n = an.ln();
            let mu = poly(&C5, ln_n);
            let sigma = poly(&C6, ln_n).exp();
            normal.sf((y - mu) / sigma)
        }
    };
    Ok(ShapiroWilk { w, p_value })
}
