//! Correlation-based evaluation.
//!
//! The model is judged by Pearson's r between its scores and the observed
//! outcomes, with a two-tailed p-value from Student's t distribution, and by
//! how cleanly score buckets separate close rates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cut points: five equal-width score buckets.
pub const DEFAULT_BOUNDARIES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Pearson correlation coefficient.
///
/// Uses centered sums, which equal the raw-sum textbook expression
/// `(Σxy − ΣxΣy/N) / sqrt((Σx² − (Σx)²/N)(Σy² − (Σy)²/N))` but do not
/// cancel catastrophically. Symmetric in its arguments bit for bit.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} scores vs {} outcomes", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in correlation input".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::UndefinedCorrelation);
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of `r` over `n` samples via `t = r sqrt((n-2)/(1-r²))`
/// with `n - 2` degrees of freedom. `|r| = 1` gives 0.
pub fn p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if !(r.abs() <= 1.0) {
        return Err(Error::Data(format!("correlation {r} outside [-1, 1]")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    Ok(regularized_incomplete_beta(df / (df + t2), df / 2.0, 0.5).clamp(0.0, 1.0))
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry
/// `I_x(a, b) = 1 - I_{1-x}(b, a)` where it converges faster.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Mean binary cross-entropy of probabilities against outcomes, with
/// probabilities clamped away from 0 and 1.
pub fn mean_bce(scores: &[f64], labels: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-12;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(FLOOR, 1.0 - FLOOR);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    total / scores.len().max(1) as f64
}

/// Correlation, significance and loss of one scored split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the correlation is undefined (constant scores or outcomes).
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub mean_loss: f64,
    pub n: usize,
    /// Why `r` is missing, if it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], labels: &[f64]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = scores.len();
        let mean_loss = mean_bce(scores, labels);
        let (r, p_value, error) = match pearson_r(scores, labels) {
            Ok(r) => (Some(r), p_value(r, n).ok(), None),
            Err(e @ (Error::UndefinedCorrelation | Error::TooFewSamples { .. })) => (None, None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        Ok(Self {
            r,
            p_value,
            mean_loss,
            n,
            error,
        })
    }

    /// `r`, or the undefined-correlation error.
    pub fn correlation(&self) -> Result<f64> {
        self.r.ok_or(Error::UndefinedCorrelation)
    }
}

/// One score interval of a [`BucketReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean outcome in the bucket; `None` when empty.
    pub close_rate: Option<f64>,
}

/// Close rate per score interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
}

/// Bucket index of each score for the given interior cut points. Intervals
/// are half-open `[lo, hi)` except the last, which is closed.
pub fn assign_buckets(scores: &[f64], boundaries: &[f64]) -> Result<Vec<usize>> {
    let sorted = boundaries.windows(2).all(|w| w[0] < w[1]);
    let inside = boundaries.iter().all(|&b| b > 0.0 && b < 1.0);
    if !sorted || !inside {
        return Err(Error::UnsortedBoundaries);
    }
    Ok(scores
        .iter()
        .map(|&s| boundaries.partition_point(|&b| b <= s))
        .collect())
}

pub fn bucket_report(scores: &[f64], outcomes: &[f64], boundaries: &[f64]) -> Result<BucketReport> {
    if scores.len() != outcomes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} outcomes",
            scores.len(),
            outcomes.len()
        )));
    }
    let assignment = assign_buckets(scores, boundaries)?;
    let k = boundaries.len() + 1;
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0f64; k];
    for (&b, &y) in assignment.iter().zip(outcomes) {
        counts[b] += 1;
        sums[b] += y;
    }
    let edges: Vec<f64> = std::iter::once(0.0)
        .chain(boundaries.iter().copied())
        .chain(std::iter::once(1.0))
        .collect();
    let buckets = (0..k)
        .map(|i| Bucket {
            lower: edges[i],
            upper: edges[i + 1],
            count: counts[i],
            close_rate: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
        })
        .collect();
    Ok(BucketReport { buckets })
}

impl BucketReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// Aligned plain-text table, close rates in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8} {:>24}", "Model score thresholds", "Count", "Actual leads close rate");
        for b in &self.buckets {
            let range = format!("[{:.1} - {:.1}]", b.lower, b.upper);
            let rate = b.close_rate.map_or_else(|| "n/a".to_string(), |r| format!("{:.1}%", 100.0 * r));
            let _ = writeln!(out, "{range:<24} {:>8} {rate:>24}", b.count);
        }
        out
    }
}

/// Formats an optional p-value the way result tables usually show it.
pub fn format_p(p: Option<f64>) -> String {
    match p {
        None => "n/a".into(),
        Some(p) if p < 0.01 => "< 0.01".into(),
        Some(p) => format!("{p:.2}"),
    }
}

pub fn format_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |r| format!("{r:.4}"))
}
