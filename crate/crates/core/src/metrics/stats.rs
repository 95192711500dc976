//! Pearson chi-square test of independence and the Kruskal–Wallis H test,
//! with p-values from the regularized upper incomplete gamma function.

use serde::Serialize;

use super::{JointCounts, MetricsError};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, ~1e-15 relative).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = a;
    for _ in 0..MAX_ITER {
        n += 1.0;
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Γ(a, x).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    gamma_q(dof as f64 / 2.0, statistic / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of independence on an `R × C` table.
pub fn chi_square_independence(table: &JointCounts) -> Result<TestResult, MetricsError> {
    let n = table.total();
    if n == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let rows = table.row_marginals();
    let cols = table.col_marginals();
    if rows.iter().chain(&cols).any(|&m| m == 0) {
        return Err(MetricsError::ZeroExpectedCell);
    }
    let dof = (table.n_rows() - 1) * (table.n_cols() - 1);
    if dof == 0 {
        return Err(MetricsError::DegenerateTable);
    }
    let n = n as f64;
    let mut statistic = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let expected = r as f64 * c as f64 / n;
            let diff = table.get(i, j) as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    Ok(TestResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Kruskal–Wallis H with the standard tie correction.
///
/// Requires at least two non-empty groups. The p-value uses the chi-square
/// approximation with `groups − 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, MetricsError> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(MetricsError::TooFewGroups);
    }
    let mut pooled: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.iter().map(move |&v| (v, gi)))
        .collect();
    if pooled.iter().any(|(v, _)| v.is_nan()) {
        return Err(MetricsError::NonFinite);
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = pooled.len();
    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        // ranks i+1..=j+1 averaged
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &(_, g) in &pooled[i..=j] {
            rank_sums[g] += rank;
        }
        tie_term += t * t * t - t;
        i = j + 1;
    }

    let nf = n as f64;
    let sum: f64 = rank_sums
        .iter()
        .zip(groups)
        .map(|(r, g)| r * r / g.len() as f64)
        .sum();
    let h = 12.0 / (nf * (nf + 1.0)) * sum - 3.0 * (nf + 1.0);
    let correction = 1.0 - tie_term / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Err(MetricsError::AllTied);
    }
    let statistic = (h / correction).max(0.0);
    let dof = groups.len() - 1;
    Ok(TestResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}
