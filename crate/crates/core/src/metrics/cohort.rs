//! Two-sided Mann-Whitney U test and per-metric cohort comparison.

use statrs::function::erf::erfc;

use super::{MetricName, MetricsReport};
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Largest `n₁·n₂` for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    /// Exact when `n₁·n₂ ≤ 400` and there are no ties, otherwise normal.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MannWhitney {
    /// Pairs with `a > b`, ties counted as one half.
    pub u_a: f64,
    pub u_b: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    mann_whitney_u_with(a, b, PValueMethod::Auto)
}

/// Forcing `Exact` on tied data is an error.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: PValueMethod) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Mann-Whitney sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Mann-Whitney samples must be finite".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let (ranks, tie_groups) = midranks(a.iter().chain(b).copied().collect());
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u_a = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let u_b = (n1 * n2) as f64 - u_a;
    let tied = tie_groups.iter().any(|&t| t > 1);

    let method = match method {
        PValueMethod::Auto if n1 * n2 <= EXACT_LIMIT && !tied => PValueMethod::Exact,
        PValueMethod::Auto => PValueMethod::Normal,
        PValueMethod::Exact if tied => {
            return Err(Error::InvalidInput("exact Mann-Whitney p requires untied data".into()))
        }
        m => m,
    };
    let p_value = match method {
        PValueMethod::Exact => exact_p(n1, n2, u_a.round() as usize),
        _ => normal_p(n1, n2, u_a, &tie_groups),
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        method,
    })
}

/// Ranks 1..=N with tied runs sharing their mean rank; also returns the
/// tie-group sizes.
fn midranks(values: Vec<f64>) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        groups.push(j - i);
        i = j;
    }
    (ranks, groups)
}

/// Number of arrangements of `n1` a's and `n2` b's with each `U_A` value,
/// indexed `0..=n1·n2`.
pub fn exact_u_distribution(n1: usize, n2: usize) -> Vec<u64> {
    // f[m][n][u] = f[m-1][n][u-n] + f[m][n-1][u]: the largest element is
    // either an a (beating all n b's) or a b.
    let mut prev: Vec<Vec<u64>> = (0..=n2).map(|_| vec![1]).collect();
    for m in 1..=n1 {
        let mut cur: Vec<Vec<u64>> = Vec::with_capacity(n2 + 1);
        cur.push(vec![1]);
        for n in 1..=n2 {
            let mut f = vec![0u64; m * n + 1];
            for (u, c) in prev[n].iter().enumerate() {
                f[u + n] += c;
            }
            for (u, c) in cur[n - 1].iter().enumerate() {
                f[u] += c;
            }
            cur.push(f);
        }
        prev = cur;
    }
    prev.swap_remove(n2)
}

fn exact_p(n1: usize, n2: usize, u: usize) -> f64 {
    let dist = exact_u_distribution(n1, n2);
    let total: u64 = dist.iter().sum();
    let below: u64 = dist[..=u].iter().sum();
    let above: u64 = dist[u..].iter().sum();
    (2.0 * below.min(above) as f64 / total as f64).min(1.0)
}

fn normal_p(n1: usize, n2: usize, u: f64, tie_groups: &[usize]) -> f64 {
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let ties: f64 = tie_groups.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        f1 * f2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let z = (((u - f1 * f2 / 2.0).abs() - 0.5) / var.sqrt()).max(0.0);
    erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortComparison {
    pub metric: MetricName,
    pub expert: Vec<f64>,
    pub novice: Vec<f64>,
    pub expert_excluded: usize,
    pub novice_excluded: usize,
    /// `None` when a cohort has no defined value for this metric.
    pub test: Option<MannWhitney>,
    pub significant: bool,
}

impl CohortComparison {
    pub fn expert_mean(&self) -> Option<f64> {
        mean(&self.expert)
    }

    pub fn novice_mean(&self) -> Option<f64> {
        mean(&self.novice)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One comparison per metric, in report column order. Undefined values
/// are dropped and counted.
pub fn compare_cohorts(expert: &[MetricsReport], novice: &[MetricsReport]) -> Result<Vec<CohortComparison>> {
    for (name, c) in [("expert", expert), ("novice", novice)] {
        if c.len() < 2 {
            return Err(Error::TooFewSamples {
                metric: name,
                required: 2,
                got: c.len(),
            });
        }
    }
    MetricName::ALL
        .iter()
        .map(|&metric| {
            let defined = |c: &[MetricsReport]| -> Vec<f64> { c.iter().filter_map(|r| r.get(metric)).collect() };
            let (e, n) = (defined(expert), defined(novice));
            let test = if e.is_empty() || n.is_empty() {
                None
            } else {
                Some(mann_whitney_u(&e, &n)?)
            };
            Ok(CohortComparison {
                metric,
                expert_excluded: expert.len() - e.len(),
                novice_excluded: novice.len() - n.len(),
                significant: test.as_ref().is_some_and(|t| t.p_value <= SIGNIFICANCE_LEVEL),
                expert: e,
                novice: n,
                test,
            })
        })
        .collect()
}
