use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{check_finite, Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// `t = ρ √((n−2)/(1−ρ²))` on `n − 2` degrees of freedom.
    StudentT,
    /// Enumeration of all `n!` rank permutations.
    ExactPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n: usize,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Ranks starting at 1, ties receiving the average of the ranks they span.
pub fn rank_average(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j) / 2
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn checked_ranks(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { need: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    Ok((rank_average(x), rank_average(y)))
}

/// Spearman's rank correlation with a two-sided Student-t p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let (rx, ry) = checked_ranks(x, y)?;
    let rho = pearson(&rx, &ry).ok_or(StatsError::ZeroVariance)?;
    let n = x.len();
    Ok(CorrelationResult {
        rho,
        n,
        p_value: t_p_value(rho, n),
        method: PValueMethod::StudentT,
    })
}

pub(crate) fn t_p_value(rho: f64, n: usize) -> f64 {
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    if df == 0.0 {
        return 1.0;
    }
    let t = rho.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

/// Largest sample size accepted by [`spearman_exact`].
pub const EXACT_MAX_N: usize = 10;

/// Spearman's ρ with the exact permutation p-value, `P(|ρ*| ≥ |ρ|)` over all
/// orderings of `y` (n ≤ 10).
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let (rx, mut ry) = checked_ranks(x, y)?;
    let n = x.len();
    if n > EXACT_MAX_N {
        return spearman(x, y);
    }
    let rho = pearson(&rx, &ry).ok_or(StatsError::ZeroVariance)?;
    let target = rho.abs() - 1e-12;
    let (mut hits, mut total) = (0u64, 0u64);
    heap_permutations(&mut ry, n, &mut |perm| {
        total += 1;
        if pearson(&rx, perm).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    });
    Ok(CorrelationResult {
        rho,
        n,
        p_value: hits as f64 / total as f64,
        method: PValueMethod::ExactPermutation,
    })
}

fn heap_permutations(v: &mut [f64], k: usize, visit: &mut impl FnMut(&[f64])) {
    if k <= 1 {
        visit(v);
        return;
    }
    heap_permutations(v, k - 1, visit);
    for i in 0..k - 1 {
        if k.is_multiple_of(2) {
            v.swap(i, k - 1);
        } else {
            v.swap(0, k - 1);
        }
        heap_permutations(v, k - 1, visit);
    }
}
