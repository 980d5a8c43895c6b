//! One-sided paired tests (H1: x > y) and Benjamini–Yekutieli adjustment.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::special::student_t_cdf;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Largest sample size enumerated exhaustively by the permutation test.
pub const EXHAUSTIVE_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    T,
    Permutation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub kind: TestKind,
    /// Permutation test only: sign assignments at least as extreme, and their total.
    pub extreme: Option<u64>,
    pub total: Option<u64>,
}

fn differences(x: &[f64], y: &[f64], min_n: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("paired samples differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.len() < min_n {
        return Err(Error::Input(format!("paired test needs at least {min_n} pairs")));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a - b).collect())
}

/// Paired one-sided t-test on `d = x - y`.
///
/// Zero spread: `p = 0` if the mean difference is positive, else `p = 1`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TestReport> {
    let d = differences(x, y, 2)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let (statistic, p_value) = if sd == 0.0 || sd <= 1e-14 * mean.abs() {
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        let t = mean * n.sqrt() / sd;
        (t, (1.0 - student_t_cdf(t, n - 1.0)?).clamp(0.0, 1.0))
    };
    Ok(TestReport { statistic, p_value, n: d.len(), kind: TestKind::T, extreme: None, total: None })
}

/// Paired one-sided sign-flip permutation test with statistic `mean(d)`.
///
/// Enumerates all `2^n` flips when `n <= 20`; otherwise uses the identity
/// plus `resamples` random flips. `p = #(flipped >= observed) / total`.
pub fn paired_permutation_test(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<TestReport> {
    let d = differences(x, y, 1)?;
    let n = d.len();
    let observed: f64 = d.iter().sum();
    let tol = 1e-12 * d.iter().map(|v| v.abs()).sum::<f64>();
    let flipped_sum = |signs: &dyn Fn(usize) -> bool| -> f64 {
        d.iter().enumerate().map(|(i, v)| if signs(i) { -v } else { *v }).sum()
    };
    let (extreme, total) = if n <= EXHAUSTIVE_MAX_N {
        let total = 1u64 << n;
        let extreme = (0..total)
            .filter(|&mask| flipped_sum(&|i| mask >> i & 1 == 1) >= observed - tol)
            .count() as u64;
        (extreme, total)
    } else {
        let mut rng = rng_for(seed, "permutation");
        let mut signs = vec![false; n];
        let mut extreme = 1u64;
        for _ in 0..resamples {
            signs.iter_mut().for_each(|s| *s = rng.random_bool(0.5));
            if flipped_sum(&|i| signs[i]) >= observed - tol {
                extreme += 1;
            }
        }
        (extreme, resamples as u64 + 1)
    };
    Ok(TestReport {
        statistic: observed / n as f64,
        p_value: extreme as f64 / total as f64,
        n,
        kind: TestKind::Permutation,
        extreme: Some(extreme),
        total: Some(total),
    })
}

/// Benjamini–Yekutieli step-up adjustment, returned in input order.
pub fn by_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("p-value {bad} outside [0, 1]")));
    }
    let m = pvals.len();
    let c: f64 = (1..=m).map(|k| 1.0 / k as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(c * m as f64 * pvals[i] / rank as f64).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}
