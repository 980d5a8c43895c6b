//! Attack evaluation: ROC, TPR at low FPR, Clopper–Pearson intervals, the
//! DP trade-off bound, and the paired tests used to compare HPO regimes.

mod hypothesis;
mod roc;
mod special;

pub use hypothesis::{by_adjust, paired_permutation_test, paired_t_test, TestKind, TestReport, EXHAUSTIVE_MAX_N};
pub use roc::{roc_curve, tpr_at_fpr, RocCurve};
pub use special::{reg_inc_beta, reg_inc_beta_inv, student_t_cdf};

use crate::error::{Error, Result};

/// Exact `1 - alpha` binomial interval for `tp` successes out of `p`.
pub fn clopper_pearson(tp: usize, p: usize, alpha: f64) -> Result<(f64, f64)> {
    if tp > p {
        return Err(Error::Input(format!("tp = {tp} exceeds p = {p}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (k, n) = (tp as f64, p as f64);
    let lo = if tp == 0 { 0.0 } else { reg_inc_beta_inv(k, n - k + 1.0, alpha / 2.0)? };
    let hi = if tp == p { 1.0 } else { reg_inc_beta_inv(k + 1.0, n - k, 1.0 - alpha / 2.0)? };
    Ok((lo, hi))
}

/// Tightest TPR allowed at `fpr` by any `(ε, δ)` pair of the curve:
/// `min over (ε, δ) of min{e^ε·fpr + δ, 1 - e^{-ε}(1 - δ - fpr)}`, clamped to `[0, 1]`.
pub fn dp_tpr_bound(eps_of_delta: &[(f64, f64)], fpr: f64) -> f64 {
    eps_of_delta
        .iter()
        .map(|&(eps, delta)| {
            let direct = eps.exp() * fpr + delta;
            let complement = 1.0 - (-eps).exp() * (1.0 - delta - fpr);
            direct.min(complement)
        })
        .fold(1.0f64, f64::min)
        .clamp(0.0, 1.0)
}

/// Pointwise maximum of several `ε(δ)` curves sampled on the same δ grid.
pub fn envelope(curves: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let Some(first) = curves.first() else { return Vec::new() };
    first
        .iter()
        .enumerate()
        .map(|(i, &(_, delta))| {
            let eps = curves.iter().map(|c| c[i].0).fold(f64::NEG_INFINITY, f64::max);
            (eps, delta)
        })
        .collect()
}
