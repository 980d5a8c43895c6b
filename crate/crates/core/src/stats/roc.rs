use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical ROC curve over unique score thresholds, swept high to low.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` pairs; the first is `(0, 0)` at threshold `+∞`.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point: scores `>= threshold` are called members.
    pub thresholds: Vec<f64>,
    /// True positives at each point.
    pub tp: Vec<usize>,
    /// False positives at each point.
    pub fp: Vec<usize>,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("ROC needs both members and non-members".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc = RocCurve {
        points: vec![(0.0, 0.0)],
        thresholds: vec![f64::INFINITY],
        tp: vec![0],
        fp: vec![0],
        n_pos,
        n_neg,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        roc.thresholds.push(threshold);
        roc.tp.push(tp);
        roc.fp.push(fp);
    }
    Ok(roc)
}

impl RocCurve {
    /// Index of the operating point with the largest FPR not above `fpr_target`.
    fn index_at(&self, fpr_target: f64) -> usize {
        // fp counts are nondecreasing, so the admissible points form a prefix.
        let limit = fpr_target * self.n_neg as f64;
        self.fp.partition_point(|&fp| fp as f64 <= limit).saturating_sub(1)
    }

    /// `(tp, n_pos)` at the step-function operating point for `fpr_target`.
    pub fn tp_at_fpr(&self, fpr_target: f64) -> (usize, usize) {
        (self.tp[self.index_at(fpr_target)], self.n_pos)
    }

    /// Area under the curve (trapezoidal).
    pub fn auc(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }
}

/// TPR at the largest empirical FPR not exceeding `fpr_target` (no interpolation).
pub fn tpr_at_fpr(roc: &RocCurve, fpr_target: f64) -> f64 {
    roc.points[roc.index_at(fpr_target)].1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_point_example() {
        let roc = roc_curve(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(roc.points, vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(tpr_at_fpr(&roc, 0.5), 1.0);
        assert_eq!(tpr_at_fpr(&roc, 1e-3), 1.0);
        assert_eq!(roc.auc(), 1.0);
    }

    #[test]
    fn ties_collapse_to_diagonal() {
        let roc = roc_curve(&[1.0; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tpr_at_fpr(&roc, 0.5), 0.0);
    }

    #[test]
    fn below_resolution_gives_zero() {
        let roc = roc_curve(&[0.9, 0.8, 0.7, 0.1], &[false, true, false, true]).unwrap();
        assert_eq!(tpr_at_fpr(&roc, 0.49), 0.0);
        assert_eq!(tpr_at_fpr(&roc, 0.5), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_curve(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_curve(&[1.0, 2.0], &[false, false]).is_err());
    }

    proptest! {
        #[test]
        fn curve_is_monotone(scores in prop::collection::vec(-5i32..5, 2..60), seed in any::<u64>()) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
            prop_assume!(labels.iter().any(|&l| !l));
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let roc = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!(roc.points[0], (0.0, 0.0));
            prop_assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
            for w in roc.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let mut prev = 0.0;
            for k in 1..=20 {
                let t = tpr_at_fpr(&roc, k as f64 / 20.0);
                prop_assert!(t >= prev);
                prev = t;
            }
        }
    }
}
