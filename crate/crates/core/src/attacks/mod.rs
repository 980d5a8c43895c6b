//! Likelihood-ratio membership scoring, shadow hyperparameter selection
//! (LiRA, ACC-LiRA, KL-LiRA), the threshold baseline and grid campaigns.

mod campaign;
mod grid;

pub use campaign::{kl_seed_rows, run_campaign, CampaignParams, KlCandidates, VarianceEstimate};
pub use grid::{row_hpo_seed, GridConfig, GridManifest, HpoSource, MiaGrid, RowHpo, ShadowSlot};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::{run_hpo, HpoResult, SearchSpace};
use crate::models::{true_class_scores, train, Architecture, DpSpec, HyperParams, Model};
use crate::seed::derive_indexed;
use crate::synthdata::LabeledSet;

/// Lower bound applied to every fitted variance.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: f64,
    pub var: f64,
    pub count: usize,
}

impl GaussianSummary {
    pub fn new(mean: f64, var: f64, count: usize) -> Self {
        Self { mean, var: var.max(VAR_FLOOR), count }
    }

    /// Maximum-likelihood fit (population variance); `None` for no scores.
    pub fn fit(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, &x) in scores.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        Some(Self::new(mean, m2 / scores.len() as f64, scores.len()))
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let z = x - self.mean;
        -0.5 * ((2.0 * std::f64::consts::PI * self.var).ln() + z * z / self.var)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VarianceMode {
    PerExample,
    Global { var_in: f64, var_out: f64 },
}

/// `ln N(conf; in) - ln N(conf; out)`.
pub fn log_likelihood_ratio(conf: f64, inn: &GaussianSummary, out: &GaussianSummary) -> f64 {
    inn.log_density(conf) - out.log_density(conf)
}

/// Log likelihood ratio of `target_conf` under Gaussians fitted to the IN and
/// OUT shadow scores.
pub fn lira_score(target_conf: f64, in_scores: &[f64], out_scores: &[f64], mode: VarianceMode) -> Result<f64> {
    let (Some(mut inn), Some(mut out)) = (GaussianSummary::fit(in_scores), GaussianSummary::fit(out_scores)) else {
        return Err(Error::InsufficientShadows { sample_id: None, n_in: in_scores.len(), n_out: out_scores.len() });
    };
    if let VarianceMode::Global { var_in, var_out } = mode {
        inn.var = var_in.max(VAR_FLOOR);
        out.var = var_out.max(VAR_FLOOR);
    }
    Ok(log_likelihood_ratio(target_conf, &inn, &out))
}

/// IN and OUT summaries of one pool sample across shadow slots.
pub fn estimate_in_out(slots: &[ShadowSlot], sample: usize, sample_id: u64) -> Result<(GaussianSummary, GaussianSummary)> {
    let (mut inn, mut out) = (Vec::new(), Vec::new());
    for slot in slots {
        let s = slot.scores[sample];
        if slot.members[sample] {
            inn.push(s);
        } else {
            out.push(s);
        }
    }
    match (GaussianSummary::fit(&inn), GaussianSummary::fit(&out)) {
        (Some(i), Some(o)) => Ok((i, o)),
        _ => Err(Error::InsufficientShadows { sample_id: Some(sample_id), n_in: inn.len(), n_out: out.len() }),
    }
}

/// `KL(t || s)` between univariate Gaussians.
pub fn kl_divergence_gaussians(t: &GaussianSummary, s: &GaussianSummary) -> f64 {
    let (vt, vs) = (t.var.max(VAR_FLOOR), s.var.max(VAR_FLOOR));
    let d = s.mean - t.mean;
    (0.5 * (d * d / vs + vt / vs - (vt / vs).ln() - 1.0)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlSelection {
    pub selected: usize,
    /// `divergences[j][i]`: candidate `j` on selection set `i`.
    pub divergences: Vec<Vec<f64>>,
    pub mean_divergence: Vec<f64>,
}

/// Picks the candidate whose shadow score distributions are closest to the
/// target's. `pairs[j][i]` holds (target scores, shadow scores) on set `i`
/// for candidate `j`. Ties go to the lowest index.
pub fn kl_select_scores(pairs: &[Vec<(Vec<f64>, Vec<f64>)>]) -> Result<KlSelection> {
    if pairs.is_empty() || pairs.iter().any(|p| p.is_empty()) {
        return Err(Error::Config("KL selection needs at least one candidate and one set".into()));
    }
    let mut divergences = Vec::with_capacity(pairs.len());
    for per_set in pairs {
        let mut row = Vec::with_capacity(per_set.len());
        for (t, s) in per_set {
            let (Some(t), Some(s)) = (GaussianSummary::fit(t), GaussianSummary::fit(s)) else {
                return Err(Error::Input("KL selection set is empty".into()));
            };
            row.push(kl_divergence_gaussians(&t, &s));
        }
        divergences.push(row);
    }
    let mean_divergence: Vec<f64> =
        divergences.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let mut selected = 0;
    for (j, &m) in mean_divergence.iter().enumerate() {
        if m < mean_divergence[selected] {
            selected = j;
        }
    }
    Ok(KlSelection { selected, divergences, mean_divergence })
}

/// Trains one shadow model per (candidate, set) and selects by mean KL
/// divergence between the target's and the shadow's scores on that set.
pub fn kl_lira_select(
    arch: &Architecture,
    candidates: &[HyperParams],
    shadow_sets: &[LabeledSet],
    target: &Model,
    seed: u64,
) -> Result<KlSelection> {
    if candidates.is_empty() || shadow_sets.is_empty() {
        return Err(Error::Config("KL selection needs C >= 1 and N >= 1".into()));
    }
    let mut pairs = Vec::with_capacity(candidates.len());
    for (j, eta) in candidates.iter().enumerate() {
        let mut per_set = Vec::with_capacity(shadow_sets.len());
        for (i, set) in shadow_sets.iter().enumerate() {
            let shadow = train(arch, set, eta, derive_indexed(seed, &format!("kl-shadow/{j}"), i as u64))
                .map_err(|e| e.context(format!("KL candidate {j}, shadow set {i}")))?;
            per_set.push((true_class_scores(target, set)?, true_class_scores(&shadow, set)?));
        }
        pairs.push(per_set);
    }
    kl_select_scores(&pairs)
}

/// One HPO run per shadow set, in order.
pub fn acc_lira_hypers(
    arch: &Architecture,
    shadow_sets: &[LabeledSet],
    space: &SearchSpace,
    dp: Option<&DpSpec>,
    seed: u64,
) -> Result<Vec<HpoResult>> {
    shadow_sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            run_hpo(arch, set, space, dp, row_hpo_seed(seed, i)).map_err(|e| e.context(format!("shadow set {i}")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Lira,
    Acc,
    Kl,
    Threshold,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Lira, Strategy::Acc, Strategy::Kl, Strategy::Threshold];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Lira => "lira",
            Strategy::Acc => "acc",
            Strategy::Kl => "kl",
            Strategy::Threshold => "threshold",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected lira, acc, kl or threshold)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: usize,
    pub strategy: Strategy,
    pub sample_ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub is_member: Vec<bool>,
    /// Models newly trained for this target.
    pub models_trained: usize,
    /// Shadow hyperparameters of the KL strategy and its selection diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<(HyperParams, KlSelection)>,
}

pub const RESULT_CSV_HEADER: &str = "target,strategy,sample_id,score,is_member";

impl AttackResult {
    /// Appends one CSV line per sample (no header).
    pub fn write_csv_rows(&self, out: &mut String) {
        use std::fmt::Write as _;
        for ((id, s), m) in self.sample_ids.iter().zip(&self.scores).zip(&self.is_member) {
            let _ = writeln!(out, "{},{},{id},{s:?},{}", self.target, self.strategy, u8::from(*m));
        }
    }
}

/// CSV of several results with a header line.
pub fn results_csv(results: &[AttackResult]) -> String {
    let mut out = format!("{RESULT_CSV_HEADER}\n");
    for r in results {
        r.write_csv_rows(&mut out);
    }
    out
}

/// Parses CSV produced by [`results_csv`] back into per-target results.
/// Budgets and KL diagnostics are not part of the CSV and come back empty.
pub fn parse_results_csv(text: &str) -> Result<Vec<AttackResult>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULT_CSV_HEADER) {
        return Err(Error::Input("attack CSV header mismatch".into()));
    }
    let mut out: Vec<AttackResult> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let bad = || Error::Input(format!("malformed attack CSV line {}", ln + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let target: usize = f[0].parse().map_err(|_| bad())?;
        let strategy: Strategy = f[1].parse()?;
        let id: u64 = f[2].parse().map_err(|_| bad())?;
        let score: f64 = f[3].parse().map_err(|_| bad())?;
        let member = match f[4] {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        let r = match out.last_mut() {
            Some(r) if r.target == target && r.strategy == strategy => r,
            _ => {
                out.push(AttackResult {
                    target,
                    strategy,
                    sample_ids: Vec::new(),
                    scores: Vec::new(),
                    is_member: Vec::new(),
                    models_trained: 0,
                    kl: None,
                });
                out.last_mut().unwrap()
            }
        };
        r.sample_ids.push(id);
        r.scores.push(score);
        r.is_member.push(member);
    }
    Ok(out)
}

/// Shadow-free baseline: the target's own logit-scaled confidence is the score.
pub fn threshold_attack(target: usize, model: &Model, pool: &LabeledSet, members: &[bool]) -> Result<AttackResult> {
    if members.len() != pool.len() {
        return Err(Error::Input("membership vector does not match the pool".into()));
    }
    Ok(AttackResult {
        target,
        strategy: Strategy::Threshold,
        sample_ids: pool.ids().to_vec(),
        scores: true_class_scores(model, pool)?,
        is_member: members.to_vec(),
        models_trained: 0,
        kl: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{logit_score, Model};
    use super::Strategy;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lira_reference_values() {
        let same = lira_score(0.3, &[0.0, 2.0], &[0.0, 2.0], VarianceMode::PerExample).unwrap();
        assert_eq!(same, 0.0);
        // IN ~ N(1, 1), OUT ~ N(-1, 1)
        let (inn, out) = ([0.0, 2.0], [-2.0, 0.0]);
        assert!(close(lira_score(1.0, &inn, &out, VarianceMode::PerExample).unwrap(), 2.0, 1e-12));
        assert!(close(lira_score(-1.0, &inn, &out, VarianceMode::PerExample).unwrap(), -2.0, 1e-12));
        let g = VarianceMode::Global { var_in: 1.0, var_out: 1.0 };
        assert!(close(lira_score(1.0, &[1.0], &[-1.0], g).unwrap(), 2.0, 1e-12));
        assert!(matches!(
            lira_score(0.0, &[], &[1.0], VarianceMode::PerExample),
            Err(Error::InsufficientShadows { n_in: 0, n_out: 1, .. })
        ));
    }

    #[test]
    fn kl_reference_values() {
        let t = GaussianSummary::new(0.3, 2.0, 5);
        assert!(kl_divergence_gaussians(&t, &t).abs() < 1e-15);
        let kl = kl_divergence_gaussians(&GaussianSummary::new(0.0, 1.0, 1), &GaussianSummary::new(1.0, 1.0, 1));
        assert!(close(kl, 0.5, 1e-15));
        let kl = kl_divergence_gaussians(&GaussianSummary::new(0.0, 4.0, 1), &GaussianSummary::new(0.0, 1.0, 1));
        assert!(close(kl, 0.5 * (4.0 - 4f64.ln() - 1.0), 1e-15));
        assert!(close(kl, 0.806853, 1e-6));
    }

    #[test]
    fn variance_floor_applies() {
        let g = GaussianSummary::fit(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((g.mean, g.var, g.count), (3.0, VAR_FLOOR, 3));
        assert!(GaussianSummary::fit(&[]).is_none());
    }

    fn slots(rows: &[(Vec<f64>, Vec<bool>)]) -> Vec<ShadowSlot> {
        rows.iter()
            .map(|(s, m)| ShadowSlot { scores: Arc::new(s.clone()), members: Arc::new(m.clone()) })
            .collect()
    }

    #[test]
    fn in_out_split_needs_both_sides() {
        let s = slots(&[(vec![1.0, 2.0], vec![true, true]), (vec![3.0, 4.0], vec![true, false])]);
        assert!(matches!(
            estimate_in_out(&s, 0, 77),
            Err(Error::InsufficientShadows { sample_id: Some(77), n_in: 2, n_out: 0 })
        ));
        let (i, o) = estimate_in_out(&s, 1, 78).unwrap();
        assert_eq!(i.count + o.count, s.len());
    }

    proptest! {
        #[test]
        fn in_out_matches_two_pass_oracle(
            rows in proptest::collection::vec((-30.0f64..30.0, any::<bool>()), 2..40)
        ) {
            let mut rows = rows;
            rows[0].1 = true;
            rows[1].1 = false;
            let s: Vec<ShadowSlot> = rows
                .iter()
                .map(|&(v, m)| ShadowSlot { scores: Arc::new(vec![v]), members: Arc::new(vec![m]) })
                .collect();
            let (i, o) = estimate_in_out(&s, 0, 0).unwrap();
            for (summary, want) in [(i, true), (o, false)] {
                let xs: Vec<f64> = rows.iter().filter(|r| r.1 == want).map(|r| r.0).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
                prop_assert_eq!(summary.count, xs.len());
                prop_assert!((summary.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
                prop_assert!((summary.var - var.max(VAR_FLOOR)).abs() <= 1e-9 * (1.0 + var));
            }
        }

        #[test]
        fn lira_is_increasing_in_confidence(
            mu_out in -5.0f64..5.0, gap in 0.01f64..5.0, var in 0.01f64..4.0, x in -10.0f64..10.0, dx in 1e-3f64..1.0
        ) {
            let inn = GaussianSummary::new(mu_out + gap, var, 4);
            let out = GaussianSummary::new(mu_out, var, 4);
            prop_assert!(log_likelihood_ratio(x + dx, &inn, &out) > log_likelihood_ratio(x, &inn, &out));
        }
    }

    #[test]
    fn kl_selection_picks_lowest_mean_with_ties_to_first() {
        let t = vec![0.0, 1.0, 2.0];
        let near = vec![0.0, 1.0, 2.1];
        let far = vec![5.0, 6.0, 9.0];
        let pairs = vec![
            vec![(t.clone(), far.clone()), (t.clone(), far.clone())],
            vec![(t.clone(), near.clone()), (t.clone(), t.clone())],
            vec![(t.clone(), near.clone()), (t.clone(), t.clone())],
        ];
        let sel = kl_select_scores(&pairs).unwrap();
        assert_eq!(sel.selected, 1);
        let mean0 = sel.divergences[0].iter().sum::<f64>() / 2.0;
        assert_eq!(sel.mean_divergence[0], mean0);
        assert_eq!(kl_select_scores(&pairs[..1]).unwrap().selected, 0);
        assert!(kl_select_scores(&[]).is_err());
    }

    #[test]
    fn threshold_on_uniform_model_is_constant() {
        let spec = crate::synthdata::DataSpec { dim: 4, classes: 5, class_separation: 3.0, noise_sigma: 1.0, seed: 2 };
        let pool = crate::synthdata::sample_population(&spec, 30, "t").unwrap();
        let model = Model::zeros(Architecture::linear(4, 5));
        let r = threshold_attack(3, &model, &pool, &vec![false; 30]).unwrap();
        let want = logit_score(0.2);
        assert!(r.scores.iter().all(|&s| (s - want).abs() < 1e-12));
        assert_eq!(r.models_trained, 0);
        assert_eq!(r.strategy, Strategy::Threshold);
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let r = AttackResult {
            target: 2,
            strategy: Strategy::Kl,
            sample_ids: vec![5, 9, 1 << 40],
            scores: vec![0.1 + 0.2, -1e-300, 12345.678901234567],
            is_member: vec![true, false, true],
            models_trained: 7,
            kl: None,
        };
        let text = results_csv(&[r.clone()]);
        assert!(text.starts_with("target,strategy,sample_id,score,is_member\n2,kl,5,"));
        let back = parse_results_csv(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
                   r.scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>());
        assert_eq!(back[0].is_member, r.is_member);
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
