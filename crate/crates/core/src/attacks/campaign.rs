//! Per-target campaigns over a grid: assemble the shadow slots of a strategy,
//! train what is missing and score every pool sample.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{MiaGrid, ShadowSlot};
use super::{kl_select_scores, log_likelihood_ratio, threshold_attack, AttackResult, GaussianSummary, Strategy};
use crate::error::{Error, Result};
use crate::models::{true_class_scores, HyperParams};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimate {
    #[default]
    PerExample,
    /// One pooled IN and one pooled OUT variance for all samples.
    Global,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum KlCandidates {
    /// Tuned hyperparameters of C+1 seed rows, excluding the target's own.
    #[default]
    GridSeeds,
    /// A fixed candidate list; selection then trains on N grid rows.
    Explicit { hypers: Vec<HyperParams> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignParams {
    /// Candidate count C.
    pub c: usize,
    /// Selection sets per candidate N.
    pub n: usize,
    #[serde(default)]
    pub variance: VarianceEstimate,
    #[serde(default)]
    pub candidates: KlCandidates,
}

impl Default for CampaignParams {
    fn default() -> Self {
        Self { c: 4, n: 2, variance: VarianceEstimate::PerExample, candidates: KlCandidates::GridSeeds }
    }
}

/// The C+1 rows whose tuned hyperparameters seed KL-LiRA candidates.
pub fn kl_seed_rows(rows: usize, c: usize, seed: u64) -> Result<Vec<usize>> {
    if c == 0 || c + 1 > rows {
        return Err(Error::Config(format!("C={c} needs C+1 <= {rows} grid rows")));
    }
    let mut picked = sample(&mut rng_for(seed, "kl-seeds"), rows, c + 1).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn pick_rows(available: &[usize], k: usize, seed: u64, label: &str) -> Result<Vec<usize>> {
    if k > available.len() {
        return Err(Error::Config(format!(
            "KL selection needs {k} spare grid rows but only {} are available",
            available.len()
        )));
    }
    let mut idx = sample(&mut rng_for(seed, label), available.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| available[i]).collect())
}

/// Runs `strategy` against each target row in turn.
pub fn run_campaign(
    grid: &MiaGrid,
    strategy: Strategy,
    params: &CampaignParams,
    targets: &[usize],
    seed: u64,
) -> Result<Vec<AttackResult>> {
    let seeds = match (strategy, &params.candidates) {
        (Strategy::Kl, KlCandidates::GridSeeds) => kl_seed_rows(grid.len(), params.c, seed)?,
        _ => Vec::new(),
    };
    if strategy == Strategy::Kl && params.n == 0 {
        return Err(Error::Config("KL selection needs N >= 1".into()));
    }
    let mut out = Vec::with_capacity(targets.len());
    for &i in targets {
        let target = grid.prepare_targets(&[i])?.remove(0);
        let before = grid.models_trained();
        let members = grid.row_members(i).clone();
        let (slots, kl) = match strategy {
            Strategy::Threshold => {
                out.push(threshold_attack(i, &target.model, grid.pool(), &members)?);
                continue;
            }
            Strategy::Lira => {
                let eta = grid.row_hypers(i)?;
                (column(grid, i, &eta)?, None)
            }
            Strategy::Acc => {
                let mut requests = Vec::with_capacity(grid.len() - 1);
                for j in (0..grid.len()).filter(|&j| j != i) {
                    requests.push((j, grid.row_hypers(j)?));
                }
                (grid.cells(&requests)?.iter().map(|c| grid.cell_slot(c)).collect(), None)
            }
            Strategy::Kl => {
                let (slots, eta, sel) = kl_target(grid, i, &target.scores, &target.model, params, &seeds, seed)?;
                (slots, Some((eta, sel)))
            }
        };
        let scores = score_samples(&target.scores, &slots, grid.pool().ids(), params.variance)?;
        out.push(AttackResult {
            target: i,
            strategy,
            sample_ids: grid.pool().ids().to_vec(),
            scores,
            is_member: members.to_vec(),
            models_trained: grid.models_trained() - before,
            kl,
        });
    }
    Ok(out)
}

fn column(grid: &MiaGrid, target: usize, eta: &HyperParams) -> Result<Vec<ShadowSlot>> {
    let requests: Vec<(usize, HyperParams)> =
        (0..grid.len()).filter(|&j| j != target).map(|j| (j, eta.clone())).collect();
    Ok(grid.cells(&requests)?.iter().map(|c| grid.cell_slot(c)).collect())
}

fn subset(values: &[f64], members: &[bool]) -> Vec<f64> {
    values.iter().zip(members).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
}

type KlOutcome = (Vec<ShadowSlot>, HyperParams, super::KlSelection);

fn kl_target(
    grid: &MiaGrid,
    i: usize,
    target_scores: &[f64],
    target_model: &crate::models::Model,
    params: &CampaignParams,
    seeds: &[usize],
    seed: u64,
) -> Result<KlOutcome> {
    let others: Vec<usize> = (0..grid.len()).filter(|&j| j != i).collect();
    match &params.candidates {
        KlCandidates::Explicit { hypers } => {
            if hypers.is_empty() {
                return Err(Error::Config("explicit KL candidate list is empty".into()));
            }
            let sets = pick_rows(&others, params.n, seed, &format!("kl-sets/{i}"))?;
            let mut pairs = Vec::with_capacity(hypers.len());
            for (j, eta) in hypers.iter().enumerate() {
                let requests: Vec<_> = sets.iter().map(|&r| (r, eta.clone())).collect();
                let cells = grid.cells(&requests).map_err(|e| e.context(format!("KL candidate {j}")))?;
                pairs.push(
                    cells
                        .iter()
                        .map(|c| {
                            let m = grid.row_members(c.row);
                            (subset(target_scores, m), subset(&c.scores, m))
                        })
                        .collect(),
                );
            }
            let sel = kl_select_scores(&pairs)?;
            let eta = hypers[sel.selected].clone();
            Ok((column(grid, i, &eta)?, eta, sel))
        }
        KlCandidates::GridSeeds => {
            let mut origins: Vec<usize> = seeds.iter().copied().filter(|&r| r != i).collect();
            if origins.len() > params.c {
                let drop = rng_for(seed, &format!("kl-drop/{i}")).random_range(0..origins.len());
                origins.remove(drop);
            }
            let spare: Vec<usize> = others.iter().copied().filter(|r| !origins.contains(r)).collect();
            let shared = pick_rows(&spare, params.n - 1, seed, &format!("kl-sets/{i}"))?;

            let mut candidates = Vec::with_capacity(origins.len());
            let mut hpos = Vec::with_capacity(origins.len());
            for &o in &origins {
                let h = grid.row_hpo(o)?;
                candidates.push(h.result.best.clone());
                hpos.push(h);
            }
            let requests: Vec<_> =
                candidates.iter().flat_map(|eta| shared.iter().map(move |&r| (r, eta.clone()))).collect();
            let cells = grid.cells(&requests)?;
            let mut pairs = Vec::with_capacity(candidates.len());
            for (j, h) in hpos.iter().enumerate() {
                let mut per_set = vec![(true_class_scores(target_model, &h.split)?, true_class_scores(&h.model, &h.split)?)];
                for c in &cells[j * shared.len()..(j + 1) * shared.len()] {
                    let m = grid.row_members(c.row);
                    per_set.push((subset(target_scores, m), subset(&c.scores, m)));
                }
                pairs.push(per_set);
            }
            let sel = kl_select_scores(&pairs)?;
            let eta = candidates[sel.selected].clone();
            let origin = origins[sel.selected];
            let requests: Vec<_> = others.iter().filter(|&&j| j != origin).map(|&j| (j, eta.clone())).collect();
            let mut slots: Vec<ShadowSlot> = grid.cells(&requests)?.iter().map(|c| grid.cell_slot(c)).collect();
            slots.push(hpos[sel.selected].slot.clone());
            Ok((slots, eta, sel))
        }
    }
}

/// Scores every pool sample against its IN/OUT shadow summaries. A sample
/// with no IN (or no OUT) shadow falls back to the pooled summary of that side.
fn score_samples(target: &[f64], slots: &[ShadowSlot], ids: &[u64], variance: VarianceEstimate) -> Result<Vec<f64>> {
    let n = target.len();
    let per_sample: Vec<(Option<GaussianSummary>, Option<GaussianSummary>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (mut inn, mut out) = (Vec::with_capacity(slots.len()), Vec::with_capacity(slots.len()));
            for s in slots {
                if s.members[k] {
                    inn.push(s.scores[k]);
                } else {
                    out.push(s.scores[k]);
                }
            }
            (GaussianSummary::fit(&inn), GaussianSummary::fit(&out))
        })
        .collect();

    let pooled = |want: bool| {
        let all: Vec<f64> = slots
            .iter()
            .flat_map(|s| s.scores.iter().zip(s.members.iter()).filter(move |(_, &m)| m == want).map(|(&v, _)| v))
            .collect();
        GaussianSummary::fit(&all)
    };
    let residual = |pick: fn(&(Option<GaussianSummary>, Option<GaussianSummary>)) -> Option<GaussianSummary>| {
        let (num, den) = per_sample
            .iter()
            .filter_map(pick)
            .fold((0.0, 0usize), |(num, den), g| (num + g.var * g.count as f64, den + g.count));
        (den > 0).then(|| num / den as f64)
    };
    let needs_in = per_sample.iter().any(|p| p.0.is_none());
    let needs_out = per_sample.iter().any(|p| p.1.is_none());
    let fallback_in = if needs_in { pooled(true) } else { None };
    let fallback_out = if needs_out { pooled(false) } else { None };
    let global = match variance {
        VarianceEstimate::PerExample => None,
        VarianceEstimate::Global => Some((residual(|p| p.0), residual(|p| p.1))),
    };

    per_sample
        .into_iter()
        .enumerate()
        .map(|(k, (inn, out))| {
            let insufficient = |p: &Option<GaussianSummary>, q: &Option<GaussianSummary>| Error::InsufficientShadows {
                sample_id: Some(ids[k]),
                n_in: p.map_or(0, |g| g.count),
                n_out: q.map_or(0, |g| g.count),
            };
            let mut a = inn.or(fallback_in).ok_or_else(|| insufficient(&inn, &out))?;
            let mut b = out.or(fallback_out).ok_or_else(|| insufficient(&inn, &out))?;
            if let Some((vi, vo)) = global {
                a = GaussianSummary::new(a.mean, vi.unwrap_or(a.var), a.count);
                b = GaussianSummary::new(b.mean, vo.unwrap_or(b.var), b.count);
            }
            Ok(log_likelihood_ratio(target[k], &a, &b))
        })
        .collect()
}
