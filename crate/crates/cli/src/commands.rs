//! The `grid`, `attack`, `eval`, `compare-hpo` and `gc` commands.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use miagrid::attacks::{
    parse_results_csv, results_csv, run_campaign, AttackResult, GridManifest, HpoSource, MiaGrid, Strategy,
};
use miagrid::models::{epsilon_curve, steps_for};
use miagrid::stats::{clopper_pearson, dp_tpr_bound, envelope, roc_curve, tpr_at_fpr, RocCurve};
use miagrid::store::Store;
use miagrid::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{arch_label, ExperimentConfig};
use crate::report::{
    comparison_tables, median, roc_csv, roc_svg, summary_rows, ComparisonRow, ComparisonTable, FprPoint, BY_FAMILY,
    SUMMARY_HEADER,
};

/// Short stable identifier of a configuration, used to name store manifests.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(&Sha256::digest(json)[..8])
}

/// Store at `$MIAGRID_STORE`, or `<output_dir>/store`.
pub fn open_store(cfg: &ExperimentConfig) -> Result<Store> {
    Store::from_env_or(cfg.output_dir.join("store"))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn grid_manifest_path(cfg: &ExperimentConfig, rep: usize) -> PathBuf {
    cfg.output_dir.join("grid").join(format!("rep-{rep}.json"))
}

fn attack_path(cfg: &ExperimentConfig, strategy: Strategy, rep: usize, ext: &str) -> PathBuf {
    cfg.output_dir.join("attack").join(strategy.tag()).join(format!("rep-{rep}.{ext}"))
}

fn manifest_name(cfg: &ExperimentConfig, what: &str, rep: usize) -> String {
    format!("{}-{what}-rep{rep}", config_digest(cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rep: usize,
    /// Models trained by this invocation (0 when everything was cached).
    pub models_trained: usize,
    pub manifest: GridManifest,
}

/// Builds each repeat's grid: pool, mask, HPO of the target rows and their
/// diagonal models.
pub fn cmd_grid(cfg: &ExperimentConfig) -> Result<Vec<GridReport>> {
    let store = open_store(cfg)?;
    let targets = cfg.targets();
    let mut out = Vec::with_capacity(cfg.repeats);
    for rep in 0..cfg.repeats {
        let grid = MiaGrid::new(cfg.grid_config(rep, cfg.hpo_source)?, Some(store.clone()))?;
        grid.prepare_targets(&targets)?;
        let manifest = grid.manifest();
        store.put_manifest(&manifest_name(cfg, "grid", rep), &manifest)?;
        write_atomic(&grid_manifest_path(cfg, rep), &serde_json::to_string_pretty(&manifest)?)?;
        info!("grid rep {rep}: {} models trained", grid.models_trained());
        out.push(GridReport { rep, models_trained: grid.models_trained(), manifest });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub strategy: Strategy,
    pub rep: usize,
    pub params: miagrid::attacks::CampaignParams,
    pub campaign_seed: u64,
    pub grid_seed: u64,
    pub train_seed: u64,
    pub targets: Vec<usize>,
    /// Models trained per target.
    pub budgets: Vec<usize>,
    pub kl_selected: Vec<Option<miagrid::models::HyperParams>>,
    pub objects: Vec<String>,
}

/// Runs the campaigns of `strategies` (all configured ones when empty) on every repeat.
pub fn cmd_attack(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<Vec<(AttackManifest, Vec<AttackResult>)>> {
    let strategies = if strategies.is_empty() { cfg.strategies()? } else { strategies.to_vec() };
    for rep in 0..cfg.repeats {
        if !grid_manifest_path(cfg, rep).exists() {
            return Err(Error::Config(format!("no grid manifest for repeat {rep}; run `grid` first")));
        }
    }
    let store = open_store(cfg)?;
    let targets = cfg.targets();
    let params = cfg.campaign_params();
    let mut out = Vec::new();
    for rep in 0..cfg.repeats {
        let grid_cfg = cfg.grid_config(rep, cfg.hpo_source)?;
        let grid = MiaGrid::new(grid_cfg.clone(), Some(store.clone()))?;
        for &strategy in &strategies {
            let seed = cfg.sub_seed("campaign", rep);
            let results = run_campaign(&grid, strategy, &params, &targets, seed)?;
            let manifest = AttackManifest {
                strategy,
                rep,
                params: params.clone(),
                campaign_seed: seed,
                grid_seed: grid_cfg.seed,
                train_seed: grid_cfg.train_seed,
                targets: targets.clone(),
                budgets: results.iter().map(|r| r.models_trained).collect(),
                kl_selected: results.iter().map(|r| r.kl.as_ref().map(|k| k.0.clone())).collect(),
                objects: grid.manifest().objects,
            };
            write_atomic(&attack_path(cfg, strategy, rep, "csv"), &results_csv(&results))?;
            write_atomic(&attack_path(cfg, strategy, rep, "json"), &serde_json::to_string_pretty(&manifest)?)?;
            store.put_manifest(&manifest_name(cfg, strategy.tag(), rep), &manifest)?;
            info!("attack {strategy} rep {rep}: budgets {:?}", manifest.budgets);
            out.push((manifest, results));
        }
    }
    Ok(out)
}

/// Pooled ROC of several results.
pub fn pooled_roc<'a>(results: impl IntoIterator<Item = &'a AttackResult>) -> Result<RocCurve> {
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for r in results {
        scores.extend_from_slice(&r.scores);
        labels.extend_from_slice(&r.is_member);
    }
    roc_curve(&scores, &labels)
}

/// TPR at each FPR of the pooled ROC.
pub fn tpr_grid(results: &[AttackResult], fprs: &[f64]) -> Result<Vec<f64>> {
    let roc = pooled_roc(results)?;
    Ok(fprs.iter().map(|&f| tpr_at_fpr(&roc, f)).collect())
}

/// Pointwise-maximum ε(δ) curve over the target models of the given repeats,
/// or `None` without DP.
pub fn dp_envelope(cfg: &ExperimentConfig, manifests: &[GridManifest], targets: &[usize]) -> Result<Option<Vec<(f64, f64)>>> {
    let Some(dp) = cfg.dp_spec() else { return Ok(None) };
    let mut curves = Vec::new();
    for m in manifests {
        for &i in targets {
            let base = m.hypers.get(i).cloned().flatten().ok_or_else(|| {
                Error::Config(format!("grid manifest lacks hyperparameters for target row {i}"))
            })?;
            let n = m.row_sizes[i];
            let h = base.calibrated_for(n, Some(&dp))?;
            let batch = h.batch_size.min(n).max(1);
            let sigma = h.noise_multiplier.expect("calibrated DP hyperparameters carry noise");
            curves.push(epsilon_curve(sigma, steps_for(n, batch, h.epochs), batch as f64 / n as f64)?);
        }
    }
    Ok(Some(envelope(&curves)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEval {
    pub strategy: Strategy,
    pub points: Vec<FprPoint>,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategies: Vec<StrategyEval>,
    pub dp_curve: Option<Vec<(f64, f64)>>,
}

/// Operating points of pooled results at each FPR, with per-repeat TPRs.
pub fn evaluate(per_repeat: &[Vec<AttackResult>], fprs: &[f64], dp_curve: Option<&[(f64, f64)]>, alpha: f64) -> Result<(RocCurve, Vec<FprPoint>)> {
    let roc = pooled_roc(per_repeat.iter().flatten())?;
    let repeat_rocs: Vec<RocCurve> = per_repeat.iter().map(|r| pooled_roc(r)).collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(fprs.len());
    for &fpr in fprs {
        let (tp, n_pos) = roc.tp_at_fpr(fpr);
        let (cp_lo, cp_hi) = clopper_pearson(tp, n_pos, alpha)?;
        let repeat_tpr: Vec<f64> = repeat_rocs.iter().map(|r| tpr_at_fpr(r, fpr)).collect();
        points.push(FprPoint {
            fpr,
            tpr: tpr_at_fpr(&roc, fpr),
            tp,
            n_pos,
            cp_lo,
            cp_hi,
            median_tpr: median(&repeat_tpr),
            repeat_tpr,
            dp_bound: dp_curve.map(|c| dp_tpr_bound(c, fpr)),
        });
    }
    Ok((roc, points))
}

fn read_grid_manifest(cfg: &ExperimentConfig, rep: usize) -> Result<GridManifest> {
    let path = grid_manifest_path(cfg, rep);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::Config(format!("missing {}; run `grid` first", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// ROC CSVs, a summary table and the ROC plot for every configured strategy.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let strategies = cfg.strategies()?;
    let mut per_strategy = Vec::with_capacity(strategies.len());
    for &s in &strategies {
        let mut reps = Vec::with_capacity(cfg.repeats);
        for rep in 0..cfg.repeats {
            let path = attack_path(cfg, s, rep, "csv");
            let text = fs::read_to_string(&path)
                .map_err(|_| Error::Config(format!("missing {}; run `attack` first", path.display())))?;
            reps.push(parse_results_csv(&text)?);
        }
        per_strategy.push((s, reps));
    }
    let manifests: Vec<GridManifest> = (0..cfg.repeats).map(|r| read_grid_manifest(cfg, r)).collect::<Result<_>>()?;
    let targets: Vec<usize> = {
        let mut t: Vec<usize> = per_strategy.iter().flat_map(|(_, reps)| reps.iter().flatten().map(|r| r.target)).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    let dp_curve = dp_envelope(cfg, &manifests, &targets)?;

    let eval_dir = cfg.output_dir.join("eval");
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut evals = Vec::new();
    let mut rocs = Vec::new();
    for (s, reps) in &per_strategy {
        let (roc, points) = evaluate(reps, &cfg.fpr_grid, dp_curve.as_deref(), 0.05)?;
        write_atomic(&eval_dir.join(format!("roc_{s}.csv")), &roc_csv(&roc))?;
        summary_rows(s.tag(), &points, &mut summary);
        evals.push(StrategyEval { strategy: *s, auc: roc.auc(), points });
        rocs.push(roc);
    }
    let curves: Vec<(String, &RocCurve, &[FprPoint])> = evals
        .iter()
        .zip(&rocs)
        .map(|(e, roc)| (e.strategy.to_string(), roc, e.points.as_slice()))
        .collect();
    write_atomic(&eval_dir.join("roc.svg"), &roc_svg(&curves, dp_curve.as_deref()))?;
    write_atomic(&eval_dir.join("summary.csv"), &summary)?;
    let report = EvalReport { strategies: evals, dp_curve };
    write_atomic(&eval_dir.join("summary.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Paired TD and ED measurements for every configured strategy.
///
/// Both arms share the pool, the mask and the training seed; only the HPO
/// data differs. In null mode both arms tune on the same external data and
/// the second arm uses a different training seed instead.
pub fn compare_arms(cfg: &ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    let store = open_store(cfg)?;
    let strategies = cfg.strategies()?;
    let targets = cfg.targets();
    let params = cfg.campaign_params();
    let nf = cfg.fpr_grid.len();
    let mut td = vec![vec![vec![0.0; cfg.repeats]; nf]; strategies.len()];
    let mut ed = td.clone();
    for rep in 0..cfg.repeats {
        let a_cfg = cfg.grid_config(rep, if cfg.compare.null { HpoSource::Ed } else { HpoSource::Td })?;
        let mut b_cfg = cfg.grid_config(rep, HpoSource::Ed)?;
        if cfg.compare.null {
            b_cfg.train_seed = cfg.sub_seed("train-null", rep);
        }
        for (name, arm, grid_cfg) in [("compare-a", &mut td, a_cfg), ("compare-b", &mut ed, b_cfg)] {
            let grid = MiaGrid::new(grid_cfg, Some(store.clone()))?;
            for (k, &s) in strategies.iter().enumerate() {
                let results = run_campaign(&grid, s, &params, &targets, cfg.sub_seed("campaign", rep))?;
                for (f, t) in tpr_grid(&results, &cfg.fpr_grid)?.into_iter().enumerate() {
                    arm[k][f][rep] = t;
                }
            }
            store.put_manifest(&manifest_name(cfg, name, rep), &grid.manifest())?;
        }
    }
    let model = arch_label(&cfg.architecture()?);
    Ok(strategies
        .iter()
        .enumerate()
        .map(|(k, s)| ComparisonRow {
            dataset: cfg.compare.dataset.clone(),
            model: model.clone(),
            config: cfg.compare.config.clone(),
            shots: cfg.shots,
            epsilon: cfg.dp.as_ref().map(|d| d.epsilon),
            mia: s.to_string(),
            td: td[k].clone(),
            ed: ed[k].clone(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<ComparisonRow>,
    pub t: ComparisonTable,
    pub permutation: ComparisonTable,
    pub by_family: String,
}

/// TD-vs-ED tables for the paired t-test and the permutation test.
pub fn cmd_compare_hpo(cfg: &ExperimentConfig) -> Result<CompareReport> {
    if cfg.repeats < 2 {
        return Err(Error::Config("compare-hpo needs repeats >= 2 for paired tests".into()));
    }
    let rows = compare_arms(cfg)?;
    let [t, permutation] = comparison_tables(&rows, &cfg.fpr_grid, cfg.compare.resamples, cfg.sub_seed("tests", 0))?;
    let dir = cfg.output_dir.join("compare");
    write_atomic(&dir.join("td_vs_ed_t.csv"), &t.to_csv())?;
    write_atomic(&dir.join("td_vs_ed_permutation.csv"), &permutation.to_csv())?;
    let report = CompareReport { rows, t, permutation, by_family: BY_FAMILY.into() };
    write_atomic(&dir.join("td_vs_ed.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Store objects no manifest refers to. Nothing is deleted.
pub fn cmd_gc(store: &Store) -> Result<Vec<String>> {
    store.gc_candidates()
}

/// Process exit code for an error: 2 configuration, 3 numeric or training
/// failure, 4 store integrity, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Input(_) => 2,
        Error::TrainingDiverged { .. }
        | Error::Accounting(_)
        | Error::Calibration(_)
        | Error::HpoFailed(_)
        | Error::InsufficientShadows { .. }
        | Error::Metric(_)
        | Error::Numeric(_) => 3,
        Error::Integrity { .. } => 4,
        _ => 1,
    }
}
