use std::path::Path;
use std::process::Command;

use miagrid::attacks::Strategy;
use miagrid_cli::{cmd_attack, cmd_compare_hpo, cmd_eval, cmd_gc, cmd_grid, open_store, ExperimentConfig};

fn config(dir: &Path, shadows: usize, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
output_dir = "{}"
seed = 3
shots = 8
shadows = {shadows}
[data]
dim = 6
classes = 3
class_separation = 3.0
noise_sigma = 1.0
[arch]
kind = "linear"
[hpo]
trials = 3
epochs = [5]
{extra}
"#,
        dir.display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn smoke_grid_writes_two_diagonals_and_reruns_for_free() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, "[attack]\nstrategies = [\"lira\", \"threshold\"]");
    let first = cmd_grid(&cfg).unwrap();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].models_trained, 2 * 3 + 2);
    assert!(first[0].manifest.hypers.iter().all(Option::is_some));
    assert!(dir.path().join("grid/rep-0.json").exists());
    assert_eq!(cmd_grid(&cfg).unwrap()[0].models_trained, 0);
}

#[test]
fn ed_grid_tunes_outside_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1, "[attack]\nstrategies = [\"lira\"]");
    cfg.hpo_source = miagrid::attacks::HpoSource::Ed;
    cmd_grid(&cfg).unwrap();
    let grid = miagrid::attacks::MiaGrid::new(cfg.grid_config(0, cfg.hpo_source).unwrap(), None).unwrap();
    let pool: std::collections::HashSet<u64> = grid.pool().ids().iter().copied().collect();
    for i in 0..grid.len() {
        assert!(grid.hpo_data(i).ids().iter().all(|id| !pool.contains(id)));
    }
}

#[test]
fn attack_and_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        1,
        "[attack]\nstrategies = [\"threshold\", \"lira\", \"kl\", \"acc\"]\nc = 1\nn = 1\n[dp]\nepsilon = 8.0\ndelta = 1e-5",
    );
    assert!(matches!(cmd_attack(&cfg, &[]), Err(miagrid::Error::Config(_))), "attack needs a grid");
    cmd_grid(&cfg).unwrap();
    let out = cmd_attack(&cfg, &[]).unwrap();
    let budgets = |s: Strategy| -> Vec<usize> {
        out.iter().find(|(m, _)| m.strategy == s).unwrap().0.budgets.clone()
    };
    assert_eq!(budgets(Strategy::Threshold), vec![0, 0]);
    assert_eq!(budgets(Strategy::Lira), vec![1, 1]);
    let csv = std::fs::read_to_string(dir.path().join("attack/lira/rep-0.csv")).unwrap();
    assert!(csv.starts_with("target,strategy,sample_id,score,is_member\n"));

    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(report.strategies.len(), 4);
    for s in ["threshold", "lira", "kl", "acc"] {
        let roc = std::fs::read_to_string(dir.path().join(format!("eval/roc_{s}.csv"))).unwrap();
        let lines: Vec<&str> = roc.lines().collect();
        assert!(lines[1].starts_with("0.0,0.0,"), "{s}");
        assert!(lines.last().unwrap().starts_with("1.0,1.0,"), "{s}");
    }
    for s in &report.strategies {
        for p in &s.points {
            assert!(p.cp_lo <= p.dp_bound.unwrap(), "{:?} at {}", s.strategy, p.fpr);
        }
    }
    assert!(dir.path().join("eval/roc.svg").exists());

    let store = open_store(&cfg).unwrap();
    let unreferenced = cmd_gc(&store).unwrap();
    assert!(unreferenced.is_empty(), "{unreferenced:?}");
    assert!(!store.list_objects().unwrap().is_empty());
}

#[test]
fn kl_budget_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 6, "[attack]\nstrategies = [\"kl\"]\nc = 2\nn = 2\ntargets = 1");
    cmd_grid(&cfg).unwrap();
    let out = cmd_attack(&cfg, &[]).unwrap();
    let (c, n, m, t) = (2, 2, 6, 3);
    assert_eq!(out[0].0.budgets, vec![c * t + c * (n - 1) + m - n]);
}

#[test]
fn compare_tables_have_contract_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1, "[attack]\nstrategies = [\"lira\"]\n[compare]\nresamples = 200");
    cfg.repeats = 3;
    let report = cmd_compare_hpo(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("compare/td_vs_ed_t.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("dataset,model,config,S,ε,MIA,Δtpr×10⁻⁴ (FPR=0.001),p (FPR=0.001),p_adjusted (FPR=0.001)"));
    assert_eq!(header.split(',').count(), 15);
    assert_eq!(report.rows[0].td[0].len(), 3);
    assert!(dir.path().join("compare/td_vs_ed_permutation.csv").exists());
    assert!(cmd_gc(&open_store(&cfg).unwrap()).unwrap().is_empty(), "compare grids are referenced by manifests");
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_miagrid");
    let bad = write_config(dir.path(), "output_dir = \"x\"\nshots = 0\nshadows = 1\n");
    let status = Command::new(bin).args(["grid"]).arg(&bad).env_remove("MIAGRID_STORE").output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    assert!(!dir.path().join("x").exists(), "rejected configs have no side effects");

    let out = dir.path().join("out");
    let good = write_config(
        dir.path(),
        &format!(
            "output_dir = \"{}\"\nshots = 8\nshadows = 1\n[data]\ndim = 4\nclasses = 2\nclass_separation = 3.0\nnoise_sigma = 1.0\n[arch]\nkind = \"linear\"\n[hpo]\ntrials = 2\nepochs = [3]\n[attack]\nstrategies = [\"lira\"]\n",
            out.display()
        ),
    );
    let run = |args: &[&str]| {
        Command::new(bin).args(args).arg(&good).env_remove("MIAGRID_STORE").output().unwrap()
    };
    assert!(run(&["--jobs", "1", "grid"]).status.success());
    let o = run(&["attack"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for entry in std::fs::read_dir(out.join("store/scores")).unwrap() {
        let path = entry.unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] ^= 1;
        std::fs::write(&path, bytes).unwrap();
    }
    std::fs::remove_dir_all(out.join("attack")).unwrap();
    assert_eq!(run(&["--seed", "0", "attack"]).status.code(), Some(4));
    assert!(run(&["gc"]).status.success());
}
