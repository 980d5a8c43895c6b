use miagrid::attacks::{
    acc_lira_hypers, kl_lira_select, results_csv, row_hpo_seed, run_campaign, CampaignParams, GridConfig, HpoSource,
    KlCandidates, MiaGrid, Strategy, VarianceEstimate,
};
use miagrid::hpo::{run_hpo, EpochRange, SearchSpace};
use miagrid::models::{decode_model, train, true_class_scores, Architecture, HyperParams};
use miagrid::store::{CellKey, Store};
use miagrid::synthdata::{sample_population, DataSpec, EXTERNAL_ID_BASE};
use miagrid::Error;

fn config(shadows: usize, trials: usize) -> GridConfig {
    let data = DataSpec { dim: 12, classes: 4, class_separation: 3.0, noise_sigma: 1.0, seed: 5 };
    GridConfig {
        arch: Architecture::linear(data.dim, data.classes),
        data,
        shots: 10,
        shadows,
        space: SearchSpace { epochs: EpochRange::Fixed { epochs: 4 }, ..SearchSpace::with_trials(trials) },
        dp: None,
        hpo_source: HpoSource::Td,
        ed_stream: "ed-hpo".into(),
        seed: 3,
        train_seed: 9,
    }
}

fn kl(c: usize, n: usize) -> CampaignParams {
    CampaignParams { c, n, ..CampaignParams::default() }
}

#[test]
fn single_target_budgets_match_closed_forms() {
    let (m, t, c, n) = (16, 5, 4, 2);
    let run = |strategy| {
        let grid = MiaGrid::new(config(m, t), None).unwrap();
        run_campaign(&grid, strategy, &kl(c, n), &[0], 1).unwrap()[0].models_trained
    };
    assert_eq!(run(Strategy::Lira), m);
    assert_eq!(run(Strategy::Acc), m * t + m);
    assert_eq!(run(Strategy::Kl), c * t + c * (n - 1) + m - n);
    assert_eq!(run(Strategy::Threshold), 0);
}

#[test]
fn kl_budget_at_full_scale() {
    let grid = MiaGrid::new(config(64, 20), None).unwrap();
    let r = run_campaign(&grid, Strategy::Kl, &kl(4, 2), &[0], 2).unwrap();
    assert_eq!(r[0].models_trained, 146);
}

#[test]
fn kl_with_target_hypers_matches_lira_bitwise() {
    let grid = MiaGrid::new(config(8, 3), None).unwrap();
    let eta = grid.row_hypers(2).unwrap();
    let params = CampaignParams { c: 1, n: 2, candidates: KlCandidates::Explicit { hypers: vec![eta] }, ..Default::default() };
    let k = run_campaign(&grid, Strategy::Kl, &params, &[2], 4).unwrap();
    let l = run_campaign(&grid, Strategy::Lira, &params, &[2], 4).unwrap();
    let bits = |r: &[miagrid::attacks::AttackResult]| r[0].scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&k), bits(&l));
    assert_eq!(l[0].models_trained, 0, "lira reuses the cells trained by kl");
    assert_eq!(
        results_csv(&k).replace(",kl,", ","),
        results_csv(&l).replace(",lira,", ",")
    );
}

#[test]
fn smallest_grid_scores_every_sample() {
    let grid = MiaGrid::new(config(1, 2), None).unwrap();
    let r = run_campaign(&grid, Strategy::Lira, &kl(1, 1), &[0, 1], 0).unwrap();
    for res in &r {
        assert_eq!(res.scores.len(), grid.pool().len());
        assert!(res.scores.iter().all(|s| s.is_finite()));
    }
    assert_eq!(r[0].models_trained, 1);
    let g = CampaignParams { variance: VarianceEstimate::Global, ..kl(1, 1) };
    let r = run_campaign(&grid, Strategy::Lira, &g, &[0], 0).unwrap();
    assert!(r[0].scores.iter().all(|s| s.is_finite()));
}

#[test]
fn mask_rows_partition_shadow_counts() {
    let grid = MiaGrid::new(config(6, 2), None).unwrap();
    for k in 0..grid.pool().len() {
        let n_in = (1..grid.len()).filter(|&j| grid.mask().is_member(j, k)).count();
        let n_out = (1..grid.len()).filter(|&j| !grid.mask().is_member(j, k)).count();
        assert_eq!(n_in + n_out, grid.len() - 1);
    }
}

#[test]
fn persistent_store_makes_reruns_free_and_scores_coherent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(6, 3);
    let first = {
        let grid = MiaGrid::new(cfg.clone(), Some(Store::open(dir.path()).unwrap())).unwrap();
        let r = run_campaign(&grid, Strategy::Kl, &kl(2, 2), &[0, 1], 5).unwrap();
        assert!(r[0].models_trained > 0);
        r
    };
    let store = Store::open(dir.path()).unwrap();
    let grid = MiaGrid::new(cfg, Some(store.clone())).unwrap();
    let again = run_campaign(&grid, Strategy::Kl, &kl(2, 2), &[0, 1], 5).unwrap();
    assert_eq!(grid.models_trained(), 0);
    for (a, b) in first.iter().zip(&again) {
        assert_eq!(b.models_trained, 0);
        assert_eq!((&a.scores, &a.kl), (&b.scores, &b.kl));
    }

    let cell = grid.cell(3, &grid.row_hypers(0).unwrap()).unwrap();
    let bytes = std::fs::read(dir.path().join("models").join(format!("{}.bin", cell.key.hex()))).unwrap();
    let model = decode_model(&bytes[..bytes.len() - 32]).unwrap();
    let recomputed = true_class_scores(&model, grid.pool()).unwrap();
    assert_eq!(
        recomputed.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
        store.get_scores(&cell.key).unwrap().unwrap().iter().map(|s| s.to_bits()).collect::<Vec<_>>()
    );
    let manifest = grid.manifest();
    store.put_manifest("grid", &manifest).unwrap();
    assert!(store.list_objects().unwrap().len() >= manifest.objects.len());
}

#[test]
fn corrupted_cache_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(2, 2);
    {
        let grid = MiaGrid::new(cfg.clone(), Some(Store::open(dir.path()).unwrap())).unwrap();
        run_campaign(&grid, Strategy::Lira, &kl(1, 1), &[0], 0).unwrap();
    }
    for entry in std::fs::read_dir(dir.path().join("scores")).unwrap() {
        let path = entry.unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[9] ^= 1;
        std::fs::write(&path, bytes).unwrap();
    }
    let grid = MiaGrid::new(cfg, Some(Store::open(dir.path()).unwrap())).unwrap();
    let err = run_campaign(&grid, Strategy::Lira, &kl(1, 1), &[0], 0).unwrap_err();
    assert!(matches!(err.root(), Error::Integrity { .. }), "{err}");
}

#[test]
fn ed_mode_tunes_on_external_ids() {
    let mut cfg = config(3, 2);
    cfg.hpo_source = HpoSource::Ed;
    let grid = MiaGrid::new(cfg, None).unwrap();
    for i in 0..grid.len() {
        assert!(grid.hpo_data(i).ids().iter().all(|&id| id >= EXTERNAL_ID_BASE));
        assert_eq!(grid.hpo_data(i).len(), grid.row(i).len());
    }
    let h = grid.row_hpo(1).unwrap();
    assert!(h.slot.members.iter().all(|&m| !m));
    let r = run_campaign(&grid, Strategy::Kl, &kl(2, 1), &[0], 0).unwrap();
    assert!(r[0].scores.iter().all(|s| s.is_finite()));
}

#[test]
fn acc_hypers_equal_independent_hpo_runs() {
    let cfg = config(3, 3);
    let grid = MiaGrid::new(cfg.clone(), None).unwrap();
    let sets: Vec<_> = (0..grid.len()).map(|i| grid.row(i).clone()).collect();
    let got = acc_lira_hypers(&cfg.arch, &sets, &cfg.space, None, cfg.seed).unwrap();
    assert_eq!(got.len(), sets.len());
    for (i, r) in got.iter().enumerate() {
        let again = run_hpo(&cfg.arch, &sets[i], &cfg.space, None, row_hpo_seed(cfg.seed, i)).unwrap();
        assert_eq!(r.best, again.best);
        assert_eq!(grid.row_hypers(i).unwrap(), r.best);
    }
}

#[test]
fn kl_selection_prefers_the_target_learning_rate() {
    let spec = DataSpec { dim: 12, classes: 4, class_separation: 3.0, noise_sigma: 1.0, seed: 8 };
    let arch = Architecture::linear(12, 4);
    let eta = HyperParams::non_private(1e-3, 20, 10);
    let far = HyperParams { learning_rate: 1e-1, ..eta.clone() };
    let mut hits = 0;
    for rep in 0..10u64 {
        let target_data = sample_population(&spec, 80, &format!("target/{rep}")).unwrap();
        let target = train(&arch, &target_data, &eta, rep).unwrap();
        let sets: Vec<_> =
            (0..2).map(|i| sample_population(&spec, 80, &format!("shadow/{rep}/{i}")).unwrap()).collect();
        let sel = kl_lira_select(&arch, &[eta.clone(), far.clone()], &sets, &target, 100 + rep).unwrap();
        hits += usize::from(sel.selected == 0);
        assert_eq!(kl_lira_select(&arch, &[far.clone()], &sets, &target, rep).unwrap().selected, 0);
    }
    assert!(hits >= 9, "selected the target's learning rate {hits}/10 times");
}

#[test]
fn kl_needs_enough_spare_rows() {
    let grid = MiaGrid::new(config(4, 2), None).unwrap();
    let err = run_campaign(&grid, Strategy::Kl, &kl(4, 3), &[0], 0).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let key = CellKey { dataset: [0; 32], hypers: [0; 32], arch: [0; 32], seed: 0 };
    assert_eq!(key.hex().len(), 64);
}
