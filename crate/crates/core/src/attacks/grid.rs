//! The MIA-Grid: a pool, a membership mask over M+1 datasets, per-row HPO
//! results and a cache of trained (dataset, hyperparameter) cells.
//!
//! Nothing is trained when the grid is created. Row HPO and cells are
//! trained on first use and counted in [`MiaGrid::models_trained`].

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hpo::{run_hpo, HpoResult, SearchSpace};
use crate::models::{true_class_scores, train, Architecture, DpSpec, HyperParams, Model};
use crate::seed::derive_indexed;
use crate::store::{ids_digest, object_ref, CellKey, ObjectKind, Store};
use crate::synthdata::{
    build_grid_datasets, pool_size_for_shots, sample_external_datasets, sample_population, DataSpec, LabeledSet,
    MembershipMask, POOL_STREAM,
};

/// Seed of the HPO run for row `index`.
pub fn row_hpo_seed(seed: u64, index: usize) -> u64 {
    derive_indexed(seed, "row-hpo", index as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HpoSource {
    /// Tune on the row's own training data.
    Td,
    /// Tune on a disjoint external set of the same size.
    Ed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub data: DataSpec,
    pub arch: Architecture,
    /// Shots per class; the pool holds `2 · shots · classes` samples.
    pub shots: usize,
    /// Number of shadow rows M (the grid has M+1 rows).
    pub shadows: usize,
    pub space: SearchSpace,
    pub dp: Option<DpSpec>,
    pub hpo_source: HpoSource,
    /// Stream of the external HPO sets.
    pub ed_stream: String,
    /// Seed of the mask and of every HPO run.
    pub seed: u64,
    /// Seed of cell training.
    pub train_seed: u64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.arch.validate()?;
        if self.arch.dim != self.data.dim || self.arch.classes != self.data.classes {
            return Err(Error::Config("architecture shape does not match the data spec".into()));
        }
        if self.shots == 0 || self.shadows == 0 {
            return Err(Error::Config("shots and shadows must be at least 1".into()));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        self.space.validate(self.space.batch_min.max(10))
    }
}

/// A shadow model as the attack sees it: pool scores and pool membership.
#[derive(Clone, Debug)]
pub struct ShadowSlot {
    pub scores: Arc<Vec<f64>>,
    pub members: Arc<Vec<bool>>,
}

#[derive(Debug)]
pub struct Cell {
    pub row: usize,
    pub key: CellKey,
    /// Hyperparameters actually used for training (noise recalibrated to the row).
    pub hypers: HyperParams,
    pub model: Arc<Model>,
    pub scores: Arc<Vec<f64>>,
}

/// HPO outcome of one row, with the winning trial's model.
#[derive(Debug)]
pub struct RowHpo {
    pub row: usize,
    pub result: HpoResult,
    /// Training split of the HPO data.
    pub split: LabeledSet,
    pub model: Arc<Model>,
    pub slot: ShadowSlot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub config: GridConfig,
    pub pool_size: usize,
    pub row_sizes: Vec<usize>,
    pub hypers: Vec<Option<HyperParams>>,
    pub models_trained: usize,
    pub objects: Vec<String>,
}

pub struct MiaGrid {
    config: GridConfig,
    pool: LabeledSet,
    mask: MembershipMask,
    rows: Vec<LabeledSet>,
    members: Vec<Arc<Vec<bool>>>,
    external: Option<Vec<LabeledSet>>,
    pool_index: HashMap<u64, usize>,
    store: Option<Store>,
    hpo: Mutex<HashMap<usize, Arc<RowHpo>>>,
    cells: Mutex<HashMap<(usize, [u8; 32]), Arc<Cell>>>,
    objects: Mutex<BTreeSet<String>>,
    trained: AtomicUsize,
}

impl MiaGrid {
    /// Samples the pool and the mask (and the external HPO sets in ED mode).
    pub fn new(config: GridConfig, store: Option<Store>) -> Result<Self> {
        config.validate()?;
        let pool = sample_population(
            &config.data,
            pool_size_for_shots(config.shots, config.data.classes),
            POOL_STREAM,
        )?;
        let mask = build_grid_datasets(&pool, config.shadows, config.seed)?;
        let rows: Vec<LabeledSet> = (0..mask.rows()).map(|i| pool.select(mask.row(i))).collect();
        let members = (0..mask.rows()).map(|i| Arc::new(mask.row(i).to_vec())).collect();
        let external = match config.hpo_source {
            HpoSource::Td => None,
            HpoSource::Ed => {
                let sizes: Vec<usize> = rows.iter().map(|r| r.len().max(1)).collect();
                Some(sample_external_datasets(&config.data, rows.len(), &sizes, &config.ed_stream)?)
            }
        };
        let pool_index = pool.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Self {
            config,
            pool,
            mask,
            rows,
            members,
            external,
            pool_index,
            store,
            hpo: Mutex::new(HashMap::new()),
            cells: Mutex::new(HashMap::new()),
            objects: Mutex::new(BTreeSet::new()),
            trained: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn pool(&self) -> &LabeledSet {
        &self.pool
    }

    pub fn mask(&self) -> &MembershipMask {
        &self.mask
    }

    /// Number of rows, M+1.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &LabeledSet {
        &self.rows[i]
    }

    pub fn row_members(&self, i: usize) -> &Arc<Vec<bool>> {
        &self.members[i]
    }

    /// Data the HPO of row `i` runs on.
    pub fn hpo_data(&self, i: usize) -> &LabeledSet {
        match &self.external {
            Some(ext) => &ext[i],
            None => &self.rows[i],
        }
    }

    /// Total models trained by this grid so far (HPO trials and cells).
    pub fn models_trained(&self) -> usize {
        self.trained.load(Ordering::SeqCst)
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Config(format!("row {i} out of range for a grid of {} rows", self.len())));
        }
        Ok(())
    }

    fn hpo_key(&self, i: usize) -> CellKey {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config.space).expect("search space serializes"));
        h.update(serde_json::to_vec(&self.config.dp).expect("dp spec serializes"));
        CellKey {
            dataset: ids_digest(self.hpo_data(i).ids()),
            hypers: h.finalize().into(),
            arch: self.config.arch.digest(),
            seed: row_hpo_seed(self.config.seed, i),
        }
    }

    fn record(&self, kind: ObjectKind, key: &CellKey) {
        self.objects.lock().unwrap().insert(object_ref(kind, &key.hex()));
    }

    fn pool_slot(&self, model: &Model, trained_on: &[u64]) -> Result<ShadowSlot> {
        let mut members = vec![false; self.pool.len()];
        for id in trained_on {
            if let Some(&k) = self.pool_index.get(id) {
                members[k] = true;
            }
        }
        Ok(ShadowSlot { scores: Arc::new(true_class_scores(model, &self.pool)?), members: Arc::new(members) })
    }

    /// HPO result of row `i`, running it if needed.
    pub fn row_hpo(&self, i: usize) -> Result<Arc<RowHpo>> {
        self.check_row(i)?;
        if let Some(h) = self.hpo.lock().unwrap().get(&i) {
            return Ok(h.clone());
        }
        let data = self.hpo_data(i);
        let key = self.hpo_key(i);
        let arch = &self.config.arch;
        let cached = match &self.store {
            Some(store) => store.get_hpo(&key)?,
            None => None,
        };
        let (result, model) = match cached {
            Some(result) => {
                let split = result.train_split(data)?;
                let model_key = CellKey {
                    dataset: ids_digest(split.ids()),
                    hypers: result.best.digest(),
                    arch: arch.digest(),
                    seed: result.best_train_seed,
                };
                let store = self.store.as_ref().expect("cached results come from a store");
                let model = match store.get_model(&model_key)? {
                    Some(m) => m,
                    None => {
                        self.trained.fetch_add(1, Ordering::SeqCst);
                        let m = result.retrain_best_model(arch, data)?;
                        store.put_model(&model_key, &m)?;
                        m
                    }
                };
                self.record(ObjectKind::Models, &model_key);
                (result, model)
            }
            None => {
                let mut result = run_hpo(arch, data, &self.config.space, self.config.dp.as_ref(), key.seed)
                    .map_err(|e| e.context(format!("HPO of grid row {i}")))?;
                self.trained.fetch_add(self.config.space.trials, Ordering::SeqCst);
                let model = result.best_model.take().expect("run_hpo keeps the winning model");
                if let Some(store) = &self.store {
                    let split = result.train_split(data)?;
                    let model_key = CellKey {
                        dataset: ids_digest(split.ids()),
                        hypers: result.best.digest(),
                        arch: arch.digest(),
                        seed: result.best_train_seed,
                    };
                    store.put_hpo(&key, &result)?;
                    store.put_model(&model_key, &model)?;
                    self.record(ObjectKind::Models, &model_key);
                }
                (result, model)
            }
        };
        self.record(ObjectKind::Hpo, &key);
        let split = result.train_split(data)?;
        let slot = self.pool_slot(&model, split.ids())?;
        let entry = Arc::new(RowHpo { row: i, result, split, model: Arc::new(model), slot });
        Ok(self.hpo.lock().unwrap().entry(i).or_insert(entry).clone())
    }

    /// Tuned hyperparameters of row `i`.
    pub fn row_hypers(&self, i: usize) -> Result<HyperParams> {
        Ok(self.row_hpo(i)?.result.best.clone())
    }

    fn cell_seed(&self, row: usize, base: &HyperParams) -> u64 {
        let d = base.digest();
        derive_indexed(self.config.train_seed, &format!("cell/{}", hex::encode(d)), row as u64)
    }

    fn build_cell(&self, row: usize, base: &HyperParams) -> Result<Cell> {
        let data = &self.rows[row];
        if data.is_empty() {
            return Err(Error::Config(format!("grid row {row} is empty")));
        }
        let hypers = base.calibrated_for(data.len(), self.config.dp.as_ref())?;
        let key = CellKey {
            dataset: ids_digest(data.ids()),
            hypers: hypers.digest(),
            arch: self.config.arch.digest(),
            seed: self.cell_seed(row, base),
        };
        let stored = match &self.store {
            Some(store) => store.get_model(&key)?.map(|m| (m, store.get_scores(&key))),
            None => None,
        };
        let (model, scores) = match stored {
            Some((model, scores)) => {
                let scores = match scores? {
                    Some(s) => s,
                    None => true_class_scores(&model, &self.pool)?,
                };
                (model, scores)
            }
            None => {
                self.trained.fetch_add(1, Ordering::SeqCst);
                let model = train(&self.config.arch, data, &hypers, key.seed)
                    .map_err(|e| e.context(format!("grid cell (row {row})")))?;
                let scores = true_class_scores(&model, &self.pool)?;
                if let Some(store) = &self.store {
                    store.put_model(&key, &model)?;
                    store.put_scores(&key, &scores)?;
                }
                (model, scores)
            }
        };
        if self.store.is_some() {
            self.record(ObjectKind::Models, &key);
            self.record(ObjectKind::Scores, &key);
        }
        Ok(Cell { row, key, hypers, model: Arc::new(model), scores: Arc::new(scores) })
    }

    /// Cells for every (row, base hyperparameters) request, training the
    /// missing ones in parallel. Output order matches the request.
    pub fn cells(&self, requests: &[(usize, HyperParams)]) -> Result<Vec<Arc<Cell>>> {
        for (row, _) in requests {
            self.check_row(*row)?;
        }
        let ids: Vec<(usize, [u8; 32])> = requests.iter().map(|(r, h)| (*r, h.digest())).collect();
        let missing: Vec<usize> = {
            let cache = self.cells.lock().unwrap();
            let mut seen = BTreeSet::new();
            (0..requests.len()).filter(|&k| !cache.contains_key(&ids[k]) && seen.insert(ids[k])).collect()
        };
        let built: Vec<Cell> = missing
            .par_iter()
            .map(|&k| self.build_cell(requests[k].0, &requests[k].1))
            .collect::<Result<_>>()?;
        let mut cache = self.cells.lock().unwrap();
        for (k, cell) in missing.into_iter().zip(built) {
            cache.entry(ids[k]).or_insert_with(|| Arc::new(cell));
        }
        Ok(ids.iter().map(|id| cache[id].clone()).collect())
    }

    pub fn cell(&self, row: usize, base: &HyperParams) -> Result<Arc<Cell>> {
        Ok(self.cells(&[(row, base.clone())])?.remove(0))
    }

    /// Slot of a cell trained on a full grid row.
    pub fn cell_slot(&self, cell: &Cell) -> ShadowSlot {
        ShadowSlot { scores: cell.scores.clone(), members: self.members[cell.row].clone() }
    }

    /// Runs the HPO of each target row and trains its diagonal model.
    pub fn prepare_targets(&self, targets: &[usize]) -> Result<Vec<Arc<Cell>>> {
        let mut requests = Vec::with_capacity(targets.len());
        for &i in targets {
            requests.push((i, self.row_hypers(i)?));
        }
        self.cells(&requests)
    }

    pub fn manifest(&self) -> GridManifest {
        let hpo = self.hpo.lock().unwrap();
        GridManifest {
            config: self.config.clone(),
            pool_size: self.pool.len(),
            row_sizes: self.rows.iter().map(LabeledSet::len).collect(),
            hypers: (0..self.len()).map(|i| hpo.get(&i).map(|h| h.result.best.clone())).collect(),
            models_trained: self.models_trained(),
            objects: self.objects.lock().unwrap().iter().cloned().collect(),
        }
    }
}
