//! Random-search hyperparameter optimization on a 70/30 train/validation split.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{accuracy, calibrate_noise, steps_for, train, Architecture, DpSpec, HyperParams, Model};
use crate::seed::{derive_indexed, derive_seed, rng_for};
use crate::synthdata::LabeledSet;

pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EpochRange {
    Fixed { epochs: usize },
    Range { min: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub batch_min: usize,
    pub clip: (f64, f64),
    pub epochs: EpochRange,
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: (1e-7, 1e-2),
            batch_min: 10,
            clip: (0.2, 10.0),
            epochs: EpochRange::Fixed { epochs: 40 },
            trials: 20,
        }
    }
}

impl SearchSpace {
    pub fn with_trials(trials: usize) -> Self {
        Self { trials, ..Self::default() }
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let (lo, hi) = self.lr;
        if !(lo > 0.0 && lo <= hi) || !(self.clip.0 > 0.0 && self.clip.0 <= self.clip.1) {
            return Err(Error::Config("search ranges must be positive and ordered".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("at least one HPO trial is required".into()));
        }
        if self.batch_min == 0 || self.batch_min > dataset_len {
            return Err(Error::Config(format!(
                "batch lower bound {} exceeds dataset size {dataset_len}",
                self.batch_min
            )));
        }
        match self.epochs {
            EpochRange::Fixed { epochs } if epochs > 0 => Ok(()),
            EpochRange::Range { min, max } if min > 0 && min <= max => Ok(()),
            _ => Err(Error::Config("invalid epoch range".into())),
        }
    }

    /// Whether `h` lies inside this space for a dataset of `n` samples.
    pub fn contains(&self, h: &HyperParams, n: usize) -> bool {
        let lr_ok = h.learning_rate >= self.lr.0 && h.learning_rate <= self.lr.1;
        let batch_ok = h.batch_size >= self.batch_min && h.batch_size <= n;
        let clip_ok = h.clip_norm.is_none_or(|c| c >= self.clip.0 && c <= self.clip.1);
        let epochs_ok = match self.epochs {
            EpochRange::Fixed { epochs } => h.epochs == epochs,
            EpochRange::Range { min, max } => (min..=max).contains(&h.epochs),
        };
        lr_ok && batch_ok && clip_ok && epochs_ok
    }

    fn sample(&self, n: usize, dp: bool, rng: &mut crate::seed::Rng) -> HyperParams {
        let log_uniform = |rng: &mut crate::seed::Rng, (lo, hi): (f64, f64)| {
            rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
        };
        let learning_rate = log_uniform(rng, self.lr);
        let batch_size = rng.random_range(self.batch_min..=n);
        let clip_norm = dp.then(|| log_uniform(rng, self.clip));
        let epochs = match self.epochs {
            EpochRange::Fixed { epochs } => epochs,
            EpochRange::Range { min, max } => rng.random_range(min..=max),
        };
        HyperParams { learning_rate, batch_size, clip_norm, noise_multiplier: None, epochs }
    }
}

/// Deterministic stratified 70/30 split.
///
/// Within each class the samples are shuffled and given the key
/// `(rank + 0.5) / class_count`; the `floor(0.7 n)` smallest keys form the
/// training part, so every class is interleaved proportionally.
pub fn split_train_val(dataset: &LabeledSet, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Config(format!("dataset of {n} samples is too small to split (need 10)")));
    }
    let mut rng = rng_for(seed, "split");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let classes = dataset.labels().iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; classes];
    for &l in dataset.labels() {
        counts[l] += 1;
    }
    let mut seen = vec![0usize; classes];
    let mut keyed: Vec<(f64, usize, usize)> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let l = dataset.label(i);
            let key = (seen[l] as f64 + 0.5) / counts[l] as f64;
            seen[l] += 1;
            (key, pos, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_train = (TRAIN_FRACTION * n as f64).floor() as usize;
    let mut train_idx: Vec<usize> = keyed[..n_train].iter().map(|k| k.2).collect();
    let mut val_idx: Vec<usize> = keyed[n_train..].iter().map(|k| k.2).collect();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&val_idx)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hypers: HyperParams,
    /// `None` when training diverged.
    pub val_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpoResult {
    pub best: HyperParams,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
    /// Seed of the train/validation split.
    pub split_seed: u64,
    /// Training seed of the winning trial.
    pub best_train_seed: u64,
    /// Model of the winning trial, trained on the training split.
    #[serde(skip)]
    pub best_model: Option<Model>,
}

impl HpoResult {
    pub fn best_accuracy(&self) -> f64 {
        self.trials[self.best_trial].val_acc.unwrap_or(f64::NAN)
    }

    /// Trials as CSV: `trial,lr,batch,clip,noise,val_acc`.
    pub fn trials_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("trial,lr,batch,clip,noise,val_acc\n");
        for (i, t) in self.trials.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                t.hypers.learning_rate,
                t.hypers.batch_size,
                opt(t.hypers.clip_norm),
                opt(t.hypers.noise_multiplier),
                t.val_acc.map(|a| a.to_string()).unwrap_or_else(|| "NaN".into()),
            ));
        }
        out
    }

    pub fn best_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.best)?)
    }

    /// Training split the trials were fitted on.
    pub fn train_split(&self, dataset: &LabeledSet) -> Result<LabeledSet> {
        split_train_val(dataset, self.split_seed).map(|(train, _)| train)
    }

    /// Re-trains the winning trial's model on the training split.
    pub fn retrain_best_model(&self, arch: &Architecture, dataset: &LabeledSet) -> Result<Model> {
        train(arch, &self.train_split(dataset)?, &self.best, self.best_train_seed)
    }
}

/// Runs `space.trials` random-search trials and keeps the most accurate one.
///
/// Under DP each trial's noise multiplier is calibrated to `dp` for the
/// trial's own step count and sampling rate on the training split.
pub fn run_hpo(
    arch: &Architecture,
    dataset: &LabeledSet,
    space: &SearchSpace,
    dp: Option<&DpSpec>,
    seed: u64,
) -> Result<HpoResult> {
    space.validate(dataset.len())?;
    if let Some(dp) = dp {
        dp.validate()?;
    }
    let split_seed = derive_seed(seed, "split");
    let (train_split, val_split) = split_train_val(dataset, split_seed)?;
    let n_train = train_split.len();

    let outcomes: Vec<(Trial, Option<Model>)> = (0..space.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &format!("trial/{t}/params"));
            let mut hypers = space.sample(dataset.len(), dp.is_some(), &mut rng);
            if let Some(dp) = dp {
                let batch = hypers.batch_size.min(n_train);
                let steps = steps_for(n_train, batch, hypers.epochs);
                match calibrate_noise(dp, steps, batch as f64 / n_train as f64) {
                    Ok(sigma) => hypers.noise_multiplier = Some(sigma),
                    Err(e) => {
                        return (Trial { hypers, val_acc: None, failure: Some(e.to_string()) }, None);
                    }
                }
            }
            match train(arch, &train_split, &hypers, derive_indexed(seed, "trial-train", t as u64)) {
                Ok(model) => {
                    let val_acc = Some(accuracy(&model, &val_split));
                    (Trial { val_acc, hypers, failure: None }, Some(model))
                }
                Err(e) => (Trial { hypers, val_acc: None, failure: Some(e.to_string()) }, None),
            }
        })
        .collect();
    let (trials, mut models): (Vec<Trial>, Vec<Option<Model>>) = outcomes.into_iter().unzip();

    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(acc) = t.val_acc {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
    }
    let Some((best_trial, _)) = best else {
        let diagnostics = trials
            .iter()
            .enumerate()
            .map(|(i, t)| format!("trial {i}: {}", t.failure.as_deref().unwrap_or("no result")))
            .collect();
        return Err(Error::HpoFailed(diagnostics));
    };
    Ok(HpoResult {
        best: trials[best_trial].hypers.clone(),
        best_trial,
        trials,
        split_seed,
        best_train_seed: derive_indexed(seed, "trial-train", best_trial as u64),
        best_model: models[best_trial].take(),
    })
}
