//! Toy classifiers, their training loop, confidence scoring and DP accounting.

mod accountant;
mod codec;
mod network;
mod train;

pub use accountant::{account_epsilon, calibrate_noise, epsilon_curve, rdp_orders, DELTA_GRID_LEN};
pub use codec::{decode_model, encode_model};
pub use network::{Architecture, ArchKind, Model};
pub use train::{steps_for, train, train_with_hooks, TrainHooks};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lower clamp applied before logit scaling.
pub const LOGIT_CLAMP: f64 = 1e-12;

/// `log(p / (1 - p))` with `p` clamped into `[1e-12, 1 - 1e-12]`.
pub fn logit_score(p: f64) -> f64 {
    if p.is_nan() {
        return 0.0;
    }
    // Above 1/2 work with the complement, which is exact in f64.
    if p >= 0.5 {
        let q = (1.0 - p).max(LOGIT_CLAMP);
        ((1.0 - q) / q).ln()
    } else {
        let p = p.max(LOGIT_CLAMP);
        (p / (1.0 - p)).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub noise_multiplier: Option<f64>,
    pub epochs: usize,
}

impl HyperParams {
    pub fn non_private(learning_rate: f64, batch_size: usize, epochs: usize) -> Self {
        Self { learning_rate, batch_size, clip_norm: None, noise_multiplier: None, epochs }
    }

    pub fn is_private(&self) -> bool {
        self.clip_norm.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        match (self.clip_norm, self.noise_multiplier) {
            (None, None) => Ok(()),
            (Some(c), Some(s)) if c > 0.0 && s >= 0.0 && c.is_finite() && s.is_finite() => Ok(()),
            (Some(_), Some(_)) => Err(Error::Config("clip_norm must be positive and noise_multiplier nonnegative".into())),
            _ => Err(Error::Config(
                "clip_norm and noise_multiplier must be both present or both absent".into(),
            )),
        }
    }

    /// Little-endian canonical encoding used for digests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48);
        out.extend(self.learning_rate.to_le_bytes());
        out.extend((self.batch_size as u64).to_le_bytes());
        for v in [self.clip_norm, self.noise_multiplier] {
            match v {
                Some(x) => {
                    out.push(1);
                    out.extend(x.to_le_bytes());
                }
                None => out.push(0),
            }
        }
        out.extend((self.epochs as u64).to_le_bytes());
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    /// Copy whose noise multiplier is calibrated to `dp` for training on `n` samples.
    ///
    /// Non-private hyperparameters are returned unchanged.
    pub fn calibrated_for(&self, n: usize, dp: Option<&DpSpec>) -> Result<HyperParams> {
        let (Some(dp), Some(_)) = (dp, self.clip_norm) else {
            return Ok(self.clone());
        };
        let batch = self.batch_size.min(n).max(1);
        let steps = steps_for(n, batch, self.epochs);
        let rate = batch as f64 / n as f64;
        let sigma = calibrate_noise(dp, steps, rate)?;
        Ok(HyperParams { noise_multiplier: Some(sigma), ..self.clone() })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accountant {
    #[default]
    Rdp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSpec {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub accountant: Accountant,
}

impl DpSpec {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self { epsilon, delta, accountant: Accountant::Rdp }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("dp epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("dp delta must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Warns when delta is not small relative to the dataset size.
    pub fn check_against(&self, n: usize) {
        if n > 0 && self.delta >= 1.0 / n as f64 {
            log::warn!("delta {} is not below 1/|D| = {}", self.delta, 1.0 / n as f64);
        }
    }
}

/// Softmax of the network output for one feature vector.
pub fn predict_confidence(model: &Model, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != model.arch.dim {
        return Err(Error::Input(format!(
            "feature length {} does not match model dim {}",
            features.len(),
            model.arch.dim
        )));
    }
    let mut logits = vec![0.0; model.arch.classes];
    let mut hidden = vec![0.0; model.arch.hidden_len()];
    model.arch.forward(&model.weights, features, &mut hidden, &mut logits);
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Logit-scaled true-class confidence of every sample in `set`.
pub fn true_class_scores(model: &Model, set: &crate::synthdata::LabeledSet) -> Result<Vec<f64>> {
    if set.dim() != model.arch.dim {
        return Err(Error::Input(format!(
            "set dim {} does not match model dim {}",
            set.dim(),
            model.arch.dim
        )));
    }
    let mut logits = vec![0.0; model.arch.classes];
    let mut hidden = vec![0.0; model.arch.hidden_len()];
    Ok((0..set.len())
        .map(|i| {
            model.arch.forward(&model.weights, set.features(i), &mut hidden, &mut logits);
            softmax_in_place(&mut logits);
            logit_score(logits[set.label(i)])
        })
        .collect())
}

/// Top-1 accuracy on `set`.
pub fn accuracy(model: &Model, set: &crate::synthdata::LabeledSet) -> f64 {
    let mut logits = vec![0.0; model.arch.classes];
    let mut hidden = vec![0.0; model.arch.hidden_len()];
    let correct = (0..set.len())
        .filter(|&i| {
            model.arch.forward(&model.weights, set.features(i), &mut hidden, &mut logits);
            argmax(&logits) == set.label(i)
        })
        .count();
    correct as f64 / set.len().max(1) as f64
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}
