use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{Architecture, HyperParams, Model};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::synthdata::LabeledSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer steps for `epochs` passes of batches of `batch` over `n` samples
/// (the last batch of an epoch may be partial).
pub fn steps_for(n: usize, batch: usize, epochs: usize) -> usize {
    let batch = batch.clamp(1, n.max(1));
    epochs * n.div_ceil(batch)
}

/// Diagnostics collected while training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHooks {
    pub steps: usize,
    /// Largest per-example gradient norm after clipping (DP only).
    pub max_clipped_norm: f64,
    pub final_loss: f64,
}

pub fn train(arch: &Architecture, data: &LabeledSet, hypers: &HyperParams, seed: u64) -> Result<Model> {
    train_with_hooks(arch, data, hypers, seed).map(|(m, _)| m)
}

/// Minibatch Adam on cross-entropy. With `clip_norm`/`noise_multiplier` set,
/// per-example gradients are clipped and the batch sum is perturbed with
/// `N(0, (noise_multiplier·clip_norm)²)` before averaging.
pub fn train_with_hooks(
    arch: &Architecture,
    data: &LabeledSet,
    hypers: &HyperParams,
    seed: u64,
) -> Result<(Model, TrainHooks)> {
    arch.validate()?;
    hypers.validate()?;
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if data.dim() != arch.dim {
        return Err(Error::Input(format!(
            "dataset dim {} does not match architecture dim {}",
            data.dim(),
            arch.dim
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= arch.classes) {
        return Err(Error::Input(format!("label {bad} out of range for {} classes", arch.classes)));
    }

    let n = data.len();
    let batch = hypers.batch_size.min(n);
    let p = arch.param_count();
    let dp = hypers.clip_norm.zip(hypers.noise_multiplier);
    let noise = match dp {
        Some((clip, sigma)) if sigma > 0.0 => Some(
            Normal::new(0.0, sigma * clip).map_err(|e| Error::Config(format!("noise: {e}")))?,
        ),
        _ => None,
    };

    let mut w = arch.init_weights(seed);
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut sum = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut hidden = vec![0.0; arch.hidden_len()];
    let mut probs = vec![0.0; arch.classes];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng_for(seed, "shuffle");
    let mut noise_rng = rng_for(seed, "noise");
    let mut hooks = TrainHooks::default();
    let (mut pow1, mut pow2) = (1.0, 1.0);

    for _ in 0..hypers.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            sum.iter_mut().for_each(|s| *s = 0.0);
            let mut loss = 0.0;
            for &i in chunk {
                loss += arch.example_gradient(&w, data.features(i), data.label(i), &mut hidden, &mut probs, &mut g);
                let scale = match dp {
                    Some((clip, _)) => {
                        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let scale = if norm > clip { clip / norm } else { 1.0 };
                        hooks.max_clipped_norm = hooks.max_clipped_norm.max(norm * scale);
                        scale
                    }
                    None => 1.0,
                };
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += scale * gi;
                }
            }
            if let Some(noise) = &noise {
                for s in sum.iter_mut() {
                    *s += noise.sample(&mut noise_rng);
                }
            }
            let step = hooks.steps;
            loss /= chunk.len() as f64;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step, detail: format!("loss {loss}") });
            }
            hooks.final_loss = loss;

            let inv = 1.0 / chunk.len() as f64;
            pow1 *= BETA1;
            pow2 *= BETA2;
            let lr = hypers.learning_rate;
            for j in 0..p {
                let grad = sum[j] * inv;
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad * grad;
                let m_hat = m[j] / (1.0 - pow1);
                let v_hat = v[j] / (1.0 - pow2);
                w[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::TrainingDiverged { step, detail: "non-finite weights".into() });
            }
            hooks.steps += 1;
        }
    }

    let hash = train_hash(arch, data, hypers, seed);
    Ok((Model::new(*arch, w, hash)?, hooks))
}

fn train_hash(arch: &Architecture, data: &LabeledSet, hypers: &HyperParams, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(arch.canonical_bytes());
    h.update((data.len() as u64).to_le_bytes());
    for id in data.ids() {
        h.update(id.to_le_bytes());
    }
    h.update(hypers.canonical_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{accuracy, predict_confidence};
    use crate::synthdata::{sample_population, DataSpec};

    fn two_class() -> LabeledSet {
        let spec = DataSpec { dim: 8, classes: 2, class_separation: 6.0, noise_sigma: 1.0, seed: 4 };
        sample_population(&spec, 200, "train").unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = two_class();
        let arch = Architecture::linear(8, 2);
        let model = train(&arch, &data, &HyperParams::non_private(0.0, 16, 3), 9).unwrap();
        assert_eq!(model.weights, arch.init_weights(9));
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_class();
        let arch = Architecture::mlp(8, 2, 6);
        let h = HyperParams { clip_norm: Some(1.0), noise_multiplier: Some(1.1), ..HyperParams::non_private(1e-2, 32, 2) };
        let a = train(&arch, &data, &h, 1).unwrap();
        let b = train(&arch, &data, &h, 1).unwrap();
        assert_eq!(a, b);
        let c = train(&arch, &data, &h, 2).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn separable_two_class_set_is_learned() {
        let data = two_class();
        let arch = Architecture::linear(8, 2);
        let model = train(&arch, &data, &HyperParams::non_private(1e-2, 32, 40), 0).unwrap();
        assert!(accuracy(&model, &data) >= 0.99);
    }

    #[test]
    fn clipping_bounds_per_example_norms() {
        let data = two_class();
        let arch = Architecture::mlp(8, 2, 4);
        for clip in [0.05, 0.3, 2.0] {
            let h = HyperParams { clip_norm: Some(clip), noise_multiplier: Some(0.5), ..HyperParams::non_private(5e-3, 20, 2) };
            let (_, hooks) = train_with_hooks(&arch, &data, &h, 3).unwrap();
            assert!(hooks.max_clipped_norm <= clip + 1e-9);
            assert!(hooks.max_clipped_norm > 0.0);
        }
    }

    #[test]
    fn batch_larger_than_dataset_is_clamped() {
        let data = two_class();
        let arch = Architecture::linear(8, 2);
        let (_, hooks) = train_with_hooks(&arch, &data, &HyperParams::non_private(1e-3, 10_000, 3), 0).unwrap();
        assert_eq!(hooks.steps, 3);
        assert_eq!(steps_for(200, 10_000, 3), 3);
        assert_eq!(steps_for(10, 3, 2), 8);
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_finite_output() {
        let data = two_class();
        let arch = Architecture::linear(8, 2);
        match train(&arch, &data, &HyperParams::non_private(1e300, 8, 5), 0) {
            Err(Error::TrainingDiverged { .. }) => {}
            Ok(m) => {
                let p = predict_confidence(&m, data.features(0)).unwrap();
                assert!(p.iter().all(|x| x.is_finite()));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
