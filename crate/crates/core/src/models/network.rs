use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchKind {
    Linear,
    Mlp { hidden_units: usize },
}

/// Network shape. Linear: softmax regression. Mlp: one tanh hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(flatten)]
    pub kind: ArchKind,
    pub dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn linear(dim: usize, classes: usize) -> Self {
        Self { kind: ArchKind::Linear, dim, classes }
    }

    pub fn mlp(dim: usize, classes: usize, hidden_units: usize) -> Self {
        Self { kind: ArchKind::Mlp { hidden_units }, dim, classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes < 2 {
            return Err(Error::Config("architecture needs dim >= 1 and classes >= 2".into()));
        }
        if let ArchKind::Mlp { hidden_units: 0 } = self.kind {
            return Err(Error::Config("mlp needs at least one hidden unit".into()));
        }
        Ok(())
    }

    pub fn hidden_len(&self) -> usize {
        match self.kind {
            ArchKind::Linear => 0,
            ArchKind::Mlp { hidden_units } => hidden_units,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, c) = (self.dim, self.classes);
        match self.kind {
            ArchKind::Linear => c * d + c,
            ArchKind::Mlp { hidden_units: h } => h * d + h + c * h + c,
        }
    }

    pub fn tag(&self) -> u8 {
        match self.kind {
            ArchKind::Linear => 0,
            ArchKind::Mlp { .. } => 1,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.tag()];
        for v in [self.dim, self.classes, self.hidden_len()] {
            out.extend((v as u64).to_le_bytes());
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    /// Scaled-uniform weights `U(±1/√fan_in)`, zero biases.
    pub fn init_weights(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, "init");
        let mut w = vec![0.0; self.param_count()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in &mut w[range] {
                *x = rng.random_range(-bound..bound);
            }
        };
        let (d, c) = (self.dim, self.classes);
        match self.kind {
            ArchKind::Linear => fill(0..c * d, d),
            ArchKind::Mlp { hidden_units: h } => {
                fill(0..h * d, d);
                let w2 = h * d + h;
                fill(w2..w2 + c * h, h);
            }
        }
        w
    }

    /// Writes the pre-softmax outputs into `logits`; `hidden` holds activations.
    pub fn forward(&self, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (d, c) = (self.dim, self.classes);
        match self.kind {
            ArchKind::Linear => {
                let bias = &w[c * d..];
                for k in 0..c {
                    logits[k] = bias[k] + dot(&w[k * d..(k + 1) * d], x);
                }
            }
            ArchKind::Mlp { hidden_units: h } => {
                let (w1, rest) = w.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for j in 0..h {
                    hidden[j] = (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh();
                }
                for k in 0..c {
                    logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden);
                }
            }
        }
    }

    /// Cross-entropy gradient of one example, written to `grad` (overwritten).
    ///
    /// Returns the example's loss. `probs` must have length `classes`.
    pub fn example_gradient(
        &self,
        w: &[f64],
        x: &[f64],
        label: usize,
        hidden: &mut [f64],
        probs: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        self.forward(w, x, hidden, probs);
        let loss = cross_entropy_from_logits(probs, label);
        super::softmax_in_place(probs);
        probs[label] -= 1.0;
        let (d, c) = (self.dim, self.classes);
        match self.kind {
            ArchKind::Linear => {
                for k in 0..c {
                    let r = probs[k];
                    for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g = r * xi;
                    }
                    grad[c * d + k] = r;
                }
            }
            ArchKind::Mlp { hidden_units: h } => {
                let w2 = &w[h * d + h..h * d + h + c * h];
                let (g1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (g2, gb2) = rest.split_at_mut(c * h);
                for k in 0..c {
                    let r = probs[k];
                    gb2[k] = r;
                    for (g, a) in g2[k * h..(k + 1) * h].iter_mut().zip(hidden.iter()) {
                        *g = r * a;
                    }
                }
                for j in 0..h {
                    let back: f64 = (0..c).map(|k| probs[k] * w2[k * h + j]).sum();
                    let delta = back * (1.0 - hidden[j] * hidden[j]);
                    gb1[j] = delta;
                    for (g, xi) in g1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g = delta * xi;
                    }
                }
            }
        }
        loss
    }

    /// Cross-entropy loss of one example.
    pub fn example_loss(&self, w: &[f64], x: &[f64], label: usize) -> f64 {
        let mut hidden = vec![0.0; self.hidden_len()];
        let mut logits = vec![0.0; self.classes];
        self.forward(w, x, &mut hidden, &mut logits);
        cross_entropy_from_logits(&logits, label)
    }
}

fn cross_entropy_from_logits(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub weights: Vec<f64>,
    pub train_hash: [u8; 32],
}

impl Model {
    pub fn new(arch: Architecture, weights: Vec<f64>, train_hash: [u8; 32]) -> Result<Self> {
        if weights.len() != arch.param_count() {
            return Err(Error::Input(format!(
                "expected {} weights, got {}",
                arch.param_count(),
                weights.len()
            )));
        }
        Ok(Self { arch, weights, train_hash })
    }

    /// Untrained model with zero weights.
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, weights: vec![0.0; arch.param_count()], train_hash: [0; 32] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn finite_difference_check(arch: Architecture, seed: u64) {
        let mut rng = rng_for(seed, "fd");
        let w: Vec<f64> = (0..arch.param_count()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..arch.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let label = rng.random_range(0..arch.classes);
        let mut grad = vec![0.0; arch.param_count()];
        let mut hidden = vec![0.0; arch.hidden_len()];
        let mut probs = vec![0.0; arch.classes];
        arch.example_gradient(&w, &x, label, &mut hidden, &mut probs, &mut grad);
        let h = 1e-5;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (arch.example_loss(&wp, &x, label) - arch.example_loss(&wm, &x, label)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            assert!(err <= 1e-5, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            finite_difference_check(Architecture::linear(4, 3), seed);
            finite_difference_check(Architecture::mlp(3, 4, 5), seed);
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(Architecture::linear(8, 10).param_count(), 90);
        assert_eq!(Architecture::mlp(8, 10, 16).param_count(), 16 * 8 + 16 + 160 + 10);
        assert!(Architecture::mlp(8, 10, 0).validate().is_err());
    }
}
