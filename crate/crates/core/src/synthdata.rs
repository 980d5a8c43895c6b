//! Synthetic classification population, grid membership masks and
//! external (disjoint) datasets.

use std::collections::HashSet;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Stream label reserved for the grid pool.
pub const POOL_STREAM: &str = "pool";

/// First sample id of the external namespace; pool ids live below it.
pub const EXTERNAL_ID_BASE: u64 = 1 << 48;
const EXTERNAL_ID_END: u64 = 1 << 49;

/// Gaussian-mixture population: one isotropic Gaussian per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub dim: usize,
    pub classes: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        Ok(())
    }

    /// Class means, row-major `classes × dim`.
    ///
    /// Class `k` starts on axis `k mod dim` (sign flips every `dim` classes),
    /// so up to `dim` classes are mutually orthogonal; beyond `2·dim` the
    /// directions are Gaussian. A seeded rotation is applied afterwards.
    /// Radius `separation/√2` puts orthogonal means exactly `separation`
    /// apart.
    pub fn class_means(&self) -> Vec<f64> {
        let (d, c) = (self.dim, self.classes);
        let radius = self.class_separation / std::f64::consts::SQRT_2;
        let mut means = vec![0.0; c * d];
        let mut rng = rng_for(self.seed, "class-means");
        for k in 0..c {
            let row = &mut means[k * d..(k + 1) * d];
            if k < 2 * d {
                row[k % d] = if k < d { radius } else { -radius };
            } else {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for (r, x) in row.iter_mut().zip(v) {
                    *r = radius * x / norm;
                }
            }
        }
        let rotation = random_rotation(d, &mut rng);
        let mut rotated = vec![0.0; c * d];
        for k in 0..c {
            for i in 0..d {
                rotated[k * d + i] = (0..d).map(|j| rotation[i * d + j] * means[k * d + j]).sum();
            }
        }
        rotated
    }
}

/// Orthogonal matrix from Gram–Schmidt on a Gaussian matrix.
fn random_rotation(d: usize, rng: &mut crate::seed::Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|t| q[i * d + t] * q[j * d + t]).sum();
            for t in 0..d {
                q[i * d + t] -= dot * q[j * d + t];
            }
        }
        let norm = (0..d).map(|t| q[i * d + t].powi(2)).sum::<f64>().sqrt();
        for t in 0..d {
            q[i * d + t] /= norm;
        }
    }
    q
}

/// Samples with features stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

impl LabeledSet {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if features.len() != dim * labels.len() || labels.len() != ids.len() {
            return Err(Error::Input(format!(
                "inconsistent set: {} features, {} labels, {} ids for dim {dim}",
                features.len(),
                labels.len(),
                ids.len()
            )));
        }
        let unique: HashSet<u64> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(Error::Input("duplicate sample ids".into()));
        }
        Ok(Self { dim, features, labels, ids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        LabeledSet {
            dim: self.dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Rows whose mask entry is set.
    pub fn select(&self, mask: &[bool]) -> LabeledSet {
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        self.subset(&idx)
    }

    /// Per-coordinate mean of the features.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.features(i)) {
                *m += x;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

fn draw(spec: &DataSpec, n: usize, rng_label: &str, first_id: u64) -> LabeledSet {
    let means = spec.class_means();
    let d = spec.dim;
    let mut rng = rng_for(spec.seed, rng_label);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..spec.classes);
        labels.push(k);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(means[k * d + j] + spec.noise_sigma * z);
        }
    }
    LabeledSet {
        dim: d,
        features,
        labels,
        ids: (first_id..first_id + n as u64).collect(),
    }
}

/// Draws `n` i.i.d. samples in the pool id namespace `[0, n)`.
pub fn sample_population(spec: &DataSpec, n: usize, stream: &str) -> Result<LabeledSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("population request must be non-empty".into()));
    }
    if n as u64 >= EXTERNAL_ID_BASE {
        return Err(Error::Config("population exceeds the pool id namespace".into()));
    }
    Ok(draw(spec, n, &format!("population/{stream}"), 0))
}

/// Pool size giving about `shots` samples per class in each half-inclusion dataset.
pub fn pool_size_for_shots(shots: usize, classes: usize) -> usize {
    shots * classes * 2
}

/// `(M+1) × n_pool` membership matrix; row `i` selects dataset `D_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipMask {
    rows: usize,
    pool_ids: Vec<u64>,
    mask: Vec<bool>,
}

impl MembershipMask {
    pub fn from_rows(rows: Vec<Vec<bool>>, pool_ids: Vec<u64>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != pool_ids.len()) {
            return Err(Error::Input("mask row length differs from pool size".into()));
        }
        Ok(Self {
            rows: rows.len(),
            pool_ids,
            mask: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn pool_len(&self) -> usize {
        self.pool_ids.len()
    }

    pub fn pool_ids(&self) -> &[u64] {
        &self.pool_ids
    }

    pub fn row(&self, i: usize) -> &[bool] {
        let n = self.pool_len();
        &self.mask[i * n..(i + 1) * n]
    }

    pub fn is_member(&self, row: usize, sample: usize) -> bool {
        self.mask[row * self.pool_len() + sample]
    }

    /// Number of rows containing pool sample `sample`.
    pub fn inclusion_count(&self, sample: usize) -> usize {
        (0..self.rows).filter(|&r| self.is_member(r, sample)).count()
    }
}

/// Independent Bernoulli(1/2) inclusion of every pool sample in each of `M+1` datasets.
pub fn build_grid_datasets(pool: &LabeledSet, shadows: usize, seed: u64) -> Result<MembershipMask> {
    if pool.is_empty() {
        return Err(Error::Config("grid pool is empty".into()));
    }
    if shadows < 1 {
        return Err(Error::Config("grid needs at least one shadow row (M >= 1)".into()));
    }
    let rows = shadows + 1;
    let mut rng = rng_for(seed, "grid-mask");
    let mask = (0..rows * pool.len()).map(|_| rng.random_bool(0.5)).collect();
    Ok(MembershipMask {
        rows,
        pool_ids: pool.ids().to_vec(),
        mask,
    })
}

/// Fresh datasets from the same population whose ids live in the external namespace.
///
/// `sizes` holds either one size per set or a single size for all of them.
pub fn sample_external_datasets(
    spec: &DataSpec,
    count: usize,
    sizes: &[usize],
    stream: &str,
) -> Result<Vec<LabeledSet>> {
    spec.validate()?;
    if count < 1 {
        return Err(Error::Config("external dataset count must be at least 1".into()));
    }
    if stream.is_empty() || stream == POOL_STREAM {
        return Err(Error::Config(format!(
            "external stream {stream:?} collides with the pool namespace"
        )));
    }
    let sizes: Vec<usize> = match sizes.len() {
        1 => vec![sizes[0]; count],
        n if n == count => sizes.to_vec(),
        n => {
            return Err(Error::Config(format!(
                "expected 1 or {count} external sizes, got {n}"
            )))
        }
    };
    if sizes.contains(&0) {
        return Err(Error::Config("external datasets must be non-empty".into()));
    }
    let mut next_id = EXTERNAL_ID_BASE;
    let mut out = Vec::with_capacity(count);
    for (i, &n) in sizes.iter().enumerate() {
        if next_id + n as u64 > EXTERNAL_ID_END {
            return Err(Error::Config("external id namespace exhausted".into()));
        }
        let label = format!("external/{stream}/{i}");
        out.push(draw(spec, n, &label, next_id));
        next_id += n as u64;
    }
    Ok(out)
}
