//! TOML experiment configuration.

use std::path::PathBuf;

use miagrid::attacks::{CampaignParams, GridConfig, HpoSource, KlCandidates, Strategy, VarianceEstimate};
use miagrid::hpo::{EpochRange, SearchSpace};
use miagrid::models::{Architecture, ArchKind, DpSpec};
use miagrid::seed::derive_indexed;
use miagrid::synthdata::DataSpec;
use miagrid::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dim: usize,
    pub classes: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// `linear` or `mlp`.
    pub kind: String,
    #[serde(default)]
    pub hidden_units: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_lr")]
    pub lr: [f64; 2],
    #[serde(default = "default_batch_min")]
    pub batch_min: usize,
    #[serde(default = "default_clip")]
    pub clip: [f64; 2],
    /// Fixed epoch count, or `[min, max]` to tune it.
    #[serde(default = "default_epochs")]
    pub epochs: Vec<usize>,
}

fn default_trials() -> usize {
    20
}
fn default_lr() -> [f64; 2] {
    [1e-7, 1e-2]
}
fn default_batch_min() -> usize {
    10
}
fn default_clip() -> [f64; 2] {
    [0.2, 10.0]
}
fn default_epochs() -> Vec<usize> {
    vec![40]
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            lr: default_lr(),
            batch_min: default_batch_min(),
            clip: default_clip(),
            epochs: default_epochs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_c")]
    pub c: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub variance_mode: VarianceEstimate,
    /// Number of target rows per repeat (rows `0..targets`); all rows when absent.
    #[serde(default)]
    pub targets: Option<usize>,
}

fn default_strategies() -> Vec<String> {
    vec!["lira".into(), "acc".into(), "kl".into(), "threshold".into()]
}
fn default_c() -> usize {
    4
}
fn default_n() -> usize {
    2
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            strategies: default_strategies(),
            c: default_c(),
            n: default_n(),
            variance_mode: VarianceEstimate::PerExample,
            targets: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Labels copied into the comparison tables.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "default_config_label")]
    pub config: String,
    /// Null control: both arms tune on the same external data and differ
    /// only in their training seed.
    #[serde(default)]
    pub null: bool,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

fn default_dataset() -> String {
    "synthetic".into()
}
fn default_config_label() -> String {
    "default".into()
}
fn default_resamples() -> usize {
    10_000
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { dataset: default_dataset(), config: default_config_label(), null: false, resamples: default_resamples() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Shots per class S.
    pub shots: usize,
    /// Shadow rows M.
    pub shadows: usize,
    #[serde(default = "default_source")]
    pub hpo_source: HpoSource,
    #[serde(default = "default_fprs")]
    pub fpr_grid: Vec<f64>,
    pub data: DataConfig,
    pub arch: ArchConfig,
    #[serde(default)]
    pub hpo: HpoConfig,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_repeats() -> usize {
    1
}
fn default_source() -> HpoSource {
    HpoSource::Td
}
fn default_fprs() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let (d, c) = (self.data.dim, self.data.classes);
        match (self.arch.kind.as_str(), self.arch.hidden_units) {
            ("linear", None) => Ok(Architecture::linear(d, c)),
            ("mlp", Some(h)) => Ok(Architecture::mlp(d, c, h)),
            ("linear", Some(_)) => Err(Error::Config("linear architecture takes no hidden_units".into())),
            ("mlp", None) => Err(Error::Config("mlp architecture needs hidden_units".into())),
            (k, _) => Err(Error::Config(format!("unknown architecture {k:?} (expected linear or mlp)"))),
        }
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        let epochs = match self.hpo.epochs.as_slice() {
            [e] => EpochRange::Fixed { epochs: *e },
            [min, max] => EpochRange::Range { min: *min, max: *max },
            _ => return Err(Error::Config("hpo.epochs must hold one value or [min, max]".into())),
        };
        Ok(SearchSpace {
            lr: (self.hpo.lr[0], self.hpo.lr[1]),
            batch_min: self.hpo.batch_min,
            clip: (self.hpo.clip[0], self.hpo.clip[1]),
            epochs,
            trials: self.hpo.trials,
        })
    }

    pub fn dp_spec(&self) -> Option<DpSpec> {
        self.dp.as_ref().map(|d| DpSpec::new(d.epsilon, d.delta))
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.attack.strategies.iter().map(|s| s.parse()).collect()
    }

    pub fn campaign_params(&self) -> CampaignParams {
        CampaignParams {
            c: self.attack.c,
            n: self.attack.n,
            variance: self.attack.variance_mode,
            candidates: KlCandidates::GridSeeds,
        }
    }

    /// Target rows attacked in every repeat.
    pub fn targets(&self) -> Vec<usize> {
        (0..self.attack.targets.unwrap_or(self.shadows + 1).min(self.shadows + 1)).collect()
    }

    /// Seed for `purpose` in repeat `rep`.
    pub fn sub_seed(&self, purpose: &str, rep: usize) -> u64 {
        derive_indexed(self.seed, purpose, rep as u64)
    }

    /// Grid of repeat `rep` with the given HPO source.
    pub fn grid_config(&self, rep: usize, source: HpoSource) -> Result<GridConfig> {
        let data = DataSpec {
            dim: self.data.dim,
            classes: self.data.classes,
            class_separation: self.data.class_separation,
            noise_sigma: self.data.noise_sigma,
            seed: self.sub_seed("data", rep),
        };
        Ok(GridConfig {
            data,
            arch: self.architecture()?,
            shots: self.shots,
            shadows: self.shadows,
            space: self.search_space()?,
            dp: self.dp_spec(),
            hpo_source: source,
            ed_stream: "ed-hpo".into(),
            seed: self.sub_seed("grid", rep),
            train_seed: self.sub_seed("train", rep),
        })
    }

    /// Checks everything a command could reject, before any side effect.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.fpr_grid.is_empty() || self.fpr_grid.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config("fpr_grid values must lie in (0, 1)".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir is empty".into()));
        }
        let strategies = self.strategies()?;
        if strategies.is_empty() {
            return Err(Error::Config("no attack strategies configured".into()));
        }
        if strategies.contains(&Strategy::Kl) {
            if self.attack.c == 0 || self.attack.n == 0 {
                return Err(Error::Config("KL-LiRA needs c >= 1 and n >= 1".into()));
            }
            if self.attack.c + self.attack.n > self.shadows + 1 {
                return Err(Error::Config(format!(
                    "KL-LiRA with c={} and n={} needs at least {} shadow rows",
                    self.attack.c,
                    self.attack.n,
                    self.attack.c + self.attack.n - 1
                )));
            }
        }
        if self.attack.targets == Some(0) {
            return Err(Error::Config("attack.targets must be at least 1".into()));
        }
        if let Some(dp) = &self.dp {
            if !(dp.epsilon > 0.0) || !(dp.delta > 0.0 && dp.delta < 1.0) {
                return Err(Error::Config("dp needs epsilon > 0 and delta in (0, 1)".into()));
            }
        }
        let grid = self.grid_config(0, self.hpo_source)?;
        grid.validate()?;
        let row_estimate = self.shots * self.data.classes;
        grid.space.validate(row_estimate)?;
        Ok(())
    }
}

pub fn arch_label(arch: &Architecture) -> String {
    match arch.kind {
        ArchKind::Linear => "linear".into(),
        ArchKind::Mlp { hidden_units } => format!("mlp{hidden_units}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
output_dir = "out"
shots = 5
shadows = 1
[data]
dim = 4
classes = 2
class_separation = 4.0
noise_sigma = 1.0
[arch]
kind = "linear"
[attack]
strategies = ["lira", "threshold"]
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.fpr_grid, vec![1e-3, 1e-2, 1e-1]);
        assert_eq!(cfg.hpo.trials, 20);
        assert_eq!(cfg.targets(), vec![0, 1]);
        assert_eq!(cfg.search_space().unwrap(), SearchSpace::default());
        assert_ne!(cfg.sub_seed("data", 0), cfg.sub_seed("data", 1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for (from, to) in [
            ("kind = \"linear\"", "kind = \"conv\""),
            ("classes = 2", "classes = 1"),
            ("shots = 5", "shots = 0"),
            ("strategies = [\"lira\", \"threshold\"]", "strategies = [\"rmia\"]"),
            ("strategies = [\"lira\", \"threshold\"]", "strategies = [\"kl\"]\nc = 4"),
            ("output_dir = \"out\"", "output_dir = \"out\"\nbogus = 1"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "{to}");
        }
    }
}
