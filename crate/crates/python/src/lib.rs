//! Python bindings: attack statistics, DP accounting, grids and campaigns.

use std::path::PathBuf;

use miagrid::attacks::{self, AttackResult, CampaignParams, HpoSource, MiaGrid, Strategy, VarianceMode};
use miagrid::models::{account_epsilon as rdp_epsilon, epsilon_curve};
use miagrid::stats;
use miagrid::store::Store as CoreStore;
use miagrid::Error;
use miagrid_cli::ExperimentConfig;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(pymiagrid, IntegrityError, PyException);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err.root() {
        Error::Config(_) | Error::Input(_) => PyValueError::new_err(msg),
        Error::Integrity { .. } => IntegrityError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn parse_strategy(name: &str) -> PyResult<Strategy> {
    name.parse().map_err(to_py)
}

/// Log likelihood ratio of `target_conf` under IN vs OUT Gaussians.
#[pyfunction]
#[pyo3(signature = (target_conf, in_scores, out_scores, global_var=None))]
fn lira_score(target_conf: f64, in_scores: Vec<f64>, out_scores: Vec<f64>, global_var: Option<(f64, f64)>) -> PyResult<f64> {
    let mode = match global_var {
        Some((var_in, var_out)) => VarianceMode::Global { var_in, var_out },
        None => VarianceMode::PerExample,
    };
    attacks::lira_score(target_conf, &in_scores, &out_scores, mode).map_err(to_py)
}

/// KL(N(mean_t, var_t) || N(mean_s, var_s)).
#[pyfunction]
fn kl_divergence(mean_t: f64, var_t: f64, mean_s: f64, var_s: f64) -> f64 {
    attacks::kl_divergence_gaussians(
        &attacks::GaussianSummary::new(mean_t, var_t, 0),
        &attacks::GaussianSummary::new(mean_s, var_s, 0),
    )
}

#[pyfunction]
#[pyo3(signature = (tp, positives, alpha=0.05))]
fn clopper_pearson(tp: usize, positives: usize, alpha: f64) -> PyResult<(f64, f64)> {
    stats::clopper_pearson(tp, positives, alpha).map_err(to_py)
}

#[pyfunction]
fn by_adjust(pvals: Vec<f64>) -> PyResult<Vec<f64>> {
    stats::by_adjust(&pvals).map_err(to_py)
}

/// One-sided paired t-test (H1: x > y); returns `(statistic, p_value)`.
#[pyfunction]
fn paired_t_test(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    stats::paired_t_test(&x, &y).map(|r| (r.statistic, r.p_value)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, y, resamples=10_000, seed=0))]
fn paired_permutation_test(x: Vec<f64>, y: Vec<f64>, resamples: usize, seed: u64) -> PyResult<(f64, f64)> {
    stats::paired_permutation_test(&x, &y, resamples, seed).map(|r| (r.statistic, r.p_value)).map_err(to_py)
}

/// ROC curve as `(fpr, tpr, thresholds)`; higher scores mean "member".
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let roc = stats::roc_curve(&scores, &labels).map_err(to_py)?;
    let (fpr, tpr) = roc.points.iter().copied().unzip();
    Ok((fpr, tpr, roc.thresholds))
}

#[pyfunction]
fn tpr_at_fpr(scores: Vec<f64>, labels: Vec<bool>, fpr: f64) -> PyResult<f64> {
    let roc = stats::roc_curve(&scores, &labels).map_err(to_py)?;
    Ok(stats::tpr_at_fpr(&roc, fpr))
}

#[pyfunction]
fn account_epsilon(noise_multiplier: f64, steps: usize, sampling_rate: f64, delta: f64) -> PyResult<f64> {
    rdp_epsilon(noise_multiplier, steps, sampling_rate, delta).map_err(to_py)
}

/// Largest TPR at `fpr` that an (ε, δ)-DP mechanism with the given accounting admits.
#[pyfunction]
fn dp_tpr_bound(noise_multiplier: f64, steps: usize, sampling_rate: f64, fpr: f64) -> PyResult<f64> {
    let curve = epsilon_curve(noise_multiplier, steps, sampling_rate).map_err(to_py)?;
    Ok(stats::dp_tpr_bound(&curve, fpr))
}

#[pyclass(frozen, get_all)]
struct AttackOutput {
    target: usize,
    strategy: String,
    sample_ids: Vec<u64>,
    scores: Vec<f64>,
    is_member: Vec<bool>,
    models_trained: usize,
}

impl From<AttackResult> for AttackOutput {
    fn from(r: AttackResult) -> Self {
        Self {
            target: r.target,
            strategy: r.strategy.to_string(),
            sample_ids: r.sample_ids,
            scores: r.scores,
            is_member: r.is_member,
            models_trained: r.models_trained,
        }
    }
}

#[pymethods]
impl AttackOutput {
    fn tpr_at_fpr(&self, fpr: f64) -> PyResult<f64> {
        let roc = stats::roc_curve(&self.scores, &self.is_member).map_err(to_py)?;
        Ok(stats::tpr_at_fpr(&roc, fpr))
    }

    fn __repr__(&self) -> String {
        format!("AttackOutput(target={}, strategy={}, samples={})", self.target, self.strategy, self.scores.len())
    }
}

/// Parsed experiment configuration (the same TOML the `miagrid` CLI reads).
#[pyclass(frozen)]
struct Experiment {
    cfg: ExperimentConfig,
}

#[pymethods]
impl Experiment {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text).map(|cfg| Self { cfg }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(|cfg| Self { cfg }).map_err(to_py)
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.cfg.output_dir.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.cfg)
    }

    /// Build and prepare the grids; returns models trained per repeat.
    fn grid(&self, py: Python<'_>) -> PyResult<Vec<usize>> {
        let reports = py.detach(|| miagrid_cli::cmd_grid(&self.cfg)).map_err(to_py)?;
        Ok(reports.iter().map(|r| r.models_trained).collect())
    }

    /// Run the attacks; returns the attack manifests as JSON.
    #[pyo3(signature = (strategies=Vec::new()))]
    fn attack(&self, py: Python<'_>, strategies: Vec<String>) -> PyResult<String> {
        let strategies = strategies.iter().map(|s| parse_strategy(s)).collect::<PyResult<Vec<_>>>()?;
        let out = py.detach(|| miagrid_cli::cmd_attack(&self.cfg, &strategies)).map_err(to_py)?;
        json(&out.iter().map(|(m, _)| m).collect::<Vec<_>>())
    }

    /// Pooled evaluation; returns the summary as JSON.
    fn eval(&self, py: Python<'_>) -> PyResult<String> {
        let report = py.detach(|| miagrid_cli::cmd_eval(&self.cfg)).map_err(to_py)?;
        json(&report)
    }

    /// One lazy grid for repeat `rep`, without a persistent store.
    #[pyo3(signature = (rep=0, hpo_source="td"))]
    fn make_grid(&self, rep: usize, hpo_source: &str) -> PyResult<Grid> {
        let source = match hpo_source {
            "td" => HpoSource::Td,
            "ed" => HpoSource::Ed,
            other => return Err(PyValueError::new_err(format!("unknown hpo source {other:?}"))),
        };
        let config = self.cfg.grid_config(rep, source).map_err(to_py)?;
        MiaGrid::new(config, None).map(|inner| Grid { inner }).map_err(to_py)
    }
}

/// `(M+1) × (M+1)` grid of shadow models, trained on demand.
#[pyclass(frozen)]
struct Grid {
    inner: MiaGrid,
}

#[pymethods]
impl Grid {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn pool_size(&self) -> usize {
        self.inner.pool().len()
    }

    #[getter]
    fn models_trained(&self) -> usize {
        self.inner.models_trained()
    }

    /// Tuned hyperparameters of row `i` as JSON.
    fn row_hypers(&self, py: Python<'_>, i: usize) -> PyResult<String> {
        let h = py.detach(|| self.inner.row_hypers(i)).map_err(to_py)?;
        json(&h)
    }

    #[pyo3(signature = (strategy, targets, c=4, n=2, seed=0))]
    fn run_campaign(
        &self,
        py: Python<'_>,
        strategy: &str,
        targets: Vec<usize>,
        c: usize,
        n: usize,
        seed: u64,
    ) -> PyResult<Vec<AttackOutput>> {
        let strategy = parse_strategy(strategy)?;
        let params = CampaignParams { c, n, ..CampaignParams::default() };
        let results = py.detach(|| attacks::run_campaign(&self.inner, strategy, &params, &targets, seed)).map_err(to_py)?;
        Ok(results.into_iter().map(AttackOutput::from).collect())
    }
}

/// Content-addressed artifact store.
#[pyclass(frozen)]
struct Store {
    inner: CoreStore,
}

#[pymethods]
impl Store {
    #[new]
    fn new(root: PathBuf) -> PyResult<Self> {
        CoreStore::open(root).map(|inner| Self { inner }).map_err(to_py)
    }

    fn list_objects(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.list_objects().map_err(to_py)?.into_iter().collect())
    }

    /// Objects no manifest references. Nothing is deleted.
    fn gc_candidates(&self) -> PyResult<Vec<String>> {
        self.inner.gc_candidates().map_err(to_py)
    }
}

#[pymodule]
pub fn pymiagrid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IntegrityError", m.py().get_type::<IntegrityError>())?;
    m.add_class::<Experiment>()?;
    m.add_class::<Grid>()?;
    m.add_class::<AttackOutput>()?;
    m.add_class::<Store>()?;
    m.add_function(wrap_pyfunction!(lira_score, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(clopper_pearson, m)?)?;
    m.add_function(wrap_pyfunction!(by_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(paired_permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(tpr_at_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(account_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(dp_tpr_bound, m)?)?;
    Ok(())
}
