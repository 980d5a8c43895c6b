//! RDP accountant for the (Poisson-)subsampled Gaussian mechanism.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use statrs::function::gamma::ln_gamma;

use super::DpSpec;
use crate::error::{Error, Result};

/// Largest integer order at which the subsampled RDP is evaluated exactly.
const MAX_EXACT_ORDER: usize = 256;
const ORDER_COUNT: usize = 2000;
pub const DELTA_GRID_LEN: usize = 40;

const SIGMA_MIN: f64 = 0.3;
const SIGMA_MAX: f64 = 100.0;
const CALIBRATION_RTOL: f64 = 1e-3;

/// Order grid `1 + x` with `x` log-spaced over `[1e-2, 1e4]`.
pub fn rdp_orders() -> &'static [f64] {
    static ORDERS: OnceLock<Vec<f64>> = OnceLock::new();
    ORDERS.get_or_init(|| {
        let (lo, hi) = (1e-2f64.ln(), 1e4f64.ln());
        (0..ORDER_COUNT)
            .map(|i| 1.0 + (lo + (hi - lo) * i as f64 / (ORDER_COUNT - 1) as f64).exp())
            .collect()
    })
}

/// RDP at integer order `alpha` of one Poisson-subsampled Gaussian step:
/// `ln Σ_k C(α,k) (1-q)^{α-k} q^k exp((k²-k)/(2σ²)) / (α-1)`.
fn subsampled_rdp_integer(q: f64, sigma: f64, alpha: usize) -> f64 {
    let a = alpha as f64;
    let ln_q = q.ln();
    let ln_1q = (-q).ln_1p();
    let ln_fact_a = ln_gamma(a + 1.0);
    let terms = (0..=alpha).map(|k| {
        let kf = k as f64;
        ln_fact_a - ln_gamma(kf + 1.0) - ln_gamma(a - kf + 1.0)
            + (a - kf) * ln_1q
            + kf * ln_q
            + (kf * kf - kf) / (2.0 * sigma * sigma)
    });
    log_sum_exp(terms) / (a - 1.0)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Per-step RDP on the order grid.
fn step_rdp(sigma: f64, q: f64) -> Vec<f64> {
    let gaussian = |a: f64| a / (2.0 * sigma * sigma);
    if q >= 1.0 {
        return rdp_orders().iter().map(|&a| gaussian(a)).collect();
    }
    // RDP is nondecreasing in the order, so a fractional order may use the
    // value at its ceiling; the subsampled value never exceeds the full one.
    let exact: Vec<f64> = (0..=MAX_EXACT_ORDER)
        .map(|a| if a < 2 { 0.0 } else { subsampled_rdp_integer(q, sigma, a) })
        .collect();
    rdp_orders()
        .iter()
        .map(|&a| {
            let ceil = a.ceil() as usize;
            if ceil <= MAX_EXACT_ORDER {
                exact[ceil.max(2)].min(gaussian(ceil.max(2) as f64))
            } else {
                gaussian(a)
            }
        })
        .collect()
}

fn check_inputs(sigma: f64, steps: usize, q: f64, delta: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::Accounting(format!("noise multiplier must be positive, got {sigma}")));
    }
    if steps == 0 {
        return Err(Error::Accounting("steps must be at least 1".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Accounting(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Accounting(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn convert(rdp: &[f64], steps: usize, delta: f64) -> Result<f64> {
    let log_inv_delta = -delta.ln();
    let eps = rdp_orders()
        .iter()
        .zip(rdp)
        .map(|(&a, &r)| steps as f64 * r + log_inv_delta / (a - 1.0))
        .filter(|e| e.is_finite())
        .fold(f64::INFINITY, f64::min);
    if eps.is_finite() {
        Ok(eps.max(0.0))
    } else {
        Err(Error::Accounting("no order yields a finite epsilon".into()))
    }
}

/// `ε(δ) = min_α [steps·ε_α + ln(1/δ)/(α-1)]`.
pub fn account_epsilon(noise_multiplier: f64, steps: usize, sampling_rate: f64, delta: f64) -> Result<f64> {
    check_inputs(noise_multiplier, steps, sampling_rate, delta)?;
    convert(&step_rdp(noise_multiplier, sampling_rate), steps, delta)
}

/// `(ε, δ)` pairs on 40 log-spaced deltas in `[1e-9, 0.5]`.
pub fn epsilon_curve(noise_multiplier: f64, steps: usize, sampling_rate: f64) -> Result<Vec<(f64, f64)>> {
    check_inputs(noise_multiplier, steps, sampling_rate, 0.5)?;
    let rdp = step_rdp(noise_multiplier, sampling_rate);
    let (lo, hi) = (1e-9f64.ln(), 0.5f64.ln());
    (0..DELTA_GRID_LEN)
        .map(|i| {
            let delta = (lo + (hi - lo) * i as f64 / (DELTA_GRID_LEN - 1) as f64).exp();
            convert(&rdp, steps, delta).map(|eps| (eps, delta))
        })
        .collect()
}

type CalibrationKey = (u64, u64, usize, u64);

fn calibration_cache() -> &'static Mutex<HashMap<CalibrationKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Smallest noise multiplier in `[0.3, 100]` meeting the target budget.
///
/// Bisects until the achieved ε lies in `[ε(1-1e-3), ε]`. If even the
/// smallest multiplier meets the budget it is returned as is.
pub fn calibrate_noise(target: &DpSpec, steps: usize, sampling_rate: f64) -> Result<f64> {
    target.validate()?;
    let key = (target.epsilon.to_bits(), target.delta.to_bits(), steps, sampling_rate.to_bits());
    if let Some(&sigma) = calibration_cache().lock().expect("calibration cache").get(&key) {
        return Ok(sigma);
    }
    let eps_at = |s: f64| account_epsilon(s, steps, sampling_rate, target.delta);
    let goal = target.epsilon;
    let sigma = if eps_at(SIGMA_MIN)? <= goal {
        SIGMA_MIN
    } else {
        if eps_at(SIGMA_MAX)? > goal {
            return Err(Error::Calibration(format!(
                "epsilon {goal} unreachable with noise multiplier <= {SIGMA_MAX} over {steps} steps; \
                 increase the budget or reduce the number of steps"
            )));
        }
        let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
        for _ in 0..200 {
            if eps_at(hi)? >= goal * (1.0 - CALIBRATION_RTOL) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if eps_at(mid)? > goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    calibration_cache().lock().expect("calibration cache").insert(key, sigma);
    Ok(sigma)
}
