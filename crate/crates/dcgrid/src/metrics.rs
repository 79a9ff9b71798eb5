//! Transient figures of merit over an event window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("window has {0} samples, at least 20 are required")]
    TooShort(usize),
    #[error("time and value series differ in length")]
    LengthMismatch,
}

pub const DEFAULT_BAND_PCT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientMetrics {
    /// Overshoot in % of the step size, or of the target for disturbances.
    pub overshoot_pct: f64,
    /// Rebound beyond the target in % of the first excursion.
    pub overshoot_pct_of_excursion: f64,
    pub settling_time: f64,
    pub settled: bool,
    pub peak_deviation: f64,
    pub steady_state_error: f64,
    pub band_pct: f64,
}

/// Analyzes samples `v` at times `t` starting at the event time `t0`.
///
/// The first sample is taken as the pre-event value. The window counts as a
/// step when that value is more than a tenth of the band away from `target`.
pub fn analyze_window(
    t: &[f64],
    v: &[f64],
    t0: f64,
    target: f64,
    band_pct: f64,
) -> Result<TransientMetrics, MetricsError> {
    if t.len() != v.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if v.len() < 20 {
        return Err(MetricsError::TooShort(v.len()));
    }
    let v0 = v[0];
    let step = target - v0;
    let band = band_pct / 100.0 * target.abs();
    let is_step = step.abs() > 0.1 * band;
    let dev: Vec<f64> = v.iter().map(|x| x - target).collect();

    let peak_idx = dev
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let peak_deviation = dev[peak_idx].abs();

    let (direction, basis) = if is_step {
        (step.signum(), step.abs())
    } else {
        (dev[peak_idx].signum(), target.abs())
    };
    let beyond = dev
        .iter()
        .map(|d| (direction * d).max(0.0))
        .fold(0.0, f64::max);
    let overshoot_pct = if basis > 0.0 { beyond / basis * 100.0 } else { 0.0 };

    // Rebound: deviation on the far side of the target after the peak.
    let excursion = if is_step { step.abs() } else { peak_deviation };
    let first_sign = if is_step { -step.signum() } else { dev[peak_idx].signum() };
    let start = if is_step { 0 } else { peak_idx };
    let rebound = dev[start..]
        .iter()
        .map(|d| (-first_sign * d).max(0.0))
        .fold(0.0, f64::max);
    let overshoot_pct_of_excursion = if excursion > 0.0 {
        rebound / excursion * 100.0
    } else {
        0.0
    };

    let last_out = dev.iter().rposition(|d| d.abs() > band);
    let window = t[t.len() - 1] - t0;
    let (settling_time, settled) = match last_out {
        None => (0.0, true),
        Some(k) if k + 1 < t.len() => ((t[k + 1] - t0).max(0.0), true),
        Some(_) => (window, false),
    };

    let tail = (v.len() / 10).max(1);
    let steady_state_error = dev[v.len() - tail..].iter().sum::<f64>() / tail as f64;

    Ok(TransientMetrics {
        overshoot_pct,
        overshoot_pct_of_excursion,
        settling_time,
        settled,
        peak_deviation,
        steady_state_error,
        band_pct,
    })
}
