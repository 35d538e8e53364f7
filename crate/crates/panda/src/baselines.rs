//! CPI2 and Proctor: correlation-based identifiers over local
//! recent-history windows.
//!
//! Both methods run per victim. CPI2 ranks the colocated batch tasks by the
//! Pearson correlation between each task's CPU-usage series and the victim's
//! CPI series over the lookback window. Proctor does the same on a random
//! subsample of the window, first checking with a chi-square test that the
//! subsample's victim-CPI distribution is representative of the full window,
//! and falling back to the full window after too many failed draws.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detector::{IdentificationResult, Method, ScoredCandidate, TriggerEvent};
use crate::trace::{MachineId, SlotTime, TaskRef};

/// Aligned per-slot series for one victim over the lookback window, ending
/// at the event slot. `candidate_usage` holds every colocated batch task's
/// usage, 0 for slots where the task was absent; `victim_cpi` is `None`
/// where the victim had no CPI sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub machine: MachineId,
    pub slots: Vec<SlotTime>,
    pub victim_cpi: Vec<Option<f64>>,
    pub candidate_usage: BTreeMap<TaskRef, Vec<f64>>,
}

/// Strictly increasing window positions of one subsample draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampleSpec {
    pub indices: Vec<usize>,
    pub size: usize,
}

/// Draw `size` distinct window positions uniformly at random, sorted
/// ascending. `size` is clamped to the window length.
pub fn draw_subsample(rng: &mut ChaCha8Rng, window_len: usize, size: usize) -> SubsampleSpec {
    let size = size.min(window_len);
    let mut indices = rand::seq::index::sample(rng, window_len, size).into_vec();
    indices.sort_unstable();
    SubsampleSpec { indices, size }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("insufficient paired data: need at least 2 points, got {0}")]
    InsufficientData(usize),
}

/// Pearson product-moment correlation.
///
/// Returns 0 when either series has zero variance; the caller-facing range
/// is always [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, BaselineError> {
    assert_eq!(x.len(), y.len(), "pearson requires equal-length series");
    let n = x.len();
    if n < 2 {
        return Err(BaselineError::InsufficientData(n));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let da = a - mean_x;
        let db = b - mean_y;
        cov += da * db;
        var_x += da * da;
        var_y += db * db;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Window positions where the victim has a CPI sample, restricted to
/// `within` when given.
fn present_positions(victim_cpi: &[Option<f64>], within: Option<&[usize]>) -> Vec<usize> {
    match within {
        Some(indices) => indices
            .iter()
            .copied()
            .filter(|&i| victim_cpi[i].is_some())
            .collect(),
        None => (0..victim_cpi.len())
            .filter(|&i| victim_cpi[i].is_some())
            .collect(),
    }
}

/// Correlate every candidate against the victim CPI at `positions` and rank.
/// Raw scores are used as-is: antagonism is a positive-correlation
/// hypothesis, so negative correlations rank below zero ones naturally.
fn rank_by_correlation(
    window: &WindowSeries,
    positions: &[usize],
    method: Method,
) -> IdentificationResult {
    if positions.len() < 2 {
        return IdentificationResult {
            method,
            scored: Vec::new(),
            accused: None,
        };
    }
    let victim: Vec<f64> = positions
        .iter()
        .map(|&i| window.victim_cpi[i].expect("position filtered to present"))
        .collect();
    let event_pos = window.slots.len() - 1;
    let scored: Vec<ScoredCandidate> = window
        .candidate_usage
        .iter()
        .map(|(task, usage)| {
            let xs: Vec<f64> = positions.iter().map(|&i| usage[i]).collect();
            let score = pearson(&xs, &victim).expect("positions checked above");
            ScoredCandidate {
                task: *task,
                score,
                cpu_usage: usage[event_pos],
            }
        })
        .collect();
    IdentificationResult::from_scored(method, scored)
}

/// CPI2: correlation over the full lookback window. Slots without a victim
/// CPI sample are dropped pairwise, never imputed. Fewer than two usable
/// slots yields an empty result (accused absent).
pub fn identify_cpi2(_event: &TriggerEvent, window: &WindowSeries) -> IdentificationResult {
    let positions = present_positions(&window.victim_cpi, None);
    rank_by_correlation(window, &positions, Method::Cpi2)
}

/// Chi-square representativeness of `sub` against the full-window victim
/// CPI distribution.
///
/// The full window is split into `categories` equal-frequency bins (edges
/// from the sorted full window); the statistic compares the subsample's bin
/// occupancy against the full window's share. An all-equal full window is
/// degenerate: by convention the statistic is 0 and the test passes.
pub fn chi_square_representative(
    full: &[f64],
    sub: &[f64],
    categories: usize,
    threshold: f64,
) -> (f64, bool) {
    assert!(categories >= 2, "need at least 2 categories");
    assert!(!full.is_empty(), "full window must be nonempty");
    let mut sorted = full.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return (0.0, true);
    }
    // Upper edges of the first (categories - 1) bins, at the equal-frequency
    // quantile positions of the full window.
    let edges: Vec<f64> = (1..categories)
        .map(|i| {
            let rank = ((i * n + categories - 1) / categories).clamp(1, n);
            sorted[rank - 1]
        })
        .collect();
    let bin_of = |v: f64| -> usize { edges.iter().filter(|&&e| v > e).count() };
    let mut full_counts = vec![0usize; categories];
    for &v in full {
        full_counts[bin_of(v)] += 1;
    }
    let mut sub_counts = vec![0usize; categories];
    for &v in sub {
        sub_counts[bin_of(v)] += 1;
    }
    let sub_n = sub.len() as f64;
    let mut statistic = 0.0;
    for (bin, &fc) in full_counts.iter().enumerate() {
        if fc == 0 {
            continue;
        }
        let expected = sub_n * fc as f64 / n as f64;
        let diff = sub_counts[bin] as f64 - expected;
        statistic += diff * diff / expected;
    }
    (statistic, statistic <= threshold)
}

/// Proctor configuration knobs.
#[derive(Debug, Clone, Copy)]
pub struct ProctorParams {
    pub subsample_slots: usize,
    pub chi_categories: usize,
    pub chi_threshold: f64,
    pub max_resamples: usize,
}

impl Default for ProctorParams {
    fn default() -> Self {
        ProctorParams {
            subsample_slots: 12,
            chi_categories: 3,
            chi_threshold: 1.0,
            max_resamples: 20,
        }
    }
}

/// Proctor: correlation over the first random subsample that passes the
/// representativeness test, falling back to the full window after
/// `max_resamples` failures. Deterministic given `rng_seed`.
pub fn identify_proctor(
    event: &TriggerEvent,
    window: &WindowSeries,
    rng_seed: u64,
    params: &ProctorParams,
) -> IdentificationResult {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let full_values: Vec<f64> = window.victim_cpi.iter().flatten().copied().collect();
    if full_values.len() >= 2 {
        for _ in 0..params.max_resamples {
            let spec = draw_subsample(&mut rng, window.slots.len(), params.subsample_slots);
            let positions = present_positions(&window.victim_cpi, Some(&spec.indices));
            if positions.len() < 2 {
                continue;
            }
            let sub_values: Vec<f64> = positions
                .iter()
                .map(|&i| window.victim_cpi[i].unwrap())
                .collect();
            let (_, ok) = chi_square_representative(
                &full_values,
                &sub_values,
                params.chi_categories,
                params.chi_threshold,
            );
            if ok {
                let mut result = rank_by_correlation(window, &positions, Method::Proctor);
                result.method = Method::Proctor;
                return result;
            }
        }
    }
    let mut result = identify_cpi2(event, window);
    result.method = Method::Proctor;
    result
}
