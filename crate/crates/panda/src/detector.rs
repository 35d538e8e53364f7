//! Online phase: victim detection, the percentile trigger, and the
//! PANDA / PANDA-Local antagonist rankings.
//!
//! A machine triggers identification when its mnCPI exceeds its own
//! historical 99th percentile with at least one victim present, sustained
//! for `run_length` consecutive slots. Identification then scores every
//! colocated batch task as `cpu_usage * coefficient(job)` from the latest
//! snapshot strictly before the event's day, so the ranking is a function of
//! the machine-slot alone and every victim on the machine sees the same
//! accusation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{MachineSlotProfile, NormalizedSample};
use crate::scoring::CoefficientSnapshot;
use crate::trace::{MachineId, SlotTime, TaskRef, WorkloadKind};

/// A latency-sensitive task whose nCPI crossed the victim threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimFlag {
    pub task: TaskRef,
    pub slot: SlotTime,
    pub ncpi: f64,
}

/// A triggered identification event. `slot` is the run_length-th consecutive
/// qualifying slot; `victims` are the victims present at that slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerEvent {
    pub machine: MachineId,
    pub slot: SlotTime,
    pub victims: Vec<VictimFlag>,
    pub mncpi: f64,
}

/// Identification method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PANDA")]
    Panda,
    #[serde(rename = "PANDA-Local")]
    PandaLocal,
    #[serde(rename = "CPI2")]
    Cpi2,
    #[serde(rename = "Proctor")]
    Proctor,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Panda, Method::PandaLocal, Method::Cpi2, Method::Proctor];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Panda => "PANDA",
            Method::PandaLocal => "PANDA-Local",
            Method::Cpi2 => "CPI2",
            Method::Proctor => "Proctor",
        }
    }

    /// Per-victim methods re-run identification for every victim of an
    /// event; the others rank the machine-slot once.
    pub fn is_per_victim(&self) -> bool {
        matches!(self, Method::Cpi2 | Method::Proctor)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PANDA" => Ok(Method::Panda),
            "PANDA-Local" => Ok(Method::PandaLocal),
            "CPI2" => Ok(Method::Cpi2),
            "Proctor" => Ok(Method::Proctor),
            other => Err(format!(
                "unknown method {other:?} (expected PANDA, PANDA-Local, CPI2 or Proctor)"
            )),
        }
    }
}

/// One scored candidate. `cpu_usage` is the candidate's usage at the event
/// slot, kept for tie-breaking and reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub task: TaskRef,
    pub score: f64,
    pub cpu_usage: f64,
}

/// A method's ranking for one event (or one victim of one event for the
/// per-victim methods). `scored` contains exactly the colocated batch tasks
/// at the event slot, descending; `accused` is its head, absent iff the
/// candidate set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub method: Method,
    pub scored: Vec<ScoredCandidate>,
    pub accused: Option<TaskRef>,
}

impl IdentificationResult {
    pub fn from_scored(method: Method, mut scored: Vec<ScoredCandidate>) -> Self {
        sort_candidates(&mut scored);
        let accused = scored.first().map(|c| c.task);
        IdentificationResult {
            method,
            scored,
            accused,
        }
    }
}

/// Descending by score; ties broken by higher cpu_usage, then lower job id,
/// then lower task index, so the order is total and deterministic.
pub fn sort_candidates(candidates: &mut [ScoredCandidate]) {
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                b.cpu_usage
                    .partial_cmp(&a.cpu_usage)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| a.task.cmp(&b.task))
    });
}

/// Flag every contributing LS task whose nCPI is at or above `threshold`
/// (inclusive boundary). Batch tasks are never victims.
pub fn detect_victims(
    profile: &MachineSlotProfile,
    normalized: &[NormalizedSample],
    threshold: f64,
) -> Vec<VictimFlag> {
    normalized
        .iter()
        .filter(|s| {
            debug_assert!(s.machine == profile.machine && s.slot == profile.slot);
            let is_ls = profile
                .colocated
                .iter()
                .find(|c| c.task == s.task)
                .map(|c| c.cls.kind() == WorkloadKind::LatencySensitive)
                .unwrap_or(false);
            is_ls && s.ncpi >= threshold
        })
        .map(|s| VictimFlag {
            task: s.task,
            slot: s.slot,
            ncpi: s.ncpi,
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("empty mnCPI history")]
    EmptyHistory,
}

/// Nearest-rank percentile: the ceil(p*n)-th order statistic, 1-based.
/// Deterministic and exact on small histories.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64, DetectError> {
    if values.is_empty() {
        return Err(DetectError::EmptyHistory);
    }
    debug_assert!((0.0..=1.0).contains(&p));
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// 99th percentile of a machine's historical mnCPI values.
pub fn machine_p99(history: &[f64]) -> Result<f64, DetectError> {
    nearest_rank_percentile(history, 0.99)
}

/// Core run scanner over (slot, qualifies) pairs.
///
/// Emits the slot of every `run_length`-th consecutive qualifying slot. The
/// counter resets on a non-qualifying slot, on a slot-index gap, and on
/// emission, so sustained qualification yields non-overlapping events every
/// `run_length` slots.
pub fn scan_trigger_runs(
    slots: impl IntoIterator<Item = (SlotTime, bool)>,
    run_length: u32,
) -> Vec<SlotTime> {
    debug_assert!(run_length >= 1);
    let mut events = Vec::new();
    let mut run = 0u32;
    let mut prev_slot: Option<SlotTime> = None;
    for (slot, qualifies) in slots {
        let contiguous = prev_slot.is_none_or(|p| slot.0 == p.0 + 1);
        if !contiguous {
            run = 0;
        }
        prev_slot = Some(slot);
        if qualifies {
            run += 1;
            if run == run_length {
                events.push(slot);
                run = 0;
            }
        } else {
            run = 0;
        }
    }
    events
}

/// Evaluate the trigger over one machine's slot stream (ascending slots).
///
/// A slot qualifies when its mnCPI is defined, strictly exceeds `p99`, and
/// at least one victim is present. Emitted events carry the victims and
/// mnCPI of the emission slot.
pub fn evaluate_trigger(
    slots: &[(MachineSlotProfile, Vec<VictimFlag>)],
    p99: f64,
    run_length: u32,
) -> Vec<TriggerEvent> {
    let qualifying = slots.iter().map(|(profile, victims)| {
        let q = profile
            .mncpi
            .map(|m| m > p99 && !victims.is_empty())
            .unwrap_or(false);
        (profile.slot, q)
    });
    let event_slots = scan_trigger_runs(qualifying, run_length);
    let mut events = Vec::with_capacity(event_slots.len());
    let mut cursor = 0usize;
    for slot in event_slots {
        while slots[cursor].0.slot != slot {
            cursor += 1;
        }
        let (profile, victims) = &slots[cursor];
        events.push(TriggerEvent {
            machine: profile.machine,
            slot,
            victims: victims.clone(),
            mncpi: profile.mncpi.expect("qualifying slot has mnCPI"),
        });
    }
    events
}

/// Snapshot scope for the coefficient lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientScope {
    Global,
    Local,
}

/// Rank the colocated batch tasks of the event slot by
/// `cpu_usage * coefficient(job)`.
///
/// A job without a published coefficient scores 0 rather than being
/// excluded, so the candidate list always equals "all colocated batch
/// tasks" and percentile ranks stay comparable across methods.
pub fn identify_panda(
    event: &TriggerEvent,
    profile: &MachineSlotProfile,
    snapshot: &CoefficientSnapshot,
    scope: CoefficientScope,
    min_obs: u64,
) -> IdentificationResult {
    debug_assert!(profile.machine == event.machine && profile.slot == event.slot);
    let method = match scope {
        CoefficientScope::Global => Method::Panda,
        CoefficientScope::Local => Method::PandaLocal,
    };
    let scored: Vec<ScoredCandidate> = profile
        .colocated
        .iter()
        .filter(|c| c.cls.kind() == WorkloadKind::Batch)
        .map(|c| {
            let coeff = match scope {
                CoefficientScope::Global => snapshot.global_coefficient(c.task.job, min_obs),
                CoefficientScope::Local => {
                    snapshot.local_coefficient(c.task.job, event.machine, min_obs)
                }
            };
            ScoredCandidate {
                task: c.task,
                score: c.cpu_usage * coeff.unwrap_or(0.0),
                cpu_usage: c.cpu_usage,
            }
        })
        .collect();
    IdentificationResult::from_scored(method, scored)
}
