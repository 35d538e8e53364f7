//! End-to-end orchestration: generate, score offline, detect, evaluate.
//!
//! Everything here is deterministic for a fixed config and seed: map
//! iteration is ordered, random substreams are derived per (machine, slot,
//! victim), and per-machine parallel work merges in ascending machine order,
//! so output files are byte-identical across runs and thread counts.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, ProctorParams, WindowSeries};
use crate::config::RunConfig;
use crate::detector::{
    self, CoefficientScope, IdentificationResult, Method, ScoredCandidate, TriggerEvent,
    VictimFlag,
};
use crate::eval::{self, EvalError, EvalReport, EventKey, PercentileRank};
use crate::preprocess::{self, JobCpiStats, MachineSlotProfile};
use crate::scoring::{self, CoefficientSnapshot};
use crate::synth::derive_seed;
use crate::trace::{
    JobId, MachineId, MachineSlotGroup, SlotTime, TaskRef, TraceError, TraceRecord, WorkloadKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
    #[error(transparent)]
    StatsFile(#[from] preprocess::StatsFileError),
    #[error(transparent)]
    SnapshotFile(#[from] scoring::SnapshotFileError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: bad event record: {reason}")]
    BadEventRecord { line: usize, reason: String },
}

/// Output of the offline phase: the normalization basis and the coefficient
/// snapshot.
#[derive(Debug, Clone)]
pub struct OfflineOutput {
    pub stats: BTreeMap<JobId, JobCpiStats>,
    pub snapshot: CoefficientSnapshot,
}

/// Two-pass offline build.
///
/// Pass 1 computes per-job CPI stats over the whole input; pass 2 groups,
/// aggregates mnCPI, and folds accumulators for days in
/// `(prev.as_of_day, upto_day]`. The stats basis deliberately spans the full
/// input file (restrict the file to restrict history); pinning `stats` keeps
/// the basis fixed across incremental runs so that day-by-day building
/// reproduces a batch build.
pub fn run_offline(
    records: Vec<TraceRecord>,
    run: &RunConfig,
    upto_day: u32,
    prev: Option<&CoefficientSnapshot>,
    pinned_stats: Option<&BTreeMap<JobId, JobCpiStats>>,
) -> Result<OfflineOutput, PipelineError> {
    let stats = match pinned_stats {
        Some(s) => s.clone(),
        None => preprocess::compute_job_stats(&records),
    };
    let groups = crate::trace::sort_and_group(records)?;
    let profiles = groups
        .iter()
        .map(|g| preprocess::aggregate_machine_slot(g, &stats, run.epsilon, run.min_cpi_samples));
    let snapshot = scoring::build_snapshot(profiles, run.slots_per_day(), upto_day, prev)?;
    Ok(OfflineOutput { stats, snapshot })
}

/// JSON wire form of a task reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOut {
    pub job: u64,
    pub task_index: u64,
}

impl From<TaskRef> for TaskOut {
    fn from(t: TaskRef) -> Self {
        TaskOut {
            job: t.job.0,
            task_index: t.task_index,
        }
    }
}

impl TaskOut {
    pub fn as_ref(&self) -> TaskRef {
        TaskRef::new(self.job, self.task_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimOut {
    pub job: u64,
    pub task_index: u64,
    pub ncpi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOut {
    pub job: u64,
    pub task_index: u64,
    pub score: f64,
    pub rank: usize,
}

/// One identification result line of the events file: per event for PANDA
/// and PANDA-Local, per (event, victim) for CPI2 and Proctor (which then
/// carry `victim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub machine: u64,
    pub slot: u64,
    pub day: u32,
    pub method: Method,
    pub mncpi: f64,
    pub victims: Vec<VictimOut>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<TaskOut>,
    pub scored: Vec<ScoredOut>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accused: Option<TaskOut>,
}

impl EventRecord {
    pub fn key(&self) -> EventKey {
        EventKey {
            machine: MachineId(self.machine),
            slot: SlotTime(self.slot),
        }
    }

    /// Rebuild the in-memory result (candidate usage is not persisted; the
    /// scored order is).
    pub fn to_result(&self) -> IdentificationResult {
        IdentificationResult {
            method: self.method,
            scored: self
                .scored
                .iter()
                .map(|s| ScoredCandidate {
                    task: TaskRef::new(s.job, s.task_index),
                    score: s.score,
                    cpu_usage: 0.0,
                })
                .collect(),
            accused: self.accused.map(|t| t.as_ref()),
        }
    }
}

/// One victim-bearing machine-slot, for the multi-victim statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimSlotRecord {
    pub machine: u64,
    pub slot: u64,
    pub victims: Vec<VictimOut>,
}

/// Detection output for one trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectOutput {
    pub events: Vec<EventRecord>,
    pub victim_slots: Vec<VictimSlotRecord>,
}

fn victim_out(v: &VictimFlag) -> VictimOut {
    VictimOut {
        job: v.task.job.0,
        task_index: v.task.task_index,
        ncpi: v.ncpi,
    }
}

fn result_to_record(
    event: &TriggerEvent,
    day: u32,
    result: &IdentificationResult,
    victim: Option<TaskRef>,
) -> EventRecord {
    EventRecord {
        machine: event.machine.0,
        slot: event.slot.0,
        day,
        method: result.method,
        mncpi: event.mncpi,
        victims: event.victims.iter().map(victim_out).collect(),
        victim: victim.map(TaskOut::from),
        scored: result
            .scored
            .iter()
            .enumerate()
            .map(|(i, c)| ScoredOut {
                job: c.task.job.0,
                task_index: c.task.task_index,
                score: c.score,
                rank: i + 1,
            })
            .collect(),
        accused: result.accused.map(TaskOut::from),
    }
}

/// Per-slot usage/CPI lookup for one machine, for window building.
struct MachineData {
    by_slot_task: HashMap<(u64, TaskRef), (f64, Option<f64>)>,
}

impl MachineData {
    fn from_groups(groups: &[MachineSlotGroup]) -> Self {
        let mut by_slot_task = HashMap::new();
        for g in groups {
            for r in &g.records {
                by_slot_task.insert((g.slot.0, r.task), (r.cpu_usage, r.cpi_sample));
            }
        }
        MachineData { by_slot_task }
    }

    fn usage(&self, slot: u64, task: TaskRef) -> f64 {
        self.by_slot_task
            .get(&(slot, task))
            .map(|&(u, _)| u)
            .unwrap_or(0.0)
    }

    fn cpi(&self, slot: u64, task: TaskRef) -> Option<f64> {
        self.by_slot_task.get(&(slot, task)).and_then(|&(_, c)| c)
    }
}

fn build_window(
    machine: MachineId,
    data: &MachineData,
    event_slot: SlotTime,
    lookback: usize,
    victim: TaskRef,
    candidates: &[TaskRef],
) -> WindowSeries {
    let start = event_slot.0.saturating_sub(lookback as u64 - 1);
    let slots: Vec<SlotTime> = (start..=event_slot.0).map(SlotTime).collect();
    let victim_cpi: Vec<Option<f64>> = slots.iter().map(|s| data.cpi(s.0, victim)).collect();
    let candidate_usage: BTreeMap<TaskRef, Vec<f64>> = candidates
        .iter()
        .map(|&task| {
            let series: Vec<f64> = slots.iter().map(|s| data.usage(s.0, task)).collect();
            (task, series)
        })
        .collect();
    WindowSeries {
        machine,
        slots,
        victim_cpi,
        candidate_usage,
    }
}

/// Run detection plus the requested identification methods over one trace.
///
/// `stats` and `snapshot` come from the offline phase. Events are evaluated
/// from `max(eval_from_day, snapshot day + 1)` so identification never sees
/// a snapshot from the event's own day, while trigger history (the rolling
/// per-machine p99 computed over all slots strictly before the event's day)
/// still spans the warmup days.
pub fn run_detect(
    records: Vec<TraceRecord>,
    run: &RunConfig,
    stats: &BTreeMap<JobId, JobCpiStats>,
    snapshot: &CoefficientSnapshot,
) -> Result<DetectOutput, PipelineError> {
    run.validate()
        .map_err(|e| PipelineError::BadEventRecord {
            line: 0,
            reason: e.to_string(),
        })?;
    let spd = run.slots_per_day();
    let effective_from = run.eval_from_day.max(snapshot.as_of_day + 1);
    let groups = crate::trace::sort_and_group(records)?;
    let mut output = DetectOutput::default();

    let mut start = 0usize;
    while start < groups.len() {
        let machine = groups[start].machine;
        let mut end = start;
        while end < groups.len() && groups[end].machine == machine {
            end += 1;
        }
        detect_machine(&groups[start..end], run, stats, snapshot, spd, effective_from, &mut output);
        start = end;
    }
    Ok(output)
}

fn detect_machine(
    groups: &[MachineSlotGroup],
    run: &RunConfig,
    stats: &BTreeMap<JobId, JobCpiStats>,
    snapshot: &CoefficientSnapshot,
    spd: u64,
    effective_from: u32,
    output: &mut DetectOutput,
) {
    let machine = groups[0].machine;
    let slots: Vec<(MachineSlotProfile, Vec<VictimFlag>)> = groups
        .iter()
        .map(|g| {
            let profile =
                preprocess::aggregate_machine_slot(g, stats, run.epsilon, run.min_cpi_samples);
            let normalized =
                preprocess::normalized_ls_samples(g, stats, run.epsilon, run.min_cpi_samples);
            let victims = detector::detect_victims(&profile, &normalized, run.victim_threshold);
            (profile, victims)
        })
        .collect();

    for (profile, victims) in &slots {
        if !victims.is_empty() {
            output.victim_slots.push(VictimSlotRecord {
                machine: machine.0,
                slot: profile.slot.0,
                victims: victims.iter().map(victim_out).collect(),
            });
        }
    }

    // Rolling per-day p99 thresholds over all mnCPI history strictly before
    // each day. Day 1 has no history and can never qualify.
    let mut p99_by_day: BTreeMap<u32, f64> = BTreeMap::new();
    {
        let mut history: Vec<f64> = Vec::new();
        let mut day_values: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (profile, _) in &slots {
            if let Some(m) = profile.mncpi {
                day_values.entry(profile.slot.day(spd)).or_default().push(m);
            }
        }
        let last_day = slots
            .last()
            .map(|(p, _)| p.slot.day(spd))
            .unwrap_or(0);
        for day in 1..=last_day {
            if !history.is_empty() {
                if let Ok(p) = detector::nearest_rank_percentile(&history, run.p99) {
                    p99_by_day.insert(day, p);
                }
            }
            if let Some(values) = day_values.get(&day) {
                history.extend_from_slice(values);
            }
        }
    }

    let qualifying: Vec<(SlotTime, bool)> = slots
        .iter()
        .map(|(profile, victims)| {
            let day = profile.slot.day(spd);
            let q = match (profile.mncpi, p99_by_day.get(&day)) {
                (Some(m), Some(&p99)) => m > p99 && !victims.is_empty(),
                _ => false,
            };
            (profile.slot, q)
        })
        .collect();
    let event_slots = detector::scan_trigger_runs(qualifying, run.run_length);

    let data = MachineData::from_groups(groups);
    let proctor_params = ProctorParams {
        subsample_slots: run.subsample_slots,
        chi_categories: run.chi_categories,
        chi_threshold: run.chi_threshold,
        max_resamples: run.max_resamples,
    };

    for event_slot in event_slots {
        let day = event_slot.day(spd);
        if day < effective_from {
            continue;
        }
        let idx = slots
            .binary_search_by_key(&event_slot, |(p, _)| p.slot)
            .expect("event slot exists");
        let (profile, victims) = &slots[idx];
        let event = TriggerEvent {
            machine,
            slot: event_slot,
            victims: victims.clone(),
            mncpi: profile.mncpi.expect("qualifying slot has mnCPI"),
        };
        let candidates: Vec<TaskRef> = profile
            .colocated
            .iter()
            .filter(|c| c.cls.kind() == WorkloadKind::Batch)
            .map(|c| c.task)
            .collect();
        for method in &run.methods {
            match method {
                Method::Panda => {
                    let result = detector::identify_panda(
                        &event,
                        profile,
                        snapshot,
                        CoefficientScope::Global,
                        run.min_obs,
                    );
                    output
                        .events
                        .push(result_to_record(&event, day, &result, None));
                }
                Method::PandaLocal => {
                    let result = detector::identify_panda(
                        &event,
                        profile,
                        snapshot,
                        CoefficientScope::Local,
                        run.min_obs,
                    );
                    output
                        .events
                        .push(result_to_record(&event, day, &result, None));
                }
                Method::Cpi2 | Method::Proctor => {
                    for victim in &event.victims {
                        let window = build_window(
                            machine,
                            &data,
                            event_slot,
                            run.lookback_slots,
                            victim.task,
                            &candidates,
                        );
                        let result = if *method == Method::Cpi2 {
                            baselines::identify_cpi2(&event, &window)
                        } else {
                            let seed = derive_seed(&[
                                run.seed,
                                0x9C70,
                                machine.0,
                                event_slot.0,
                                victim.task.job.0,
                                victim.task.task_index,
                            ]);
                            baselines::identify_proctor(&event, &window, seed, &proctor_params)
                        };
                        output.events.push(result_to_record(
                            &event,
                            day,
                            &result,
                            Some(victim.task),
                        ));
                    }
                }
            }
        }
    }
}

pub fn write_events_file(path: &Path, events: &[EventRecord]) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    for event in events {
        serde_json::to_writer(&mut out, event)
            .map_err(|e| io::Error::new(io::ErrorKind::Other, e))?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events_file(path: &Path) -> Result<Vec<EventRecord>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: EventRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::BadEventRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_victims_file(path: &Path, slots: &[VictimSlotRecord]) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    for slot in slots {
        serde_json::to_writer(&mut out, slot)
            .map_err(|e| io::Error::new(io::ErrorKind::Other, e))?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_victims_file(path: &Path) -> Result<Vec<VictimSlotRecord>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut slots = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let slot: VictimSlotRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::BadEventRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        slots.push(slot);
    }
    Ok(slots)
}

/// Aggregate identification results against the planted truth.
///
/// Percentile ranks accrue per result line (so per victim for the per-victim
/// methods); consistency groups the per-victim accusations of each
/// machine-slot, with the event-level methods replicated across victims,
/// which makes their perfect consistency checkable rather than assumed.
pub fn run_eval(
    events: &[EventRecord],
    truth: &BTreeMap<JobId, f64>,
    victim_slots: Option<&[VictimSlotRecord]>,
    twin: Option<&eval::TwinNoiseReport>,
) -> (EvalReport, Vec<PercentileRank>) {
    let mut report = EvalReport::default();
    let mut percentiles: Vec<PercentileRank> = Vec::new();
    let mut event_keys: Vec<EventKey> = Vec::new();
    // (machine, slot) -> per-victim accused jobs, per method.
    let mut consistency_groups: BTreeMap<Method, BTreeMap<EventKey, Vec<Option<JobId>>>> =
        BTreeMap::new();

    for event in events {
        let key = event.key();
        event_keys.push(key);
        let method_report = report.per_method.entry(event.method).or_default();
        method_report.result_lines += 1;

        match eval::percentile_of(key, &event.to_result(), truth) {
            Ok(ranks) => {
                method_report.rank_count += ranks.len();
                percentiles.extend(ranks);
            }
            Err(EvalError::NoTruthPresent) => method_report.excluded_no_truth += 1,
            Err(EvalError::SingleCandidate) => method_report.excluded_single_candidate += 1,
            Err(_) => unreachable!("percentile_of returns only exclusion errors"),
        }

        let accused_job = event.accused.map(|t| JobId(t.job));
        let group = consistency_groups
            .entry(event.method)
            .or_default()
            .entry(key)
            .or_default();
        if event.method.is_per_victim() {
            group.push(accused_job);
        } else {
            // One line per event: the same accusation applies to every
            // victim on the machine-slot.
            for _ in 0..event.victims.len() {
                group.push(accused_job);
            }
        }
    }

    for (method, groups) in consistency_groups {
        let stats = eval::consistency_rate(groups.into_values()).ok();
        report.per_method.entry(method).or_default().consistency = stats;
    }
    for (method, method_report) in report.per_method.iter_mut() {
        let values: Vec<f64> = percentiles
            .iter()
            .filter(|p| p.method == *method)
            .map(|p| p.percentile)
            .collect();
        method_report.mean_percentile =
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    }

    event_keys.sort_unstable();
    event_keys.dedup();
    report.events = event_keys.len();

    if let Some(slots) = victim_slots {
        report.victim_bearing_slots = slots.len();
        report.multi_victim_share = eval::multi_victim_share(slots.iter().map(|s| s.victims.len()));
    }
    if let Some(t) = twin {
        report.twin_ratio = Some(t.twin_ratio);
        report.colocated_ratio = t.colocated_ratio;
    }
    (report, percentiles)
}

/// File layout of one full run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub trace: PathBuf,
    pub truth: PathBuf,
    pub stats: PathBuf,
    pub snapshot: PathBuf,
    pub events: PathBuf,
    pub victims: PathBuf,
    pub report_dir: PathBuf,
}

impl RunPaths {
    pub fn under(dir: &Path) -> Self {
        RunPaths {
            trace: dir.join("trace.csv"),
            truth: dir.join("truth.csv"),
            stats: dir.join("jobstats.csv"),
            snapshot: dir.join("snapshot.csv"),
            events: dir.join("events.jsonl"),
            victims: dir.join("victims.jsonl"),
            report_dir: dir.join("report"),
        }
    }
}

/// Everything a full run produces, besides the files.
#[derive(Debug, Clone)]
pub struct FullRunOutput {
    pub report: EvalReport,
    pub percentiles: Vec<PercentileRank>,
    pub summary: String,
    pub paths: RunPaths,
}

/// Generate a trace, run the offline phase up to `eval_from_day - 1`, run
/// detection and every configured method, evaluate against the planted
/// truth, and write every artifact under `dir`.
pub fn run_full(
    synth_config: &crate::synth::SynthConfig,
    run: &RunConfig,
    dir: &Path,
) -> Result<FullRunOutput, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let paths = RunPaths::under(dir);
    let (records, truth) = crate::synth::generate(synth_config)?;
    crate::trace::write_trace_file(&paths.trace, &records)?;
    crate::synth::write_truth_file(&paths.truth, &truth)?;

    let upto_day = run.eval_from_day.saturating_sub(1).max(1);
    let offline = run_offline(records.clone(), run, upto_day, None, None)?;
    preprocess::write_stats_file(&paths.stats, &offline.stats)?;
    scoring::write_snapshot_file(&paths.snapshot, &offline.snapshot)?;

    let detect = run_detect(records.clone(), run, &offline.stats, &offline.snapshot)?;
    write_events_file(&paths.events, &detect.events)?;
    write_victims_file(&paths.victims, &detect.victim_slots)?;

    let twin = eval::twin_noise_analysis(&records, run.seed, 1000, 4).ok();
    let (report, percentiles) = run_eval(
        &detect.events,
        &truth.antagonists,
        Some(&detect.victim_slots),
        twin.as_ref(),
    );
    let histograms = twin.map(|t| t.histograms).unwrap_or_default();
    let summary = eval::emit_report(&report, &percentiles, &histograms, &paths.report_dir)?;
    Ok(FullRunOutput {
        report,
        percentiles,
        summary,
        paths,
    })
}

/// Run `f` on a dedicated rayon pool of `threads` workers (or the global
/// pool when `None`). Results do not depend on the choice.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("rayon pool")
            .install(f),
        _ => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_antagonists, SynthConfig};

    fn small_synth(seed: u64) -> SynthConfig {
        let mut config = SynthConfig::desk(seed);
        config.n_machines = 6;
        config.n_jobs = 30;
        config.n_days = 4;
        config.slot_width_s = 1800; // 48 slots/day
        config.colocation_size = 12;
        config.antagonists = default_antagonists(15, 30, 3, 3.0);
        config.noise_sigma = 0.1;
        config
    }

    fn small_run() -> RunConfig {
        RunConfig {
            slot_width_s: 1800,
            eval_from_day: 3,
            lookback_slots: 12,
            subsample_slots: 6,
            ..RunConfig::default()
        }
    }

    #[test]
    fn full_run_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let output = run_full(&small_synth(11), &small_run(), dir.path()).unwrap();
        assert!(output.paths.trace.exists());
        assert!(output.paths.truth.exists());
        assert!(output.paths.stats.exists());
        assert!(output.paths.snapshot.exists());
        assert!(output.paths.events.exists());
        assert!(output.paths.victims.exists());
        assert!(output.paths.report_dir.join("summary.txt").exists());
        assert!(output.paths.report_dir.join("percentiles.csv").exists());
        assert!(output.paths.report_dir.join("consistency.csv").exists());
        assert!(output.paths.report_dir.join("twin_hist.csv").exists());
        assert_eq!(output.report.per_method.len(), 4);
    }

    #[test]
    fn events_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let output = run_full(&small_synth(12), &small_run(), dir.path()).unwrap();
        let events = read_events_file(&output.paths.events).unwrap();
        assert!(!events.is_empty(), "expected triggered events");
        let mut rewritten = dir.path().join("events2.jsonl");
        rewritten.set_extension("jsonl");
        write_events_file(&rewritten, &events).unwrap();
        assert_eq!(
            std::fs::read(&output.paths.events).unwrap(),
            std::fs::read(&rewritten).unwrap()
        );
    }

    #[test]
    fn panda_lines_are_per_event_and_baselines_per_victim() {
        let dir = tempfile::tempdir().unwrap();
        let output = run_full(&small_synth(13), &small_run(), dir.path()).unwrap();
        let events = read_events_file(&output.paths.events).unwrap();
        let mut keys: Vec<EventKey> = events.iter().map(|e| e.key()).collect();
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let lines: Vec<&EventRecord> = events.iter().filter(|e| e.key() == key).collect();
            let victims = lines[0].victims.len();
            let panda = lines.iter().filter(|e| e.method == Method::Panda).count();
            let cpi2 = lines.iter().filter(|e| e.method == Method::Cpi2).count();
            assert_eq!(panda, 1);
            assert_eq!(cpi2, victims);
            for line in &lines {
                if line.method.is_per_victim() {
                    assert!(line.victim.is_some());
                } else {
                    assert!(line.victim.is_none());
                }
            }
        }
    }

    #[test]
    fn detect_only_reports_events_after_snapshot_day() {
        let dir = tempfile::tempdir().unwrap();
        let output = run_full(&small_synth(14), &small_run(), dir.path()).unwrap();
        let events = read_events_file(&output.paths.events).unwrap();
        for event in events {
            assert!(event.day >= 3, "event on day {}", event.day);
        }
    }
}
