//! Synthetic cluster traces with planted antagonists, twin tasks, and
//! calibratable measurement noise.
//!
//! The generator instantiates a linear interference model: each machine
//! hosts a fixed random colocation of latency-sensitive and batch tasks for
//! the whole trace, tasks draw autocorrelated diurnal CPU usage around their
//! job mean, and an LS task's CPI inflates multiplicatively with the
//! usage-weighted sum of the colocated planted antagonists:
//!
//! ```text
//! cpi[k, t] = base_j * (1 + scale * sum_a beta_a * u_a[t]) + noise
//! ```
//!
//! Noise is i.i.d. Gaussian per sample, truncated so CPI stays positive.
//! Because interference enters through the same machine-slot sum for every
//! colocated LS task, twin instances of a job see identical CPI when the
//! noise is zero; `calibrate_noise` uses that to dial the noise floor until
//! the twin-vs-random CPI-difference ratio matches a measurement target.
//! The trace never embeds the ground truth; planted antagonists are emitted
//! separately so detectors cannot cheat.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use thiserror::Error;

use crate::eval;
use crate::trace::{JobId, MachineId, SlotTime, TaskRef, TraceRecord, WorkloadClass};

/// Stateless seed derivation for independent substreams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// Per-job CPU usage model: means drawn uniformly per job, an AR(1)
/// fluctuation per task, and a shared per-job diurnal phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageModel {
    pub mean_min: f64,
    pub mean_max: f64,
    pub ar_phi: f64,
    pub ar_sigma: f64,
    pub diurnal_amp: f64,
}

impl Default for UsageModel {
    fn default() -> Self {
        UsageModel {
            mean_min: 0.1,
            mean_max: 0.5,
            ar_phi: 0.7,
            ar_sigma: 0.05,
            diurnal_amp: 0.5,
        }
    }
}

/// Generator configuration. `antagonists` maps planted batch jobs to their
/// interference strength (CPI response per unit usage, before
/// normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_machines: u64,
    pub n_jobs: u64,
    pub n_days: u32,
    pub slot_width_s: u32,
    pub ls_fraction: f64,
    pub colocation_size: u64,
    pub antagonists: BTreeMap<JobId, f64>,
    pub noise_sigma: f64,
    pub twin_rate: f64,
    pub usage: UsageModel,
    pub base_cpi_min: f64,
    pub base_cpi_max: f64,
    pub interference_scale: f64,
    pub cpi_floor: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale defaults: 50 machines x 200 jobs x 7 days x 288 slots/day,
    /// ten planted antagonists, sized so the full pipeline runs in minutes.
    pub fn desk(seed: u64) -> Self {
        let n_jobs = 200;
        let ls_fraction = 0.5;
        let n_ls = ls_job_count(n_jobs, ls_fraction);
        SynthConfig {
            n_machines: 50,
            n_jobs,
            n_days: 7,
            slot_width_s: 300,
            ls_fraction,
            colocation_size: 50,
            antagonists: default_antagonists(n_ls, n_jobs, 10, 2.0),
            noise_sigma: 0.25,
            twin_rate: 0.1,
            usage: UsageModel::default(),
            base_cpi_min: 0.5,
            base_cpi_max: 3.0,
            interference_scale: 0.3,
            cpi_floor: 0.05,
            seed,
        }
    }

    pub fn slots_per_day(&self) -> u64 {
        86_400 / self.slot_width_s as u64
    }

    pub fn n_slots(&self) -> u64 {
        self.slots_per_day() * self.n_days as u64
    }

    /// Number of latency-sensitive jobs; job ids `1..=n_ls` are LS, the rest
    /// are batch.
    pub fn n_ls_jobs(&self) -> u64 {
        ls_job_count(self.n_jobs, self.ls_fraction)
    }

    pub fn is_ls_job(&self, job: JobId) -> bool {
        job.0 >= 1 && job.0 <= self.n_ls_jobs()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.n_machines == 0 || self.n_jobs < 2 || self.n_days == 0 {
            return fail("need at least 1 machine, 2 jobs and 1 day".into());
        }
        if self.slot_width_s == 0 || 86_400 % self.slot_width_s != 0 {
            return fail(format!(
                "slot_width_s must divide 86400, got {}",
                self.slot_width_s
            ));
        }
        if !(self.ls_fraction > 0.0 && self.ls_fraction < 1.0) {
            return fail(format!(
                "ls_fraction must be in (0,1), got {}",
                self.ls_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.twin_rate) {
            return fail(format!("twin_rate must be in [0,1], got {}", self.twin_rate));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.colocation_size < 2 || self.colocation_size > self.n_jobs {
            return fail(format!(
                "colocation_size must be in [2, n_jobs], got {}",
                self.colocation_size
            ));
        }
        let n_ls = self.n_ls_jobs();
        if n_ls == 0 || n_ls >= self.n_jobs {
            return fail("job split leaves no LS or no batch jobs".into());
        }
        for (&job, &beta) in &self.antagonists {
            if self.is_ls_job(job) || job.0 > self.n_jobs || job.0 == 0 {
                return fail(format!("antagonist {job} is not a batch job of this config"));
            }
            if !(beta > 0.0 && beta.is_finite()) {
                return fail(format!("antagonist {job} needs beta > 0, got {beta}"));
            }
        }
        if !(self.base_cpi_min > 0.0 && self.base_cpi_max >= self.base_cpi_min) {
            return fail("base CPI range must be positive and ordered".into());
        }
        if self.interference_scale <= 0.0 {
            return fail("interference_scale must be > 0".into());
        }
        if !(self.usage.mean_min >= 0.0 && self.usage.mean_max >= self.usage.mean_min) {
            return fail("usage mean range must be nonnegative and ordered".into());
        }
        if !(0.0..1.0).contains(&self.usage.ar_phi) {
            return fail(format!(
                "usage ar_phi must be in [0,1), got {}",
                self.usage.ar_phi
            ));
        }
        Ok(())
    }
}

pub fn ls_job_count(n_jobs: u64, ls_fraction: f64) -> u64 {
    ((n_jobs as f64 * ls_fraction).round() as u64).clamp(1, n_jobs - 1)
}

/// First `n_antagonists` batch job ids, all at strength `beta`.
pub fn default_antagonists(
    n_ls: u64,
    n_jobs: u64,
    n_antagonists: u64,
    beta: f64,
) -> BTreeMap<JobId, f64> {
    (0..n_antagonists.min(n_jobs - n_ls))
        .map(|i| (JobId(n_ls + 1 + i), beta))
        .collect()
}

/// Planted labels for the emitted trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub antagonists: BTreeMap<JobId, f64>,
    /// Resident task set per machine; placement is static, so the per-slot
    /// placement map is this set for every slot of the trace.
    pub machine_tasks: BTreeMap<MachineId, BTreeSet<TaskRef>>,
    pub n_slots: u64,
}

impl GroundTruth {
    pub fn is_antagonist(&self, job: JobId) -> bool {
        self.antagonists.contains_key(&job)
    }

    /// Task set placed on `machine` at `slot`, `None` outside the trace span.
    pub fn placements(&self, machine: MachineId, slot: SlotTime) -> Option<&BTreeSet<TaskRef>> {
        if slot.0 >= self.n_slots {
            return None;
        }
        self.machine_tasks.get(&machine)
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("noise calibration cannot reach target ratio {target} (sigma bracket {lo}..{hi} measured {measured_lo}..{measured_hi})")]
    Unreachable {
        target: f64,
        lo: f64,
        hi: f64,
        measured_lo: f64,
        measured_hi: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy)]
struct JobParams {
    base_cpi: f64,
    usage_mean: f64,
    diurnal_phase: f64,
}

fn job_params(config: &SynthConfig, job: JobId) -> JobParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 0xA11C, job.0]));
    let base = Uniform::new_inclusive(config.base_cpi_min, config.base_cpi_max);
    let mean = Uniform::new_inclusive(config.usage.mean_min, config.usage.mean_max);
    JobParams {
        base_cpi: base.sample(&mut rng),
        usage_mean: mean.sample(&mut rng),
        diurnal_phase: rng.gen_range(0.0..TAU),
    }
}

#[derive(Debug, Clone, Copy)]
struct PlacedTask {
    task: TaskRef,
    cls: WorkloadClass,
    beta: f64, // 0 for non-antagonists
}

const LS_PRIORITY: i64 = 200;
const LS_SCHED_CLASS: i64 = 3;
const BATCH_PRIORITY: i64 = 100;
const BATCH_SCHED_CLASS: i64 = 0;

/// Draw the static residency of every machine. Runs sequentially so task
/// indices are globally consistent; time series come later, per machine in
/// parallel.
fn place_tasks(config: &SynthConfig) -> BTreeMap<MachineId, Vec<PlacedTask>> {
    let n_ls = config.n_ls_jobs();
    let n_batch = config.n_jobs - n_ls;
    let ls_on_machine = ((config.colocation_size as f64 * config.ls_fraction).round() as u64)
        .clamp(1, config.colocation_size - 1);
    let batch_on_machine = config.colocation_size - ls_on_machine;
    let mut next_task_index: BTreeMap<JobId, u64> = BTreeMap::new();
    let mut placements = BTreeMap::new();
    for machine in 1..=config.n_machines {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 0x91AC, machine]));
        let mut jobs: Vec<JobId> = Vec::with_capacity(config.colocation_size as usize);
        // Distinct jobs per machine; twin instances are placed explicitly
        // below, never by accidental double draws.
        let ls_picks =
            rand::seq::index::sample(&mut rng, n_ls as usize, ls_on_machine.min(n_ls) as usize);
        for i in ls_picks.iter() {
            jobs.push(JobId(1 + i as u64));
        }
        let batch_picks = rand::seq::index::sample(
            &mut rng,
            n_batch as usize,
            batch_on_machine.min(n_batch) as usize,
        );
        for i in batch_picks.iter() {
            jobs.push(JobId(n_ls + 1 + i as u64));
        }
        let mut tasks = Vec::with_capacity(jobs.len() * 2);
        for job in jobs {
            let twin = config.twin_rate > 0.0 && rng.gen_bool(config.twin_rate);
            let instances = if twin { 2 } else { 1 };
            let cls = if job.0 <= n_ls {
                WorkloadClass::new(LS_PRIORITY, LS_SCHED_CLASS)
            } else {
                WorkloadClass::new(BATCH_PRIORITY, BATCH_SCHED_CLASS)
            };
            let beta = config.antagonists.get(&job).copied().unwrap_or(0.0);
            for _ in 0..instances {
                let index = next_task_index.entry(job).or_insert(0);
                tasks.push(PlacedTask {
                    task: TaskRef {
                        job,
                        task_index: *index,
                    },
                    cls,
                    beta,
                });
                *index += 1;
            }
        }
        // Canonical output order within every slot.
        tasks.sort_by_key(|t| t.task);
        placements.insert(MachineId(machine), tasks);
    }
    placements
}

/// AR(1)-plus-diurnal usage series for one task over the whole trace.
fn usage_series(config: &SynthConfig, params: &JobParams, task: TaskRef, n_slots: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        config.seed,
        0x05A6,
        task.job.0,
        task.task_index,
    ]));
    let m = &config.usage;
    let stationary_sigma = if m.ar_phi > 0.0 {
        m.ar_sigma / (1.0 - m.ar_phi * m.ar_phi).sqrt()
    } else {
        m.ar_sigma
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ar = normal.sample(&mut rng) * stationary_sigma;
    let spd = config.slots_per_day() as f64;
    let mut series = Vec::with_capacity(n_slots as usize);
    for slot in 0..n_slots {
        if slot > 0 {
            ar = m.ar_phi * ar + normal.sample(&mut rng) * m.ar_sigma;
        }
        let diurnal =
            1.0 + m.diurnal_amp * (TAU * (slot as f64 % spd) / spd + params.diurnal_phase).sin();
        series.push((params.usage_mean * diurnal + ar).max(0.0));
    }
    series
}

fn machine_records(
    config: &SynthConfig,
    machine: MachineId,
    tasks: &[PlacedTask],
    n_slots: u64,
) -> Vec<TraceRecord> {
    let params: Vec<JobParams> = tasks
        .iter()
        .map(|t| job_params(config, t.task.job))
        .collect();
    let usages: Vec<Vec<f64>> = tasks
        .iter()
        .zip(&params)
        .map(|(t, p)| usage_series(config, p, t.task, n_slots))
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise_rngs: Vec<Option<ChaCha8Rng>> = tasks
        .iter()
        .map(|t| {
            t.cls.is_latency_sensitive().then(|| {
                ChaCha8Rng::seed_from_u64(derive_seed(&[
                    config.seed,
                    0x4015,
                    t.task.job.0,
                    t.task.task_index,
                ]))
            })
        })
        .collect();
    let mut records = Vec::with_capacity(tasks.len() * n_slots as usize);
    for slot in 0..n_slots {
        let interference: f64 = tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.beta > 0.0)
            .map(|(i, t)| t.beta * usages[i][slot as usize])
            .sum();
        for (i, task) in tasks.iter().enumerate() {
            let cpi_sample = noise_rngs[i].as_mut().map(|rng| {
                let eps = normal.sample(rng) * config.noise_sigma;
                let cpi =
                    params[i].base_cpi * (1.0 + config.interference_scale * interference) + eps;
                cpi.max(config.cpi_floor)
            });
            records.push(TraceRecord {
                machine,
                slot: SlotTime(slot),
                task: task.task,
                cls: task.cls,
                cpu_usage: usages[i][slot as usize],
                cpi_sample,
            });
        }
    }
    records
}

/// Generate the full trace and its planted ground truth.
///
/// Deterministic given the seed: every job, task, machine, and noise stream
/// draws from its own derived substream, so the output is identical across
/// runs and thread counts. Records come out in canonical
/// (machine, slot, job, task) order. Only LS tasks carry CPI samples,
/// mirroring samplers that cover important tasks only.
pub fn generate(config: &SynthConfig) -> Result<(Vec<TraceRecord>, GroundTruth), SynthError> {
    config.validate()?;
    let n_slots = config.n_slots();
    let placements = place_tasks(config);
    let per_machine: Vec<Vec<TraceRecord>> = placements
        .par_iter()
        .map(|(&machine, tasks)| machine_records(config, machine, tasks, n_slots))
        .collect();
    let mut records = Vec::with_capacity(per_machine.iter().map(Vec::len).sum());
    for chunk in per_machine {
        records.extend(chunk);
    }
    let truth = GroundTruth {
        antagonists: config.antagonists.clone(),
        machine_tasks: placements
            .into_iter()
            .map(|(m, tasks)| (m, tasks.into_iter().map(|t| t.task).collect()))
            .collect(),
        n_slots,
    };
    Ok((records, truth))
}

/// Which measured ratio a calibration run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationTarget {
    /// std of twin-pair CPI differences over std of random-pair differences.
    TwinRatio,
    /// std of same-machine (colocated) pair differences over random pairs.
    ColocatedRatio,
}

/// Probe-trace day count used while bisecting; the ratios are
/// time-stationary, so short probes estimate the full-trace ratio well.
const CALIBRATION_PROBE_DAYS: u32 = 2;
const CALIBRATION_TOLERANCE: f64 = 0.015;

fn measure_ratio(config: &SynthConfig, target: CalibrationTarget) -> Result<f64, SynthError> {
    let mut probe = config.clone();
    probe.n_days = config.n_days.min(CALIBRATION_PROBE_DAYS);
    let (records, _) = generate(&probe)?;
    let report = eval::twin_noise_analysis(&records, config.seed, 1000, 0).map_err(|e| {
        SynthError::InvalidConfig(format!("config produces no measurable twin pairs: {e}"))
    })?;
    let ratio = match target {
        CalibrationTarget::TwinRatio => Some(report.twin_ratio),
        CalibrationTarget::ColocatedRatio => report.colocated_ratio,
    };
    ratio.ok_or_else(|| {
        SynthError::InvalidConfig("config produces no measurable colocated pairs".into())
    })
}

/// Bisect `noise_sigma` until the measured ratio is within tolerance of
/// `target_ratio`.
///
/// The ratio grows monotonically from (near) zero at zero noise toward 1 as
/// noise drowns the interference signal, so a bracket [0, hi] with
/// ratio(hi) >= target always brackets the answer when one exists.
pub fn calibrate_noise(
    config: &SynthConfig,
    target_ratio: f64,
    target: CalibrationTarget,
) -> Result<SynthConfig, SynthError> {
    config.validate()?;
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(SynthError::InvalidConfig(format!(
            "target ratio must be in (0,1), got {target_ratio}"
        )));
    }
    let at = |sigma: f64| -> Result<f64, SynthError> {
        let mut c = config.clone();
        c.noise_sigma = sigma;
        measure_ratio(&c, target)
    };
    let mut lo = 0.0;
    let lo_ratio = at(lo)?;
    if lo_ratio >= target_ratio {
        return Err(SynthError::Unreachable {
            target: target_ratio,
            lo,
            hi: lo,
            measured_lo: lo_ratio,
            measured_hi: lo_ratio,
        });
    }
    let mut hi = 0.1;
    let mut hi_ratio = at(hi)?;
    while hi_ratio < target_ratio {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(SynthError::Unreachable {
                target: target_ratio,
                lo,
                hi,
                measured_lo: lo_ratio,
                measured_hi: hi_ratio,
            });
        }
        hi_ratio = at(hi)?;
    }
    let mut best = (hi, hi_ratio);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let ratio = at(mid)?;
        if (ratio - target_ratio).abs() < (best.1 - target_ratio).abs() {
            best = (mid, ratio);
        }
        if (ratio - target_ratio).abs() <= CALIBRATION_TOLERANCE {
            break;
        }
        if ratio < target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut calibrated = config.clone();
    calibrated.noise_sigma = best.0;
    Ok(calibrated)
}

pub const TRUTH_HEADER: &str = "job_id,beta";

/// Persist planted antagonists as CSV (`job_id,beta`).
pub fn write_truth_file(path: &Path, truth: &GroundTruth) -> Result<(), SynthError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{TRUTH_HEADER}")?;
    for (job, beta) in &truth.antagonists {
        writeln!(out, "{},{:.17e}", job.0, beta)?;
    }
    out.flush()?;
    Ok(())
}

/// Read back a planted-antagonist file into a job -> beta map.
pub fn read_truth_file(path: &Path) -> Result<BTreeMap<JobId, f64>, SynthError> {
    let reader = BufReader::new(File::open(path)?);
    let mut antagonists = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if idx == 0 {
            if line != TRUTH_HEADER {
                return Err(SynthError::InvalidConfig(format!(
                    "truth file: expected header {TRUTH_HEADER:?}"
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (job, beta) = line.split_once(',').ok_or_else(|| {
            SynthError::InvalidConfig(format!("truth file line {}: expected 2 columns", idx + 1))
        })?;
        let job: u64 = job.parse().map_err(|_| {
            SynthError::InvalidConfig(format!("truth file line {}: bad job id", idx + 1))
        })?;
        let beta: f64 = beta.parse().map_err(|_| {
            SynthError::InvalidConfig(format!("truth file line {}: bad beta", idx + 1))
        })?;
        antagonists.insert(JobId(job), beta);
    }
    Ok(antagonists)
}
