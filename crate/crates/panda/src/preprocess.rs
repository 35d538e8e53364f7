//! Per-job CPI statistics, z-score normalization, and the machine-level
//! mnCPI aggregate.
//!
//! A raw CPI value is meaningless across jobs: compute-heavy jobs run at a
//! high CPI all the time. Normalization turns each sample into a per-job
//! z-score (nCPI), and aggregation averages the nCPI of the colocated
//! latency-sensitive tasks into one machine-level health metric (mnCPI).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace::{
    JobId, MachineId, MachineSlotGroup, SlotTime, TaskRef, TraceRecord, WorkloadClass,
};

/// Per-job CPI statistics, the normalization basis.
///
/// `std` is the population standard deviation (divide by n): it is defined
/// for n = 1 and the 1/n vs 1/(n-1) difference vanishes at trace scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobCpiStats {
    pub job: JobId,
    pub mean: f64,
    pub std: f64,
    pub n_samples: u64,
}

/// Mergeable (count, sum, sum of squares) fold behind [`JobCpiStats`].
/// Partial accumulators from disjoint trace partitions combine associatively
/// and commutatively.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StatsAccumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl StatsAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn finalize(&self, job: JobId) -> Option<JobCpiStats> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        Some(JobCpiStats {
            job,
            mean,
            std: var.sqrt(),
            n_samples: self.count,
        })
    }
}

/// Mean and population std over all CPI samples of all tasks of each job,
/// across all machines and slots. Jobs without a single CPI sample are
/// simply absent from the map.
pub fn compute_job_stats<'a>(
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> BTreeMap<JobId, JobCpiStats> {
    let mut accs: BTreeMap<JobId, StatsAccumulator> = BTreeMap::new();
    for record in records {
        if let Some(cpi) = record.cpi_sample {
            accs.entry(record.task.job).or_default().push(cpi);
        }
    }
    accs.into_iter()
        .filter_map(|(job, acc)| acc.finalize(job).map(|s| (job, s)))
        .collect()
}

/// One normalized CPI sample: a dimensionless per-job z-score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedSample {
    pub task: TaskRef,
    pub machine: MachineId,
    pub slot: SlotTime,
    pub ncpi: f64,
}

/// nCPI = (cpi - mean) / max(std, epsilon). Returns `None` when the record
/// has no CPI sample. The epsilon clamp keeps constant-CPI jobs finite while
/// preserving "far above mean" semantics.
pub fn normalize(
    record: &TraceRecord,
    stats: &JobCpiStats,
    epsilon: f64,
) -> Option<NormalizedSample> {
    debug_assert_eq!(record.task.job, stats.job);
    let cpi = record.cpi_sample?;
    Some(NormalizedSample {
        task: record.task,
        machine: record.machine,
        slot: record.slot,
        ncpi: (cpi - stats.mean) / stats.std.max(epsilon),
    })
}

/// One colocated task as seen by a machine-slot profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColocatedTask {
    pub task: TaskRef,
    pub cls: WorkloadClass,
    pub cpu_usage: f64,
}

/// Per (machine, slot) view: the mnCPI metric plus every colocated task's
/// CPU usage regardless of class.
///
/// `mncpi` is the arithmetic mean of the nCPI of the contributing set: the
/// colocated latency-sensitive tasks that have a CPI sample in this slot and
/// whose job has usable stats. It is present iff that set is nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSlotProfile {
    pub machine: MachineId,
    pub slot: SlotTime,
    pub mncpi: Option<f64>,
    pub ls_sample_count: u64,
    pub colocated: Vec<ColocatedTask>,
}

/// Aggregate one (machine, slot) group into a [`MachineSlotProfile`].
///
/// Jobs with fewer than `min_cpi_samples` CPI samples are excluded from the
/// contributing set: a z-score against a near-degenerate std is noise, not
/// signal. Their tasks still appear in `colocated`.
pub fn aggregate_machine_slot(
    group: &MachineSlotGroup,
    stats: &BTreeMap<JobId, JobCpiStats>,
    epsilon: f64,
    min_cpi_samples: u64,
) -> MachineSlotProfile {
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut colocated = Vec::with_capacity(group.records.len());
    for record in &group.records {
        colocated.push(ColocatedTask {
            task: record.task,
            cls: record.cls,
            cpu_usage: record.cpu_usage,
        });
        if !record.cls.is_latency_sensitive() {
            continue;
        }
        let Some(job_stats) = stats.get(&record.task.job) else {
            continue;
        };
        if job_stats.n_samples < min_cpi_samples {
            continue;
        }
        if let Some(sample) = normalize(record, job_stats, epsilon) {
            sum += sample.ncpi;
            count += 1;
        }
    }
    MachineSlotProfile {
        machine: group.machine,
        slot: group.slot,
        mncpi: (count > 0).then(|| sum / count as f64),
        ls_sample_count: count,
        colocated,
    }
}

/// Normalized samples of the group's contributing LS tasks, in record order.
/// Uses the same membership gate as [`aggregate_machine_slot`].
pub fn normalized_ls_samples(
    group: &MachineSlotGroup,
    stats: &BTreeMap<JobId, JobCpiStats>,
    epsilon: f64,
    min_cpi_samples: u64,
) -> Vec<NormalizedSample> {
    group
        .records
        .iter()
        .filter(|r| r.cls.is_latency_sensitive())
        .filter_map(|r| {
            let job_stats = stats.get(&r.task.job)?;
            if job_stats.n_samples < min_cpi_samples {
                return None;
            }
            normalize(r, job_stats, epsilon)
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum StatsFileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("stats file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

pub const STATS_HEADER: &str = "job_id,mean,std,n_samples";

/// Persist job stats as CSV. Floats carry 18 significant digits, so reading
/// the file back reproduces every value bit-exactly.
pub fn write_stats_file(
    path: &Path,
    stats: &BTreeMap<JobId, JobCpiStats>,
) -> Result<(), StatsFileError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{STATS_HEADER}")?;
    for (job, s) in stats {
        writeln!(out, "{},{:.17e},{:.17e},{}", job.0, s.mean, s.std, s.n_samples)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_stats_file(path: &Path) -> Result<BTreeMap<JobId, JobCpiStats>, StatsFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut stats = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        let malformed = |reason: String| StatsFileError::Malformed {
            line: idx + 1,
            reason,
        };
        if idx == 0 {
            if line != STATS_HEADER {
                return Err(malformed(format!("expected header {STATS_HEADER:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 columns, got {}", fields.len())));
        }
        let job = JobId(
            fields[0]
                .parse()
                .map_err(|_| malformed(format!("invalid job_id {:?}", fields[0])))?,
        );
        let mean: f64 = fields[1]
            .parse()
            .map_err(|_| malformed(format!("invalid mean {:?}", fields[1])))?;
        let std: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(format!("invalid std {:?}", fields[2])))?;
        let n_samples: u64 = fields[3]
            .parse()
            .map_err(|_| malformed(format!("invalid n_samples {:?}", fields[3])))?;
        stats.insert(
            job,
            JobCpiStats {
                job,
                mean,
                std,
                n_samples,
            },
        );
    }
    Ok(stats)
}
