//! Antagonist coefficients: incrementally updatable least-squares
//! accumulators with daily snapshots.
//!
//! For each job, the coefficient is the least-squares slope through the
//! origin of the model `mncpi = a * usage`, fitted over every (task,
//! machine-slot) pair where the job ran and the slot had a defined mnCPI.
//! The accumulator keeps only the two sums behind that slope, so partial
//! accumulators from disjoint trace partitions merge exactly, and the
//! per-(job, machine) variant used by the single-machine ranking falls out
//! of the same machinery.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::preprocess::MachineSlotProfile;
use crate::trace::{JobId, MachineId};

/// Running sums behind the slope-through-origin estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AntagonistAccumulator {
    /// Sum of usage * mncpi terms (the slope numerator).
    pub sum_u_mncpi: f64,
    /// Sum of squared usage terms (the slope denominator).
    pub sum_u_sq: f64,
    /// Number of contributing observations.
    pub n_obs: u64,
}

impl AntagonistAccumulator {
    /// Add one (usage, mncpi) observation.
    ///
    /// Zero-usage observations are skipped entirely, including the count:
    /// they contribute 0 to both sums and would only dilute the `min_obs`
    /// gate.
    pub fn observe(&mut self, usage: f64, mncpi: f64) {
        debug_assert!(usage >= 0.0 && usage.is_finite());
        debug_assert!(mncpi.is_finite());
        if usage == 0.0 {
            return;
        }
        self.sum_u_mncpi += usage * mncpi;
        self.sum_u_sq += usage * usage;
        self.n_obs += 1;
    }

    /// Field-wise sum; associative and commutative with `default()` as
    /// identity.
    pub fn merge(&mut self, other: &AntagonistAccumulator) {
        self.sum_u_mncpi += other.sum_u_mncpi;
        self.sum_u_sq += other.sum_u_sq;
        self.n_obs += other.n_obs;
    }

    /// The slope, published only once at least `min_obs` observations back
    /// it. Jobs below the floor fall back to "no coefficient" and score 0 at
    /// identification time.
    pub fn coefficient(&self, min_obs: u64) -> Option<f64> {
        if self.n_obs >= min_obs && self.sum_u_sq > 0.0 {
            Some(self.sum_u_mncpi / self.sum_u_sq)
        } else {
            None
        }
    }
}

/// Immutable per-day dump of all accumulators.
///
/// `global` backs the cross-machine ranking; `local` keys the same
/// observations by (machine, job) for the single-machine variant. Summing a
/// job's local accumulators over machines reproduces its global accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientSnapshot {
    pub as_of_day: u32,
    pub global: BTreeMap<JobId, AntagonistAccumulator>,
    pub local: BTreeMap<(MachineId, JobId), AntagonistAccumulator>,
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("snapshot day {upto_day} is not after previous snapshot day {prev_day}")]
    OutOfOrderDay { prev_day: u32, upto_day: u32 },
}

impl CoefficientSnapshot {
    pub fn global_coefficient(&self, job: JobId, min_obs: u64) -> Option<f64> {
        self.global.get(&job).and_then(|a| a.coefficient(min_obs))
    }

    pub fn local_coefficient(&self, job: JobId, machine: MachineId, min_obs: u64) -> Option<f64> {
        self.local
            .get(&(machine, job))
            .and_then(|a| a.coefficient(min_obs))
    }
}

/// Fold machine-slot profiles for days in `(prev.as_of_day, upto_day]` into
/// a new snapshot.
///
/// Every colocated task of a profile with a defined mnCPI contributes one
/// observation to its job's global accumulator and to its (machine, job)
/// local accumulator; profiles outside the day window or without mnCPI are
/// ignored. `prev = None` means cold start (window starts at day 1).
pub fn build_snapshot(
    profiles: impl IntoIterator<Item = MachineSlotProfile>,
    slots_per_day: u64,
    upto_day: u32,
    prev: Option<&CoefficientSnapshot>,
) -> Result<CoefficientSnapshot, ScoringError> {
    let prev_day = prev.map(|s| s.as_of_day).unwrap_or(0);
    if upto_day <= prev_day {
        return Err(ScoringError::OutOfOrderDay { prev_day, upto_day });
    }
    let mut snapshot = prev.cloned().unwrap_or_default();
    snapshot.as_of_day = upto_day;
    for profile in profiles {
        let day = profile.slot.day(slots_per_day);
        if day <= prev_day || day > upto_day {
            continue;
        }
        let Some(mncpi) = profile.mncpi else { continue };
        for colocated in &profile.colocated {
            if colocated.cpu_usage == 0.0 {
                continue;
            }
            snapshot
                .global
                .entry(colocated.task.job)
                .or_default()
                .observe(colocated.cpu_usage, mncpi);
            snapshot
                .local
                .entry((profile.machine, colocated.task.job))
                .or_default()
                .observe(colocated.cpu_usage, mncpi);
        }
    }
    Ok(snapshot)
}

pub const SNAPSHOT_HEADER: &str = "scope,job_id,sum_u_mncpi,sum_u_sq,n_obs,as_of_day";

#[derive(Debug, Error)]
pub enum SnapshotFileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("snapshot file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Persist a snapshot as CSV: global rows first (scope = "global"), then
/// local rows (scope = machine id), each sorted by key. Floats carry 18
/// significant digits so the file round-trips bit-exactly.
pub fn write_snapshot_file(
    path: &Path,
    snapshot: &CoefficientSnapshot,
) -> Result<(), SnapshotFileError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{SNAPSHOT_HEADER}")?;
    for (job, acc) in &snapshot.global {
        writeln!(
            out,
            "global,{},{:.17e},{:.17e},{},{}",
            job.0, acc.sum_u_mncpi, acc.sum_u_sq, acc.n_obs, snapshot.as_of_day
        )?;
    }
    for ((machine, job), acc) in &snapshot.local {
        writeln!(
            out,
            "{},{},{:.17e},{:.17e},{},{}",
            machine.0, job.0, acc.sum_u_mncpi, acc.sum_u_sq, acc.n_obs, snapshot.as_of_day
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot_file(path: &Path) -> Result<CoefficientSnapshot, SnapshotFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut snapshot = CoefficientSnapshot::default();
    let mut saw_day = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        let malformed = |reason: String| SnapshotFileError::Malformed {
            line: idx + 1,
            reason,
        };
        if idx == 0 {
            if line != SNAPSHOT_HEADER {
                return Err(malformed(format!("expected header {SNAPSHOT_HEADER:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(malformed(format!("expected 6 columns, got {}", fields.len())));
        }
        let job = JobId(
            fields[1]
                .parse()
                .map_err(|_| malformed(format!("invalid job_id {:?}", fields[1])))?,
        );
        let acc = AntagonistAccumulator {
            sum_u_mncpi: fields[2]
                .parse()
                .map_err(|_| malformed(format!("invalid sum_u_mncpi {:?}", fields[2])))?,
            sum_u_sq: fields[3]
                .parse()
                .map_err(|_| malformed(format!("invalid sum_u_sq {:?}", fields[3])))?,
            n_obs: fields[4]
                .parse()
                .map_err(|_| malformed(format!("invalid n_obs {:?}", fields[4])))?,
        };
        let as_of_day: u32 = fields[5]
            .parse()
            .map_err(|_| malformed(format!("invalid as_of_day {:?}", fields[5])))?;
        if saw_day && as_of_day != snapshot.as_of_day {
            return Err(malformed("inconsistent as_of_day across rows".into()));
        }
        snapshot.as_of_day = as_of_day;
        saw_day = true;
        if fields[0] == "global" {
            snapshot.global.insert(job, acc);
        } else {
            let machine = MachineId(
                fields[0]
                    .parse()
                    .map_err(|_| malformed(format!("invalid scope {:?}", fields[0])))?,
            );
            snapshot.local.insert((machine, job), acc);
        }
    }
    Ok(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::ColocatedTask;
    use crate::trace::{SlotTime, TaskRef, WorkloadClass};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn observe_accumulates_terms() {
        let mut acc = AntagonistAccumulator::default();
        acc.observe(1.0, 2.0);
        assert_eq!(
            acc,
            AntagonistAccumulator {
                sum_u_mncpi: 2.0,
                sum_u_sq: 1.0,
                n_obs: 1
            }
        );
        acc.observe(0.5, 1.0);
        assert_relative_eq!(acc.sum_u_mncpi, 2.5);
        assert_relative_eq!(acc.sum_u_sq, 1.25);
        assert_eq!(acc.n_obs, 2);
    }

    #[test]
    fn zero_usage_is_skipped_entirely() {
        let mut acc = AntagonistAccumulator::default();
        acc.observe(1.0, 2.0);
        let before = acc;
        acc.observe(0.0, 7.0);
        assert_eq!(acc, before);
    }

    #[test]
    fn merge_is_fieldwise_with_identity() {
        let a = AntagonistAccumulator {
            sum_u_mncpi: 2.0,
            sum_u_sq: 1.0,
            n_obs: 1,
        };
        let b = AntagonistAccumulator {
            sum_u_mncpi: 3.0,
            sum_u_sq: 4.0,
            n_obs: 2,
        };
        let mut merged = a;
        merged.merge(&b);
        assert_eq!(
            merged,
            AntagonistAccumulator {
                sum_u_mncpi: 5.0,
                sum_u_sq: 5.0,
                n_obs: 3
            }
        );
        let mut with_identity = a;
        with_identity.merge(&AntagonistAccumulator::default());
        assert_eq!(with_identity, a);
    }

    #[test]
    fn coefficient_is_least_squares_slope() {
        // Points (0.5, 1.0), (1.0, 3.0): slope through origin = 3.5 / 1.25.
        let acc = AntagonistAccumulator {
            sum_u_mncpi: 3.5,
            sum_u_sq: 1.25,
            n_obs: 2,
        };
        assert_relative_eq!(acc.coefficient(1).unwrap(), 2.8, max_relative = 1e-15);
        assert_eq!(AntagonistAccumulator::default().coefficient(0), None);
    }

    #[test]
    fn planted_slope_is_recovered_exactly() {
        let mut acc = AntagonistAccumulator::default();
        for i in 1..=9 {
            let u = i as f64 / 10.0;
            acc.observe(u, 2.0 * u);
        }
        assert_relative_eq!(acc.coefficient(1).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn coefficient_below_min_obs_is_absent() {
        let mut acc = AntagonistAccumulator::default();
        acc.observe(1.0, 1.0);
        assert!(acc.coefficient(2).is_none());
        acc.observe(1.0, 1.0);
        assert!(acc.coefficient(2).is_some());
    }

    fn profile(machine: u64, slot: u64, mncpi: Option<f64>, tasks: &[(u64, u64, f64)]) -> MachineSlotProfile {
        MachineSlotProfile {
            machine: MachineId(machine),
            slot: SlotTime(slot),
            mncpi,
            ls_sample_count: u64::from(mncpi.is_some()),
            colocated: tasks
                .iter()
                .map(|&(job, task, usage)| ColocatedTask {
                    task: TaskRef::new(job, task),
                    cls: WorkloadClass::new(100, 0),
                    cpu_usage: usage,
                })
                .collect(),
        }
    }

    #[test]
    fn build_snapshot_cold_start() {
        let profiles = vec![profile(1, 0, Some(2.0), &[(9, 0, 0.5)])];
        let snap = build_snapshot(profiles, 288, 1, None).unwrap();
        let acc = snap.global[&JobId(9)];
        assert_relative_eq!(acc.sum_u_mncpi, 1.0);
        assert_relative_eq!(acc.sum_u_sq, 0.25);
        assert_eq!(acc.n_obs, 1);
        assert_eq!(snap.local[&(MachineId(1), JobId(9))], acc);
        assert_eq!(snap.as_of_day, 1);
    }

    #[test]
    fn undefined_mncpi_changes_nothing() {
        let profiles = vec![profile(1, 0, None, &[(9, 0, 0.5)])];
        let snap = build_snapshot(profiles, 288, 1, None).unwrap();
        assert!(snap.global.is_empty());
        assert!(snap.local.is_empty());
    }

    #[test]
    fn out_of_order_day_is_rejected() {
        let prev = CoefficientSnapshot {
            as_of_day: 3,
            ..Default::default()
        };
        assert!(matches!(
            build_snapshot(Vec::new(), 288, 3, Some(&prev)),
            Err(ScoringError::OutOfOrderDay { .. })
        ));
    }

    fn synthetic_profiles(n_days: u32) -> Vec<MachineSlotProfile> {
        let mut profiles = Vec::new();
        for day in 0..n_days as u64 {
            for slot_in_day in 0..4u64 {
                let slot = day * 288 + slot_in_day * 60;
                for machine in 1..=3u64 {
                    let mncpi = ((slot + machine) % 7) as f64 * 0.5 - 1.0;
                    let tasks = [
                        (10, machine, 0.1 + 0.05 * (slot % 5) as f64),
                        (11, machine, 0.3),
                        (12, machine, if slot % 2 == 0 { 0.0 } else { 0.7 }),
                    ];
                    profiles.push(profile(machine, slot, Some(mncpi), &tasks));
                }
            }
        }
        profiles
    }

    #[test]
    fn incremental_build_matches_batch() {
        let profiles = synthetic_profiles(5);
        let batch = build_snapshot(profiles.clone(), 288, 5, None).unwrap();
        let mut incremental: Option<CoefficientSnapshot> = None;
        for day in 1..=5 {
            incremental =
                Some(build_snapshot(profiles.clone(), 288, day, incremental.as_ref()).unwrap());
        }
        let incremental = incremental.unwrap();
        assert_eq!(incremental.as_of_day, batch.as_of_day);
        assert_eq!(incremental.global.len(), batch.global.len());
        for (job, acc) in &batch.global {
            let inc = &incremental.global[job];
            assert_relative_eq!(inc.sum_u_mncpi, acc.sum_u_mncpi, max_relative = 1e-12);
            assert_relative_eq!(inc.sum_u_sq, acc.sum_u_sq, max_relative = 1e-12);
            assert_eq!(inc.n_obs, acc.n_obs);
        }
    }

    #[test]
    fn locals_sum_to_global() {
        let snap = build_snapshot(synthetic_profiles(3), 288, 3, None).unwrap();
        for (job, global) in &snap.global {
            let mut summed = AntagonistAccumulator::default();
            for ((_, j), acc) in &snap.local {
                if j == job {
                    summed.merge(acc);
                }
            }
            assert_relative_eq!(summed.sum_u_mncpi, global.sum_u_mncpi, max_relative = 1e-9);
            assert_relative_eq!(summed.sum_u_sq, global.sum_u_sq, max_relative = 1e-9);
            assert_eq!(summed.n_obs, global.n_obs);
        }
    }

    #[test]
    fn snapshot_file_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snapshot.csv");
        let snap = build_snapshot(synthetic_profiles(2), 288, 2, None).unwrap();
        write_snapshot_file(&path, &snap).unwrap();
        let back = read_snapshot_file(&path).unwrap();
        assert_eq!(back.as_of_day, snap.as_of_day);
        assert_eq!(back.global.len(), snap.global.len());
        assert_eq!(back.local.len(), snap.local.len());
        for (job, acc) in &snap.global {
            let b = &back.global[job];
            assert_eq!(acc.sum_u_mncpi.to_bits(), b.sum_u_mncpi.to_bits());
            assert_eq!(acc.sum_u_sq.to_bits(), b.sum_u_sq.to_bits());
            assert_eq!(acc.n_obs, b.n_obs);
        }
        for (key, acc) in &snap.local {
            let b = &back.local[key];
            assert_eq!(acc.sum_u_mncpi.to_bits(), b.sum_u_mncpi.to_bits());
        }
    }

    // Golden-section search over the sum of squared residuals: an oracle for
    // the slope that never divides the two sums.
    fn sse_minimizer_oracle(points: &[(f64, f64)]) -> f64 {
        let sse = |a: f64| -> f64 {
            points
                .iter()
                .map(|&(u, y)| {
                    let r = y - a * u;
                    r * r
                })
                .sum()
        };
        let (mut lo, mut hi) = (-1e4, 1e4);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if sse(m1) <= sse(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        (lo + hi) / 2.0
    }

    proptest! {
        #[test]
        fn coefficient_matches_sse_minimizer(
            points in proptest::collection::vec((0.01f64..2.0, -5.0f64..5.0), 2..20),
        ) {
            let mut acc = AntagonistAccumulator::default();
            for &(u, y) in &points {
                acc.observe(u, y);
            }
            let slope = acc.coefficient(1).unwrap();
            let oracle = sse_minimizer_oracle(&points);
            prop_assert!(
                (slope - oracle).abs() <= 1e-6 * slope.abs().max(1.0),
                "slope {slope} vs oracle {oracle}"
            );
        }

        #[test]
        fn partitioned_merge_equals_single_pass(
            points in proptest::collection::vec((0.0f64..2.0, -5.0f64..5.0), 1..40),
            split in 0usize..40,
        ) {
            let split = split.min(points.len());
            let mut single = AntagonistAccumulator::default();
            for &(u, y) in &points {
                single.observe(u, y);
            }
            let mut left = AntagonistAccumulator::default();
            let mut right = AntagonistAccumulator::default();
            for &(u, y) in &points[..split] {
                left.observe(u, y);
            }
            for &(u, y) in &points[split..] {
                right.observe(u, y);
            }
            let mut merged = left;
            merged.merge(&right);
            prop_assert!((merged.sum_u_mncpi - single.sum_u_mncpi).abs()
                <= 1e-12 * single.sum_u_mncpi.abs().max(1.0));
            prop_assert!((merged.sum_u_sq - single.sum_u_sq).abs()
                <= 1e-12 * single.sum_u_sq.abs().max(1.0));
            prop_assert_eq!(merged.n_obs, single.n_obs);
        }

        #[test]
        fn coefficient_homogeneity(
            points in proptest::collection::vec((0.01f64..2.0, -5.0f64..5.0), 2..20),
            c in 0.1f64..10.0,
        ) {
            let fit = |pts: &[(f64, f64)]| {
                let mut acc = AntagonistAccumulator::default();
                for &(u, y) in pts {
                    acc.observe(u, y);
                }
                acc.coefficient(1).unwrap()
            };
            let base = fit(&points);
            let scaled_y: Vec<(f64, f64)> = points.iter().map(|&(u, y)| (u, c * y)).collect();
            let scaled_u: Vec<(f64, f64)> = points.iter().map(|&(u, y)| (c * u, y)).collect();
            prop_assert!((fit(&scaled_y) - c * base).abs() <= 1e-9 * (c * base).abs().max(1.0));
            prop_assert!((fit(&scaled_u) - base / c).abs() <= 1e-9 * (base / c).abs().max(1.0));
        }
    }
}
