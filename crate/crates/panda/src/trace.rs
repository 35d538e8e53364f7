//! Trace data model and file formats.
//!
//! A trace is a stream of [`TraceRecord`]s, one per (machine, time slot,
//! task), carrying the task's average CPU usage over the slot and, when the
//! sampler covered it, a CPI sample. Records are read from CSV or JSONL and
//! grouped by (machine, slot) before any analysis.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque job identifier, stable across the whole trace. Nonzero.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Opaque machine identifier. Nonzero.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct MachineId(pub u64);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index of a fixed-width time window. The width is a pipeline constant
/// (default 300 s); records carry slot indices, not raw timestamps, so
/// grouping is exact.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct SlotTime(pub u64);

impl fmt::Display for SlotTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl SlotTime {
    /// 1-based day index of this slot given the number of slots per day.
    pub fn day(self, slots_per_day: u64) -> u32 {
        (self.0 / slots_per_day) as u32 + 1
    }
}

/// One task instance: the `task_index`-th task of `job`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct TaskRef {
    pub job: JobId,
    pub task_index: u64,
}

impl TaskRef {
    pub fn new(job: u64, task_index: u64) -> Self {
        Self {
            job: JobId(job),
            task_index,
        }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.job, self.task_index)
    }
}

/// Workload kind derived from priority and scheduling class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkloadKind {
    LatencySensitive,
    Batch,
}

/// Scheduling attributes of a task. The latency-sensitive/batch split is
/// derived, never stored: LS iff priority >= 120 and scheduling class >= 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkloadClass {
    pub priority: i64,
    pub scheduling_class: i64,
}

impl WorkloadClass {
    pub fn new(priority: i64, scheduling_class: i64) -> Self {
        Self {
            priority,
            scheduling_class,
        }
    }

    pub fn kind(&self) -> WorkloadKind {
        classify(self.priority, self.scheduling_class)
    }

    pub fn is_latency_sensitive(&self) -> bool {
        self.kind() == WorkloadKind::LatencySensitive
    }
}

/// LS iff priority >= 120 and scheduling class >= 2; batch otherwise.
pub fn classify(priority: i64, scheduling_class: i64) -> WorkloadKind {
    if priority >= 120 && scheduling_class >= 2 {
        WorkloadKind::LatencySensitive
    } else {
        WorkloadKind::Batch
    }
}

/// One (machine, slot, task) usage row.
///
/// `cpu_usage` is the task's average CPU usage over the slot (nonnegative,
/// units left to the trace producer). `cpi_sample` is present only for tasks
/// the sampler covered; absence is modeled as `None`, never a sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub machine: MachineId,
    pub slot: SlotTime,
    pub task: TaskRef,
    pub cls: WorkloadClass,
    pub cpu_usage: f64,
    pub cpi_sample: Option<f64>,
}

impl TraceRecord {
    fn validate(&self) -> Result<(), String> {
        if self.machine.0 == 0 {
            return Err("machine_id must be nonzero".into());
        }
        if self.task.job.0 == 0 {
            return Err("job_id must be nonzero".into());
        }
        if !self.cpu_usage.is_finite() || self.cpu_usage < 0.0 {
            return Err(format!("cpu_usage must be finite and >= 0, got {}", self.cpu_usage));
        }
        if let Some(cpi) = self.cpi_sample {
            if !cpi.is_finite() || cpi <= 0.0 {
                return Err(format!("cpi_sample must be finite and > 0, got {cpi}"));
            }
        }
        Ok(())
    }
}

/// All colocated records of one (machine, slot) key.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSlotGroup {
    pub machine: MachineId,
    pub slot: SlotTime,
    pub records: Vec<TraceRecord>,
}

/// Trace file encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

impl TraceFormat {
    /// Infer the format from a file extension (`.csv` or `.jsonl`).
    pub fn from_path(path: &Path) -> Result<Self, TraceError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(TraceFormat::Csv),
            Some("jsonl") => Ok(TraceFormat::Jsonl),
            other => Err(TraceError::UnknownFormat(
                other.unwrap_or("<none>").to_string(),
            )),
        }
    }
}

impl std::str::FromStr for TraceFormat {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "jsonl" => Ok(TraceFormat::Jsonl),
            other => Err(TraceError::UnknownFormat(other.to_string())),
        }
    }
}

pub const CSV_HEADER: &str =
    "machine_id,slot,job_id,task_index,priority,scheduling_class,cpu_usage,cpi_sample";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown trace format: {0} (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("duplicate task {task} on machine {machine} slot {slot}")]
    DuplicateTaskInSlot {
        machine: MachineId,
        slot: SlotTime,
        task: TaskRef,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Wire form shared by the JSONL encoding and the CSV column order.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    machine_id: u64,
    slot: u64,
    job_id: u64,
    task_index: u64,
    priority: i64,
    scheduling_class: i64,
    cpu_usage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cpi_sample: Option<f64>,
}

impl From<&TraceRecord> for RawRecord {
    fn from(r: &TraceRecord) -> Self {
        RawRecord {
            machine_id: r.machine.0,
            slot: r.slot.0,
            job_id: r.task.job.0,
            task_index: r.task.task_index,
            priority: r.cls.priority,
            scheduling_class: r.cls.scheduling_class,
            cpu_usage: r.cpu_usage,
            cpi_sample: r.cpi_sample,
        }
    }
}

impl RawRecord {
    fn into_record(self) -> TraceRecord {
        TraceRecord {
            machine: MachineId(self.machine_id),
            slot: SlotTime(self.slot),
            task: TaskRef {
                job: JobId(self.job_id),
                task_index: self.task_index,
            },
            cls: WorkloadClass::new(self.priority, self.scheduling_class),
            cpu_usage: self.cpu_usage,
            cpi_sample: self.cpi_sample,
        }
    }
}

/// Streaming trace reader; yields records in file order and reports malformed
/// rows with their line number instead of dropping them.
pub struct TraceReader<R: BufRead> {
    input: R,
    format: TraceFormat,
    line_no: usize,
    header_seen: bool,
    buf: String,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path, format: TraceFormat) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        Ok(TraceReader::new(BufReader::new(file), format))
    }

    /// Open a trace file, inferring the format from the extension.
    pub fn open_auto(path: &Path) -> Result<Self, TraceError> {
        let format = TraceFormat::from_path(path)?;
        Self::open(path, format)
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R, format: TraceFormat) -> Self {
        Self {
            input,
            format,
            line_no: 0,
            header_seen: false,
            buf: String::new(),
        }
    }

    fn malformed(&self, reason: impl Into<String>) -> TraceError {
        TraceError::MalformedRow {
            line: self.line_no,
            reason: reason.into(),
        }
    }

    fn parse_csv_line(&self, line: &str) -> Result<TraceRecord, TraceError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(self.malformed(format!("expected 8 columns, got {}", fields.len())));
        }
        fn num<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, String> {
            field
                .trim()
                .parse::<T>()
                .map_err(|_| format!("invalid {name}: {field:?}"))
        }
        let cpi_field = fields[7].trim();
        let raw = RawRecord {
            machine_id: num(fields[0], "machine_id").map_err(|e| self.malformed(e))?,
            slot: num(fields[1], "slot").map_err(|e| self.malformed(e))?,
            job_id: num(fields[2], "job_id").map_err(|e| self.malformed(e))?,
            task_index: num(fields[3], "task_index").map_err(|e| self.malformed(e))?,
            priority: num(fields[4], "priority").map_err(|e| self.malformed(e))?,
            scheduling_class: num(fields[5], "scheduling_class").map_err(|e| self.malformed(e))?,
            cpu_usage: num(fields[6], "cpu_usage").map_err(|e| self.malformed(e))?,
            cpi_sample: if cpi_field.is_empty() {
                None
            } else {
                Some(num(cpi_field, "cpi_sample").map_err(|e| self.malformed(e))?)
            },
        };
        let record = raw.into_record();
        record.validate().map_err(|e| self.malformed(e))?;
        Ok(record)
    }

    fn parse_jsonl_line(&self, line: &str) -> Result<TraceRecord, TraceError> {
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| self.malformed(e.to_string()))?;
        let record = raw.into_record();
        record.validate().map_err(|e| self.malformed(e))?;
        Ok(record)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            if self.format == TraceFormat::Csv && !self.header_seen {
                self.header_seen = true;
                if line != CSV_HEADER {
                    return Some(Err(self.malformed(format!(
                        "missing or wrong header row (expected {CSV_HEADER:?})"
                    ))));
                }
                continue;
            }
            return Some(match self.format {
                TraceFormat::Csv => self.parse_csv_line(line),
                TraceFormat::Jsonl => self.parse_jsonl_line(line),
            });
        }
    }
}

/// Read a whole trace file into memory, failing on the first malformed row.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    TraceReader::open_auto(path)?.collect()
}

fn write_csv_record<W: Write>(out: &mut W, r: &TraceRecord) -> io::Result<()> {
    write!(
        out,
        "{},{},{},{},{},{},{}",
        r.machine.0, r.slot.0, r.task.job.0, r.task.task_index, r.cls.priority,
        r.cls.scheduling_class, r.cpu_usage
    )?;
    match r.cpi_sample {
        Some(cpi) => writeln!(out, ",{cpi}"),
        None => writeln!(out, ","),
    }
}

/// Serialize records to `out`. Floats use the shortest decimal that
/// round-trips, so `parse . serialize` is the identity on well-formed
/// streams in both formats.
pub fn write_trace<'a, W: Write>(
    out: &mut W,
    format: TraceFormat,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<(), TraceError> {
    match format {
        TraceFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in records {
                write_csv_record(out, r)?;
            }
        }
        TraceFormat::Jsonl => {
            for r in records {
                let raw = RawRecord::from(r);
                serde_json::to_writer(&mut *out, &raw)
                    .map_err(|e| io::Error::new(io::ErrorKind::Other, e))?;
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

/// Write a trace file, format inferred from the extension.
pub fn write_trace_file<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<(), TraceError> {
    let format = TraceFormat::from_path(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    write_trace(&mut out, format, records)?;
    out.flush()?;
    Ok(())
}

/// Sort records by (machine, slot) and split into colocation groups.
///
/// The sort is stable, so records keep file order within a group. The same
/// (job, task_index) appearing twice in one group is a hard error: silently
/// merging duplicates would corrupt usage-weighted sums downstream.
pub fn sort_and_group(
    records: impl IntoIterator<Item = TraceRecord>,
) -> Result<Vec<MachineSlotGroup>, TraceError> {
    let mut records: Vec<TraceRecord> = records.into_iter().collect();
    records.sort_by_key(|r| (r.machine, r.slot));
    let mut groups: Vec<MachineSlotGroup> = Vec::new();
    for record in records {
        match groups.last_mut() {
            Some(g) if g.machine == record.machine && g.slot == record.slot => {
                g.records.push(record)
            }
            _ => groups.push(MachineSlotGroup {
                machine: record.machine,
                slot: record.slot,
                records: vec![record],
            }),
        }
    }
    for g in &groups {
        let mut tasks: Vec<TaskRef> = g.records.iter().map(|r| r.task).collect();
        tasks.sort_unstable();
        for pair in tasks.windows(2) {
            if pair[0] == pair[1] {
                return Err(TraceError::DuplicateTaskInSlot {
                    machine: g.machine,
                    slot: g.slot,
                    task: pair[0],
                });
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(machine: u64, slot: u64, job: u64, task: u64) -> TraceRecord {
        TraceRecord {
            machine: MachineId(machine),
            slot: SlotTime(slot),
            task: TaskRef::new(job, task),
            cls: WorkloadClass::new(200, 3),
            cpu_usage: 0.25,
            cpi_sample: Some(1.8),
        }
    }

    #[test]
    fn parses_csv_row() {
        let input = format!("{CSV_HEADER}\n3,17,42,0,200,3,0.25,1.8\n");
        let records: Vec<_> = TraceReader::new(input.as_bytes(), TraceFormat::Csv)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(records, vec![record(3, 17, 42, 0)]);
    }

    #[test]
    fn empty_cpi_column_is_absent() {
        let input = format!("{CSV_HEADER}\n3,17,42,0,200,3,0.25,\n");
        let records: Vec<_> = TraceReader::new(input.as_bytes(), TraceFormat::Csv)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(records[0].cpi_sample, None);
    }

    #[test]
    fn negative_usage_is_malformed() {
        let input = format!("{CSV_HEADER}\n3,17,42,0,200,3,-0.1,1.8\n");
        let err = TraceReader::new(input.as_bytes(), TraceFormat::Csv)
            .collect::<Result<Vec<_>, _>>()
            .unwrap_err();
        match err {
            TraceError::MalformedRow { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let input = "3,17,42,0,200,3,0.25,1.8\n";
        assert!(TraceReader::new(input.as_bytes(), TraceFormat::Csv)
            .collect::<Result<Vec<_>, _>>()
            .is_err());
    }

    #[test]
    fn jsonl_round_trips_missing_cpi() {
        let input = r#"{"machine_id":3,"slot":17,"job_id":42,"task_index":0,"priority":200,"scheduling_class":3,"cpu_usage":0.25}"#;
        let records: Vec<_> = TraceReader::new(input.as_bytes(), TraceFormat::Jsonl)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(records[0].cpi_sample, None);
    }

    #[test]
    fn classify_boundary() {
        assert_eq!(classify(120, 2), WorkloadKind::LatencySensitive);
        assert_eq!(classify(119, 3), WorkloadKind::Batch);
        assert_eq!(classify(400, 0), WorkloadKind::Batch);
    }

    #[test]
    fn groups_by_machine_slot() {
        let records = vec![
            record(1, 0, 10, 0),
            record(1, 0, 11, 0),
            record(1, 0, 12, 0),
            record(1, 1, 10, 0),
            record(1, 1, 11, 0),
        ];
        let groups = sort_and_group(records).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].records.len(), 3);
        assert_eq!(groups[1].records.len(), 2);
    }

    #[test]
    fn empty_stream_gives_empty_groups() {
        assert!(sort_and_group(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn interleaved_machines_sort_ascending() {
        // Oracle: naive in-memory sort of the (machine, slot) keys.
        let records = vec![
            record(2, 0, 10, 0),
            record(1, 1, 10, 0),
            record(1, 0, 10, 0),
        ];
        let mut expected: Vec<(u64, u64)> = records
            .iter()
            .map(|r| (r.machine.0, r.slot.0))
            .collect();
        expected.sort_unstable();
        let groups = sort_and_group(records).unwrap();
        let keys: Vec<(u64, u64)> = groups.iter().map(|g| (g.machine.0, g.slot.0)).collect();
        assert_eq!(keys, expected);
        assert_eq!(keys, vec![(1, 0), (1, 1), (2, 0)]);
    }

    #[test]
    fn duplicate_task_in_slot_is_error() {
        let records = vec![record(1, 0, 10, 0), record(1, 0, 10, 0)];
        assert!(matches!(
            sort_and_group(records),
            Err(TraceError::DuplicateTaskInSlot { .. })
        ));
    }

    #[test]
    fn twin_tasks_are_legal() {
        let records = vec![record(1, 0, 10, 0), record(1, 0, 10, 1)];
        let groups = sort_and_group(records).unwrap();
        assert_eq!(groups[0].records.len(), 2);
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        (
            1u64..20,
            0u64..50,
            1u64..30,
            0u64..4,
            -500i64..500,
            -1i64..5,
            0.0f64..4.0,
            proptest::option::of(0.001f64..100.0),
        )
            .prop_map(|(m, t, j, k, pr, sc, cpu, cpi)| TraceRecord {
                machine: MachineId(m),
                slot: SlotTime(t),
                task: TaskRef::new(j, k),
                cls: WorkloadClass::new(pr, sc),
                cpu_usage: cpu,
                cpi_sample: cpi,
            })
    }

    proptest! {
        #[test]
        fn round_trip_identity(records in proptest::collection::vec(arb_record(), 0..40)) {
            for format in [TraceFormat::Csv, TraceFormat::Jsonl] {
                let mut buf = Vec::new();
                write_trace(&mut buf, format, records.iter()).unwrap();
                let back: Vec<TraceRecord> = TraceReader::new(buf.as_slice(), format)
                    .collect::<Result<_, _>>()
                    .unwrap();
                prop_assert_eq!(&back, &records);
            }
        }

        #[test]
        fn classify_is_monotone(pr in -500i64..500, sc in -5i64..10, dp in 0i64..100, ds in 0i64..5) {
            let base = classify(pr, sc);
            let raised = classify(pr + dp, sc + ds);
            // Raising either attribute never flips LS -> Batch.
            if base == WorkloadKind::LatencySensitive {
                prop_assert_eq!(raised, WorkloadKind::LatencySensitive);
            }
        }

        #[test]
        fn grouping_preserves_multiset(records in proptest::collection::vec(arb_record(), 0..60)) {
            // Dedup (machine, slot, task) keys first so grouping succeeds.
            let mut seen = std::collections::HashSet::new();
            let records: Vec<TraceRecord> = records
                .into_iter()
                .filter(|r| seen.insert((r.machine, r.slot, r.task)))
                .collect();
            let groups = sort_and_group(records.clone()).unwrap();
            let mut flattened: Vec<TraceRecord> =
                groups.into_iter().flat_map(|g| g.records).collect();
            let mut original = records;
            let key = |r: &TraceRecord| (r.machine, r.slot, r.task);
            flattened.sort_by_key(key);
            original.sort_by_key(key);
            prop_assert_eq!(flattened, original);
        }
    }
}
