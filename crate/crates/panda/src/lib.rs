//! Antagonist identification for colocated datacenter workloads.
//!
//! Shared machines in production clusters host dozens of tasks at once, and a
//! task that overconsumes shared hardware (an *antagonist*) degrades the
//! cycles-per-instruction (CPI) of its latency-sensitive neighbors (the
//! *victims*). This crate implements a full trace-analysis pipeline around
//! that problem:
//!
//! - [`trace`]: the trace data model plus CSV/JSONL parsing, serialization,
//!   and machine-slot grouping.
//! - [`preprocess`]: per-job CPI statistics, z-score normalization (nCPI),
//!   and the machine-level mnCPI aggregate.
//! - [`scoring`]: mergeable least-squares accumulators that turn usage/mnCPI
//!   observations into per-job antagonist coefficients, with daily snapshots
//!   (global and per-machine variants).
//! - [`detector`]: victim detection, the percentile trigger, and the
//!   PANDA / PANDA-Local antagonist rankings.
//! - [`baselines`]: the CPI2 and Proctor correlation-based identifiers over
//!   recent-history windows.
//! - [`synth`]: a synthetic cluster-trace generator with planted antagonists,
//!   twin tasks, and calibratable measurement noise.
//! - [`eval`]: percentile ranks of planted antagonists, multi-victim
//!   consistency rates, twin-task noise statistics, and report files.
//! - [`pipeline`]: end-to-end orchestration used by the `panda` binary and
//!   the runnable examples.
//!
//! Start with the examples (`cargo run --example full_comparison`) or the
//! `panda` binary (`panda synth`, `panda offline`, `panda detect`,
//! `panda eval`, `panda noise`).

pub mod baselines;
pub mod config;
pub mod detector;
pub mod eval;
pub mod pipeline;
pub mod preprocess;
pub mod scoring;
pub mod synth;
pub mod trace;

pub use config::{RunConfig, SynthFileConfig};
pub use detector::Method;
pub use trace::{JobId, MachineId, SlotTime, TaskRef, TraceRecord, WorkloadClass, WorkloadKind};
