//! Evaluation metrics and report files: percentile ranks of true
//! antagonists, multi-victim consistency rates, and twin-task noise
//! statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detector::{IdentificationResult, Method};
use crate::synth::derive_seed;
use crate::trace::{JobId, MachineId, SlotTime, TaskRef, TraceRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no planted antagonist among the candidates")]
    NoTruthPresent,
    #[error("single-candidate event: percentile undefined for n = 1")]
    SingleCandidate,
    #[error("no multi-victim events")]
    NoMultiVictimEvents,
    #[error("trace contains no usable twin-task pairs")]
    NoTwins,
    #[error("report has no methods")]
    EmptyReport,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Identifies the machine-slot an identification result belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventKey {
    pub machine: MachineId,
    pub slot: SlotTime,
}

/// Position of one true antagonist in one method's scored list.
///
/// `rank` is 1-based; when the antagonist job has several colocated tasks,
/// the best-ranked one counts. `percentile = (n - rank) / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileRank {
    pub machine: MachineId,
    pub slot: SlotTime,
    pub method: Method,
    pub antagonist: JobId,
    pub rank: usize,
    pub n: usize,
    pub percentile: f64,
}

/// The rank-to-percentile conversion. Caller guarantees 1 <= rank <= n and
/// n >= 2.
pub fn percentile_from_rank(rank: usize, n: usize) -> f64 {
    debug_assert!(n >= 2 && (1..=n).contains(&rank));
    (n - rank) as f64 / (n - 1) as f64
}

/// One [`PercentileRank`] per true antagonist present among the candidates.
///
/// Events whose candidate list holds no planted antagonist are excluded
/// (`NoTruthPresent`), as are single-candidate events where the percentile
/// is undefined (`SingleCandidate`); the caller counts both exclusions.
pub fn percentile_of(
    key: EventKey,
    result: &IdentificationResult,
    truth: &BTreeMap<JobId, f64>,
) -> Result<Vec<PercentileRank>, EvalError> {
    let n = result.scored.len();
    let mut best_rank: BTreeMap<JobId, usize> = BTreeMap::new();
    for (idx, candidate) in result.scored.iter().enumerate() {
        if truth.contains_key(&candidate.task.job) {
            best_rank.entry(candidate.task.job).or_insert(idx + 1);
        }
    }
    if best_rank.is_empty() {
        return Err(EvalError::NoTruthPresent);
    }
    if n < 2 {
        return Err(EvalError::SingleCandidate);
    }
    Ok(best_rank
        .into_iter()
        .map(|(antagonist, rank)| PercentileRank {
            machine: key.machine,
            slot: key.slot,
            method: result.method,
            antagonist,
            rank,
            n,
            percentile: percentile_from_rank(rank, n),
        })
        .collect())
}

/// Pairwise agreement counts over multi-victim events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConsistencyStats {
    pub multi_victim_events: usize,
    pub pairs: usize,
    pub agreements: usize,
}

impl ConsistencyStats {
    pub fn rate(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.agreements as f64 / self.pairs as f64)
    }
}

/// Fraction of unordered victim pairs that accuse the same job, over all
/// groups with at least two victims.
///
/// Each group is the per-victim accused job (at job granularity: two tasks
/// of one job count as agreement) for one (machine, slot, method). Pairs
/// where either victim produced no accusation are skipped.
pub fn consistency_rate(
    groups: impl IntoIterator<Item = Vec<Option<JobId>>>,
) -> Result<ConsistencyStats, EvalError> {
    let mut stats = ConsistencyStats::default();
    for group in groups {
        if group.len() < 2 {
            continue;
        }
        stats.multi_victim_events += 1;
        for i in 0..group.len() {
            for j in (i + 1)..group.len() {
                if let (Some(a), Some(b)) = (group[i], group[j]) {
                    stats.pairs += 1;
                    if a == b {
                        stats.agreements += 1;
                    }
                }
            }
        }
    }
    if stats.multi_victim_events == 0 {
        return Err(EvalError::NoMultiVictimEvents);
    }
    Ok(stats)
}

/// Fraction of victim-bearing entries with two or more victims. `None` when
/// no entry has a victim.
pub fn multi_victim_share(victim_counts: impl IntoIterator<Item = usize>) -> Option<f64> {
    let mut bearing = 0usize;
    let mut multi = 0usize;
    for count in victim_counts {
        if count >= 1 {
            bearing += 1;
            if count >= 2 {
                multi += 1;
            }
        }
    }
    (bearing > 0).then(|| multi as f64 / bearing as f64)
}

pub const HIST_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub density_twin: f64,
    pub density_random: f64,
}

/// Per-job PDF of absolute CPI differences, twin pairs vs random pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JobHistogram {
    pub job: JobId,
    pub bins: Vec<HistBin>,
}

/// Twin-task noise statistics over one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinNoiseReport {
    /// Mean over jobs of std(|twin CPI diff|) / std(|random-pair CPI diff|).
    /// Twins share machine, slot, and neighbors, so this isolates
    /// measurement noise.
    pub twin_ratio: f64,
    /// Same ratio for colocated pairs: distinct same-job tasks on the same
    /// machine at different slots. They share neighbors but not the moment,
    /// so this isolates the machine-local interference signature. `None`
    /// when no job has enough such pairs.
    pub colocated_ratio: Option<f64>,
    pub jobs_in_twin_ratio: usize,
    pub jobs_in_colocated_ratio: usize,
    pub histograms: Vec<JobHistogram>,
}

#[derive(Debug, Clone, Copy)]
struct CpiSample {
    machine: MachineId,
    slot: SlotTime,
    task: TaskRef,
    cpi: f64,
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Minimum differences of a kind before a job enters a ratio average.
const MIN_DIFFS: usize = 8;

/// Sampled |CPI difference| pairs of one job.
struct JobDiffs {
    job: JobId,
    twin: Vec<f64>,
    colocated: Vec<f64>,
    random: Vec<f64>,
}

fn sample_job_diffs(
    job: JobId,
    samples: &[CpiSample],
    rng_seed: u64,
    pairs_per_job: usize,
) -> JobDiffs {
    let mut twin = Vec::new();
    // Twin pairs: same (machine, slot), distinct tasks. Samples arrive in
    // canonical order, so slot groups are contiguous per machine.
    let mut by_key: BTreeMap<(MachineId, SlotTime), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_key.entry((s.machine, s.slot)).or_default().push(i);
    }
    for group in by_key.values() {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                twin.push((samples[i].cpi - samples[j].cpi).abs());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[rng_seed, 0x7719, job.0]));
    let n = samples.len();
    let mut random = Vec::with_capacity(pairs_per_job);
    let mut colocated = Vec::new();
    if n >= 2 {
        // Random pairs: different machines and different slots.
        let mut attempts = 0;
        while random.len() < pairs_per_job && attempts < pairs_per_job * 20 {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let (a, b) = (&samples[i], &samples[j]);
            if a.machine != b.machine && a.slot != b.slot {
                random.push((a.cpi - b.cpi).abs());
            }
        }
        // Colocated pairs: same machine, distinct tasks, different slots.
        let mut attempts = 0;
        while colocated.len() < pairs_per_job && attempts < pairs_per_job * 20 {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let (a, b) = (&samples[i], &samples[j]);
            if a.machine == b.machine && a.task != b.task && a.slot != b.slot {
                colocated.push((a.cpi - b.cpi).abs());
            }
        }
    }
    JobDiffs {
        job,
        twin,
        colocated,
        random,
    }
}

fn histogram_for(diffs: &JobDiffs) -> JobHistogram {
    let max = diffs
        .twin
        .iter()
        .chain(&diffs.random)
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let width = max / HIST_BINS as f64;
    let mut twin_counts = vec![0usize; HIST_BINS];
    let mut random_counts = vec![0usize; HIST_BINS];
    let bin_of = |v: f64| -> usize { ((v / width) as usize).min(HIST_BINS - 1) };
    for &v in &diffs.twin {
        twin_counts[bin_of(v)] += 1;
    }
    for &v in &diffs.random {
        random_counts[bin_of(v)] += 1;
    }
    let twin_n = diffs.twin.len().max(1) as f64;
    let random_n = diffs.random.len().max(1) as f64;
    JobHistogram {
        job: diffs.job,
        bins: (0..HIST_BINS)
            .map(|b| HistBin {
                left: b as f64 * width,
                right: (b + 1) as f64 * width,
                density_twin: twin_counts[b] as f64 / (twin_n * width),
                density_random: random_counts[b] as f64 / (random_n * width),
            })
            .collect(),
    }
}

/// Twin-task noise analysis.
///
/// For every job hosting twin tasks, compares the spread of CPI differences
/// between twins against random same-job pairs on different machines and
/// slots (and against colocated pairs on the same machine). Random pairs are
/// sampled (`pairs_per_job` per job, seeded); `hist_jobs` selects how many
/// jobs (most twin occurrences first) get difference histograms.
pub fn twin_noise_analysis(
    records: &[TraceRecord],
    rng_seed: u64,
    pairs_per_job: usize,
    hist_jobs: usize,
) -> Result<TwinNoiseReport, EvalError> {
    let mut per_job: BTreeMap<JobId, Vec<CpiSample>> = BTreeMap::new();
    for r in records {
        if let Some(cpi) = r.cpi_sample {
            per_job.entry(r.task.job).or_default().push(CpiSample {
                machine: r.machine,
                slot: r.slot,
                task: r.task,
                cpi,
            });
        }
    }
    let mut twin_ratios = Vec::new();
    let mut colocated_ratios = Vec::new();
    let mut diffs_by_job = Vec::new();
    for (&job, samples) in &per_job {
        let diffs = sample_job_diffs(job, samples, rng_seed, pairs_per_job);
        if diffs.twin.len() >= MIN_DIFFS && diffs.random.len() >= MIN_DIFFS {
            let std_random = population_std(&diffs.random);
            if std_random > 0.0 {
                twin_ratios.push(population_std(&diffs.twin) / std_random);
                if diffs.colocated.len() >= MIN_DIFFS {
                    colocated_ratios.push(population_std(&diffs.colocated) / std_random);
                }
                diffs_by_job.push(diffs);
            }
        }
    }
    if twin_ratios.is_empty() {
        return Err(EvalError::NoTwins);
    }
    diffs_by_job.sort_by_key(|d| (std::cmp::Reverse(d.twin.len()), d.job));
    let histograms = diffs_by_job
        .iter()
        .take(hist_jobs)
        .map(histogram_for)
        .collect();
    Ok(TwinNoiseReport {
        twin_ratio: twin_ratios.iter().sum::<f64>() / twin_ratios.len() as f64,
        colocated_ratio: (!colocated_ratios.is_empty())
            .then(|| colocated_ratios.iter().sum::<f64>() / colocated_ratios.len() as f64),
        jobs_in_twin_ratio: twin_ratios.len(),
        jobs_in_colocated_ratio: colocated_ratios.len(),
        histograms,
    })
}

/// Aggregated evaluation of one method.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodReport {
    pub result_lines: usize,
    pub rank_count: usize,
    pub mean_percentile: Option<f64>,
    pub excluded_no_truth: usize,
    pub excluded_single_candidate: usize,
    pub consistency: Option<ConsistencyStats>,
}

/// The full comparison report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_method: BTreeMap<Method, MethodReport>,
    pub events: usize,
    pub victim_bearing_slots: usize,
    pub multi_victim_share: Option<f64>,
    pub twin_ratio: Option<f64>,
    pub colocated_ratio: Option<f64>,
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.3}"),
        None => "-".to_string(),
    }
}

/// Render the report into `out_dir`: `summary.txt` (aligned table, also the
/// text returned), `percentiles.csv`, `consistency.csv`, `twin_hist.csv`.
/// Rerunning on the same inputs writes byte-identical files.
pub fn emit_report(
    report: &EvalReport,
    percentiles: &[PercentileRank],
    histograms: &[JobHistogram],
    out_dir: &Path,
) -> Result<String, EvalError> {
    if report.per_method.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    std::fs::create_dir_all(out_dir)?;

    let mut summary = String::new();
    summary.push_str("Antagonist identification evaluation\n");
    summary.push_str("====================================\n\n");
    summary.push_str(&format!("events evaluated: {}\n\n", report.events));
    summary.push_str(&format!(
        "{:<12} {:>16} {:>7} {:>12} {:>7}\n",
        "method", "mean percentile", "ranks", "consistency", "pairs"
    ));
    for (method, m) in &report.per_method {
        let consistency = m.consistency.as_ref().and_then(|c| c.rate());
        let pairs = m.consistency.map(|c| c.pairs).unwrap_or(0);
        summary.push_str(&format!(
            "{:<12} {:>16} {:>7} {:>12} {:>7}\n",
            method.as_str(),
            fmt_opt(m.mean_percentile),
            m.rank_count,
            fmt_opt(consistency),
            pairs
        ));
    }
    summary.push('\n');
    if let Some(share) = report.multi_victim_share {
        summary.push_str(&format!(
            "multi-victim share: {:.3} (over {} victim-bearing machine-slots)\n",
            share, report.victim_bearing_slots
        ));
    }
    if let Some(ratio) = report.twin_ratio {
        summary.push_str(&format!(
            "twin/random CPI-difference std ratio: {:.3} (colocated/random: {})\n",
            ratio,
            fmt_opt(report.colocated_ratio)
        ));
    }
    let excluded_truth: usize = report.per_method.values().map(|m| m.excluded_no_truth).sum();
    let excluded_single: usize = report
        .per_method
        .values()
        .map(|m| m.excluded_single_candidate)
        .sum();
    summary.push_str(&format!(
        "excluded result lines: {excluded_truth} without a planted antagonist among candidates, {excluded_single} with a single candidate\n"
    ));

    std::fs::write(out_dir.join("summary.txt"), &summary)?;

    let mut sorted: Vec<&PercentileRank> = percentiles.iter().collect();
    sorted.sort_by_key(|p| (p.machine, p.slot, p.method, p.antagonist));
    let mut out = BufWriter::new(File::create(out_dir.join("percentiles.csv"))?);
    writeln!(out, "machine,slot,method,antagonist_job,rank,n,percentile")?;
    for p in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.17e}",
            p.machine.0, p.slot.0, p.method, p.antagonist.0, p.rank, p.n, p.percentile
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(out_dir.join("consistency.csv"))?);
    writeln!(out, "method,multi_victim_events,pairs,agreements,rate")?;
    for (method, m) in &report.per_method {
        let c = m.consistency.unwrap_or_default();
        let rate = c
            .rate()
            .map(|r| format!("{r:.17e}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            method, c.multi_victim_events, c.pairs, c.agreements, rate
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(out_dir.join("twin_hist.csv"))?);
    writeln!(out, "job_id,bin_left,bin_right,density_twin,density_random")?;
    for h in histograms {
        for b in &h.bins {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                h.job.0, b.left, b.right, b.density_twin, b.density_random
            )?;
        }
    }
    out.flush()?;

    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ScoredCandidate;
    use crate::trace::{SlotTime, WorkloadClass};
    use approx::assert_relative_eq;

    fn result_with_jobs(jobs: &[u64]) -> IdentificationResult {
        let scored: Vec<ScoredCandidate> = jobs
            .iter()
            .enumerate()
            .map(|(i, &job)| ScoredCandidate {
                task: TaskRef::new(job, 0),
                score: 10.0 - i as f64,
                cpu_usage: 0.1,
            })
            .collect();
        IdentificationResult {
            method: Method::Panda,
            scored,
            accused: Some(TaskRef::new(jobs[0], 0)),
        }
    }

    fn key() -> EventKey {
        EventKey {
            machine: MachineId(1),
            slot: SlotTime(10),
        }
    }

    #[test]
    fn percentile_boundaries() {
        let jobs: Vec<u64> = (1..=30).collect();
        let truth = BTreeMap::from([(JobId(1), 2.0)]);
        let ranks = percentile_of(key(), &result_with_jobs(&jobs), &truth).unwrap();
        assert_eq!(ranks.len(), 1);
        assert_relative_eq!(ranks[0].percentile, 1.0);

        let truth = BTreeMap::from([(JobId(30), 2.0)]);
        let ranks = percentile_of(key(), &result_with_jobs(&jobs), &truth).unwrap();
        assert_relative_eq!(ranks[0].percentile, 0.0);

        let truth = BTreeMap::from([(JobId(2), 2.0)]);
        let ranks = percentile_of(key(), &result_with_jobs(&jobs), &truth).unwrap();
        assert_relative_eq!(ranks[0].percentile, 28.0 / 29.0, max_relative = 1e-15);
    }

    #[test]
    fn percentile_formula_exhaustive() {
        for n in 2..=200usize {
            for r in 1..=n {
                let p = percentile_from_rank(r, n);
                assert_relative_eq!(p, (n - r) as f64 / (n - 1) as f64);
            }
            assert_relative_eq!(percentile_from_rank(1, n), 1.0);
            assert_relative_eq!(percentile_from_rank(n, n), 0.0);
        }
    }

    #[test]
    fn percentile_exclusions() {
        let truth = BTreeMap::from([(JobId(99), 2.0)]);
        assert!(matches!(
            percentile_of(key(), &result_with_jobs(&[1, 2, 3]), &truth),
            Err(EvalError::NoTruthPresent)
        ));
        let truth = BTreeMap::from([(JobId(1), 2.0)]);
        assert!(matches!(
            percentile_of(key(), &result_with_jobs(&[1]), &truth),
            Err(EvalError::SingleCandidate)
        ));
    }

    #[test]
    fn twin_task_rank_uses_best_task() {
        let scored = vec![
            ScoredCandidate {
                task: TaskRef::new(5, 0),
                score: 3.0,
                cpu_usage: 0.1,
            },
            ScoredCandidate {
                task: TaskRef::new(7, 0),
                score: 2.0,
                cpu_usage: 0.1,
            },
            ScoredCandidate {
                task: TaskRef::new(5, 1),
                score: 1.0,
                cpu_usage: 0.1,
            },
        ];
        let result = IdentificationResult {
            method: Method::Panda,
            scored,
            accused: Some(TaskRef::new(5, 0)),
        };
        let truth = BTreeMap::from([(JobId(5), 2.0)]);
        let ranks = percentile_of(key(), &result, &truth).unwrap();
        assert_eq!(ranks[0].rank, 1);
    }

    #[test]
    fn consistency_examples() {
        // Two victims accusing A and B: the pair contributes 0.
        let stats = consistency_rate(vec![vec![Some(JobId(1)), Some(JobId(2))]]).unwrap();
        assert_eq!((stats.pairs, stats.agreements), (1, 0));

        // Three victims all accusing A: 3 pairs, rate 1.
        let stats =
            consistency_rate(vec![vec![Some(JobId(1)), Some(JobId(1)), Some(JobId(1))]]).unwrap();
        assert_eq!((stats.pairs, stats.agreements), (3, 3));
        assert_relative_eq!(stats.rate().unwrap(), 1.0);

        // Single-victim groups alone: no multi-victim events.
        assert!(matches!(
            consistency_rate(vec![vec![Some(JobId(1))]]),
            Err(EvalError::NoMultiVictimEvents)
        ));
    }

    #[test]
    fn multi_victim_share_counts() {
        assert_relative_eq!(multi_victim_share(vec![1, 2, 1]).unwrap(), 1.0 / 3.0);
        assert_relative_eq!(multi_victim_share(vec![1, 1, 1]).unwrap(), 0.0);
        assert_relative_eq!(multi_victim_share(vec![2, 3, 4]).unwrap(), 1.0);
        assert_eq!(multi_victim_share(vec![0, 0]), None);
    }

    fn cpi_record(machine: u64, slot: u64, job: u64, task: u64, cpi: f64) -> TraceRecord {
        TraceRecord {
            machine: MachineId(machine),
            slot: SlotTime(slot),
            task: TaskRef::new(job, task),
            cls: WorkloadClass::new(200, 3),
            cpu_usage: 0.2,
            cpi_sample: Some(cpi),
        }
    }

    #[test]
    fn identical_twins_give_near_zero_ratio() {
        // Twins with identical CPI on every slot; random pairs vary across
        // machines.
        let mut records = Vec::new();
        for machine in 1..=4u64 {
            for slot in 0..40u64 {
                let cpi = 1.0 + machine as f64 * 0.3 + (slot % 5) as f64 * 0.05;
                records.push(cpi_record(machine, slot, 1, machine * 2, cpi));
                records.push(cpi_record(machine, slot, 1, machine * 2 + 1, cpi));
            }
        }
        let report = twin_noise_analysis(&records, 9, 500, 2).unwrap();
        assert!(report.twin_ratio < 0.05, "twin ratio {}", report.twin_ratio);
        assert_eq!(report.histograms.len(), 1);
        assert_eq!(report.jobs_in_twin_ratio, 1);
    }

    #[test]
    fn twin_analysis_is_deterministic() {
        let mut records = Vec::new();
        for machine in 1..=3u64 {
            for slot in 0..30u64 {
                let base = 1.0 + ((machine * 7 + slot) % 13) as f64 * 0.11;
                records.push(cpi_record(machine, slot, 1, machine * 2, base));
                records.push(cpi_record(machine, slot, 1, machine * 2 + 1, base + 0.02));
            }
        }
        let a = twin_noise_analysis(&records, 42, 300, 1).unwrap();
        let b = twin_noise_analysis(&records, 42, 300, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_twins_is_an_error() {
        let records = vec![
            cpi_record(1, 0, 1, 0, 1.0),
            cpi_record(2, 0, 1, 1, 1.1),
            cpi_record(1, 1, 2, 0, 0.9),
        ];
        assert!(matches!(
            twin_noise_analysis(&records, 1, 100, 0),
            Err(EvalError::NoTwins)
        ));
    }

    #[test]
    fn report_rendering_is_deterministic_and_needs_methods() {
        let dir = tempfile::tempdir().unwrap();
        let empty = EvalReport::default();
        assert!(matches!(
            emit_report(&empty, &[], &[], dir.path()),
            Err(EvalError::EmptyReport)
        ));

        let mut report = EvalReport::default();
        report.events = 3;
        report.per_method.insert(
            Method::Panda,
            MethodReport {
                result_lines: 3,
                rank_count: 3,
                mean_percentile: Some(0.9),
                consistency: Some(ConsistencyStats {
                    multi_victim_events: 1,
                    pairs: 1,
                    agreements: 1,
                }),
                ..Default::default()
            },
        );
        let ranks = vec![PercentileRank {
            machine: MachineId(1),
            slot: SlotTime(5),
            method: Method::Panda,
            antagonist: JobId(7),
            rank: 1,
            n: 10,
            percentile: 1.0,
        }];
        let first = emit_report(&report, &ranks, &[], dir.path()).unwrap();
        let summary_a = std::fs::read(dir.path().join("summary.txt")).unwrap();
        let percentiles_a = std::fs::read(dir.path().join("percentiles.csv")).unwrap();
        let second = emit_report(&report, &ranks, &[], dir.path()).unwrap();
        assert_eq!(first, second);
        assert_eq!(summary_a, std::fs::read(dir.path().join("summary.txt")).unwrap());
        assert_eq!(
            percentiles_a,
            std::fs::read(dir.path().join("percentiles.csv")).unwrap()
        );
        assert!(first.contains("PANDA"));
    }
}
