//! TOML configuration files for the pipeline and the generator.
//!
//! Reproduction packs ship one flat key-value file per experiment instead of
//! long flag lists; every omitted key falls back to the standard setup.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Method;
use crate::synth::{self, CalibrationTarget, SynthConfig, UsageModel};
use crate::trace::JobId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Pipeline thresholds and baseline parameters.
///
/// Defaults: victims at nCPI >= 2, trigger on mnCPI above the machine's 99th
/// percentile for 3 consecutive slots, coefficients published after 10
/// observations, 24-slot (2 h) baseline lookback with 12-slot (1 h)
/// subsamples, 3 victim-CPI categories at chi-square threshold 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub victim_threshold: f64,
    pub p99: f64,
    pub run_length: u32,
    pub min_obs: u64,
    pub epsilon: f64,
    pub min_cpi_samples: u64,
    pub lookback_slots: usize,
    pub subsample_slots: usize,
    pub chi_categories: usize,
    pub chi_threshold: f64,
    pub max_resamples: usize,
    pub slot_width_s: u32,
    pub eval_from_day: u32,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            victim_threshold: 2.0,
            p99: 0.99,
            run_length: 3,
            min_obs: 10,
            epsilon: 1e-9,
            min_cpi_samples: 5,
            lookback_slots: 24,
            subsample_slots: 12,
            chi_categories: 3,
            chi_threshold: 1.0,
            max_resamples: 20,
            slot_width_s: 300,
            eval_from_day: 5,
            methods: Method::ALL.to_vec(),
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn slots_per_day(&self) -> u64 {
        86_400 / self.slot_width_s as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.victim_threshold.is_finite()) {
            return fail("victim_threshold must be finite".into());
        }
        if !(self.p99 > 0.0 && self.p99 <= 1.0) {
            return fail(format!("p99 must be in (0,1], got {}", self.p99));
        }
        if self.run_length == 0 {
            return fail("run_length must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be > 0".into());
        }
        if self.lookback_slots < 2 {
            return fail("lookback_slots must be >= 2".into());
        }
        if self.subsample_slots < 2 || self.subsample_slots > self.lookback_slots {
            return fail("subsample_slots must be in [2, lookback_slots]".into());
        }
        if self.chi_categories < 2 {
            return fail("chi_categories must be >= 2".into());
        }
        if !(self.chi_threshold >= 0.0) {
            return fail("chi_threshold must be >= 0".into());
        }
        if self.slot_width_s == 0 || 86_400 % self.slot_width_s != 0 {
            return fail(format!(
                "slot_width_s must divide 86400, got {}",
                self.slot_width_s
            ));
        }
        if self.eval_from_day == 0 {
            return fail("eval_from_day must be >= 1 (days are 1-based)".into());
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// Flat key-value form of the generator configuration.
///
/// Planted antagonists come either from `n_antagonists`/`beta` (the first
/// `n_antagonists` batch jobs at strength `beta`) or from an explicit
/// `antagonists = ["job:beta", ...]` list. Setting `calibrate_twin_ratio`
/// (or `calibrate_colocated_ratio`) makes generation calibrate `noise_sigma`
/// to the given measured ratio first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFileConfig {
    pub n_machines: u64,
    pub n_jobs: u64,
    pub n_days: u32,
    pub slot_width_s: u32,
    pub ls_fraction: f64,
    pub colocation_size: u64,
    pub n_antagonists: u64,
    pub beta: f64,
    pub antagonists: Vec<String>,
    pub noise_sigma: f64,
    pub twin_rate: f64,
    pub usage_mean_min: f64,
    pub usage_mean_max: f64,
    pub usage_ar_phi: f64,
    pub usage_ar_sigma: f64,
    pub diurnal_amp: f64,
    pub base_cpi_min: f64,
    pub base_cpi_max: f64,
    pub interference_scale: f64,
    pub cpi_floor: f64,
    pub seed: u64,
    pub calibrate_twin_ratio: Option<f64>,
    pub calibrate_colocated_ratio: Option<f64>,
}

impl Default for SynthFileConfig {
    fn default() -> Self {
        let desk = SynthConfig::desk(42);
        SynthFileConfig {
            n_machines: desk.n_machines,
            n_jobs: desk.n_jobs,
            n_days: desk.n_days,
            slot_width_s: desk.slot_width_s,
            ls_fraction: desk.ls_fraction,
            colocation_size: desk.colocation_size,
            n_antagonists: desk.antagonists.len() as u64,
            beta: 2.0,
            antagonists: Vec::new(),
            noise_sigma: desk.noise_sigma,
            twin_rate: desk.twin_rate,
            usage_mean_min: desk.usage.mean_min,
            usage_mean_max: desk.usage.mean_max,
            usage_ar_phi: desk.usage.ar_phi,
            usage_ar_sigma: desk.usage.ar_sigma,
            diurnal_amp: desk.usage.diurnal_amp,
            base_cpi_min: desk.base_cpi_min,
            base_cpi_max: desk.base_cpi_max,
            interference_scale: desk.interference_scale,
            cpi_floor: desk.cpi_floor,
            seed: desk.seed,
            calibrate_twin_ratio: None,
            calibrate_colocated_ratio: None,
        }
    }
}

impl SynthFileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Resolve into a validated generator config plus the requested
    /// calibration, if any.
    pub fn resolve(
        &self,
        seed_override: Option<u64>,
    ) -> Result<(SynthConfig, Option<(f64, CalibrationTarget)>), ConfigError> {
        let n_ls = synth::ls_job_count(self.n_jobs, self.ls_fraction);
        let antagonists: BTreeMap<JobId, f64> = if self.antagonists.is_empty() {
            synth::default_antagonists(n_ls, self.n_jobs, self.n_antagonists, self.beta)
        } else {
            let mut map = BTreeMap::new();
            for entry in &self.antagonists {
                let (job, beta) = entry.split_once(':').ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "antagonist entry {entry:?} must look like \"job:beta\""
                    ))
                })?;
                let job: u64 = job.trim().parse().map_err(|_| {
                    ConfigError::Invalid(format!("antagonist entry {entry:?}: bad job id"))
                })?;
                let beta: f64 = beta.trim().parse().map_err(|_| {
                    ConfigError::Invalid(format!("antagonist entry {entry:?}: bad beta"))
                })?;
                map.insert(JobId(job), beta);
            }
            map
        };
        let config = SynthConfig {
            n_machines: self.n_machines,
            n_jobs: self.n_jobs,
            n_days: self.n_days,
            slot_width_s: self.slot_width_s,
            ls_fraction: self.ls_fraction,
            colocation_size: self.colocation_size,
            antagonists,
            noise_sigma: self.noise_sigma,
            twin_rate: self.twin_rate,
            usage: UsageModel {
                mean_min: self.usage_mean_min,
                mean_max: self.usage_mean_max,
                ar_phi: self.usage_ar_phi,
                ar_sigma: self.usage_ar_sigma,
                diurnal_amp: self.diurnal_amp,
            },
            base_cpi_min: self.base_cpi_min,
            base_cpi_max: self.base_cpi_max,
            interference_scale: self.interference_scale,
            cpi_floor: self.cpi_floor,
            seed: seed_override.unwrap_or(self.seed),
        };
        config
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let calibration = match (self.calibrate_twin_ratio, self.calibrate_colocated_ratio) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "set only one of calibrate_twin_ratio and calibrate_colocated_ratio".into(),
                ))
            }
            (Some(target), None) => Some((target, CalibrationTarget::TwinRatio)),
            (None, Some(target)) => Some((target, CalibrationTarget::ColocatedRatio)),
            (None, None) => None,
        };
        Ok((config, calibration))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_defaults_match_standard_setup() {
        let config = RunConfig::default();
        assert_eq!(config.victim_threshold, 2.0);
        assert_eq!(config.p99, 0.99);
        assert_eq!(config.run_length, 3);
        assert_eq!(config.min_obs, 10);
        assert_eq!(config.epsilon, 1e-9);
        assert_eq!(config.min_cpi_samples, 5);
        assert_eq!(config.lookback_slots, 24);
        assert_eq!(config.subsample_slots, 12);
        assert_eq!(config.chi_categories, 3);
        assert_eq!(config.chi_threshold, 1.0);
        assert_eq!(config.max_resamples, 20);
        assert_eq!(config.slots_per_day(), 288);
        assert_eq!(config.methods.len(), 4);
        config.validate().unwrap();
    }

    #[test]
    fn run_config_parses_partial_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "victim_threshold = 2.5\nmethods = [\"PANDA\", \"CPI2\"]\n")
            .unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.victim_threshold, 2.5);
        assert_eq!(config.methods, vec![Method::Panda, Method::Cpi2]);
        assert_eq!(config.run_length, 3);
    }

    #[test]
    fn run_config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "victim_treshold = 2.5\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
        std::fs::write(&path, "p99 = 1.5\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn synth_config_resolves_antagonist_list() {
        let file = SynthFileConfig {
            antagonists: vec!["150:2.5".into(), "160:1.0".into()],
            ..Default::default()
        };
        let (config, calibration) = file.resolve(None).unwrap();
        assert_eq!(config.antagonists[&JobId(150)], 2.5);
        assert_eq!(config.antagonists[&JobId(160)], 1.0);
        assert!(calibration.is_none());
    }

    #[test]
    fn synth_config_default_antagonists_are_batch_jobs() {
        let file = SynthFileConfig::default();
        let (config, _) = file.resolve(Some(7)).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.antagonists.len(), 10);
        assert!(config.antagonists.keys().all(|&j| !config.is_ls_job(j)));
    }

    #[test]
    fn calibration_keys_are_exclusive() {
        let file = SynthFileConfig {
            calibrate_twin_ratio: Some(0.59),
            calibrate_colocated_ratio: Some(0.7),
            ..Default::default()
        };
        assert!(file.resolve(None).is_err());

        let file = SynthFileConfig {
            calibrate_twin_ratio: Some(0.59),
            ..Default::default()
        };
        let (_, calibration) = file.resolve(None).unwrap();
        assert_eq!(calibration, Some((0.59, CalibrationTarget::TwinRatio)));
    }
}
