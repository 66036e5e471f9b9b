//! Experiment configuration and its content hash.

use std::fmt;
use std::path::{Path, PathBuf};

use frontlab_core::estimators::{BurnIn, SpeedMethod};
use frontlab_core::girsanov::WeightMode;
use frontlab_core::{NonlinearitySpec, SimParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DeterministicKpp,
    VoterMass,
    StationaryCf,
    ScalingLimit,
    SpeedVsSigma,
    GirsanovCheck,
    FrameCheck,
    /// Tail of the largest right-edge excursion of the voter interface.
    EdgeTail,
    /// Raw trajectories with per-replica logs.
    Simulate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::DeterministicKpp => "deterministic_kpp",
            ExperimentKind::VoterMass => "voter_mass",
            ExperimentKind::StationaryCf => "stationary_cf",
            ExperimentKind::ScalingLimit => "scaling_limit",
            ExperimentKind::SpeedVsSigma => "speed_vs_sigma",
            ExperimentKind::GirsanovCheck => "girsanov_check",
            ExperimentKind::FrameCheck => "frame_check",
            ExperimentKind::EdgeTail => "edge_tail",
            ExperimentKind::Simulate => "simulate",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Experiment-specific knobs. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Fraction of `t_max` dropped before speed fits.
    pub burn_frac: f64,
    pub speed_method: SpeedMethod,
    /// Noise strengths for `speed_vs_sigma`; each runs in the rescaled frame.
    pub sigmas: Vec<f64>,
    /// Time between log records in speed runs; 0 picks 0.1 below `t_max = 200` and 1 above.
    pub speed_log_interval: f64,
    /// Averaging window for `voter_mass`.
    pub mass_window: (f64, f64),
    pub burn_in: BurnIn,
    pub sample_interval: f64,
    pub etas: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub a_values: Vec<f64>,
    pub scaling_burn_in: f64,
    /// Horizons for `girsanov_check`.
    pub times: Vec<f64>,
    /// Threshold `r` in `P(R(v_t) > r)`.
    pub threshold: f64,
    pub weight_mode: WeightMode,
    /// Write one CSV log per replica.
    pub raw_logs: bool,
    /// Run the voter equation and observe `f` instead of driving with it.
    pub voter: bool,
    /// Levels `b` at which `edge_tail` reports `P(sup |R(w_t) - R(w_0)| > b)`.
    pub tail_levels: Vec<f64>,
    /// Stop `simulate` here and write resumable checkpoints.
    pub stop_at: Option<f64>,
    /// Times at which `simulate` records profiles.
    pub snapshot_times: Vec<f64>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            burn_frac: 0.25,
            speed_method: SpeedMethod::MartingaleCompensated,
            sigmas: vec![1.5, 2.0, 3.0],
            speed_log_interval: 0.0,
            mass_window: (20.0, 60.0),
            burn_in: BurnIn::default(),
            sample_interval: 1.0,
            etas: vec![0.6, 0.8, 1.0],
            quantiles: vec![0.5, 0.9, 0.99],
            a_values: vec![4.0, 6.0, 8.0],
            scaling_burn_in: 500.0,
            times: vec![1.0, 2.0, 5.0],
            threshold: 1.0,
            weight_mode: WeightMode::Full,
            raw_logs: false,
            voter: false,
            tail_levels: vec![8.0, 12.0, 16.0],
            stop_at: None,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub nonlinearity: NonlinearitySpec,
    pub params: SimParams,
    pub replicas: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub options: Options,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.params.validate()?;
        if self.replicas == 0 {
            return Err(CliError::Config("replicas must be at least 1".into()));
        }
        let o = &self.options;
        if !(0.0..1.0).contains(&o.burn_frac) {
            return Err(CliError::Config(format!("burn_frac must lie in [0, 1), got {}", o.burn_frac)));
        }
        if o.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CliError::Config("sigmas must be positive".into()));
        }
        if !(o.mass_window.0 >= 0.0 && o.mass_window.0 < o.mass_window.1) {
            return Err(CliError::Config(format!("mass window {:?} is empty", o.mass_window)));
        }
        if o.times.iter().any(|t| !(*t > 0.0)) {
            return Err(CliError::Config("girsanov times must be positive".into()));
        }
        if o.a_values.iter().any(|a| !(*a > 0.0)) {
            return Err(CliError::Config("a values must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` left out so the
    /// hash depends only on what is computed.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        // serde_json maps are ordered by key, so this text is canonical
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.experiment, &self.config_hash()[..12])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use frontlab_core::Frame;

    pub(crate) fn sample() -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::StationaryCf,
            nonlinearity: NonlinearitySpec::power(0.8).unwrap(),
            params: SimParams::new(Frame::Rescaled { epsilon: 0.0625 }, 0.1, 0.004, 100.0).unwrap(),
            replicas: 3,
            seed: 17,
            output_dir: "out".into(),
            options: Options::default(),
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = sample();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = sample();
        let mut b = sample();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 18;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let text = sample().to_json().replace("\"replicas\": 3", "\"replicas\": 0");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))));
        let text = sample().to_json().replace("\"seed\"", "\"sead\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
        assert!(ExperimentConfig::from_json("{").is_err());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"{"experiment":"voter_mass","nonlinearity":{"kind":"zero","gamma":1.0,"k_tilde":1.0},
            "params":{"frame":"original","sigma":1.0,"dt":0.004,"dx":0.1,"t_max":60.0},
            "replicas":1,"seed":5,"output_dir":"o"}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.options, Options::default());
        assert_eq!(c.params.window, 400.0);
    }
}
