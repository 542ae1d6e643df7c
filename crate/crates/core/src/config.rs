//! Run configuration: one TOML file with named sections mirroring the
//! parameter groups of the library modules. Every unspecified field takes
//! its documented default; the fully resolved config is echoed into the
//! output directory and hashed into every artifact header.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::SimParams;
use crate::fitness::EvalParams;
use crate::genome::{GaParams, Limits};
use crate::stimuli::StimulusParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: `{field}` {message}")]
    Invalid { field: &'static str, message: String },
    #[error("config parse error: {0}")]
    Parse(#[from] Box<toml::de::Error>),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

/// Orchestration knobs that belong to a whole run rather than any single
/// trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Independent evolution trials, each with its own derived seed.
    pub trials: usize,
    /// Evaluation worker threads; 0 picks the runtime default.
    pub workers: usize,
    /// Checkpoint cadence in generations.
    pub checkpoint_every: usize,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { trials: 1, workers: 0, checkpoint_every: 25, out_dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub limits: Limits,
    pub ga: GaParams,
    pub sim: SimParams,
    pub stimulus: StimulusParams,
    pub eval: EvalParams,
    pub run: RunSection,
}

impl RunConfig {
    /// Reduced profile for fast experiments and acceptance checks.
    pub fn desk_scale() -> RunConfig {
        RunConfig {
            ga: GaParams {
                population_size: 50,
                generations: 50,
                ..GaParams::default()
            },
            run: RunSection { trials: 20, ..RunSection::default() },
            ..RunConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(Box::new)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved config text,
    /// with result-irrelevant plumbing (output directory, worker count)
    /// normalized out so identical experiments hash identically.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.run.out_dir = String::new();
        normalized.run.workers = 0;
        let digest = Sha256::digest(normalized.to_toml_string().as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.limits;
        if l.photoreceptor_cells < 2 {
            return Err(invalid("limits.photoreceptor_cells", "must be at least 2"));
        }
        if l.rgc_cells < 1 {
            return Err(invalid("limits.rgc_cells", "must be at least 1"));
        }

        let ga = &self.ga;
        if ga.population_size < 4 {
            return Err(invalid(
                "ga.population_size",
                format!("must be at least 4 for tournament selection, got {}", ga.population_size),
            ));
        }
        if ga.elite_count < 1 || ga.elite_count >= ga.population_size {
            return Err(invalid(
                "ga.elite_count",
                format!(
                    "must be in [1, population_size), got {} with population_size {}",
                    ga.elite_count, ga.population_size
                ),
            ));
        }
        if ga.generations < 1 {
            return Err(invalid("ga.generations", "must be at least 1"));
        }
        let probabilities = [
            ("ga.crossover_rate", ga.crossover_rate),
            ("ga.p_skip_type", ga.p_skip_type),
            ("ga.p_skip_gene", ga.p_skip_gene),
            ("ga.p_duplicate", ga.p_duplicate),
            ("ga.p_delete", ga.p_delete),
            ("ga.p_targets_edit", ga.p_targets_edit),
        ];
        for (field, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, format!("is a probability, got {p}")));
            }
        }
        if !(ga.poisson_lambda > 0.0) {
            return Err(invalid("ga.poisson_lambda", format!("must be positive, got {}", ga.poisson_lambda)));
        }
        for (field, w) in [("ga.w_r2", ga.w_r2), ("ga.w_shape", ga.w_shape)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(field, format!("must be finite and non-negative, got {w}")));
            }
        }

        let s = &self.sim;
        if !(s.dt > 0.0) {
            return Err(invalid("sim.dt", format!("must be positive, got {}", s.dt)));
        }
        if !(s.t_total >= s.dt) {
            return Err(invalid("sim.t_total", format!("must cover at least one step, got {}", s.t_total)));
        }
        if !(s.delta > 0.0) {
            return Err(invalid("sim.delta", format!("must be positive, got {}", s.delta)));
        }
        if !(0.0 <= s.v_reset && s.v_reset < s.theta_r) {
            return Err(invalid(
                "sim.v_reset",
                format!("must lie in [0, theta_r = {}), got {}", s.theta_r, s.v_reset),
            ));
        }
        s.validate().map_err(|e| invalid("sim", e.to_string()))?;

        let st = &self.stimulus;
        if st.train_count < 1 {
            return Err(invalid("stimulus.train_count", "must be at least 1"));
        }
        if st.test_count < 2 {
            return Err(invalid("stimulus.test_count", "must be at least 2 for the R² readout"));
        }
        if !(st.noise_amp >= 0.0) {
            return Err(invalid("stimulus.noise_amp", format!("must be non-negative, got {}", st.noise_amp)));
        }
        if !(st.sigma >= 0.0) {
            return Err(invalid("stimulus.sigma", format!("must be non-negative, got {}", st.sigma)));
        }
        if !(st.margin > 0.0 && st.margin < 0.5) {
            return Err(invalid("stimulus.margin", format!("must lie in (0, 0.5), got {}", st.margin)));
        }

        let e = &self.eval;
        if !(e.learning_rate > 0.0) {
            return Err(invalid("eval.learning_rate", format!("must be positive, got {}", e.learning_rate)));
        }
        if !(e.weight_scale > 0.0) {
            return Err(invalid("eval.weight_scale", format!("must be positive, got {}", e.weight_scale)));
        }

        let r = &self.run;
        if r.trials < 1 {
            return Err(invalid("run.trials", "must be at least 1"));
        }
        if r.checkpoint_every < 1 {
            return Err(invalid("run.checkpoint_every", "must be at least 1"));
        }
        if r.out_dir.is_empty() {
            return Err(invalid("run.out_dir", "must not be empty"));
        }
        Ok(())
    }
}

/// Standard artifact header: tool version plus resolved config hash. Every
/// file a run writes starts with these lines.
pub fn file_header(config_hash: &str) -> String {
    format!(
        "# evoretina {}\n# config {config_hash}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Strips header/comment lines, returning the payload below them.
pub fn skip_header(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}
