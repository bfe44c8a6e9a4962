//! Run configuration and its cross-field validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::ConceptHierarchy;
use crate::lower_bound::{derive_r_primes, ConstraintError, RatioParams};
use crate::ratio::Fraction;
use crate::training::{LearnParams, ParamError, Presentation, SchedulePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    LearnClean,
    LearnNoisy,
    Recognize,
    Oracle,
    Lowerbound,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("k must be at least 2, got {0}")]
    Arity(usize),
    #[error("lmax must be at least 1, got {0}")]
    Depth(usize),
    #[error("n = {n} is below k^(lmax+1) = {min}")]
    Universe { n: usize, min: usize },
    #[error("ratio {name} = {value} is not a usable fraction in [0, 1]")]
    Ratio { name: &'static str, value: f64 },
    #[error("{field} is required in mode {mode:?}")]
    Missing { field: &'static str, mode: Mode },
    #[error("lowerbound runs need lmax = 2, got {0}")]
    LowerBoundDepth(usize),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Hierarchy(#[from] crate::hierarchy::HierarchyError),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_budget() -> usize {
    200
}

/// Everything that determines a run. Output location is not part of it,
/// so a replay into another directory sees the same configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub k: usize,
    pub lmax: usize,
    pub n: usize,
    pub r1: f64,
    pub r2: f64,
    /// Learning rate; noise-free runs default to `1/(4k)`.
    pub eta: Option<f64>,
    /// Mark probability for noisy runs.
    pub p: Option<f64>,
    /// Noise slack; defaults to `((r2 - r1) / r2) / 50`.
    pub delta: Option<f64>,
    /// Showings per concept; defaults to the analytic sigma.
    pub sigma: Option<u64>,
    #[serde(default)]
    pub policy: SchedulePolicy,
    #[serde(default)]
    pub presentation: Presentation,
    /// Whether level-0 concepts get their own sigma showings.
    #[serde(default = "yes")]
    pub level0_quota: bool,
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// Random input sets per recognition suite.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Weight snapshot period in showings; defaults to a tenth of the schedule.
    pub snapshot_every: Option<u64>,
    /// Oracle iteration count; defaults to twice sigma.
    pub steps: Option<u64>,
}

impl RunConfig {
    /// Defaults for `mode` with the given shape and seed.
    pub fn new(mode: Mode, k: usize, lmax: usize, n: usize, r1: f64, r2: f64, seed: u64) -> Self {
        Self {
            mode,
            k,
            lmax,
            n,
            r1,
            r2,
            eta: None,
            p: None,
            delta: None,
            sigma: None,
            policy: SchedulePolicy::default(),
            presentation: Presentation::default(),
            level0_quota: true,
            seed,
            trials: 1,
            budget: default_budget(),
            snapshot_every: None,
            steps: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn fraction(name: &'static str, value: f64) -> Result<Fraction, ConfigError> {
        Fraction::from_f64(value).map_err(|_| ConfigError::Ratio { name, value })
    }

    pub fn ratios(&self) -> Result<(Fraction, Fraction), ConfigError> {
        Ok((Self::fraction("r1", self.r1)?, Self::fraction("r2", self.r2)?))
    }

    pub fn hierarchy(&self) -> Result<ConceptHierarchy, ConfigError> {
        Ok(ConceptHierarchy::build(self.k, self.lmax, self.n)?)
    }

    /// Learning parameters for the learn and oracle modes.
    pub fn learn_params(&self) -> Result<LearnParams, ConfigError> {
        let (r1, r2) = self.ratios()?;
        match self.mode {
            Mode::LearnNoisy => {
                let p = Self::fraction("p", self.p.ok_or(ConfigError::Missing { field: "p", mode: self.mode })?)?;
                let eta = self.eta.ok_or(ConfigError::Missing { field: "eta", mode: self.mode })?;
                Ok(LearnParams::noisy(self.k, r1, r2, p, eta, self.delta)?)
            }
            _ => {
                let mut params = LearnParams::noise_free(self.k, r1, r2)?;
                if let Some(eta) = self.eta {
                    params.eta = eta;
                    params.validate(self.k)?;
                }
                Ok(params)
            }
        }
    }

    pub fn ratio_params(&self) -> Result<RatioParams, ConfigError> {
        let (r1, r2) = self.ratios()?;
        Ok(derive_r_primes(r1, r2, self.k)?)
    }

    /// Showings per concept.
    pub fn effective_sigma(&self, params: &LearnParams) -> u64 {
        self.sigma.unwrap_or_else(|| params.sigma(self.k, self.lmax))
    }

    /// Checks every cross-field constraint of the selected mode.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(ConfigError::Arity(self.k));
        }
        if self.lmax < 1 {
            return Err(ConfigError::Depth(self.lmax));
        }
        let min = self.k.checked_pow(self.lmax as u32 + 1).unwrap_or(usize::MAX);
        if self.n < min {
            return Err(ConfigError::Universe { n: self.n, min });
        }
        if self.trials == 0 {
            return Err(ConfigError::NoTrials);
        }
        let (r1, r2) = self.ratios()?;
        self.hierarchy()?;
        match self.mode {
            Mode::LearnClean | Mode::LearnNoisy => {
                self.learn_params()?.check_fresh_silence()?;
            }
            Mode::Oracle => {
                self.learn_params()?;
            }
            Mode::Recognize => {
                if r1 >= r2 {
                    return Err(ParamError::Ratios { r1: self.r1, r2: self.r2 }.into());
                }
            }
            Mode::Lowerbound => {
                if self.lmax != 2 {
                    return Err(ConfigError::LowerBoundDepth(self.lmax));
                }
                self.ratio_params()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> RunConfig {
        RunConfig::new(Mode::LearnClean, 4, 2, 64, 0.51, 0.8, 1)
    }

    #[test]
    fn acceptance_config_is_valid() {
        clean().validate().unwrap();
        assert_eq!(clean().effective_sigma(&clean().learn_params().unwrap()), 140);
    }

    #[test]
    fn fast_learning_rate_is_rejected_before_running() {
        let mut c = clean();
        c.eta = Some(0.1);
        assert!(matches!(c.validate(), Err(ConfigError::Params(ParamError::LearningRate { .. }))));
    }

    #[test]
    fn binary_hierarchies_are_rejected_for_learning() {
        // tau = 1.31 sqrt(2) / 2 < 1: fresh neurons would fire on a top-level showing
        let mut c = RunConfig::new(Mode::LearnClean, 2, 3, 16, 0.51, 0.8, 1);
        assert!(matches!(c.validate(), Err(ConfigError::Params(ParamError::FreshNeuronFires { .. }))));
        c.mode = Mode::Oracle;
        c.validate().unwrap();
    }

    #[test]
    fn small_universe_is_rejected() {
        let mut c = clean();
        c.n = 16;
        assert!(matches!(c.validate(), Err(ConfigError::Universe { n: 16, min: 64 })));
    }

    #[test]
    fn integral_r1k_is_rejected() {
        let mut c = clean();
        c.r1 = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noisy_needs_p_and_eta() {
        let mut c = clean();
        c.mode = Mode::LearnNoisy;
        assert!(matches!(c.validate(), Err(ConfigError::Missing { field: "p", .. })));
        c.p = Some(0.8);
        assert!(matches!(c.validate(), Err(ConfigError::Missing { field: "eta", .. })));
        c.eta = Some(1e-3);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = clean();
        c.sigma = Some(10);
        c.policy = SchedulePolicy::Sequential;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let minimal = "mode = \"oracle\"\nk = 4\nlmax = 2\nn = 64\nr1 = 0.51\nr2 = 0.8\nseed = 3\n";
        let parsed = RunConfig::from_toml(minimal).unwrap();
        assert_eq!(parsed.trials, 1);
        assert_eq!(parsed.policy, SchedulePolicy::Interleaved);
        assert!(RunConfig::from_toml("mode = \"oracle\"\nbogus = 1").is_err());
    }
}
