use std::fs;
use std::path::{Path, PathBuf};

use kbinn::bench::{BaselineConfig, IdentProfile, ShowcaseConfig, StudyConfig, SweepConfig};
use kbinn::model::DoublePendulumParams;
use kbinn::train::TrainMode;
use kbinn::{Error, Result};
use serde::{Deserialize, Serialize};

/// Data generation for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub theta: [f64; 3],
    pub x0: [f64; 4],
    /// Also sample at `t = 0`.
    pub include_zero: bool,
    /// Damping of the simulated system, in 1/s.
    pub damping: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let show = ShowcaseConfig::default();
        SimulateSection { theta: show.theta, x0: show.x0, include_zero: false, damping: kbinn::model::TRUTH_DAMPING }
    }
}

/// Inputs for `identify` that the measurement file cannot carry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    /// Initial state; taken from the metadata sidecar when absent.
    pub x0: Option<Vec<f64>>,
    /// Diagonal of `R`; taken from the sidecar, else `study.noise_r`.
    pub r_diag: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub frequencies_hz: Vec<f64>,
    pub scenarios: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        SweepSection { frequencies_hz: s.frequencies_hz, scenarios: s.scenarios }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShowcaseSection {
    pub theta: [f64; 3],
    pub x0: [f64; 4],
}

impl Default for ShowcaseSection {
    fn default() -> Self {
        let s = ShowcaseConfig::default();
        ShowcaseSection { theta: s.theta, x0: s.x0 }
    }
}

/// Everything a run needs; every key has a default and unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub mode: TrainMode,
    pub methods: Vec<String>,
    pub study: StudyConfig,
    pub sweep: SweepSection,
    pub showcase: ShowcaseSection,
    pub simulate: SimulateSection,
    pub identify: IdentifySection,
    pub profile: IdentProfile,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            jobs: 1,
            mode: TrainMode::Kbinn,
            methods: vec!["kbinn".into(), "baseline".into()],
            study: StudyConfig::default(),
            sweep: SweepSection::default(),
            showcase: ShowcaseSection::default(),
            simulate: SimulateSection::default(),
            identify: IdentifySection::default(),
            profile: IdentProfile::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        // the training seed is rederived from the master seed on load and
        // may not fit a TOML integer
        let mut echoed = self.clone();
        echoed.profile.train.seed = self.seed;
        toml::to_string(&echoed).expect("run configuration serializes to TOML")
    }

    /// Writes the effective configuration next to the run's outputs.
    pub fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join("config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.profile.train.validate()?;
        DoublePendulumParams::new(self.simulate.theta[0], self.simulate.theta[1], self.simulate.theta[2]).validate()?;
        Ok(())
    }

    /// Seeds of the derived streams, so that the study, training and
    /// simulation noise are reproducible from `seed` alone.
    pub fn apply_master_seed(&mut self) {
        self.study.seed = self.seed;
        self.profile.train.seed = kbinn::seed::derive_seed(self.seed, "train", 0);
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            frequencies_hz: self.sweep.frequencies_hz.clone(),
            scenarios: self.sweep.scenarios,
            study: self.study.clone(),
        }
    }

    pub fn showcase_config(&self) -> ShowcaseConfig {
        ShowcaseConfig { theta: self.showcase.theta, x0: self.showcase.x0, study: self.study.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[study]\nrunz = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[profile.train]\nepoch = 3").is_err());
        let ok: RunConfig = toml::from_str("[profile.train]\nepochs = 3").unwrap();
        assert_eq!(ok.profile.train.epochs, 3);
    }

    #[test]
    fn echoed_config_reproduces_derived_seeds() {
        let mut c = RunConfig { seed: 5, ..RunConfig::default() };
        c.apply_master_seed();
        let mut back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        back.apply_master_seed();
        assert_eq!(back, c);
        let huge = RunConfig { seed: u64::MAX, ..RunConfig::default() };
        assert!(huge.validate().is_err());
    }
}
