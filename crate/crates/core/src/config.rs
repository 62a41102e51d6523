//! Run configuration files.
//!
//! A config is TOML: model keys at the top level and one table per
//! experiment. Every key is optional. Unknown keys anywhere in the file are
//! collected and rejected together, so a misspelling never falls back to a
//! default silently. `docs/config.md` lists every key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::control::{ObjectiveWeights, OptimizerOptions};
use crate::dynamics::{manufactured_forcing, steady_state, NonlinearForm, SimConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    ContractionParams, EnergyParams, MixingParams, MomentParams, RecurrenceParams, RegularizationParams,
    StabilityParams, UniformityParams,
};
use crate::forcing::ForcingBasis;
use crate::spectral::SpectralState;

/// An initial or target state: `"zero"`, `"steady"` (the steady state of the
/// model) or a list of sine coefficients starting at `k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Named(String),
    Coeffs(Vec<f64>),
}

impl StartSpec {
    pub fn zero() -> Self {
        StartSpec::Named("zero".into())
    }

    pub fn steady() -> Self {
        StartSpec::Named("steady".into())
    }

    pub fn needs_steady(&self) -> bool {
        matches!(self, StartSpec::Named(s) if s == "steady")
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        match self {
            StartSpec::Named(s) if s == "zero" || s == "steady" => Ok(()),
            StartSpec::Named(s) => {
                Err(Error::Config(format!("unknown state name {s:?} (expected \"zero\" or \"steady\")")))
            }
            StartSpec::Coeffs(c) if c.len() > n_modes => {
                Err(Error::Config(format!("{} coefficients given for {n_modes} modes", c.len())))
            }
            StartSpec::Coeffs(c) if c.iter().any(|v| !v.is_finite()) => {
                Err(Error::Config("non-finite coefficient".into()))
            }
            StartSpec::Coeffs(_) => Ok(()),
        }
    }

    /// `steady` is only consulted for `"steady"`.
    pub fn resolve(&self, n_modes: usize, steady: Option<&SpectralState>) -> Result<SpectralState> {
        self.validate(n_modes)?;
        match self {
            StartSpec::Coeffs(c) => SpectralState::new(c.clone()).map(|s| s.resized(n_modes)),
            StartSpec::Named(s) if s == "steady" => {
                steady.cloned().ok_or_else(|| Error::Config("steady state requested but not computed".into()))
            }
            StartSpec::Named(_) => Ok(SpectralState::zeros(n_modes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub nu: f64,
    pub n_modes: usize,
    pub dt: f64,
    pub dealias: bool,
    pub nonlinearity: NonlinearForm,
    pub forcing_a: f64,
    pub forcing_b: f64,
    pub amplitudes: Vec<f64>,
    /// Sine coefficients of the deterministic forcing.
    pub h: Vec<f64>,
    /// If set, `h` is chosen so that this state is steady.
    pub steady_target: Vec<f64>,
    pub seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            n_modes: 128,
            dt: 1e-3,
            dealias: true,
            nonlinearity: NonlinearForm::SkewSymmetric,
            forcing_a: 1.0,
            forcing_b: 2.0,
            amplitudes: vec![1.0, 1.0],
            h: Vec::new(),
            steady_target: Vec::new(),
            seed: None,
        }
    }
}

impl ModelConfig {
    pub fn sim_config(&self) -> Result<SimConfig> {
        if !self.h.is_empty() && !self.steady_target.is_empty() {
            return Err(Error::Config("set at most one of `h` and `steady_target`".into()));
        }
        for (key, list) in [("h", &self.h), ("steady_target", &self.steady_target)] {
            if list.len() > self.n_modes {
                return Err(Error::Config(format!(
                    "`{key}` has {} coefficients for {} modes",
                    list.len(),
                    self.n_modes
                )));
            }
        }
        let basis = ForcingBasis::allowing_zero(self.forcing_a, self.forcing_b, &self.amplitudes, self.n_modes)?;
        let config =
            SimConfig::new(self.nu, self.dt, basis)?.with_dealias(self.dealias).with_nonlinearity(self.nonlinearity);
        let h = if !self.steady_target.is_empty() {
            let w = SpectralState::new(self.steady_target.clone())?.resized(self.n_modes);
            manufactured_forcing(&w, &config)
        } else if self.h.is_empty() {
            SpectralState::zeros(self.n_modes)
        } else {
            SpectralState::new(self.h.clone())?.resized(self.n_modes)
        };
        let config = config.with_h(h)?;
        config.validate()?;
        Ok(config)
    }

    /// The prescribed steady state if there is one, else a computed one.
    pub fn steady(&self, config: &SimConfig) -> Result<SpectralState> {
        if self.steady_target.is_empty() {
            Ok(steady_state(config)?.state)
        } else {
            Ok(SpectralState::new(self.steady_target.clone())?.resized(self.n_modes))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub t_end: f64,
    pub sample_every: usize,
    pub initial: StartSpec,
    pub snapshot: bool,
    pub save_noise: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { t_end: 1.0, sample_every: 100, initial: StartSpec::zero(), snapshot: true, save_noise: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub t: f64,
    pub n_members: usize,
    pub initial: StartSpec,
    /// Random power-law perturbation added to `initial`; zero disables it.
    pub perturbation_amplitude: f64,
    pub perturbation_decay: f64,
    pub perturbation_cutoff: usize,
    pub snapshot: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            t: 1.0,
            n_members: 100,
            initial: StartSpec::zero(),
            perturbation_amplitude: 0.0,
            perturbation_decay: 1.0,
            perturbation_cutoff: 16,
            snapshot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingSection {
    #[serde(flatten)]
    pub params: MixingParams,
    pub v1: StartSpec,
    pub v2: StartSpec,
}

impl Default for MixingSection {
    fn default() -> Self {
        Self { params: MixingParams::default(), v1: StartSpec::zero(), v2: StartSpec::steady() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformitySection {
    #[serde(flatten)]
    pub params: UniformityParams,
    pub starts: Vec<StartSpec>,
}

impl Default for UniformitySection {
    fn default() -> Self {
        Self { params: UniformityParams::default(), starts: vec![StartSpec::zero(), StartSpec::steady()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrenceSection {
    #[serde(flatten)]
    pub params: RecurrenceParams,
    pub first: StartSpec,
    pub second: StartSpec,
    pub target: StartSpec,
}

impl Default for RecurrenceSection {
    fn default() -> Self {
        Self {
            params: RecurrenceParams::default(),
            first: StartSpec::Coeffs(vec![2.0]),
            second: StartSpec::Coeffs(vec![-2.0]),
            target: StartSpec::steady(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizeSection {
    #[serde(flatten)]
    pub params: RegularizationParams,
    pub amplitude: f64,
}

impl Default for RegularizeSection {
    fn default() -> Self {
        Self { params: RegularizationParams::default(), amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlSection {
    pub horizon: f64,
    pub n_intervals: usize,
    /// Target radius as a fraction of `‖u₀ − û‖_{L¹}`.
    pub eps_fraction: f64,
    pub m: f64,
    pub u0: StartSpec,
    pub target: StartSpec,
    #[serde(flatten)]
    pub weights: ObjectiveWeights,
    #[serde(flatten)]
    pub options: OptimizerOptions,
    pub search_horizons: Vec<f64>,
    pub search_intervals: Vec<usize>,
    /// Noisy runs per radius for hit frequencies; zero skips them.
    pub hit_seeds: usize,
    pub hit_eps_multipliers: Vec<f64>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            n_intervals: 8,
            eps_fraction: 0.1,
            m: 3.0,
            u0: StartSpec::Coeffs(vec![-1.0, 0.0, 0.3]),
            target: StartSpec::steady(),
            weights: ObjectiveWeights::default(),
            options: OptimizerOptions::default(),
            search_horizons: Vec::new(),
            search_intervals: Vec::new(),
            hit_seeds: 0,
            hit_eps_multipliers: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadySection {
    pub snapshot: bool,
}

impl Default for SteadySection {
    fn default() -> Self {
        Self { snapshot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemigroupSection {
    /// Defaults to the model's `nu`.
    pub nu: Option<f64>,
    pub source_order: f64,
    pub target_order: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for SemigroupSection {
    fn default() -> Self {
        Self { nu: None, source_order: 0.0, target_order: 1.0, t_min: 1e-4, t_max: 10.0, points: 400, tolerance: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FileConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub simulate: SimulateSection,
    pub ensemble: EnsembleSection,
    pub mixing: MixingSection,
    pub uniformity: UniformitySection,
    pub contraction: ContractionParams,
    pub recurrence: RecurrenceSection,
    pub energy: EnergyParams,
    pub regularize: RegularizeSection,
    pub moments: MomentParams,
    pub stability: StabilityParams,
    pub control: ControlSection,
    pub steady: SteadySection,
    #[serde(rename = "semigroup-norms")]
    pub semigroup_norms: SemigroupSection,
}

/// Qualified names of every accepted key, `section.key` inside tables.
pub fn known_keys() -> Vec<String> {
    let defaults = serde_json::to_value(FileConfig::default()).expect("defaults serialize");
    let mut keys = Vec::new();
    for (key, value) in defaults.as_object().expect("object") {
        match value {
            Value::Object(section) => keys.extend(section.keys().map(|k| format!("{key}.{k}"))),
            _ => keys.push(key.clone()),
        }
    }
    keys
}

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let defaults = serde_json::to_value(FileConfig::default()).expect("defaults serialize");
    let defaults = defaults.as_object().expect("object");
    let mut unknown = Vec::new();
    for (key, value) in table {
        match (defaults.get(key), value) {
            (None, _) => unknown.push(key.clone()),
            (Some(Value::Object(known)), toml::Value::Table(section)) => {
                unknown.extend(section.keys().filter(|k| !known.contains_key(*k)).map(|k| format!("{key}.{k}")));
            }
            _ => {}
        }
    }
    unknown
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The table for `section` as canonical JSON, or `None` if there is no such section.
    pub fn section_json(&self, section: &str) -> Option<Value> {
        let all = serde_json::to_value(self).expect("config serializes");
        all.get(section).filter(|v| v.is_object()).cloned()
    }

    /// 16 hex digits identifying the model plus one section; the seed is excluded.
    pub fn run_hash(&self, section: &str) -> String {
        let mut model = serde_json::to_value(&self.model).expect("model serializes");
        model.as_object_mut().expect("object").remove("seed");
        let doc = serde_json::json!({
            "command": section,
            "model": model,
            "section": self.section_json(section),
        });
        let digest = Sha256::digest(serde_json::to_vec(&doc).expect("json"));
        hex::encode(&digest[..8])
    }
}
