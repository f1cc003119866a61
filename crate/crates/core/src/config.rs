//! Experiment configuration: a single JSON document describing data,
//! classifiers, guidance setups and sample counts.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::GuidancePath;
use crate::error::{Error, Result};
use crate::guidance::StabilizerConfig;
use crate::nn::{Activation, Objective, TrainConfig};
use crate::rng::derive_seed;
use crate::schedule::{PosteriorVariance, Schedule};
use crate::synthdata::GmmSpec;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Not part of the config hash.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub classifiers: ClassifierConfig,
    pub guidance: GuidanceSection,
    pub setups: Vec<SetupConfig>,
    pub sample: SampleSection,
    pub sweep: SweepSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub variance: PosteriorVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecSource {
    Preset(String),
    /// Relative paths resolve against the config file's directory.
    File(PathBuf),
    Inline(GmmSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub spec: SpecSource,
    pub n_train: usize,
    pub n_validation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub non_robust: TrainConfig,
    pub robust: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    NonRobust,
    Robust,
    BayesOracle,
}

impl Persona {
    pub fn as_str(&self) -> &'static str {
        match self {
            Persona::NonRobust => "non_robust",
            Persona::Robust => "robust",
            Persona::BayesOracle => "bayes_oracle",
        }
    }

    pub fn is_trained(&self) -> bool {
        !matches!(self, Persona::BayesOracle)
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Persona {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "non_robust" => Ok(Persona::NonRobust),
            "robust" => Ok(Persona::Robust),
            "bayes_oracle" | "oracle" => Ok(Persona::BayesOracle),
            other => Err(Error::InvalidArgument(format!("unknown classifier persona {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    pub target: usize,
    #[serde(default)]
    pub objective: Objective,
}

/// One named guidance setup: which classifier, which gradient path, which stabilizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupConfig {
    pub name: String,
    pub classifier: Persona,
    pub path: GuidancePath,
    #[serde(default)]
    pub stabilizer: StabilizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub setup: String,
    pub scale: f64,
    pub n_chains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub scales: Vec<f64>,
    pub n_chains: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_schedule(&self) -> Result<Schedule> {
        let s = &self.schedule;
        Ok(Schedule::linear(s.steps, s.beta_start, s.beta_end)?.with_variance(s.variance))
    }

    pub fn setup(&self, name: &str) -> Result<&SetupConfig> {
        self.setups
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("no setup named {name:?}")))
    }

    pub fn resolve_spec(&self, base_dir: &Path) -> Result<GmmSpec> {
        let spec = match &self.data.spec {
            SpecSource::Preset(name) => GmmSpec::preset(name)?,
            SpecSource::Inline(spec) => spec.clone(),
            SpecSource::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate_with(&self, spec: &GmmSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.build_schedule().map_err(|e| Error::Config(format!("schedule: {e}")))?;
        let d = &self.data;
        if d.n_train == 0 {
            return bad("data.n_train must be positive".into());
        }
        if d.n_validation <= spec.dim {
            return bad(format!("data.n_validation must exceed the dimension {}", spec.dim));
        }
        let c = &self.classifiers;
        if c.hidden.is_empty() || c.hidden.contains(&0) {
            return bad("classifiers.hidden must list positive layer widths".into());
        }
        c.non_robust.validate().map_err(|e| Error::Config(format!("classifiers.non_robust: {e}")))?;
        c.robust.validate().map_err(|e| Error::Config(format!("classifiers.robust: {e}")))?;
        if self.guidance.target >= spec.num_classes() {
            return bad(format!("guidance.target {} but the spec has {} classes", self.guidance.target, spec.num_classes()));
        }
        if self.setups.is_empty() {
            return bad("setups must not be empty".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.setups {
            let safe = !s.name.is_empty() && s.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
            if !safe {
                return bad(format!("setup name {:?} must be non-empty [A-Za-z0-9_-]", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate setup name {:?}", s.name));
            }
            s.stabilizer.validate().map_err(|e| Error::Config(format!("setup {:?}: {e}", s.name)))?;
        }
        self.setup(&self.sample.setup)?;
        let n_ok = |n: usize, field: &str| if n == 0 { bad(format!("{field} must be positive")) } else { Ok(()) };
        n_ok(self.sample.n_chains, "sample.n_chains")?;
        n_ok(self.sweep.n_chains, "sweep.n_chains")?;
        let scale_ok = |s: f64| s.is_finite() && s >= 0.0;
        if !scale_ok(self.sample.scale) {
            return bad(format!("sample.scale {} must be finite and non-negative", self.sample.scale));
        }
        if self.sweep.scales.is_empty() || !self.sweep.scales.iter().all(|&s| scale_ok(s)) {
            return bad("sweep.scales must be a non-empty list of finite, non-negative values".into());
        }
        Ok(())
    }

    pub fn layer_sizes(&self, spec: &GmmSpec) -> Vec<usize> {
        let mut sizes = vec![spec.dim];
        sizes.extend(&self.classifiers.hidden);
        sizes.push(spec.num_classes());
        sizes
    }
}

/// A validated config with its resolved mixture and hash.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: GmmSpec,
    pub schedule: Schedule,
    hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let spec = config.resolve_spec(base_dir)?;
        config.validate_with(&spec)?;
        let schedule = config.build_schedule()?;
        let hash = config_hash(&config, &spec)?;
        Ok(Experiment { config, spec, schedule, hash })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = ExperimentConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::new(config, base)
    }

    pub fn bundled() -> Result<Self> {
        Self::new(ExperimentConfig::from_json(DEFAULT_CONFIG)?, Path::new("."))
    }

    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        self.config.seed = seed;
        self.hash = config_hash(&self.config, &self.spec)?;
        Ok(self)
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.config.output_dir = dir.into();
        self
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Sub-seed for one purpose, derived from the master seed.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label, 0)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.config.layer_sizes(&self.spec)
    }

    /// The config as it was effectively run: inline spec, overrides applied.
    pub fn resolved_config(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.data.spec = SpecSource::Inline(self.spec.clone());
        c
    }
}

/// SHA-256 of the canonical JSON form: sorted keys, resolved inline spec,
/// output directory removed.
pub fn config_hash(config: &ExperimentConfig, spec: &GmmSpec) -> Result<String> {
    let mut c = config.clone();
    c.data.spec = SpecSource::Inline(spec.clone());
    let mut value = serde_json::to_value(&c)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("output_dir");
    }
    let canonical = serde_json::to_string(&value)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
