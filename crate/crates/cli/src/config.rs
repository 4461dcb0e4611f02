//! TOML run configuration.

use std::path::{Path, PathBuf};

use anchormech::{BudgetConvention, BudgetMode, Instance, Method, MethodOptions, Metric, SynthSpec};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub const DEFAULT_EPS: [f64; 8] = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6];

fn default_methods() -> Vec<String> {
    ["AIPO", "AIPO-E", "EM", "Laplace", "TEM", "RMP-EM", "LP"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Exponent `p` of the ℓp metric, or `"inf"`.
    pub metric: Metric,
    pub eps: Vec<f64>,
    pub methods: Vec<String>,
    pub instance: InstanceSection,
    pub budget: BudgetSection,
    pub mechanism: MechanismSection,
    pub audit: AuditSection,
    pub compare: CompareSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            metric: Metric::L2,
            eps: DEFAULT_EPS.to_vec(),
            methods: default_methods(),
            instance: InstanceSection::default(),
            budget: BudgetSection::default(),
            mechanism: MechanismSection::default(),
            audit: AuditSection::default(),
            compare: CompareSection::default(),
        }
    }
}

/// Either a bundle directory or synthetic generator parameters.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct InstanceSection {
    pub bundle: Option<PathBuf>,
    #[serde(flatten)]
    pub synth: SynthSpec,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    Sweep,
    Equal,
    Explicit,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub mode: ModeTag,
    pub resolution: usize,
    pub shares: Option<Vec<f64>>,
    pub convention: BudgetConvention,
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection { mode: ModeTag::Sweep, resolution: 9, shares: None, convention: BudgetConvention::HalfDual }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismSection {
    pub em_factor: f64,
    pub tem_radius: Option<f64>,
    pub coarse_cells: Option<Vec<usize>>,
}

impl Default for MechanismSection {
    fn default() -> Self {
        MechanismSection { em_factor: 0.5, tem_radius: None, coarse_cells: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub samples: usize,
    pub bins: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection { samples: 300, bins: 20 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Measured,
    Off,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub replicates: usize,
    /// `off` leaves `wall_time_ms` empty so reruns are byte-identical.
    pub timing: Timing,
    pub audit: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection { replicates: 1, timing: Timing::Off, audit: true }
    }
}

/// A parsed config plus the hash of the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub hash: String,
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: PathBuf) -> CliResult<Self> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let loaded = LoadedConfig { config, hash: sha256_hex(text.as_bytes()), base_dir };
        loaded.config.validate()?;
        Ok(loaded)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Self::from_str("", PathBuf::from(".")),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Self::from_str(&text, base)
            }
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl Config {
    pub fn validate(&self) -> CliResult<()> {
        if self.eps.is_empty() {
            return Err(field("eps", "at least one value required"));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(field("eps", format!("values must be positive and finite, got {e}")));
        }
        self.parsed_methods()?;
        if self.budget.resolution < 2 {
            return Err(field("budget.resolution", "must be at least 2"));
        }
        if self.budget.mode == ModeTag::Explicit && self.budget.shares.is_none() {
            return Err(field("budget.shares", "required when budget.mode = \"explicit\""));
        }
        if !(self.mechanism.em_factor > 0.0 && self.mechanism.em_factor.is_finite()) {
            return Err(field("mechanism.em_factor", "must be positive"));
        }
        if let Some(r) = self.mechanism.tem_radius {
            if !(r > 0.0) {
                return Err(field("mechanism.tem_radius", "must be positive"));
            }
        }
        if self.audit.samples < 2 {
            return Err(field("audit.samples", "need at least two points"));
        }
        if self.audit.bins == 0 {
            return Err(field("audit.bins", "must be at least 1"));
        }
        if self.compare.replicates == 0 {
            return Err(field("compare.replicates", "must be at least 1"));
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> CliResult<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(field("methods", "at least one method required"));
        }
        self.methods.iter().map(|m| m.parse().map_err(|e| field("methods", e))).collect()
    }

    pub fn method_options(&self) -> MethodOptions {
        let budget_mode = match self.budget.mode {
            ModeTag::Sweep => BudgetMode::Sweep { resolution: self.budget.resolution },
            ModeTag::Equal => BudgetMode::Equal,
            ModeTag::Explicit => BudgetMode::Explicit { shares: self.budget.shares.clone().unwrap_or_default() },
        };
        MethodOptions {
            metric: self.metric,
            budget_mode,
            convention: self.budget.convention,
            em_factor: self.mechanism.em_factor,
            tem_radius: self.mechanism.tem_radius,
            coarse_cells: self.mechanism.coarse_cells.clone(),
        }
    }

    /// The instance for replicate `r`: the bundle as-is, or a synthetic
    /// instance seeded with `seed + r`.
    pub fn instance(&self, base_dir: &Path, replicate: u64) -> CliResult<Instance> {
        match &self.instance.bundle {
            Some(dir) => Ok(Instance::read_bundle(&base_dir.join(dir))?),
            None => anchormech::evaluation::synth_instance(&self.instance.synth, self.seed.wrapping_add(replicate))
                .map_err(|e| field("instance", e)),
        }
    }
}
