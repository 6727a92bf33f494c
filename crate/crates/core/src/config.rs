//! Experiment configuration: TOML files with optional named profiles that
//! are deep-merged over the base document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eroc::BootstrapConfig;
use crate::error::{Error, Result};
use crate::mcmc::McmcSettings;
use crate::nn::{Architecture, GrowthConfig, TrainConfig};
use crate::observers::slo::{SloBuild, SloGridSpec, SloSolver};
use crate::observers::ObserverKind;
use crate::sim::task::{TaskFamily, TaskSpec};

/// Presets bundled with the binary, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("bke-analytic", include_str!("../presets/bke-analytic.toml")),
    ("bke-hybrid", include_str!("../presets/bke-hybrid.toml")),
    ("lb-quadratic-200", include_str!("../presets/lb-quadratic-200.toml")),
    ("lb-quadratic-100", include_str!("../presets/lb-quadratic-100.toml")),
    ("lb-l1", include_str!("../presets/lb-l1.toml")),
    ("clb-width", include_str!("../presets/clb-width.toml")),
];

/// Short names for the three task families.
pub const PRESET_ALIASES: &[(&str, &str)] = &[
    ("bke", "bke-analytic"),
    ("lb", "lb-quadratic-200"),
    ("clb", "clb-width"),
];

pub fn preset_source(name: &str) -> Option<&'static str> {
    let name = PRESET_ALIASES
        .iter()
        .find(|(a, _)| *a == name)
        .map_or(name, |(_, full)| *full);
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub test_present: usize,
    pub test_absent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Load this model instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub shared_convs: usize,
    pub estimation_convs: usize,
    pub filters: usize,
    pub kernel: usize,
    pub train_present: usize,
    pub train_absent: usize,
    pub validation_per_class: usize,
    pub train: TrainConfig,
    /// Run the layer-growth search instead of using the fixed layer counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthConfig>,
}

impl NetworkConfig {
    pub fn architecture(&self, task: &TaskSpec) -> Architecture {
        Architecture::standard(
            task.width(),
            task.height(),
            self.shared_convs,
            self.estimation_convs,
            self.filters,
            self.kernel,
            task.theta_dim(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub n_present: usize,
    pub n_absent: usize,
    #[serde(default)]
    pub grid: SloGridSpec,
    #[serde(default)]
    pub solver: SloSolver,
}

impl SloConfig {
    pub fn build(&self, seed: u64) -> SloBuild {
        SloBuild {
            n_present: self.n_present,
            n_absent: self.n_absent,
            seed,
            grid: self.grid.clone(),
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        BootstrapSection {
            resamples: d.resamples,
            level: d.level,
        }
    }
}

/// Target checked by `eroc verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub observer: ObserverKind,
    pub aeroc: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Asserted against the task when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<TaskFamily>,
    pub task: TaskSpec,
    pub data: DataConfig,
    pub observers: Vec<ObserverKind>,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slo: Option<SloConfig>,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Expectation>,
}

/// Recursively overlays `over` on `base`; tables merge, everything else is
/// replaced.
pub fn deep_merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Parses `source`, applying the named profile from its `[profiles]`
    /// table. `origin` labels errors.
    pub fn from_toml(source: &str, profile: Option<&str>, origin: &str) -> Result<Self> {
        let mut doc: toml::Value = toml::from_str(source).map_err(|e| Error::config(origin, e.to_string()))?;
        let profiles = match &mut doc {
            toml::Value::Table(t) => t.remove("profiles"),
            _ => None,
        };
        let mut profiles: BTreeMap<String, toml::Value> = match profiles {
            Some(toml::Value::Table(t)) => t.into_iter().collect(),
            Some(_) => return Err(Error::config(origin, "`profiles` must be a table")),
            None => BTreeMap::new(),
        };
        if let Some(p) = profile {
            match profiles.remove(p) {
                Some(over) => deep_merge(&mut doc, over),
                // The desk profile is the base document.
                None if p == "desk" => {}
                None => return Err(Error::config(origin, format!("unknown profile `{p}`"))),
            }
        }
        let cfg: ExperimentConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(origin, e.to_string()))?;
        cfg.validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config(origin, other.to_string()),
        })?;
        Ok(cfg)
    }

    /// Reads a file path or a bundled preset name.
    pub fn load(path_or_preset: &str, profile: Option<&str>) -> Result<Self> {
        let path = Path::new(path_or_preset);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml(&text, profile, path_or_preset);
        }
        match preset_source(path_or_preset) {
            Some(src) => Self::from_toml(src, profile, &format!("preset:{path_or_preset}")),
            None => Err(Error::config(path_or_preset, "no such file or bundled preset")),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(&self.name, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", format!("must not exceed {}", i64::MAX)));
        }
        self.task.validate()?;
        if let Some(f) = self.family {
            if f != TaskFamily::Custom && f != self.task.family() {
                return Err(Error::config(
                    "family",
                    format!("declared {f:?} but the task is {:?}", self.task.family()),
                ));
            }
        }
        if self.data.test_present == 0 || self.data.test_absent == 0 {
            return Err(Error::config("data", "both test classes need at least one image"));
        }
        if self.observers.is_empty() {
            return Err(Error::config("observers", "list at least one observer"));
        }
        for o in &self.observers {
            match o {
                ObserverKind::Hybrid | ObserverKind::SubIdeal if self.network.is_none() => {
                    return Err(Error::config(
                        "network",
                        format!("observer `{o}` needs a [network] table"),
                    ));
                }
                ObserverKind::Slo if self.slo.is_none() => {
                    return Err(Error::config("slo", "observer `slo` needs a [slo] table"));
                }
                ObserverKind::AnalyticIo => {
                    crate::observers::AnalyticIo::new(&self.task)
                        .map_err(|e| Error::config("observers", e.to_string()))?;
                }
                ObserverKind::McmcIo => {
                    crate::mcmc::io::require_quadratic(&self.task)
                        .map_err(|e| Error::config("observers", e.to_string()))?;
                }
                _ => {}
            }
        }
        if let Some(n) = &self.network {
            n.train
                .validate()
                .map_err(|e| Error::config("network.train", e.to_string()))?;
            if n.train_present == 0 || n.train_absent == 0 {
                return Err(Error::config(
                    "network.train_present",
                    "both training classes need images",
                ));
            }
            if n.shared_convs == 0 || n.estimation_convs == 0 || n.filters == 0 || n.kernel == 0 {
                return Err(Error::config(
                    "network",
                    "layer counts, filters and kernel must be positive",
                ));
            }
            if let Some(p) = &n.model_path {
                if !p.exists() {
                    return Err(Error::config(
                        "network.model_path",
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        if let Some(s) = &self.slo {
            if let Some(p) = &s.model_path {
                if !p.exists() {
                    return Err(Error::config(
                        "slo.model_path",
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
            s.grid
                .points(&self.task.prior)
                .map_err(|e| Error::config("slo.grid", e.to_string()))?;
        }
        self.mcmc
            .chain
            .validate()
            .map_err(|e| Error::config("mcmc.chain", e.to_string()))?;
        self.mcmc
            .proposal(&self.task)
            .map_err(|e| Error::config("mcmc.proposal_std", e.to_string()))?;
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) || self.bootstrap.resamples == 0 {
            return Err(Error::config(
                "bootstrap",
                "level must lie in (0, 1) and resamples be positive",
            ));
        }
        for e in &self.expect {
            if !(e.tolerance >= 0.0) {
                return Err(Error::config("expect.tolerance", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.bootstrap.resamples,
            level: self.bootstrap.level,
            seed: self.seed,
        }
    }

    /// Training settings with the experiment seed.
    pub fn train_config(&self) -> Option<TrainConfig> {
        self.network.as_ref().map(|n| TrainConfig {
            seed: self.seed,
            ..n.train.clone()
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(crate::nn::persist::to_hex(&Sha256::digest(&bytes)))
    }
}
