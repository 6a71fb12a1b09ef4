//! Run configuration: one TOML file, environment overrides, then flag
//! overrides. Everything is validated before any command touches the disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, ENDPOINT_ENV};
use crate::experiment::{default_investors, DEFAULT_PAIRS_PER_GROUP};
use crate::probe::{PAIRS_PER_GENDER, SEED_FROM_POSTERIOR};
use crate::race::{Group, Race};
use crate::stats::{DEFAULT_ALPHA_ANOVA, DEFAULT_ALPHA_POSTHOC};
use crate::template::TemplateSet;
use crate::trust_game::{DEFAULT_AMT_A, DEFAULT_AMT_B};

pub const OUTPUT_DIR_ENV: &str = "NAMEBIAS_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSettings {
    /// Surnames written per race.
    pub top_k: usize,
}

impl Default for CurateSettings {
    fn default() -> Self {
        CurateSettings { top_k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    /// Bayesian surnames per race in each seed list.
    pub seed_from_posterior: usize,
    /// Pairs kept per gender and race.
    pub pairs_per_gender: usize,
    /// Optional per-race files of additional candidate surnames, one per line.
    pub extra_surnames: BTreeMap<Race, PathBuf>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            seed_from_posterior: SEED_FROM_POSTERIOR,
            pairs_per_gender: PAIRS_PER_GENDER,
            extra_surnames: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub amt_a: u32,
    pub amt_b: u32,
    /// Investor groups as `"Race,G"` strings, one experiment each.
    pub investors: Vec<String>,
    pub pairs_per_group: usize,
    /// Require each (investor, trustee) pairing to pass the probing questions.
    pub gate_on_verification: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            amt_a: DEFAULT_AMT_A,
            amt_b: DEFAULT_AMT_B,
            investors: default_investors()
                .into_iter()
                .map(|g| format!("{},{}", g.race.label(), g.gender.key()))
                .collect(),
            pairs_per_group: DEFAULT_PAIRS_PER_GROUP,
            gate_on_verification: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub alpha_anova: f64,
    pub alpha_posthoc: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            alpha_anova: DEFAULT_ALPHA_ANOVA,
            alpha_posthoc: DEFAULT_ALPHA_POSTHOC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Option<BackendConfig>,
    pub census_path: Option<PathBuf>,
    pub pair_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// TOML file overriding prompt templates.
    pub templates: Option<PathBuf>,
    pub race_phrases: BTreeMap<Race, String>,
    pub curate: CurateSettings,
    pub probe: ProbeSettings,
    pub experiment: ExperimentSettings,
    pub analysis: AnalysisSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: None,
            census_path: None,
            pair_file: None,
            output_dir: PathBuf::from("out"),
            templates: None,
            race_phrases: BTreeMap::new(),
            curate: CurateSettings::default(),
            probe: ProbeSettings::default(),
            experiment: ExperimentSettings::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

/// What a command needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Curate,
    Probe,
    Verify,
    Run,
    Analyze,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parse a config file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.census_path, &mut self.pair_file, &mut self.templates]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
        for p in self.probe.extra_surnames.values_mut() {
            resolve(base, p);
        }
        if let Some(b) = &mut self.backend {
            if let Some(fixture) = b.endpoint.strip_prefix("mock:") {
                let mut p = PathBuf::from(fixture);
                resolve(base, &mut p);
                b.endpoint = format!("mock:{}", p.display());
            }
            if let Some(dir) = &mut b.cache_dir {
                resolve(base, dir);
            }
        }
    }

    /// Apply `NAMEBIAS_ENDPOINT` and `NAMEBIAS_OUTPUT_DIR`.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = get(ENDPOINT_ENV).filter(|s| !s.is_empty()) {
            match &mut self.backend {
                Some(b) => b.endpoint = endpoint,
                None => {
                    log::warn!("{ENDPOINT_ENV} set but the config has no [backend] section; ignored");
                }
            }
        }
        if let Some(dir) = get(OUTPUT_DIR_ENV).filter(|s| !s.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn investor_groups(&self) -> Result<Vec<Group>, ConfigError> {
        let groups = self
            .experiment
            .investors
            .iter()
            .map(|s| s.parse::<Group>().map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if groups.is_empty() {
            return Err(ConfigError::Invalid("no investor groups configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = groups.iter().find(|g| !seen.insert(**g)) {
            return Err(ConfigError::Invalid(format!("investor group {dup} listed twice")));
        }
        Ok(groups)
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.templates {
            Some(path) => TemplateSet::from_override_file(path).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(TemplateSet::default()),
        }
    }

    pub fn backend(&self) -> Result<&BackendConfig, ConfigError> {
        self.backend
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("a [backend] section is required".into()))
    }

    /// The backend settings with the cache defaulting to `<output_dir>/cache`.
    pub fn effective_backend(&self) -> Result<BackendConfig, ConfigError> {
        let mut b = self.backend()?.clone();
        if b.cache_dir.is_none() {
            b.cache_dir = Some(self.output_dir.join("cache"));
        }
        Ok(b)
    }

    pub fn model_id(&self) -> String {
        self.backend
            .as_ref()
            .and_then(|b| b.model_id.clone())
            .unwrap_or_else(|| "unnamed-model".to_string())
    }

    /// Check everything `needs` depends on. Pure: no files are created.
    pub fn validate(&self, needs: Needs) -> Result<(), ConfigError> {
        let require_file = |what: &str, p: &Option<PathBuf>| -> Result<(), ConfigError> {
            match p {
                None => Err(ConfigError::Invalid(format!("{what} is required for this command"))),
                Some(p) if !p.is_file() => Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        if self.output_dir.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("output_dir must not be empty".into()));
        }
        if self.output_dir.is_file() {
            return Err(ConfigError::Invalid(format!(
                "output_dir {} is a file",
                self.output_dir.display()
            )));
        }
        self.templates()?;
        for (race, phrase) in &self.race_phrases {
            if phrase.trim().is_empty() {
                return Err(ConfigError::Invalid(format!("empty race phrase for {race}")));
            }
        }
        let uses_backend = matches!(needs, Needs::Probe | Needs::Verify | Needs::Run);
        if uses_backend {
            self.backend()?
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match needs {
            Needs::Curate => {
                require_file("census_path", &self.census_path)?;
                if self.curate.top_k == 0 {
                    return Err(ConfigError::Invalid("curate.top_k must be positive".into()));
                }
            }
            Needs::Probe => {
                require_file("census_path", &self.census_path)?;
                if self.probe.pairs_per_gender == 0 {
                    return Err(ConfigError::Invalid("probe.pairs_per_gender must be positive".into()));
                }
                for (race, path) in &self.probe.extra_surnames {
                    if !path.is_file() {
                        return Err(ConfigError::Invalid(format!(
                            "extra surname list for {race} ({}) does not exist",
                            path.display()
                        )));
                    }
                }
            }
            Needs::Verify | Needs::Run => {
                require_file("pair_file", &self.pair_file)?;
                let e = &self.experiment;
                if e.amt_a == 0 {
                    return Err(ConfigError::Invalid("experiment.amt_a must be positive".into()));
                }
                if e.pairs_per_group < 2 {
                    return Err(ConfigError::Invalid("experiment.pairs_per_group must be at least 2".into()));
                }
                self.investor_groups()?;
            }
            Needs::Analyze => {}
        }
        let a = &self.analysis;
        for (name, alpha) in [("alpha_anova", a.alpha_anova), ("alpha_posthoc", a.alpha_posthoc)] {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ConfigError::Invalid(format!("analysis.{name} must be in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Snapshot recorded in run manifests.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
