//! Hyperparameters and the TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{SyntheticOracle, TokenProvider};
use crate::error::{Error, Result};
use crate::prompts::TemplateSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Initialization bias towards non-name tokens, in `[0, 1)`.
    pub alpha: f64,
    /// Label smoothing for generated instances, in `[0, 1)`.
    pub epsilon: f64,
    /// Weight of the hierarchy regularizers.
    pub lambda: f64,
    /// Weight of the generated-instance loss.
    pub lambda_new: f64,
    /// Generated instances kept per source (or per type, see `MScope`).
    pub m: usize,
    pub epochs: usize,
    pub shots: usize,
    pub lr: f64,
    pub beam_width: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 0.1,
            lambda: 1.0,
            lambda_new: 1.0,
            m: 5,
            epochs: 30,
            shots: 5,
            lr: 1e-2,
            beam_width: 10,
            batch_size: 8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("epsilon", self.epsilon)?;
        for (name, v) in [("lambda", self.lambda), ("lambda_new", self.lambda_new)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("m", self.m),
            ("epochs", self.epochs),
            ("shots", self.shots),
            ("beam_width", self.beam_width),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Whether `m` bounds instances per source mention or per gold type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MScope {
    #[default]
    Mention,
    Type,
}

impl std::str::FromStr for MScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mention" => Ok(Self::Mention),
            "type" => Ok(Self::Type),
            other => Err(Error::Config(format!("m_scope must be mention or type, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Synthetic oracle JSON file.
    pub oracle: Option<PathBuf>,
    /// Base URL of an inference service speaking the wire protocol.
    pub endpoint: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl ProviderConfig {
    /// Loads the oracle or connects to the endpoint.
    pub fn open(&self) -> Result<Box<dyn TokenProvider>> {
        match (&self.oracle, &self.endpoint) {
            (Some(path), None) => Ok(Box::new(SyntheticOracle::load(path)?)),
            #[cfg(feature = "http")]
            (None, Some(url)) => {
                let timeout = std::time::Duration::from_secs(self.timeout_secs.unwrap_or(60));
                let n = self.max_in_flight.unwrap_or(crate::backend::HttpProvider::DEFAULT_MAX_IN_FLIGHT);
                Ok(Box::new(crate::backend::HttpProvider::connect_with(url, n, timeout)?))
            }
            #[cfg(not(feature = "http"))]
            (None, Some(_)) => Err(Error::Config("built without HTTP support".into())),
            (Some(_), Some(_)) => Err(Error::Config("provider: set either oracle or endpoint, not both".into())),
            (None, None) => Err(Error::Config("provider: oracle or endpoint is required".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Full labeled pool; `sample` draws train/dev from it.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// JSON map from label path to extra name strings.
    pub hierarchy: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateOverrides {
    pub typing_pattern: Option<String>,
    pub generation_pattern: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub m_scope: MScope,
    /// Rebuild the generated pool every this many epochs once active;
    /// 0 builds it once.
    pub regen_every: usize,
    /// Named template pair; `templates` overrides individual patterns.
    pub template_preset: Option<String>,
    pub hyperparams: Hyperparams,
    pub templates: TemplateOverrides,
    pub data: DataConfig,
    pub provider: ProviderConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m_scope: MScope::Mention,
            regen_every: 1,
            template_preset: None,
            hyperparams: Hyperparams::default(),
            templates: TemplateOverrides::default(),
            data: DataConfig::default(),
            provider: ProviderConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.corpus);
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.test);
        fix(&mut self.data.hierarchy);
        fix(&mut self.provider.oracle);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// The template pair to use, with the preset applied first.
    pub fn template_spec(&self) -> Result<TemplateSpec> {
        let mut spec = match &self.template_preset {
            Some(name) => TemplateSpec::preset(name)?,
            None => TemplateSpec::default(),
        };
        if let Some(p) = &self.templates.typing_pattern {
            spec.typing_pattern = p.clone();
        }
        if let Some(p) = &self.templates.generation_pattern {
            spec.generation_pattern = p.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        self.template_spec()?;
        match (&self.provider.oracle, &self.provider.endpoint) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("provider: set either oracle or endpoint, not both".into()))
            }
            (None, None) => return Err(Error::Config("provider: oracle or endpoint is required".into())),
            _ => {}
        }
        if self.provider.max_in_flight == Some(0) {
            return Err(Error::Config("provider.max_in_flight must be at least 1".into()));
        }
        let paths = [
            &self.data.corpus,
            &self.data.train,
            &self.data.dev,
            &self.data.test,
            &self.data.hierarchy,
            &self.provider.oracle,
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
