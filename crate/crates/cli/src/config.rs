//! Experiment configuration: a TOML file, command-line overrides, and the
//! resolution of every default into an explicit value.

use std::path::Path;

use cis_engine::{AdaptationPolicy, BridgeAnchor, BuiltInModel, ExpectationMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },

    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("unknown preset `{0}` (try `preset list`)")]
    UnknownPreset(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cis,
    Gcis,
    CisR1,
    CisR2,
    Wgr1,
    Wgr2,
    Euler,
    Dg,
    Sis,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Cis,
        Method::Gcis,
        Method::CisR1,
        Method::CisR2,
        Method::Wgr1,
        Method::Wgr2,
        Method::Euler,
        Method::Dg,
        Method::Sis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cis => "cis",
            Method::Gcis => "gcis",
            Method::CisR1 => "cis_r1",
            Method::CisR2 => "cis_r2",
            Method::Wgr1 => "wgr1",
            Method::Wgr2 => "wgr2",
            Method::Euler => "euler",
            Method::Dg => "dg",
            Method::Sis => "sis",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown method `{s}`")))
    }

    fn supports(self, target: Target) -> bool {
        match self {
            Method::Gcis | Method::Dg => target == Target::Density,
            Method::Euler | Method::Sis => target == Target::Mean,
            _ => true,
        }
    }
}

/// What each replicate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `E[X_{T,i}]` for `i = coordinate`.
    Mean,
    /// `p(x₀, x_t, T)`.
    Density,
}

/// One experiment. Every field has a default; empty vectors and absent
/// options are filled in by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: String,
    /// Model parameters; empty means the model's reference values.
    pub params: Vec<f64>,
    pub method: Method,
    pub target: Target,
    pub coordinate: usize,
    /// Start point; empty means the model's reference start.
    pub x0: Vec<f64>,
    /// Terminal point of density targets; empty means `x0`.
    pub x_t: Vec<f64>,
    pub t: f64,
    pub delta: f64,
    pub alpha: f64,
    pub policy: AdaptationPolicy,
    pub expectation_mode: ExpectationMode,
    /// Number of independent replicates.
    pub n: usize,
    /// If set, `n` is chosen so that the total model evaluation count is close to this value.
    pub cost_target: Option<u64>,
    pub n_particles: usize,
    pub n_checkpoints: usize,
    /// Defaults to half the number of particles.
    pub ess_threshold: Option<f64>,
    pub m_steps: usize,
    pub bridge_anchor: BridgeAnchor,
    /// Report densities of the log-transformed CIR model in the original coordinates.
    pub original_coordinates: bool,
    /// Known value of the target, used for the RMSE.
    pub reference: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            model: "sv".into(),
            params: Vec::new(),
            method: Method::Cis,
            target: Target::Mean,
            coordinate: 0,
            x0: Vec::new(),
            x_t: Vec::new(),
            t: 1.0,
            delta: 1.0,
            alpha: 0.5,
            policy: AdaptationPolicy::FullCopycat,
            expectation_mode: ExpectationMode::RaoBlackwell,
            n: 1000,
            cost_target: None,
            n_particles: 1000,
            n_checkpoints: 10,
            ess_threshold: None,
            m_steps: 16,
            bridge_anchor: BridgeAnchor::Running,
            original_coordinates: false,
            reference: None,
            seed: 0,
        }
    }
}

/// Command-line values that replace the corresponding config fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<String>,
    pub method: Option<Method>,
    pub t: Option<f64>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = &self.model {
            if *m != cfg.model {
                cfg.params.clear();
                cfg.x0.clear();
                cfg.x_t.clear();
            }
            cfg.model = m.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(n) = self.n {
            cfg.n = n;
            cfg.cost_target = None;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

/// Reference parameters and start point of each built-in model.
pub fn model_defaults(model: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    let cir = vec![0.6, 2.5, 0.45, 0.3, 3.0, 0.35, 0.5];
    Some(match model {
        "sv" => (vec![1.0, 0.5], vec![1.0, 0.0]),
        "ou" | "ou1d" => (vec![0.5, 1.0, 0.4], vec![2.0]),
        "cir" | "cir2d" => (cir, vec![2.5, 3.0]),
        "logcir" | "logcir2d" | "log_cir2d" => (cir, vec![2.5f64.ln(), 3.0f64.ln()]),
        "constant" | "constant_coeff" => (vec![1.0, 0.0, 1.0], vec![0.0]),
        _ => return None,
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn build_model(&self) -> Result<BuiltInModel, ConfigError> {
        BuiltInModel::from_name(&self.model, &self.params).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Fills every default, then checks the fields for consistency.
    pub fn resolve(&self) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        cfg.model = cfg.model.to_ascii_lowercase();
        let Some((params, x0)) = model_defaults(&cfg.model) else {
            return invalid(format!("unknown model `{}`", self.model));
        };
        if cfg.params.is_empty() {
            cfg.params = params;
        }
        let model = cfg.build_model()?;
        let dim = cis_engine::DiffusionModel::dim(&model);
        if cfg.x0.is_empty() {
            cfg.x0 = if dim == x0.len() { x0 } else { vec![0.0; dim] };
        }
        if cfg.target == Target::Density && cfg.x_t.is_empty() {
            cfg.x_t = cfg.x0.clone();
        }
        if cfg.ess_threshold.is_none() && matches!(cfg.method, Method::CisR1 | Method::CisR2) {
            cfg.ess_threshold = Some(cfg.n_particles as f64 / 2.0);
        }
        cfg.validate(dim)?;
        Ok(cfg)
    }

    fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        if self.x0.len() != dim {
            return invalid(format!(
                "x0 has {} entries but model {} has dimension {dim}",
                self.x0.len(),
                self.model
            ));
        }
        if self.target == Target::Density && self.x_t.len() != dim {
            return invalid(format!(
                "x_t has {} entries but model {} has dimension {dim}",
                self.x_t.len(),
                self.model
            ));
        }
        if self.target == Target::Mean && self.coordinate >= dim {
            return invalid(format!(
                "coordinate {} is out of range for dimension {dim}",
                self.coordinate
            ));
        }
        if !self.method.supports(self.target) {
            return invalid(format!(
                "method {} cannot estimate a {} target",
                self.method.name(),
                match self.target {
                    Target::Mean => "mean",
                    Target::Density => "density",
                }
            ));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return invalid(format!("t must be positive, got {}", self.t));
        }
        if self.n == 0 {
            return invalid("n must be positive");
        }
        if self.cost_target == Some(0) {
            return invalid("cost_target must be positive");
        }
        if let Err(e) = cis_engine::RenewalRate::new(self.delta, self.alpha) {
            return invalid(e.to_string());
        }
        if self.method == Method::Wgr1 && self.alpha != 1.0 {
            return invalid(format!(
                "wgr1 samples its time points only for alpha = 1, got {}",
                self.alpha
            ));
        }
        if matches!(self.method, Method::Euler | Method::Dg | Method::Sis) && self.m_steps == 0 {
            return invalid("m_steps must be positive");
        }
        if matches!(self.method, Method::CisR1 | Method::CisR2) {
            if self.n_particles == 0 || self.n_checkpoints == 0 {
                return invalid("n_particles and n_checkpoints must be positive");
            }
            if !matches!(self.ess_threshold, Some(c) if c >= 0.0) {
                return invalid("ess_threshold must be non-negative");
            }
        }
        if self.method == Method::Sis && self.build_model()?.known_transition().is_none() {
            return invalid(format!(
                "sis needs a closed-form transition density, which model {} lacks",
                self.model
            ));
        }
        if self.original_coordinates && self.target != Target::Density {
            return invalid("original_coordinates applies to density targets only");
        }
        if let Some(r) = self.reference {
            if !r.is_finite() {
                return invalid("reference must be finite");
            }
        }
        Ok(())
    }
}
