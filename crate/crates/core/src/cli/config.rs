use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cvars::CvKind;
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::models::{CovariateLaw, GlmFamily, GlmModel, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Fluctuation,
    Certificate,
    Covering,
    Scaling,
    Toy,
    Anticoncentration,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Fluctuation => "fluctuation",
            ExperimentKind::Certificate => "certificate",
            ExperimentKind::Covering => "covering",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Toy => "toy",
            ExperimentKind::Anticoncentration => "anticoncentration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Glm {
        glm: GlmModel,
        beta0: Vec<f64>,
        #[serde(default)]
        covariates: Option<CovariateLaw>,
    },
    Toy {
        toy: ToyModel,
        #[serde(default)]
        theta0: Option<f64>,
    },
}

impl ModelSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        match self {
            ModelSpec::Glm { glm, beta0, covariates } => {
                if beta0.len() != glm.d {
                    return Err(Error::InvalidConfig(format!(
                        "{field}.beta0 has length {}, expected d = {}",
                        beta0.len(),
                        glm.d
                    )));
                }
                if let Some(law) = covariates {
                    law.validate()
                        .map_err(|e| Error::InvalidConfig(format!("{field}.covariates: {e}")))?;
                    if law.dim() != glm.d {
                        return Err(Error::InvalidConfig(format!("{field}.covariates has dimension {}, expected {}", law.dim(), glm.d)));
                    }
                }
                if !(glm.dispersion > 0.0) {
                    return Err(Error::InvalidConfig(format!("{field}.glm.dispersion must be positive")));
                }
                Ok(())
            }
            ModelSpec::Toy { .. } => Ok(()),
        }
    }

    pub fn law(&self) -> Option<CovariateLaw> {
        match self {
            ModelSpec::Glm { glm, covariates, .. } => Some(covariates.clone().unwrap_or_else(|| CovariateLaw::default_box(glm.d))),
            ModelSpec::Toy { .. } => None,
        }
    }
}

fn one_usize() -> usize {
    1
}
fn default_quantile() -> f64 {
    0.99
}
fn default_cw() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    pub kernel: KernelConfig,
    pub n: usize,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub replicates: usize,
    /// Keep every `thin`-th state in the written trace.
    #[serde(default = "one_usize")]
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationConfig {
    pub model: ModelSpec,
    pub n: usize,
    pub m: usize,
    pub cv: CvKind,
    pub replicates: usize,
    pub walk_steps: usize,
    #[serde(default)]
    pub step_scale: Option<f64>,
    #[serde(default = "tv_tol")]
    pub tv_tol: f64,
    /// Box half-width for the Gaussian-mean toy.
    #[serde(default = "ten")]
    pub half_width: f64,
}

fn tv_tol() -> f64 {
    1e-6
}
fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub family: GlmFamily,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub covariates: Option<CovariateLaw>,
    #[serde(default)]
    pub l_max: Option<usize>,
    #[serde(default = "one_usize")]
    pub runs: usize,
    #[serde(default)]
    pub monitor: Option<MonitorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringConfig {
    pub model: ModelSpec,
    pub kernel: KernelConfig,
    pub n: usize,
    #[serde(default)]
    pub threshold: Option<usize>,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    pub replicates: usize,
    pub max_steps: usize,
    /// Warm-start radius exponent: ball of radius `n^{−c_w}` around the MLE
    /// (GLMs) or posterior mean (toys).
    #[serde(default = "default_cw")]
    pub c_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizeConfig {
    #[serde(default = "cells")]
    pub cells: usize,
    #[serde(default = "draws")]
    pub draws: usize,
    #[serde(default = "width_sd")]
    pub width_sd: f64,
}

fn cells() -> usize {
    51
}
fn draws() -> usize {
    10_000
}
fn width_sd() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringSubConfig {
    pub replicates: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub model: ModelSpec,
    pub kernel: KernelConfig,
    pub n_grid: Vec<usize>,
    pub steps: usize,
    #[serde(default)]
    pub discretize: Option<DiscretizeConfig>,
    #[serde(default)]
    pub covering: Option<CoveringSubConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleRule {
    /// `m = ⌈√n⌉`.
    Sqrt,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub toy: ToyModel,
    pub n_grid: Vec<usize>,
    pub m: SubsampleRule,
    #[serde(default = "one_usize")]
    pub replicates: usize,
    #[serde(default = "tv_tol")]
    pub tv_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntiConfig {
    pub m_grid: Vec<usize>,
    pub eps: f64,
    pub samples: usize,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "one_f64")]
    pub hi: f64,
}

fn one_f64() -> f64 {
    1.0
}

/// Parsed experiment body.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    Simulate(SimulateConfig),
    Fluctuation(FluctuationConfig),
    Certificate(CertificateConfig),
    Covering(CoveringConfig),
    Scaling(ScalingConfig),
    Toy(ToyConfig),
    Anticoncentration(AntiConfig),
}

/// A config file: the experiment body plus optional `experiment`, `seed`
/// and `out` keys.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub body: ExperimentConfig,
    /// The file as parsed, echoed into the manifest.
    pub raw: serde_json::Value,
}

fn parse_body<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::InvalidConfig(inner.to_string())
        } else {
            Error::InvalidConfig(format!("at `{path}`: {inner}"))
        }
    })
}

/// Parses and validates a config for `kind` from JSON text.
pub fn parse_config(kind: ExperimentKind, text: &str) -> Result<LoadedConfig> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("malformed JSON: {e}")))?;
    let mut obj = match raw.clone() {
        serde_json::Value::Object(o) => o,
        _ => return Err(Error::InvalidConfig("config must be a JSON object".into())),
    };
    if let Some(k) = obj.remove("experiment") {
        let named: ExperimentKind = parse_body(k).map_err(|e| Error::InvalidConfig(format!("experiment: {e}")))?;
        if named != kind {
            return Err(Error::InvalidConfig(format!(
                "config is for experiment `{}` but the `{}` subcommand was given",
                named.name(),
                kind.name()
            )));
        }
    }
    let seed = match obj.remove("seed") {
        Some(v) => Some(parse_body::<u64>(v).map_err(|e| Error::InvalidConfig(format!("seed: {e}")))?),
        None => None,
    };
    let out = match obj.remove("out") {
        Some(v) => Some(parse_body::<String>(v).map_err(|e| Error::InvalidConfig(format!("out: {e}")))?),
        None => None,
    };
    let body = serde_json::Value::Object(obj);
    let body = match kind {
        ExperimentKind::Simulate => ExperimentConfig::Simulate(parse_body(body)?),
        ExperimentKind::Fluctuation => ExperimentConfig::Fluctuation(parse_body(body)?),
        ExperimentKind::Certificate => ExperimentConfig::Certificate(parse_body(body)?),
        ExperimentKind::Covering => ExperimentConfig::Covering(parse_body(body)?),
        ExperimentKind::Scaling => ExperimentConfig::Scaling(parse_body(body)?),
        ExperimentKind::Toy => ExperimentConfig::Toy(parse_body(body)?),
        ExperimentKind::Anticoncentration => ExperimentConfig::Anticoncentration(parse_body(body)?),
    };
    validate(&body)?;
    Ok(LoadedConfig {
        kind,
        seed,
        out,
        body,
        raw,
    })
}

pub fn load_config(kind: ExperimentKind, path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(kind, &text)
}

fn positive(v: usize, field: &str) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidConfig(format!("{field} must be positive")));
    }
    Ok(())
}

fn kernel_ok(k: &KernelConfig, model: &ModelSpec) -> Result<()> {
    k.validate()?;
    if matches!(k.kind, crate::kernels::KernelKind::Firefly) {
        match model {
            ModelSpec::Glm { glm, .. } if matches!(glm.family, GlmFamily::Logistic) => {}
            _ => return Err(Error::InvalidConfig("kernel.kind = firefly needs model.type = glm with a logistic family".into())),
        }
    }
    Ok(())
}

/// Checks every referenced spec before any computation starts.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    match cfg {
        ExperimentConfig::Simulate(c) => {
            c.model.validate("model")?;
            kernel_ok(&c.kernel, &c.model)?;
            positive(c.n, "n")?;
            positive(c.replicates, "replicates")?;
            positive(c.thin, "thin")
        }
        ExperimentConfig::Fluctuation(c) => {
            c.model.validate("model")?;
            positive(c.n, "n")?;
            positive(c.replicates, "replicates")?;
            if c.m > c.n {
                return Err(Error::InvalidConfig(format!("m = {} exceeds n = {}", c.m, c.n)));
            }
            match &c.model {
                ModelSpec::Glm { glm, .. } if glm.d > 2 => Err(Error::InvalidConfig("model.glm.d must be <= 2 for posterior TV".into())),
                ModelSpec::Toy { toy, .. } if *toy != ToyModel::GaussianHierarchy => {
                    Err(Error::InvalidConfig("model.toy must be gaussian_hierarchy for fluctuation experiments".into()))
                }
                _ => Ok(()),
            }
        }
        ExperimentConfig::Certificate(c) => {
            if c.beta.is_empty() {
                return Err(Error::InvalidConfig("beta must be nonempty".into()));
            }
            let m = c.beta.len() * (c.beta.len() + 1) / 2;
            if let Some(l) = c.l_max {
                if l < m + 1 {
                    return Err(Error::InvalidConfig(format!("l_max must be at least m + 1 = {}", m + 1)));
                }
            }
            if let Some(law) = &c.covariates {
                law.validate()?;
            }
            positive(c.runs, "runs")
        }
        ExperimentConfig::Covering(c) => {
            c.model.validate("model")?;
            kernel_ok(&c.kernel, &c.model)?;
            positive(c.n, "n")?;
            positive(c.replicates, "replicates")?;
            if !(c.quantile > 0.0 && c.quantile <= 1.0) {
                return Err(Error::InvalidConfig("quantile must lie in (0, 1]".into()));
            }
            if let Some(t) = c.threshold {
                if t > c.n {
                    return Err(Error::InvalidConfig(format!("threshold {t} exceeds n = {}", c.n)));
                }
            }
            Ok(())
        }
        ExperimentConfig::Scaling(c) => {
            c.model.validate("model")?;
            kernel_ok(&c.kernel, &c.model)?;
            if c.n_grid.len() < 2 || c.n_grid.contains(&0) {
                return Err(Error::InvalidConfig("n_grid needs at least two positive sizes".into()));
            }
            positive(c.steps, "steps")
        }
        ExperimentConfig::Toy(c) => {
            if c.n_grid.is_empty() || c.n_grid.contains(&0) {
                return Err(Error::InvalidConfig("n_grid needs positive sizes".into()));
            }
            if let SubsampleRule::Fixed(m) = c.m {
                if c.n_grid.iter().any(|&n| m == 0 || m > n) {
                    return Err(Error::InvalidConfig("m must lie in 1..=n for every n".into()));
                }
            }
            positive(c.replicates, "replicates")
        }
        ExperimentConfig::Anticoncentration(c) => {
            if c.m_grid.is_empty() || c.m_grid.contains(&0) {
                return Err(Error::InvalidConfig("m_grid needs positive sizes".into()));
            }
            if !(c.eps > 0.0) || !(c.hi > c.lo) {
                return Err(Error::InvalidConfig("need eps > 0 and hi > lo".into()));
            }
            positive(c.samples, "samples")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"{
        "seed": 3,
        "model": {"type": "glm", "glm": {"family": {"family": "logistic"}, "prior": {"prior": "gaussian", "tau2": 1.0}, "d": 1}, "beta0": [0.5]},
        "kernel": {"kind": "generic", "batch_size": 5},
        "n": 100,
        "steps": 10
    }"#;

    #[test]
    fn parses_simulate() {
        let c = parse_config(ExperimentKind::Simulate, SIM).unwrap();
        assert_eq!(c.seed, Some(3));
        match c.body {
            ExperimentConfig::Simulate(s) => assert_eq!(s.kernel.batch_size, 5),
            _ => panic!(),
        }
    }

    #[test]
    fn missing_kernel_is_named() {
        let text = SIM.replace(r#""kernel": {"kind": "generic", "batch_size": 5},"#, "");
        let e = parse_config(ExperimentKind::Simulate, &text).unwrap_err().to_string();
        assert!(e.contains("kernel"), "{e}");
    }

    #[test]
    fn nested_errors_carry_a_path() {
        let text = SIM.replace(r#""batch_size": 5"#, r#""batch_size": "five""#);
        let e = parse_config(ExperimentKind::Simulate, &text).unwrap_err().to_string();
        assert!(e.contains("kernel.batch_size"), "{e}");
    }

    #[test]
    fn mismatched_experiment_is_rejected() {
        let text = SIM.replacen('{', r#"{"experiment": "toy","#, 1);
        assert!(parse_config(ExperimentKind::Simulate, &text).is_err());
    }

    #[test]
    fn semantic_validation_runs_before_work() {
        let text = SIM.replace(r#""beta0": [0.5]"#, r#""beta0": [0.5, 1.0]"#);
        let e = parse_config(ExperimentKind::Simulate, &text).unwrap_err().to_string();
        assert!(e.contains("model.beta0"), "{e}");
    }
}
