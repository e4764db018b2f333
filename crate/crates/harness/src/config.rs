//! Experiment configuration files.
//!
//! Every section is optional except `[experiment]`; missing keys take the
//! defaults below. Unknown keys are rejected with their full path so typos
//! do not silently fall back to a default.

use std::path::{Path, PathBuf};

use kogun::envs::CartPoleParams;
use kogun::policy::{policy_registry, variant_needs_rules, MixSchedule, PolicyConfig};
use kogun::ppo::{EvalConfig, PpoConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub rules: RulesSection,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub variant: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the output root.
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Checkpoint every this many updates; 0 saves only the final state.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub id: String,
    /// Reward accumulation window; 1 is dense reward.
    pub delay_d: usize,
    pub physics: PhysicsSection,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            id: "cartpole".into(),
            delay_d: 1,
            physics: PhysicsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub angle_limit_deg: f64,
    pub position_limit: f64,
    pub max_steps: usize,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = CartPoleParams::default();
        Self {
            gravity: p.gravity,
            cart_mass: p.cart_mass,
            pole_mass: p.pole_mass,
            half_length: p.half_length,
            force_mag: p.force_mag,
            dt: p.dt,
            angle_limit_deg: p.angle_limit_deg,
            position_limit: p.position_limit,
            max_steps: p.max_steps,
        }
    }
}

impl PhysicsSection {
    pub fn params(&self) -> CartPoleParams {
        CartPoleParams {
            gravity: self.gravity,
            cart_mass: self.cart_mass,
            pole_mass: self.pole_mass,
            half_length: self.half_length,
            force_mag: self.force_mag,
            dt: self.dt,
            angle_limit_deg: self.angle_limit_deg,
            position_limit: self.position_limit,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulesSection {
    /// `.kgr` file, relative to the config file, or `bundled:<env id>`.
    pub path: Option<String>,
    /// Initial whole-rule weights, one per rule.
    pub confidences: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_updates: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        Self {
            lr: p.lr,
            gamma: p.gamma,
            lambda: p.lambda,
            horizon: p.horizon,
            clip_eps: p.clip_eps,
            epochs: p.epochs,
            minibatch: p.minibatch,
            value_coef: p.value_coef,
            entropy_coef: p.entropy_coef,
            max_grad_norm: p.max_grad_norm,
            total_updates: p.total_updates,
            normalize_advantages: p.normalize_advantages,
        }
    }
}

impl PpoSection {
    pub fn config(&self) -> PpoConfig {
        PpoConfig {
            lr: self.lr,
            gamma: self.gamma,
            lambda: self.lambda,
            horizon: self.horizon,
            clip_eps: self.clip_eps,
            epochs: self.epochs,
            minibatch: self.minibatch,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            total_updates: self.total_updates,
            normalize_advantages: self.normalize_advantages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub hidden: usize,
    pub temperature: f64,
    pub log_std_init: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            hidden: p.hidden,
            temperature: p.temperature,
            log_std_init: p.log_std_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSection {
    pub w1_start: f64,
    pub w1_end: f64,
    /// Defaults to `ppo.total_updates`.
    pub total_updates: Option<usize>,
}

impl Default for MixSection {
    fn default() -> Self {
        let m = MixSchedule::default();
        Self {
            w1_start: m.w1_start,
            w1_end: m.w1_end,
            total_updates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub every: usize,
    pub controller_every: usize,
    pub greedy: bool,
    /// Write elapsed seconds into the logs; turn off for byte-identical reruns.
    pub wall_clock: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            episodes: e.episodes,
            every: e.every,
            controller_every: e.controller_every,
            greedy: e.greedy,
            wall_clock: e.wall_clock,
        }
    }
}

impl EvalSection {
    pub fn config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.episodes,
            every: self.every,
            controller_every: self.controller_every,
            greedy: self.greedy,
            wall_clock: self.wall_clock,
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn schedule(&self) -> MixSchedule {
        MixSchedule {
            w1_start: self.mix.w1_start,
            w1_end: self.mix.w1_end,
            total_updates: self.mix.total_updates.unwrap_or(self.ppo.total_updates),
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            variant: self.experiment.variant.clone(),
            hidden: self.policy.hidden,
            temperature: self.policy.temperature,
            log_std_init: self.policy.log_std_init,
            confidences: self.rules.confidences.clone(),
        }
    }

    /// Checks cross-field requirements that the file format cannot express.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        let variants = policy_registry();
        if !variants.contains(&self.experiment.variant) {
            return invalid(format!(
                "experiment.variant: unknown variant `{}` (known: {})",
                self.experiment.variant,
                variants.names().join(", ")
            ));
        }
        if variant_needs_rules(&self.experiment.variant) && self.rules.path.is_none() {
            return invalid(format!(
                "rules.path: variant `{}` needs a rule base",
                self.experiment.variant
            ));
        }
        if self.experiment.seeds.is_empty() {
            return invalid("experiment.seeds: at least one seed is required".into());
        }
        if self.env.delay_d == 0 {
            return invalid("env.delay_d: must be at least 1".into());
        }
        if self.policy.hidden == 0 {
            return invalid("policy.hidden: must be at least 1".into());
        }
        self.ppo.config().validate().map_err(|e| HarnessError::Invalid(format!("ppo: {e}")))?;
        self.schedule().validate().map_err(|e| HarnessError::Invalid(format!("mix: {e}")))?;
        self.env
            .physics
            .params()
            .validate()
            .map_err(|e| HarnessError::Invalid(format!("env.physics: {e}")))?;
        if self.eval.episodes == 0 || self.eval.every == 0 {
            return invalid("eval: episodes and every must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses TOML text; errors name the offending key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::Parse {
            path,
            message: e.into_inner().message().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let config = parse_config(&text)?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, base_dir })
}

/// Applies `key.path = value` overrides to TOML text before parsing.
pub fn apply_overrides(text: &str, overrides: &[(String, toml::Value)]) -> Result<String> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Parse {
        path: String::new(),
        message: e.message().to_string(),
    })?;
    for (key, value) in overrides {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts
            .pop()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| HarnessError::Invalid(format!("empty override key `{key}`")))?;
        let mut table = &mut doc;
        for p in parts {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| HarnessError::Invalid(format!("override `{key}`: `{p}` is not a section")))?;
        }
        table.insert(last.to_string(), value.clone());
    }
    Ok(toml::to_string(&doc).expect("tables serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "[experiment]\nname = \"t\"\nvariant = \"flat-ppo\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MIN).unwrap();
        assert_eq!(c.experiment.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(c.ppo.horizon, 128);
        assert_eq!(c.schedule().total_updates, c.ppo.total_updates);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MIN}[ppo]\nlearning_rte = 0.1\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rte"), "{err}");
        assert!(err.contains("ppo"), "{err}");
    }

    #[test]
    fn guided_variant_needs_rules() {
        let text = MIN.replace("flat-ppo", "kogun-hyper");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("rules.path"), "{err}");
        let text = format!("{text}[rules]\npath = \"bundled:cartpole\"\n");
        parse_config(&text).unwrap();
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let text = apply_overrides(
            MIN,
            &[
                ("experiment.variant".into(), toml::Value::String("pure-controller".into())),
                ("env.delay_d".into(), toml::Value::Integer(100)),
            ],
        )
        .unwrap();
        let text = format!("{text}\n[rules]\npath = \"bundled:cartpole\"\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.experiment.variant, "pure-controller");
        assert_eq!(c.env.delay_d, 100);
    }

    #[test]
    fn bad_values_rejected() {
        for extra in ["[ppo]\ngamma = 1.5\n", "[env]\ndelay_d = 0\n", "[mix]\nw1_start = 2.0\n"] {
            assert!(parse_config(&format!("{MIN}{extra}")).is_err(), "{extra}");
        }
        let err = parse_config(&MIN.replace("flat-ppo", "nope")).unwrap_err().to_string();
        assert!(err.contains("unknown variant"), "{err}");
    }
}
