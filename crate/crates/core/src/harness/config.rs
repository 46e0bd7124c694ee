use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::Scenario;
use crate::error::{Error, Result};
use crate::policy::{ModelKind, Policy, PolicyConfig, HIDDEN};
use crate::trainer::{ReturnMode, RewardSharing, TrainerConfig, UpdateOptions};

/// Environment variable that replaces `harness.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MSMARL_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub preset: String,
    /// Overrides the preset's episode horizon.
    pub horizon: Option<usize>,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            preset: "combat_5v5".into(),
            horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub use_occupancy: bool,
    pub share_slaves: bool,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Msmarl,
            use_occupancy: true,
            share_slaves: true,
            hidden: HIDDEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub return_mode: ReturnMode,
    pub baseline: bool,
    pub reward_sharing: RewardSharing,
    pub sigma: f64,
    /// Per-epoch multiplier on σ; 1 keeps σ fixed.
    pub sigma_decay: f64,
    pub sigma_min: f64,
    /// Defaults per environment family when absent.
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Global-norm threshold; 0 disables clipping.
    pub clip_grad_norm: f64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            return_mode: ReturnMode::ToDate,
            baseline: false,
            reward_sharing: RewardSharing::PerAgent,
            sigma: 0.05,
            sigma_decay: 1.0,
            sigma_min: 0.0,
            batch_size: None,
            learning_rate: None,
            epochs: 50,
            batches_per_epoch: 100,
            clip_grad_norm: 5.0,
            eval_episodes: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub output_dir: PathBuf,
    /// Run directory name below `output_dir`; the config file stem when
    /// absent.
    pub run_name: Option<String>,
    /// Records elapsed milliseconds in metrics; the column is 0 when off.
    pub log_wall_time: bool,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            output_dir: PathBuf::from("runs"),
            run_name: None,
            log_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub env: EnvSection,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub harness: HarnessSection,
}

impl Config {
    /// Parses, fills family defaults and validates.
    pub fn parse(text: &str) -> Result<Config> {
        let mut config: Config = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Config::parse(&text)?;
        if config.harness.run_name.is_none() {
            config.harness.run_name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(config)
    }

    /// Replaces absent family-dependent values with their defaults, then
    /// validates every field.
    pub fn resolve(&mut self) -> Result<()> {
        let scenario = Scenario::preset(&self.env.preset)?;
        let (batch, lr) = match scenario {
            Scenario::Traffic(_) => (16, 0.001),
            Scenario::Combat(_) => (144, 0.001),
            Scenario::Arena(_) => (4, 0.0005),
        };
        self.trainer.batch_size.get_or_insert(batch);
        self.trainer.learning_rate.get_or_insert(lr);
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                problems.push(format!("`{field}`: {msg}"));
            }
        };
        let t = &self.trainer;
        check(t.batch_size.is_some_and(|b| b > 0), "trainer.batch_size", "must be at least 1");
        check(
            t.learning_rate.is_some_and(|l| l.is_finite() && l >= 0.0),
            "trainer.learning_rate",
            "must be finite and non-negative",
        );
        check(t.sigma.is_finite() && t.sigma > 0.0, "trainer.sigma", "must be positive");
        check(
            t.sigma_decay.is_finite() && t.sigma_decay > 0.0 && t.sigma_decay <= 1.0,
            "trainer.sigma_decay",
            "must lie in (0, 1]",
        );
        check(
            t.sigma_min.is_finite() && t.sigma_min >= 0.0 && t.sigma_min <= t.sigma,
            "trainer.sigma_min",
            "must lie in [0, sigma]",
        );
        check(t.epochs > 0, "trainer.epochs", "must be at least 1");
        check(t.batches_per_epoch > 0, "trainer.batches_per_epoch", "must be at least 1");
        check(
            t.clip_grad_norm.is_finite() && t.clip_grad_norm >= 0.0,
            "trainer.clip_grad_norm",
            "must be finite and non-negative",
        );
        check(t.eval_episodes > 0, "trainer.eval_episodes", "must be at least 1");
        check(self.model.hidden > 0, "model.hidden", "must be positive");
        if let Some(name) = &self.harness.run_name {
            check(
                !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != "..",
                "harness.run_name",
                "must be a plain directory name",
            );
        }
        match self.scenario() {
            Ok(s) => {
                if let Err(e) = self.policy_config(&s).validate() {
                    problems.push(e.to_string());
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        match problems.len() {
            0 => Ok(()),
            _ => Err(Error::InvalidConfig(problems)),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::preset(&self.env.preset)?;
        if let Some(h) = self.env.horizon {
            s.set_horizon(h);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn policy_config(&self, scenario: &Scenario) -> PolicyConfig {
        let (r, c) = scenario.occupancy_dims();
        PolicyConfig {
            kind: self.model.kind,
            n_agents: scenario.n_agents(),
            obs_dim: scenario.obs_dim(),
            occupancy_dim: r * c,
            action_space: scenario.action_space(),
            hidden: self.model.hidden,
            use_occupancy: self.model.use_occupancy,
            share_slaves: self.model.share_slaves,
        }
    }

    /// Freshly initialised policy; the seed is the trainer seed.
    pub fn policy(&self) -> Result<Policy> {
        let scenario = self.scenario()?;
        Policy::new(self.policy_config(&scenario), self.trainer.seed)
    }

    pub fn update_options(&self) -> UpdateOptions {
        UpdateOptions {
            return_mode: self.trainer.return_mode,
            baseline: self.trainer.baseline,
            reward_sharing: self.trainer.reward_sharing,
            clip_grad_norm: (self.trainer.clip_grad_norm > 0.0).then_some(self.trainer.clip_grad_norm),
        }
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let t = &self.trainer;
        let missing = |field: &str| Error::config(field, "unresolved; call resolve first");
        Ok(TrainerConfig {
            update: self.update_options(),
            sigma: t.sigma,
            sigma_decay: t.sigma_decay,
            sigma_min: t.sigma_min,
            batch_size: t.batch_size.ok_or_else(|| missing("trainer.batch_size"))?,
            learning_rate: t.learning_rate.ok_or_else(|| missing("trainer.learning_rate"))?,
            epochs: t.epochs,
            batches_per_epoch: t.batches_per_epoch,
            eval_episodes: t.eval_episodes,
            seed: t.seed,
        })
    }

    /// Canonical text: every field, explicit.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }

    /// `output_dir` (or the override from the environment) joined with
    /// the run name.
    pub fn run_dir(&self) -> PathBuf {
        let base = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.harness.output_dir.clone());
        base.join(self.harness.run_name.as_deref().unwrap_or("run"))
    }
}
