use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{hex, Checkpoint};
use super::config::Config;
use super::metrics::{truncate_metrics, MetricsRow, MetricsWriter};
use crate::envs::{Action, Env, Outcome, Scenario};
use crate::error::{Error, Result};
use crate::policy::{Decomposition, Policy};
use crate::trainer::{
    evaluate, eval_seed, grad_check, inspect, replay, rollout, ActionMode, EvalSummary, GradCheckReport,
    GreedyPolicy, Trainer, Trajectory,
};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const METRICS: &str = "metrics.csv";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const CHECKPOINTS: &str = "checkpoints";

pub fn checkpoint_path(run_dir: &Path, epoch: u64) -> PathBuf {
    run_dir.join(CHECKPOINTS).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Highest-numbered checkpoint in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(CHECKPOINTS);
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse::<u64>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Completed training epochs.
    pub epoch: u64,
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub eval: EvalSummary,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Restores a policy and its configuration from a checkpoint file.
pub fn load_policy(path: &Path) -> Result<(Config, Policy, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let config = Config::parse(&ckpt.config_text)?;
    let mut policy = config.policy()?;
    ckpt.apply(&mut policy)?;
    Ok((config, policy, ckpt))
}

/// Trains into `config.run_dir()`; with `resume`, continues after the
/// newest checkpoint found there.
pub fn train(config: &Config, resume: bool) -> Result<RunSummary> {
    let dir = config.run_dir();
    let ckpt_dir = dir.join(CHECKPOINTS);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let text = config.to_toml()?;
    let hash = config.hash()?;
    log::info!("run directory {}", dir.display());
    log::info!("resolved config (sha256 {}):\n{text}", hex(&hash));

    let metrics_path = dir.join(METRICS);
    let scenario = config.scenario()?;
    let mut policy = config.policy()?;
    let mut start = 0u64;
    match latest_checkpoint(&dir)? {
        Some(path) if resume => {
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.config_hash != hash {
                log::warn!(
                    "config hash of {} ({}) differs from the current config ({}); resuming anyway",
                    path.display(),
                    hex(&ckpt.config_hash),
                    hex(&hash)
                );
            }
            ckpt.apply(&mut policy)?;
            start = ckpt.epoch;
            log::info!("resuming from {} after epoch {start}", path.display());
            if metrics_path.exists() {
                truncate_metrics(&metrics_path, start as usize)?;
            }
        }
        Some(path) => {
            return Err(Error::contract(format!(
                "{} already holds checkpoints (e.g. {}); pass --resume or choose another run name",
                dir.display(),
                path.display()
            )))
        }
        None => {
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
            }
            Checkpoint::from_policy(&policy, hash, 0, text.clone()).save(&checkpoint_path(&dir, 0))?;
        }
    }
    let resolved = dir.join(RESOLVED_CONFIG);
    std::fs::write(&resolved, &text).map_err(|e| Error::io(&resolved, e))?;

    let tc = config.trainer_config()?;
    let epochs = tc.epochs as u64;
    let eval_episodes = tc.eval_episodes;
    let mut trainer = Trainer::new(policy, scenario, tc);
    let mut metrics = MetricsWriter::open(&metrics_path)?;
    let clock = Instant::now();
    let wall = |on: bool| if on { clock.elapsed().as_millis() as u64 } else { 0 };
    let timed = config.harness.log_wall_time;
    let mut last_eval = None;
    for epoch in start..epochs {
        trainer.run_epoch(epoch as usize, |batch, s| {
            log::debug!("epoch {epoch} batch {batch}: return {:.4} grad {:.4}", s.mean_return, s.grad_norm);
            metrics.append(&MetricsRow {
                epoch: epoch as usize,
                batch: Some(batch),
                mean_return: s.mean_return,
                win_rate: Some(s.win_rate),
                grad_norm: Some(s.grad_norm),
                sigma: Some(s.sigma),
                episode_len_mean: s.episode_len_mean,
                wall_ms: wall(timed),
            })
        })?;
        let eval = trainer.evaluate(eval_episodes)?;
        metrics.append(&MetricsRow {
            epoch: epoch as usize,
            batch: None,
            mean_return: eval.mean_return,
            win_rate: Some(eval.win_rate),
            grad_norm: None,
            sigma: None,
            episode_len_mean: 0.0,
            wall_ms: wall(timed),
        })?;
        log::info!("epoch {} eval win rate {:.3}", epoch + 1, eval.win_rate);
        Checkpoint::from_policy(&trainer.policy, hash, epoch + 1, text.clone())
            .save(&checkpoint_path(&dir, epoch + 1))?;
        last_eval = Some(eval);
    }
    let eval = match last_eval {
        Some(e) => e,
        None => trainer.evaluate(eval_episodes)?,
    };
    let final_epoch = epochs.max(start);
    let summary = RunSummary {
        epoch: final_epoch,
        config_hash: hex(&hash),
        checkpoint: checkpoint_path(&dir, final_epoch),
        eval,
    };
    write_json(&dir.join(EVAL_SUMMARY), &summary)?;
    Ok(summary)
}

/// Greedy evaluation of a checkpoint; the seed defaults to the trainer
/// seed it was trained with, reproducing the run's own evaluation.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: Option<u64>) -> Result<EvalSummary> {
    let (config, policy, _) = load_policy(path)?;
    let scenario = config.scenario()?;
    evaluate(
        &mut GreedyPolicy::new(&policy),
        &scenario,
        episodes,
        seed.unwrap_or(config.trainer.seed),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpStep {
    pub t: usize,
    /// Controlled-agent positions before the step; `None` for empty slots.
    pub positions: Vec<Option<[f64; 2]>>,
    pub alive: Vec<bool>,
    pub actions: Vec<Option<Action>>,
    pub rewards: Vec<f64>,
    /// Master and slave contributions to each agent's head output.
    pub decomposition: Vec<Option<DumpDecomposition>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpDecomposition {
    pub master: Vec<f64>,
    pub slave: Vec<f64>,
}

impl From<Decomposition> for DumpDecomposition {
    fn from(d: Decomposition) -> Self {
        DumpDecomposition {
            master: d.master,
            slave: d.slave,
        }
    }
}

/// Human-readable episode trace that also carries the raw trajectory so
/// it can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutDump {
    pub preset: String,
    pub horizon: usize,
    pub env_seed: u64,
    pub greedy: bool,
    pub outcome: Outcome,
    pub terminal_reward: f64,
    pub totals: Vec<f64>,
    pub steps: Vec<DumpStep>,
    pub trajectory: Trajectory,
}

fn positions_along(scenario: &Scenario, traj: &Trajectory) -> Result<Vec<Vec<Option<[f64; 2]>>>> {
    let mut env = Env::reset(scenario, traj.env_seed)?;
    let mut out = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        out.push(env.agent_positions());
        env.step(&s.actions)?;
    }
    Ok(out)
}

/// Plays one episode of a checkpoint's policy, greedy unless `sample`.
pub fn dump_rollout(path: &Path, seed: Option<u64>, sample: bool) -> Result<RolloutDump> {
    let (config, policy, ckpt) = load_policy(path)?;
    let scenario = config.scenario()?;
    let env_seed = seed.unwrap_or_else(|| eval_seed(config.trainer.seed, 0));
    let mode = if sample {
        let tc = config.trainer_config()?;
        ActionMode::Sample {
            sigma: tc.sigma_at(ckpt.epoch as usize),
        }
    } else {
        ActionMode::Greedy
    };
    let traj = rollout(&policy, &scenario, env_seed, mode)?;
    let decomposition = inspect(&policy, &traj)?;
    let positions = positions_along(&scenario, &traj)?;
    let steps = traj
        .steps
        .iter()
        .zip(decomposition)
        .zip(positions)
        .enumerate()
        .map(|(t, ((s, d), positions))| DumpStep {
            t,
            positions,
            alive: s.alive.clone(),
            actions: s.actions.clone(),
            rewards: s.rewards.clone(),
            decomposition: d.into_iter().map(|x| x.map(Into::into)).collect(),
        })
        .collect();
    Ok(RolloutDump {
        preset: config.env.preset.clone(),
        horizon: scenario.horizon(),
        env_seed,
        greedy: !sample,
        outcome: traj.outcome,
        terminal_reward: traj.terminal_reward,
        totals: traj.totals.clone(),
        steps,
        trajectory: traj,
    })
}

pub fn write_rollout_dump(dump: &RolloutDump, path: &Path) -> Result<()> {
    write_json(path, dump)
}

pub fn read_rollout_dump(path: &Path) -> Result<RolloutDump> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-simulates a dump and checks rewards, liveness, outcome and the
/// recorded positions.
pub fn replay_dump(dump: &RolloutDump) -> Result<()> {
    let mut scenario = Scenario::preset(&dump.preset)?;
    scenario.set_horizon(dump.horizon);
    replay(&scenario, &dump.trajectory)?;
    let positions = positions_along(&scenario, &dump.trajectory)?;
    if dump.steps.len() != positions.len() {
        return Err(Error::contract("dump step count differs from its trajectory"));
    }
    for (s, p) in dump.steps.iter().zip(positions) {
        let t = &dump.trajectory.steps[s.t];
        if s.positions != p || s.actions != t.actions || s.rewards != t.rewards || s.alive != t.alive {
            return Err(Error::contract(format!("dump diverges from replay at step {}", s.t)));
        }
    }
    if dump.outcome != dump.trajectory.outcome || dump.totals != dump.trajectory.recomputed_totals() {
        return Err(Error::contract("dump summary differs from its trajectory"));
    }
    Ok(())
}

/// Finite-difference check of the update objective under `config`.
pub fn gradcheck_config(config: &Config, params: usize, tolerance: f64) -> Result<GradCheckReport> {
    let scenario = config.scenario()?;
    let policy = config.policy()?;
    grad_check(
        &policy,
        &scenario,
        &config.update_options(),
        config.trainer.sigma,
        params,
        tolerance,
        config.trainer.seed,
    )
}
