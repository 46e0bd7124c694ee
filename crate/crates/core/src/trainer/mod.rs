//! Episode rollouts, returns, the batch REINFORCE update, greedy
//! evaluation and a finite-difference gradient check.

mod gradcheck;
mod rollout;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport};
pub use rollout::{
    evaluate, idle_action, inspect, replay, rollout, ActionMode, Controller, EvalSummary,
    GreedyPolicy, IdleController, ScriptedMirror, SparseVec, StepRecord, Trajectory,
};

use crate::autodiff::{sgd_step, Direction, Grads, Tape};
use crate::envs::Scenario;
use crate::error::{Error, Result};
use crate::policy::{log_prob, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// `v_t = Σ_{j≤t} r_j`.
    ToDate,
    /// `v_t = Σ_{j≥t} r_j`.
    ToGo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSharing {
    PerAgent,
    /// Every agent is weighted by the team's summed reward.
    Team,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOptions {
    pub return_mode: ReturnMode,
    pub baseline: bool,
    pub reward_sharing: RewardSharing,
    pub clip_grad_norm: Option<f64>,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            return_mode: ReturnMode::ToDate,
            baseline: false,
            reward_sharing: RewardSharing::PerAgent,
            clip_grad_norm: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean_return: f64,
    pub win_rate: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub sigma: f64,
    pub episode_len_mean: f64,
}

/// Per-step, per-agent rewards with the terminal reward folded into the
/// final step for every agent.
pub fn step_rewards(traj: &Trajectory, sharing: RewardSharing) -> Vec<Vec<f64>> {
    let n = traj.n_agents;
    let mut r: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.rewards.clone()).collect();
    if let Some(last) = r.last_mut() {
        for x in last.iter_mut() {
            *x += traj.terminal_reward;
        }
    }
    if sharing == RewardSharing::Team {
        for row in &mut r {
            let total: f64 = row.iter().sum();
            *row = vec![total; n];
        }
    }
    r
}

/// `v_t^i` for every step and agent.
pub fn compute_returns(traj: &Trajectory, mode: ReturnMode, sharing: RewardSharing) -> Vec<Vec<f64>> {
    let r = step_rewards(traj, sharing);
    returns_from_rewards(&r, mode)
}

pub fn returns_from_rewards(r: &[Vec<f64>], mode: ReturnMode) -> Vec<Vec<f64>> {
    let mut v = r.to_vec();
    let t_len = r.len();
    if t_len == 0 {
        return v;
    }
    let n = r[0].len();
    for i in 0..n {
        match mode {
            ReturnMode::ToDate => {
                let mut acc = 0.0;
                for t in 0..t_len {
                    acc += r[t][i];
                    v[t][i] = acc;
                }
            }
            ReturnMode::ToGo => {
                let mut acc = 0.0;
                for t in (0..t_len).rev() {
                    acc += r[t][i];
                    v[t][i] = acc;
                }
            }
        }
    }
    v
}

/// Weights `v_t^i - b_t` for every acting entry, `b_t` being the batch
/// mean over entries acting at step `t`, in (trajectory, step, agent)
/// order; `None` where the agent did not act.
fn weights(trajs: &[Trajectory], opts: &UpdateOptions) -> Vec<Vec<Vec<Option<f64>>>> {
    let mut out: Vec<Vec<Vec<Option<f64>>>> = trajs
        .iter()
        .map(|tr| {
            let v = compute_returns(tr, opts.return_mode, opts.reward_sharing);
            tr.steps
                .iter()
                .zip(v)
                .map(|(s, vt)| {
                    s.actions
                        .iter()
                        .zip(vt)
                        .map(|(a, x)| a.map(|_| x))
                        .collect()
                })
                .collect()
        })
        .collect();
    if opts.baseline {
        let horizon = out.iter().map(Vec::len).max().unwrap_or(0);
        for t in 0..horizon {
            let (sum, count) = out
                .iter()
                .filter_map(|tr| tr.get(t))
                .flatten()
                .flatten()
                .fold((0.0, 0usize), |(s, c), w| (s + w, c + 1));
            if count == 0 {
                continue;
            }
            let b = sum / count as f64;
            for w in out.iter_mut().filter_map(|tr| tr.get_mut(t)).flatten().flatten() {
                *w -= b;
            }
        }
    }
    out
}

/// Gradient of `J = (1/B) Σ_traj Σ_t Σ_i log π(a_t^i) · w_t^i` and the
/// value of `J`. No clipping is applied.
pub fn policy_gradient(policy: &Policy, trajs: &[Trajectory], opts: &UpdateOptions) -> Result<(Grads<f64>, f64)> {
    if trajs.is_empty() {
        return Err(Error::contract("batch update needs at least one trajectory"));
    }
    let w = weights(trajs, opts);
    let mut total = Grads::zeros_like(policy.params());
    let mut objective = 0.0;
    for (traj, wt) in trajs.iter().zip(&w) {
        let nonzero = wt.iter().flatten().flatten().any(|&x| x != 0.0);
        if !nonzero {
            continue;
        }
        let mut tape = Tape::with_params(policy.params());
        let mut terms = Vec::new();
        let mut coeffs = Vec::new();
        rollout::unroll(policy, &mut tape, traj, |tape, t, i, out| {
            let (Some(action), Some(weight)) = (traj.steps[t].actions[i], wt[t][i]) else {
                return Ok(());
            };
            if weight != 0.0 {
                terms.push(log_prob(tape, out.head, &action, traj.sigma)?);
                coeffs.push(weight);
            }
            Ok(())
        })?;
        let lps = tape.concat(&terms, 0)?;
        let c = tape.constant(crate::autodiff::Tensor::vector(coeffs)?);
        let weighted = tape.mul(lps, c)?;
        let j = tape.sum(weighted)?;
        objective += tape.value(j).item()?;
        let g = tape.backward(j)?;
        total.add_assign(&g.into_params())?;
    }
    let b = trajs.len() as f64;
    total.scale(1.0 / b);
    Ok((total, objective / b))
}

/// One ascent step `θ ← θ + λ·∇J` on a batch of trajectories.
pub fn batch_update(
    policy: &mut Policy,
    trajs: &[Trajectory],
    learning_rate: f64,
    opts: &UpdateOptions,
) -> Result<BatchStats> {
    let (mut grads, _) = policy_gradient(policy, trajs, opts)?;
    let grad_norm = match opts.clip_grad_norm {
        Some(max) => grads.clip_global_norm(max),
        None => grads.global_norm(),
    };
    sgd_step(policy.params_mut(), &grads, learning_rate, Direction::Ascent)?;
    Ok(batch_stats(trajs, grad_norm))
}

pub fn batch_stats(trajs: &[Trajectory], grad_norm: f64) -> BatchStats {
    let b = trajs.len().max(1) as f64;
    BatchStats {
        mean_return: trajs.iter().map(Trajectory::mean_return).sum::<f64>() / b,
        win_rate: trajs.iter().filter(|t| t.outcome.is_win()).count() as f64 / b,
        grad_norm,
        sigma: trajs.first().map_or(0.0, |t| t.sigma),
        episode_len_mean: trajs.iter().map(|t| t.steps.len() as f64).sum::<f64>() / b,
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one training episode, a pure function of its coordinates.
pub fn episode_seed(seed: u64, epoch: u64, batch: u64, episode: u64) -> u64 {
    mix(mix(mix(mix(seed) ^ epoch) ^ batch) ^ episode)
}

/// Seed for evaluation episode `episode`; independent of training progress.
pub fn eval_seed(seed: u64, episode: u64) -> u64 {
    mix(mix(seed ^ 0x5EED_E7A1) ^ episode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub update: UpdateOptions,
    pub sigma: f64,
    /// Multiplicative decay of σ per epoch; 1 keeps it fixed.
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn sigma_at(&self, epoch: usize) -> f64 {
        (self.sigma * self.sigma_decay.powi(epoch as i32)).max(self.sigma_min)
    }
}

/// Stateful training driver; everything beyond the parameters and the
/// epoch counter is derived from the configuration.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub policy: Policy,
    pub scenario: Scenario,
    pub config: TrainerConfig,
}

impl Trainer {
    pub fn new(policy: Policy, scenario: Scenario, config: TrainerConfig) -> Self {
        Trainer {
            policy,
            scenario,
            config,
        }
    }

    pub fn collect(&self, epoch: usize, batch: usize) -> Result<Vec<Trajectory>> {
        let sigma = self.config.sigma_at(epoch);
        (0..self.config.batch_size)
            .map(|k| {
                let s = episode_seed(self.config.seed, epoch as u64, batch as u64, k as u64);
                rollout(&self.policy, &self.scenario, s, ActionMode::Sample { sigma })
            })
            .collect()
    }

    pub fn run_batch(&mut self, epoch: usize, batch: usize) -> Result<BatchStats> {
        let trajs = self.collect(epoch, batch)?;
        batch_update(&mut self.policy, &trajs, self.config.learning_rate, &self.config.update)
    }

    /// Runs all batches of one epoch, reporting each batch's statistics.
    pub fn run_epoch(&mut self, epoch: usize, mut on_batch: impl FnMut(usize, &BatchStats) -> Result<()>) -> Result<()> {
        for b in 0..self.config.batches_per_epoch {
            let stats = self.run_batch(epoch, b)?;
            on_batch(b, &stats)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalSummary> {
        evaluate(
            &mut GreedyPolicy::new(&self.policy),
            &self.scenario,
            episodes,
            self.config.seed,
        )
    }
}
