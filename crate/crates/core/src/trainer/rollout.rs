use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix;
use crate::autodiff::Tape;
use crate::envs::{terminal_reward, Action, ActionSpace, Env, Outcome, Scenario};
use crate::error::{Error, Result};
use crate::policy::{
    greedy_discrete, sample_discrete, sample_gaussian, AgentOut, Decomposition, Policy, State, StepInput,
};

/// Observation stored as its nonzero entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub len: usize,
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64]) -> Self {
        let mut index = Vec::new();
        let mut value = Vec::new();
        for (k, &x) in v.iter().enumerate() {
            if x != 0.0 {
                index.push(k as u32);
                value.push(x);
            }
        }
        SparseVec {
            len: v.len(),
            index,
            value,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (&k, &x) in self.index.iter().zip(&self.value) {
            out[k as usize] = x;
        }
        out
    }
}

/// Everything observed and chosen at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub obs: Vec<Option<SparseVec>>,
    pub occupancy: Vec<f64>,
    pub alive: Vec<bool>,
    pub fresh: Vec<bool>,
    pub actions: Vec<Option<Action>>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_seed: u64,
    pub n_agents: usize,
    /// Exploration σ the actions were drawn with; 0 for greedy play.
    pub sigma: f64,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub terminal_reward: f64,
    /// Per-agent `R_i`, accumulated while playing.
    pub totals: Vec<f64>,
}

impl Trajectory {
    /// Agents that acted at least once.
    pub fn participants(&self) -> Vec<bool> {
        let mut p = vec![false; self.n_agents];
        for s in &self.steps {
            for (i, a) in s.actions.iter().enumerate() {
                p[i] |= a.is_some();
            }
        }
        p
    }

    /// Mean `R_i` over participating agents.
    pub fn mean_return(&self) -> f64 {
        let p = self.participants();
        let n = p.iter().filter(|&&x| x).count();
        if n == 0 {
            return 0.0;
        }
        self.totals
            .iter()
            .zip(&p)
            .filter(|(_, &x)| x)
            .map(|(r, _)| r)
            .sum::<f64>()
            / n as f64
    }

    /// `Σ_t r_t^i + r_terminal`, recomputed from the records.
    pub fn recomputed_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_agents];
        for s in &self.steps {
            for (x, r) in t.iter_mut().zip(&s.rewards) {
                *x += r;
            }
        }
        for x in &mut t {
            *x += self.terminal_reward;
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionMode {
    Sample { sigma: f64 },
    Greedy,
}

fn fresh_mask(alive: &[bool], prev_alive: &[bool], spawned: &[bool]) -> Vec<bool> {
    alive
        .iter()
        .zip(prev_alive)
        .zip(spawned)
        .map(|((&a, &p), &s)| a && (!p || s))
        .collect()
}

fn dense_obs(obs: &[Option<SparseVec>]) -> Vec<Vec<f64>> {
    obs.iter()
        .map(|o| o.as_ref().map_or_else(Vec::new, SparseVec::to_dense))
        .collect()
}

fn choose<R: rand::Rng>(space: ActionSpace, head: &[f64], mode: ActionMode, rng: &mut R) -> Action {
    match (space, mode) {
        (ActionSpace::Discrete(_), ActionMode::Greedy) => Action::Discrete(greedy_discrete(head)),
        (ActionSpace::Discrete(_), ActionMode::Sample { .. }) => Action::Discrete(sample_discrete(head, rng)),
        (ActionSpace::Continuous(_), mode) => {
            let sigma = match mode {
                ActionMode::Sample { sigma } => sigma,
                ActionMode::Greedy => 0.0,
            };
            let a = sample_gaussian(head, sigma, rng);
            Action::Continuous([a[0], a[1], a[2]])
        }
    }
}

/// Plays one episode with the policy. `seed` fixes both the environment
/// and the action noise.
pub fn rollout(policy: &Policy, scenario: &Scenario, seed: u64, mode: ActionMode) -> Result<Trajectory> {
    if let ActionMode::Sample { sigma } = mode {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::contract("sigma must be finite and non-negative"));
        }
    }
    if matches!(scenario.action_space(), ActionSpace::Continuous(d) if d != 3) {
        return Err(Error::contract("continuous actions must be 3-dimensional"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0xAC7_10E5));
    let mut env = Env::reset(scenario, seed)?;
    let n = env.n_agents();
    let space = env.action_space();
    let mut tape = Tape::with_params(policy.params());
    let mut state = policy.initial_state(&mut tape);
    let mut prev_alive = vec![false; n];
    let mut steps = Vec::new();
    let mut totals = vec![0.0; n];

    while !env.is_terminal() {
        let alive = env.alive();
        let fresh = fresh_mask(&alive, &prev_alive, &env.spawned());
        let obs: Vec<Option<SparseVec>> = (0..n)
            .map(|i| alive[i].then(|| SparseVec::from_dense(&env.observe(i))))
            .collect();
        let occupancy = env.occupancy().counts;
        let mut actions = vec![None; n];
        if alive.iter().any(|&a| a) {
            let dense = dense_obs(&obs);
            let input = StepInput {
                obs: &dense,
                occupancy: &occupancy,
                alive: &alive,
                fresh: &fresh,
            };
            let out = policy.step(&mut tape, &input, &state)?;
            for (i, a) in out.agents.iter().enumerate() {
                if let Some(a) = a {
                    actions[i] = Some(choose(space, tape.value(a.head).data(), mode, &mut rng));
                }
            }
            state = out.state;
        }
        let result = env.step(&actions)?;
        for (t, r) in totals.iter_mut().zip(&result.rewards) {
            *t += r;
        }
        steps.push(StepRecord {
            obs,
            occupancy,
            alive: alive.clone(),
            fresh,
            actions,
            rewards: result.rewards,
        });
        prev_alive = alive;
    }

    let outcome = env.outcome().ok_or_else(|| Error::contract("episode ended without outcome"))?;
    let terminal = if scenario.terminal_bonus() {
        terminal_reward(Some(outcome))?
    } else {
        0.0
    };
    for t in &mut totals {
        *t += terminal;
    }
    Ok(Trajectory {
        env_seed: seed,
        n_agents: n,
        sigma: match mode {
            ActionMode::Sample { sigma } => sigma,
            ActionMode::Greedy => 0.0,
        },
        steps,
        outcome,
        terminal_reward: terminal,
        totals,
    })
}

/// Re-runs the network over a recorded trajectory, calling `visit` for
/// every agent output at every step.
pub(crate) fn unroll<'p>(
    policy: &Policy,
    tape: &mut Tape<'p, f64>,
    traj: &Trajectory,
    mut visit: impl FnMut(&mut Tape<'p, f64>, usize, usize, &AgentOut) -> Result<()>,
) -> Result<()> {
    let mut state: State = policy.initial_state(tape);
    for (t, s) in traj.steps.iter().enumerate() {
        if !s.alive.iter().any(|&a| a) {
            continue;
        }
        let dense = dense_obs(&s.obs);
        let input = StepInput {
            obs: &dense,
            occupancy: &s.occupancy,
            alive: &s.alive,
            fresh: &s.fresh,
        };
        let out = policy.step(tape, &input, &state)?;
        for (i, a) in out.agents.iter().enumerate() {
            if let Some(a) = a {
                visit(tape, t, i, a)?;
            }
        }
        state = out.state;
    }
    Ok(())
}

/// Master/slave split of every emitted head output.
pub fn inspect(policy: &Policy, traj: &Trajectory) -> Result<Vec<Vec<Option<Decomposition>>>> {
    let mut out: Vec<Vec<Option<Decomposition>>> = vec![vec![None; traj.n_agents]; traj.steps.len()];
    let mut tape = Tape::with_params(policy.params());
    unroll(policy, &mut tape, traj, |tape, t, i, a| {
        out[t][i] = Some(policy.decompose(tape, a));
        Ok(())
    })?;
    Ok(out)
}

/// Steps the recorded actions through a fresh environment and checks that
/// rewards and outcome are reproduced exactly.
pub fn replay(scenario: &Scenario, traj: &Trajectory) -> Result<()> {
    let mut env = Env::reset(scenario, traj.env_seed)?;
    for (t, s) in traj.steps.iter().enumerate() {
        if env.is_terminal() {
            return Err(Error::contract(format!("replay ended early at step {t}")));
        }
        if env.alive() != s.alive {
            return Err(Error::contract(format!("replay alive mask differs at step {t}")));
        }
        let r = env.step(&s.actions)?;
        if r.rewards != s.rewards {
            return Err(Error::contract(format!("replay rewards differ at step {t}")));
        }
    }
    if env.outcome() != Some(traj.outcome) {
        return Err(Error::contract(format!(
            "replay outcome {:?} differs from recorded {:?}",
            env.outcome(),
            traj.outcome
        )));
    }
    Ok(())
}

/// A fixed decision rule for evaluation.
pub trait Controller {
    fn begin_episode(&mut self) {}
    fn act(&mut self, env: &Env) -> Result<Vec<Option<Action>>>;
}

/// Argmax (discrete) or mean (continuous) actions of a policy.
pub struct GreedyPolicy<'p> {
    policy: &'p Policy,
    tape: Tape<'p, f64>,
    state: Option<State>,
    prev_alive: Vec<bool>,
}

impl<'p> GreedyPolicy<'p> {
    pub fn new(policy: &'p Policy) -> Self {
        GreedyPolicy {
            policy,
            tape: Tape::with_params(policy.params()),
            state: None,
            prev_alive: vec![false; policy.config().n_agents],
        }
    }
}

impl Controller for GreedyPolicy<'_> {
    fn begin_episode(&mut self) {
        self.tape = Tape::with_params(self.policy.params());
        self.state = Some(self.policy.initial_state(&mut self.tape));
        self.prev_alive = vec![false; self.policy.config().n_agents];
    }

    fn act(&mut self, env: &Env) -> Result<Vec<Option<Action>>> {
        if self.state.is_none() {
            self.begin_episode();
        }
        let n = env.n_agents();
        let alive = env.alive();
        let fresh = fresh_mask(&alive, &self.prev_alive, &env.spawned());
        self.prev_alive = alive.clone();
        let mut actions = vec![None; n];
        if !alive.iter().any(|&a| a) {
            return Ok(actions);
        }
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|i| if alive[i] { env.observe(i) } else { Vec::new() })
            .collect();
        let occupancy = env.occupancy().counts;
        let input = StepInput {
            obs: &obs,
            occupancy: &occupancy,
            alive: &alive,
            fresh: &fresh,
        };
        let state = self.state.as_ref().expect("initialized above");
        let out = self.policy.step(&mut self.tape, &input, state)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, a) in out.agents.iter().enumerate() {
            if let Some(a) = a {
                let head = self.tape.value(a.head).data();
                actions[i] = Some(choose(env.action_space(), head, ActionMode::Greedy, &mut rng));
            }
        }
        self.state = Some(out.state);
        Ok(actions)
    }
}

pub fn idle_action(space: ActionSpace) -> Action {
    match space {
        ActionSpace::Discrete(_) => Action::Discrete(0),
        ActionSpace::Continuous(_) => Action::Continuous([-1.0, 0.0, -1.0]),
    }
}

/// Every live agent issues the no-op action.
pub struct IdleController;

impl Controller for IdleController {
    fn act(&mut self, env: &Env) -> Result<Vec<Option<Action>>> {
        let idle = idle_action(env.action_space());
        Ok(env.alive().into_iter().map(|a| a.then_some(idle)).collect())
    }
}

/// The built-in opponent script playing the controlled side.
pub struct ScriptedMirror;

impl Controller for ScriptedMirror {
    fn act(&mut self, env: &Env) -> Result<Vec<Option<Action>>> {
        Ok(env.scripted_actions())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub seed: u64,
}

/// Plays `episodes` evaluation episodes with seeds derived from `seed`.
pub fn evaluate(
    controller: &mut dyn Controller,
    scenario: &Scenario,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let mut wins = 0;
    let mut return_sum = 0.0;
    for k in 0..episodes {
        let mut env = Env::reset(scenario, super::eval_seed(seed, k as u64))?;
        controller.begin_episode();
        let n = env.n_agents();
        let mut totals = vec![0.0; n];
        let mut acted = vec![false; n];
        while !env.is_terminal() {
            let actions = controller.act(&env)?;
            for (f, a) in acted.iter_mut().zip(&actions) {
                *f |= a.is_some();
            }
            let r = env.step(&actions)?;
            for (t, x) in totals.iter_mut().zip(&r.rewards) {
                *t += x;
            }
        }
        let outcome = env.outcome().ok_or_else(|| Error::contract("episode ended without outcome"))?;
        if outcome.is_win() {
            wins += 1;
        }
        let bonus = if scenario.terminal_bonus() {
            terminal_reward(Some(outcome))?
        } else {
            0.0
        };
        let active = acted.iter().filter(|&&a| a).count();
        if active > 0 {
            let sum: f64 = totals.iter().zip(&acted).filter(|(_, &a)| a).map(|(t, _)| t + bonus).sum();
            return_sum += sum / active as f64;
        }
    }
    Ok(EvalSummary {
        episodes,
        wins,
        win_rate: wins as f64 / episodes as f64,
        mean_return: return_sum / episodes as f64,
        seed,
    })
}
