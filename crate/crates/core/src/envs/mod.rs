//! Seedable multi-agent environments: a discrete traffic junction, a
//! discrete grid battle and a continuous battle arena, with their local
//! observations, occupancy maps, rewards and scripted opponents.
//!
//! Every environment owns its random stream, so `(scenario, seed, actions)`
//! fully determines an episode.

mod arena;
mod combat;
mod traffic;
pub mod view;

use serde::{Deserialize, Serialize};

pub use arena::{
    decode_continuous_action, Arena, ArenaCommand, ArenaConfig, ArenaUnit, UnitKind, UnitStats,
};
pub use combat::{Combat, CombatCommand, CombatConfig, CombatUnit, Move};
pub use traffic::{Car, TrafficConfig, TrafficJunction};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Team {
    Ally,
    Enemy,
}

impl Team {
    pub fn opponent(self) -> Team {
        match self {
            Team::Ally => Team::Enemy,
            Team::Enemy => Team::Ally,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous([f64; 3]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Each component in `[-1, 1]`.
    Continuous(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Loss,
    Timeout,
}

impl Outcome {
    pub fn is_win(self) -> bool {
        self == Outcome::Win
    }
}

/// Reward added to every agent when an episode ends: +1 for a win and
/// -0.2 for anything else.
pub fn terminal_reward(outcome: Option<Outcome>) -> Result<f64> {
    match outcome {
        Some(Outcome::Win) => Ok(1.0),
        Some(Outcome::Loss | Outcome::Timeout) => Ok(-0.2),
        None => Err(Error::contract("terminal reward requested before the episode ended")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// One entry per controlled agent slot; zero for slots that were not
    /// alive when the step began.
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub outcome: Option<Outcome>,
}

/// Coarse grid of controlled-agent counts.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMap {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<f64>,
}

impl OccupancyMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        OccupancyMap {
            rows,
            cols,
            counts: vec![0.0; rows * cols],
        }
    }

    pub fn add(&mut self, row: usize, col: usize) {
        self.counts[row * self.cols + col] += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub const PRESETS: &[&str] = &[
    "traffic_hard",
    "combat_5v5",
    "combat_3v3",
    "arena_m15v16",
    "arena_m10v13z",
    "arena_w15v17",
    "arena_m5v6",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Traffic(TrafficConfig),
    Combat(CombatConfig),
    Arena(ArenaConfig),
}

impl Scenario {
    pub fn preset(name: &str) -> Result<Scenario> {
        use UnitKind::*;
        let s = match name {
            "traffic_hard" => Scenario::Traffic(TrafficConfig::default()),
            "combat_5v5" => Scenario::Combat(CombatConfig::default()),
            "combat_3v3" => Scenario::Combat(CombatConfig {
                allies: 3,
                enemies: 3,
                ..CombatConfig::default()
            }),
            "arena_m15v16" => Scenario::Arena(ArenaConfig::versus(RangedGround, 15, RangedGround, 16)),
            "arena_m10v13z" => Scenario::Arena(ArenaConfig::versus(RangedGround, 10, MeleeGround, 13)),
            "arena_w15v17" => Scenario::Arena(ArenaConfig::versus(RangedAir, 15, RangedAir, 17)),
            "arena_m5v6" => Scenario::Arena(ArenaConfig::versus(RangedGround, 5, RangedGround, 6)),
            other => {
                return Err(Error::config(
                    "env.preset",
                    format!("unknown preset `{other}`; expected one of {PRESETS:?}"),
                ))
            }
        };
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Traffic(c) => c.validate(),
            Scenario::Combat(c) => c.validate(),
            Scenario::Arena(c) => c.validate(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Scenario::Traffic(c) => c.horizon,
            Scenario::Combat(c) => c.horizon,
            Scenario::Arena(c) => c.horizon,
        }
    }

    pub fn set_horizon(&mut self, horizon: usize) {
        match self {
            Scenario::Traffic(c) => c.horizon = horizon,
            Scenario::Combat(c) => c.horizon = horizon,
            Scenario::Arena(c) => c.horizon = horizon,
        }
    }

    /// Number of controlled agent slots.
    pub fn n_agents(&self) -> usize {
        match self {
            Scenario::Traffic(c) => c.max_cars,
            Scenario::Combat(c) => c.allies,
            Scenario::Arena(c) => c.allies.1,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Scenario::Traffic(_) => ActionSpace::Discrete(traffic::N_ACTIONS),
            Scenario::Combat(_) => ActionSpace::Discrete(combat::N_ACTIONS),
            Scenario::Arena(_) => ActionSpace::Continuous(3),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Scenario::Traffic(c) => c.obs_dim(),
            Scenario::Combat(_) | Scenario::Arena(_) => view::local_map_len(),
        }
    }

    /// `(rows, cols)` of the occupancy map.
    pub fn occupancy_dims(&self) -> (usize, usize) {
        match self {
            Scenario::Traffic(c) => (c.grid, c.grid),
            Scenario::Combat(c) => (c.grid, c.grid),
            Scenario::Arena(c) => (c.occupancy_cells, c.occupancy_cells),
        }
    }

    /// Whether the win/lose bonus is added at episode end. The traffic task
    /// scores purely through its per-step penalties.
    pub fn terminal_bonus(&self) -> bool {
        !matches!(self, Scenario::Traffic(_))
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Env {
    Traffic(TrafficJunction),
    Combat(Combat),
    Arena(Arena),
}

macro_rules! dispatch {
    ($self:expr, $env:ident => $body:expr) => {
        match $self {
            Env::Traffic($env) => $body,
            Env::Combat($env) => $body,
            Env::Arena($env) => $body,
        }
    };
}

impl Env {
    pub fn reset(scenario: &Scenario, seed: u64) -> Result<Env> {
        scenario.validate()?;
        Ok(match scenario {
            Scenario::Traffic(c) => Env::Traffic(TrafficJunction::reset(c.clone(), seed)),
            Scenario::Combat(c) => Env::Combat(Combat::reset(c.clone(), seed)?),
            Scenario::Arena(c) => Env::Arena(Arena::reset(c.clone(), seed)?),
        })
    }

    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepResult> {
        dispatch!(self, e => e.step(actions))
    }

    pub fn n_agents(&self) -> usize {
        dispatch!(self, e => e.n_agents())
    }

    pub fn alive(&self) -> Vec<bool> {
        dispatch!(self, e => e.alive())
    }

    /// Slots that received a fresh agent during the last step. Only traffic
    /// reuses slots.
    pub fn spawned(&self) -> Vec<bool> {
        match self {
            Env::Traffic(e) => e.spawned().to_vec(),
            other => vec![false; other.n_agents()],
        }
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        dispatch!(self, e => e.observe(agent))
    }

    pub fn occupancy(&self) -> OccupancyMap {
        dispatch!(self, e => e.occupancy())
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome().is_some()
    }

    pub fn outcome(&self) -> Option<Outcome> {
        dispatch!(self, e => e.outcome())
    }

    pub fn steps(&self) -> usize {
        dispatch!(self, e => e.steps())
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Env::Traffic(e) => e.config().obs_dim(),
            Env::Combat(_) | Env::Arena(_) => view::local_map_len(),
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::Traffic(_) => ActionSpace::Discrete(traffic::N_ACTIONS),
            Env::Combat(_) => ActionSpace::Discrete(combat::N_ACTIONS),
            Env::Arena(_) => ActionSpace::Continuous(3),
        }
    }

    /// Actions the built-in script would take for the controlled team;
    /// `None` for dead slots. Traffic cars always advance.
    pub fn scripted_actions(&self) -> Vec<Option<Action>> {
        match self {
            Env::Traffic(e) => e
                .alive()
                .into_iter()
                .map(|a| a.then_some(Action::Discrete(traffic::GAS)))
                .collect(),
            Env::Combat(e) => e.scripted_ally_actions(),
            Env::Arena(e) => e.scripted_ally_actions(),
        }
    }

    /// Positions of controlled agents for trace dumps; `None` when dead.
    pub fn agent_positions(&self) -> Vec<Option<[f64; 2]>> {
        dispatch!(self, e => e.agent_positions())
    }
}

pub(crate) fn check_action_count(actions: &[Option<Action>], n: usize) -> Result<()> {
    if actions.len() == n {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "expected {n} action slots, got {}",
            actions.len()
        )))
    }
}
