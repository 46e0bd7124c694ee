//! Discrete grid battle against a scripted team.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::view::{self, UnitView, VIEW_RADIUS};
use super::{check_action_count, Action, OccupancyMap, Outcome, StepResult, Team};
use crate::error::{Error, Result};

/// idle, up, down, left, right, attack.
pub(crate) const N_ACTIONS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct CombatConfig {
    pub grid: usize,
    pub allies: usize,
    pub enemies: usize,
    pub hp: u32,
    /// Chebyshev firing range.
    pub range: i32,
    pub horizon: usize,
    /// Neighborhood reward each step; when off only the terminal reward
    /// is paid.
    pub step_reward: bool,
}

impl Default for CombatConfig {
    fn default() -> Self {
        CombatConfig {
            grid: 15,
            allies: 5,
            enemies: 5,
            hp: 3,
            range: 2,
            horizon: 40,
            step_reward: true,
        }
    }
}

impl CombatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.allies == 0 || self.enemies == 0 {
            return Err(Error::config("env.allies", "both teams need at least one unit"));
        }
        if self.grid < 4 {
            return Err(Error::config("env.grid", "grid must be at least 4 cells wide"));
        }
        let half = (self.grid / 2) * self.grid;
        if self.allies.max(self.enemies) > half {
            return Err(Error::config("env.allies", "team does not fit in its half of the grid"));
        }
        if self.hp == 0 {
            return Err(Error::config("env.hp", "must be positive"));
        }
        if self.range < 1 {
            return Err(Error::config("env.range", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, -1),
            Move::Down => (0, 1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombatCommand {
    Idle,
    Move(Move),
    /// Hits the weakest enemy in range, measured before anyone moves.
    Attack,
}

impl CombatCommand {
    pub fn from_index(a: usize) -> Result<Self> {
        Ok(match a {
            0 => CombatCommand::Idle,
            1 => CombatCommand::Move(Move::Up),
            2 => CombatCommand::Move(Move::Down),
            3 => CombatCommand::Move(Move::Left),
            4 => CombatCommand::Move(Move::Right),
            5 => CombatCommand::Attack,
            _ => return Err(Error::contract(format!("combat action {a} out of range"))),
        })
    }

    pub fn index(self) -> usize {
        match self {
            CombatCommand::Idle => 0,
            CombatCommand::Move(Move::Up) => 1,
            CombatCommand::Move(Move::Down) => 2,
            CombatCommand::Move(Move::Left) => 3,
            CombatCommand::Move(Move::Right) => 4,
            CombatCommand::Attack => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombatUnit {
    pub id: usize,
    pub team: Team,
    pub pos: (i32, i32),
    pub hp: u32,
    pub alive: bool,
}

/// Units `0..allies` are controlled; the rest follow the script.
#[derive(Clone, Debug)]
pub struct Combat {
    config: CombatConfig,
    units: Vec<CombatUnit>,
    steps: usize,
    outcome: Option<Outcome>,
}

fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn manhattan(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Weakest living opponent of `me` within range, ties broken by distance
/// then id.
fn attack_target(units: &[CombatUnit], me: usize, range: i32) -> Option<usize> {
    let u = &units[me];
    units
        .iter()
        .enumerate()
        .filter(|(_, v)| v.alive && v.team != u.team && chebyshev(u.pos, v.pos) <= range)
        .min_by_key(|(j, v)| (v.hp, chebyshev(u.pos, v.pos), *j))
        .map(|(j, _)| j)
}

/// Built-in policy: attack when an opponent is in range, otherwise step
/// toward the nearest opponent along the axis with the larger gap.
pub fn scripted_opponent(units: &[CombatUnit], team: Team, range: i32) -> Vec<CombatCommand> {
    units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.team == team)
        .map(|(i, u)| {
            if !u.alive {
                return CombatCommand::Idle;
            }
            if attack_target(units, i, range).is_some() {
                return CombatCommand::Attack;
            }
            let nearest = units
                .iter()
                .enumerate()
                .filter(|(_, v)| v.alive && v.team != team)
                .min_by_key(|(j, v)| (manhattan(u.pos, v.pos), *j));
            let Some((_, target)) = nearest else {
                return CombatCommand::Idle;
            };
            let dx = target.pos.0 - u.pos.0;
            let dy = target.pos.1 - u.pos.1;
            if dx.abs() >= dy.abs() && dx != 0 {
                CombatCommand::Move(if dx > 0 { Move::Right } else { Move::Left })
            } else if dy != 0 {
                CombatCommand::Move(if dy > 0 { Move::Down } else { Move::Up })
            } else {
                CombatCommand::Idle
            }
        })
        .collect()
}

impl Combat {
    pub fn reset(config: CombatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = config.grid as i32;
        let band = config.grid / 2;
        let cells = band * config.grid;
        let mut units = Vec::with_capacity(config.allies + config.enemies);
        let ally_cells = sample(&mut rng, cells, config.allies);
        for k in ally_cells.iter() {
            let (x, y) = ((k % band) as i32, (k / band) as i32);
            units.push((Team::Ally, (x, y)));
        }
        let enemy_cells = sample(&mut rng, cells, config.enemies);
        for k in enemy_cells.iter() {
            let (x, y) = (g - 1 - (k % band) as i32, (k / band) as i32);
            units.push((Team::Enemy, (x, y)));
        }
        let units = units
            .into_iter()
            .enumerate()
            .map(|(id, (team, pos))| CombatUnit {
                id,
                team,
                pos,
                hp: config.hp,
                alive: true,
            })
            .collect();
        Combat::from_units(config, units)
    }

    /// Builds a state from explicit units; allies must come first.
    pub fn from_units(config: CombatConfig, units: Vec<CombatUnit>) -> Result<Self> {
        let allies = units.iter().take_while(|u| u.team == Team::Ally).count();
        if allies != config.allies || units.len() != config.allies + config.enemies {
            return Err(Error::contract("unit list does not match team sizes"));
        }
        let g = config.grid as i32;
        for (i, u) in units.iter().enumerate() {
            if !(0..g).contains(&u.pos.0) || !(0..g).contains(&u.pos.1) {
                return Err(Error::contract(format!("unit {i} outside the grid")));
            }
            if u.alive && units[..i].iter().any(|v| v.alive && v.pos == u.pos) {
                return Err(Error::contract(format!("unit {i} shares a cell")));
            }
        }
        let mut env = Combat {
            config,
            units,
            steps: 0,
            outcome: None,
        };
        env.outcome = env.compute_outcome();
        Ok(env)
    }

    pub fn config(&self) -> &CombatConfig {
        &self.config
    }

    pub fn units(&self) -> &[CombatUnit] {
        &self.units
    }

    pub fn n_agents(&self) -> usize {
        self.config.allies
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn alive(&self) -> Vec<bool> {
        self.units[..self.config.allies].iter().map(|u| u.alive).collect()
    }

    pub fn views(&self) -> Vec<UnitView> {
        self.units
            .iter()
            .map(|u| UnitView {
                team: u.team,
                pos: [u.pos.0 as f64, u.pos.1 as f64],
                alive: u.alive,
                hp_frac: u.hp as f64 / self.config.hp as f64,
                cooldown_frac: 0.0,
                kind: 0,
            })
            .collect()
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        view::encode_local_map(&self.views(), agent)
    }

    pub fn occupancy(&self) -> OccupancyMap {
        let mut m = OccupancyMap::new(self.config.grid, self.config.grid);
        for u in self.units[..self.config.allies].iter().filter(|u| u.alive) {
            m.add(u.pos.1 as usize, u.pos.0 as usize);
        }
        m
    }

    pub fn agent_positions(&self) -> Vec<Option<[f64; 2]>> {
        self.units[..self.config.allies]
            .iter()
            .map(|u| u.alive.then_some([u.pos.0 as f64, u.pos.1 as f64]))
            .collect()
    }

    pub fn scripted_ally_actions(&self) -> Vec<Option<Action>> {
        scripted_opponent(&self.units, Team::Ally, self.config.range)
            .into_iter()
            .zip(self.alive())
            .map(|(c, alive)| alive.then_some(Action::Discrete(c.index())))
            .collect()
    }

    fn compute_outcome(&self) -> Option<Outcome> {
        let allies = self.units.iter().any(|u| u.alive && u.team == Team::Ally);
        let enemies = self.units.iter().any(|u| u.alive && u.team == Team::Enemy);
        if !allies {
            Some(Outcome::Loss)
        } else if !enemies {
            Some(Outcome::Win)
        } else if self.steps >= self.config.horizon {
            Some(Outcome::Timeout)
        } else {
            None
        }
    }

    fn decode(&self, actions: &[Option<Action>]) -> Result<Vec<CombatCommand>> {
        check_action_count(actions, self.config.allies)?;
        let mut out = Vec::with_capacity(self.units.len());
        for (i, a) in actions.iter().enumerate() {
            let cmd = match (self.units[i].alive, a) {
                (false, _) => CombatCommand::Idle,
                (true, Some(Action::Discrete(k))) => CombatCommand::from_index(*k)?,
                (true, Some(Action::Continuous(_))) => {
                    return Err(Error::contract("combat expects discrete actions"))
                }
                (true, None) => {
                    return Err(Error::contract(format!("no action for living agent {i}")))
                }
            };
            out.push(cmd);
        }
        out.extend(scripted_opponent(&self.units, Team::Enemy, self.config.range));
        Ok(out)
    }

    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepResult> {
        if self.outcome.is_some() {
            return Err(Error::contract("step called on a finished episode"));
        }
        let commands = self.decode(actions)?;
        self.apply(&commands)
    }

    /// Advances one step with explicit commands for every unit.
    pub fn apply(&mut self, commands: &[CombatCommand]) -> Result<StepResult> {
        if commands.len() != self.units.len() {
            return Err(Error::contract("one command per unit required"));
        }
        let prev = self.views();
        let g = self.config.grid as i32;

        let mut damage = vec![0u32; self.units.len()];
        for (i, cmd) in commands.iter().enumerate() {
            if *cmd == CombatCommand::Attack && self.units[i].alive {
                if let Some(t) = attack_target(&self.units, i, self.config.range) {
                    damage[t] += 1;
                }
            }
        }

        for (i, cmd) in commands.iter().enumerate() {
            let CombatCommand::Move(m) = cmd else { continue };
            if !self.units[i].alive {
                continue;
            }
            let (dx, dy) = m.delta();
            let to = (self.units[i].pos.0 + dx, self.units[i].pos.1 + dy);
            let inside = (0..g).contains(&to.0) && (0..g).contains(&to.1);
            let free = !self.units.iter().any(|v| v.alive && v.pos == to);
            if inside && free {
                self.units[i].pos = to;
            }
        }

        for (u, d) in self.units.iter_mut().zip(damage) {
            u.hp = u.hp.saturating_sub(d);
            if u.hp == 0 {
                u.alive = false;
            }
        }

        self.steps += 1;
        let next = self.views();
        let rewards = (0..self.config.allies)
            .map(|i| {
                if prev[i].alive && self.config.step_reward {
                    view::step_reward(&prev, &next, i, VIEW_RADIUS as f64)
                } else {
                    0.0
                }
            })
            .collect();
        self.outcome = self.compute_outcome();
        Ok(StepResult {
            rewards,
            terminal: self.outcome.is_some(),
            outcome: self.outcome,
        })
    }
}
