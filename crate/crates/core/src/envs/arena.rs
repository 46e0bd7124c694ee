//! Continuous battle arena with heterogeneous unit types.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::view::{self, UnitView, VIEW_RADIUS};
use super::{check_action_count, Action, OccupancyMap, Outcome, StepResult, Team};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnitKind {
    RangedGround,
    MeleeGround,
    RangedAir,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitStats {
    pub hp: f64,
    pub damage: f64,
    pub range: f64,
    pub cooldown: u32,
    pub speed: f64,
    pub air: bool,
}

impl UnitKind {
    pub fn stats(self) -> UnitStats {
        match self {
            UnitKind::RangedGround => UnitStats {
                hp: 4.0,
                damage: 1.0,
                range: 6.0,
                cooldown: 3,
                speed: 1.0,
                air: false,
            },
            UnitKind::MeleeGround => UnitStats {
                hp: 4.0,
                damage: 1.0,
                range: 1.0,
                cooldown: 1,
                speed: 1.6,
                air: false,
            },
            UnitKind::RangedAir => UnitStats {
                hp: 8.0,
                damage: 3.0,
                range: 6.0,
                cooldown: 8,
                speed: 1.2,
                air: true,
            },
        }
    }

    pub fn index(self) -> usize {
        match self {
            UnitKind::RangedGround => 0,
            UnitKind::MeleeGround => 1,
            UnitKind::RangedAir => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArenaConfig {
    pub width: f64,
    pub height: f64,
    pub allies: (UnitKind, usize),
    pub enemies: (UnitKind, usize),
    pub horizon: usize,
    pub collision_radius: f64,
    pub spawn_radius: f64,
    pub occupancy_cells: usize,
}

impl ArenaConfig {
    pub fn versus(ally: UnitKind, n_ally: usize, enemy: UnitKind, n_enemy: usize) -> Self {
        ArenaConfig {
            width: 64.0,
            height: 64.0,
            allies: (ally, n_ally),
            enemies: (enemy, n_enemy),
            horizon: 100,
            collision_radius: 0.8,
            spawn_radius: 8.0,
            occupancy_cells: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.allies.1 == 0 || self.enemies.1 == 0 {
            return Err(Error::config("env.allies", "both teams need at least one unit"));
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::config("env.width", "field must have positive finite size"));
        }
        if !(self.collision_radius >= 0.0 && self.spawn_radius > 0.0) {
            return Err(Error::config("env.spawn_radius", "radii must be positive"));
        }
        if self.occupancy_cells == 0 {
            return Err(Error::config("env.occupancy_cells", "must be positive"));
        }
        let disc = PI * self.spawn_radius * self.spawn_radius;
        let footprint = PI * self.collision_radius * self.collision_radius;
        let crowd = self.allies.1.max(self.enemies.1) as f64 * footprint;
        if crowd > 0.5 * disc {
            return Err(Error::config("env.spawn_radius", "spawn disc too small for the team"));
        }
        if self.spawn_radius * 2.0 > self.width / 2.0 || self.spawn_radius * 2.0 > self.height {
            return Err(Error::config("env.spawn_radius", "spawn discs do not fit the field"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArenaUnit {
    pub id: usize,
    pub team: Team,
    pub kind: UnitKind,
    pub pos: [f64; 2],
    pub hp: f64,
    pub cooldown: u32,
    pub alive: bool,
}

impl ArenaUnit {
    pub fn new(id: usize, team: Team, kind: UnitKind, pos: [f64; 2]) -> Self {
        ArenaUnit {
            id,
            team,
            kind,
            pos,
            hp: kind.stats().hp,
            cooldown: 0,
            alive: true,
        }
    }

    pub fn stats(&self) -> UnitStats {
        self.kind.stats()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArenaCommand {
    Idle,
    Move { dx: f64, dy: f64 },
    Attack { target: usize },
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn nearest_opponent(units: &[ArenaUnit], team: Team, point: [f64; 2]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in units.iter().enumerate() {
        if v.alive && v.team != team {
            let d = dist(point, v.pos);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((j, d));
            }
        }
    }
    best.map(|(j, _)| j)
}

/// Maps `u ∈ [-1, 1]³` (action type, heading, distance) to a command for
/// unit `actor`. Components are clamped first.
pub fn decode_continuous_action(u: [f64; 3], actor: usize, units: &[ArenaUnit]) -> ArenaCommand {
    let me = &units[actor];
    if !me.alive {
        return ArenaCommand::Idle;
    }
    let u = u.map(|x| x.clamp(-1.0, 1.0));
    let stats = me.stats();
    let angle = u[1] * PI;
    let frac = (u[2] + 1.0) / 2.0;
    if u[0] < 0.0 {
        let len = frac * stats.speed;
        return ArenaCommand::Move {
            dx: len * angle.cos(),
            dy: len * angle.sin(),
        };
    }
    let aim = [
        me.pos[0] + frac * stats.range * angle.cos(),
        me.pos[1] + frac * stats.range * angle.sin(),
    ];
    match nearest_opponent(units, me.team, aim) {
        Some(t) if me.cooldown == 0 && dist(me.pos, units[t].pos) <= stats.range => {
            ArenaCommand::Attack { target: t }
        }
        _ => ArenaCommand::Idle,
    }
}

/// Built-in policy: fire at the weakest opponent in range when ready,
/// hold while reloading, otherwise run at full speed toward the nearest
/// opponent.
pub fn scripted_opponent(units: &[ArenaUnit], team: Team) -> Vec<ArenaCommand> {
    units
        .iter()
        .filter(|u| u.team == team)
        .map(|u| {
            if !u.alive {
                return ArenaCommand::Idle;
            }
            let stats = u.stats();
            let in_range = units
                .iter()
                .enumerate()
                .filter(|(_, v)| v.alive && v.team != team && dist(u.pos, v.pos) <= stats.range)
                .min_by(|(i, a), (j, b)| {
                    a.hp.total_cmp(&b.hp)
                        .then(dist(u.pos, a.pos).total_cmp(&dist(u.pos, b.pos)))
                        .then(i.cmp(j))
                })
                .map(|(j, _)| j);
            if let Some(target) = in_range {
                return if u.cooldown == 0 {
                    ArenaCommand::Attack { target }
                } else {
                    ArenaCommand::Idle
                };
            }
            match nearest_opponent(units, team, u.pos) {
                Some(t) => {
                    let d = dist(u.pos, units[t].pos);
                    let step = stats.speed.min(d);
                    ArenaCommand::Move {
                        dx: step * (units[t].pos[0] - u.pos[0]) / d,
                        dy: step * (units[t].pos[1] - u.pos[1]) / d,
                    }
                }
                None => ArenaCommand::Idle,
            }
        })
        .collect()
}

/// Units `0..allies` are controlled; the rest follow the script.
#[derive(Clone, Debug)]
pub struct Arena {
    config: ArenaConfig,
    units: Vec<ArenaUnit>,
    steps: usize,
    outcome: Option<Outcome>,
}

impl Arena {
    pub fn reset(config: ArenaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units: Vec<ArenaUnit> = Vec::new();
        let cy = config.height / 2.0;
        let groups = [
            (Team::Ally, config.allies, [config.width / 4.0, cy]),
            (Team::Enemy, config.enemies, [3.0 * config.width / 4.0, cy]),
        ];
        for (team, (kind, n), center) in groups {
            for _ in 0..n {
                let pos = loop {
                    let p = [
                        center[0] + rng.random_range(-1.0..1.0) * config.spawn_radius,
                        center[1] + rng.random_range(-1.0..1.0) * config.spawn_radius,
                    ];
                    if dist(p, center) > config.spawn_radius {
                        continue;
                    }
                    let clear = kind.stats().air
                        || units
                            .iter()
                            .all(|v| v.stats().air || dist(v.pos, p) >= config.collision_radius);
                    if clear {
                        break p;
                    }
                };
                units.push(ArenaUnit::new(units.len(), team, kind, pos));
            }
        }
        Arena::from_units(config, units)
    }

    /// Builds a state from explicit units; allies must come first.
    pub fn from_units(config: ArenaConfig, units: Vec<ArenaUnit>) -> Result<Self> {
        let allies = units.iter().take_while(|u| u.team == Team::Ally).count();
        if allies != config.allies.1 || units.len() != config.allies.1 + config.enemies.1 {
            return Err(Error::contract("unit list does not match team sizes"));
        }
        let mut env = Arena {
            config,
            units,
            steps: 0,
            outcome: None,
        };
        env.outcome = env.compute_outcome();
        Ok(env)
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.config
    }

    pub fn units(&self) -> &[ArenaUnit] {
        &self.units
    }

    pub fn n_agents(&self) -> usize {
        self.config.allies.1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn alive(&self) -> Vec<bool> {
        self.units[..self.n_agents()].iter().map(|u| u.alive).collect()
    }

    pub fn views(&self) -> Vec<UnitView> {
        self.units
            .iter()
            .map(|u| {
                let s = u.stats();
                UnitView {
                    team: u.team,
                    pos: u.pos,
                    alive: u.alive,
                    hp_frac: u.hp / s.hp,
                    cooldown_frac: u.cooldown as f64 / s.cooldown as f64,
                    kind: u.kind.index(),
                }
            })
            .collect()
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        view::encode_local_map(&self.views(), agent)
    }

    pub fn occupancy(&self) -> OccupancyMap {
        let n = self.config.occupancy_cells;
        let mut m = OccupancyMap::new(n, n);
        let cw = self.config.width / n as f64;
        let ch = self.config.height / n as f64;
        for u in self.units[..self.n_agents()].iter().filter(|u| u.alive) {
            let col = ((u.pos[0] / cw) as usize).min(n - 1);
            let row = ((u.pos[1] / ch) as usize).min(n - 1);
            m.add(row, col);
        }
        m
    }

    pub fn agent_positions(&self) -> Vec<Option<[f64; 2]>> {
        self.units[..self.n_agents()]
            .iter()
            .map(|u| u.alive.then_some(u.pos))
            .collect()
    }

    /// The opponent script mirrored onto the controlled team, expressed as
    /// the continuous action that decodes to the same command.
    pub fn scripted_ally_actions(&self) -> Vec<Option<Action>> {
        scripted_opponent(&self.units, Team::Ally)
            .into_iter()
            .enumerate()
            .map(|(i, cmd)| {
                let u = &self.units[i];
                u.alive.then(|| Action::Continuous(encode_command(u, &self.units, cmd)))
            })
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

    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepResult> {
        if self.outcome.is_some() {
            return Err(Error::contract("step called on a finished episode"));
        }
        check_action_count(actions, self.n_agents())?;
        let mut commands = Vec::with_capacity(self.units.len());
        for (i, a) in actions.iter().enumerate() {
            let cmd = match (self.units[i].alive, a) {
                (false, _) => ArenaCommand::Idle,
                (true, Some(Action::Continuous(u))) => {
                    if u.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { op: "arena action" });
                    }
                    decode_continuous_action(*u, i, &self.units)
                }
                (true, Some(Action::Discrete(_))) => {
                    return Err(Error::contract("arena expects continuous actions"))
                }
                (true, None) => {
                    return Err(Error::contract(format!("no action for living agent {i}")))
                }
            };
            commands.push(cmd);
        }
        commands.extend(scripted_opponent(&self.units, Team::Enemy));
        self.apply(&commands)
    }

    /// Advances one step with explicit commands for every unit.
    pub fn apply(&mut self, commands: &[ArenaCommand]) -> Result<StepResult> {
        if commands.len() != self.units.len() {
            return Err(Error::contract("one command per unit required"));
        }
        let prev = self.views();
        let (w, h, rc) = (self.config.width, self.config.height, self.config.collision_radius);

        let mut damage = vec![0.0; self.units.len()];
        for (i, cmd) in commands.iter().enumerate() {
            let ArenaCommand::Attack { target } = *cmd else { continue };
            let (u, t) = (&self.units[i], &self.units[target]);
            let s = u.stats();
            if u.alive && t.alive && t.team != u.team && u.cooldown == 0 && dist(u.pos, t.pos) <= s.range {
                damage[target] += s.damage;
                self.units[i].cooldown = s.cooldown;
            }
        }
        for (i, cmd) in commands.iter().enumerate() {
            let ArenaCommand::Move { dx, dy } = *cmd else { continue };
            let u = &self.units[i];
            if !u.alive {
                continue;
            }
            let to = [(u.pos[0] + dx).clamp(0.0, w), (u.pos[1] + dy).clamp(0.0, h)];
            let blocked = !u.stats().air
                && self.units.iter().enumerate().any(|(j, v)| {
                    j != i && v.alive && !v.stats().air && dist(v.pos, to) < rc
                });
            if !blocked {
                self.units[i].pos = to;
            }
        }

        for (u, d) in self.units.iter_mut().zip(damage) {
            if d > 0.0 {
                u.hp = (u.hp - d).max(0.0);
                if u.hp <= 0.0 {
                    u.alive = false;
                }
            }
            u.cooldown = u.cooldown.saturating_sub(1);
        }

        self.steps += 1;
        let next = self.views();
        let rewards = (0..self.n_agents())
            .map(|i| {
                if prev[i].alive {
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

/// A continuous action whose decoding reproduces `cmd` for unit `u`.
fn encode_command(u: &ArenaUnit, units: &[ArenaUnit], cmd: ArenaCommand) -> [f64; 3] {
    let s = u.stats();
    match cmd {
        ArenaCommand::Idle => [-1.0, 0.0, -1.0],
        ArenaCommand::Move { dx, dy } => {
            let len = (dx * dx + dy * dy).sqrt();
            [-1.0, dy.atan2(dx) / PI, (2.0 * len / s.speed - 1.0).clamp(-1.0, 1.0)]
        }
        ArenaCommand::Attack { target } => {
            let t = &units[target];
            let (dx, dy) = (t.pos[0] - u.pos[0], t.pos[1] - u.pos[1]);
            let len = (dx * dx + dy * dy).sqrt();
            [1.0, dy.atan2(dx) / PI, (2.0 * len / s.range - 1.0).clamp(-1.0, 1.0)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn duel(dist_x: f64) -> Arena {
        let config = ArenaConfig::versus(UnitKind::RangedGround, 1, UnitKind::RangedGround, 1);
        Arena::from_units(
            config,
            vec![
                ArenaUnit::new(0, Team::Ally, UnitKind::RangedGround, [20.0, 20.0]),
                ArenaUnit::new(1, Team::Enemy, UnitKind::RangedGround, [20.0 + dist_x, 20.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn presets_spawn_in_discs() {
        let env = Arena::reset(
            ArenaConfig::versus(UnitKind::RangedGround, 15, UnitKind::RangedGround, 16),
            4,
        )
        .unwrap();
        assert_eq!(env.units().len(), 31);
        for u in env.units() {
            let c = if u.team == Team::Ally { [16.0, 32.0] } else { [48.0, 32.0] };
            assert!(dist(u.pos, c) <= 8.0);
        }
    }

    #[test]
    fn move_decode_full_speed_along_x() {
        let env = duel(30.0);
        let cmd = decode_continuous_action([-1.0, 0.0, 1.0], 0, env.units());
        assert_eq!(cmd, ArenaCommand::Move { dx: 1.0, dy: 0.0 });
    }

    #[test]
    fn attack_without_target_in_range_is_idle() {
        let env = duel(30.0);
        assert_eq!(
            decode_continuous_action([1.0, 0.3, 0.2], 0, env.units()),
            ArenaCommand::Idle
        );
        let env = duel(5.0);
        assert_eq!(
            decode_continuous_action([1.0, 0.0, 0.0], 0, env.units()),
            ArenaCommand::Attack { target: 1 }
        );
    }

    #[test]
    fn displacement_matches_step_length() {
        for k in 0..50 {
            let mut env = duel(30.0);
            let u = [-0.5, -1.0 + 0.04 * k as f64, -1.0 + 0.04 * k as f64];
            let before = env.units()[0].pos;
            env.apply(&[decode_continuous_action(u, 0, env.units()), ArenaCommand::Idle])
                .unwrap();
            let moved = dist(before, env.units()[0].pos);
            assert!((moved - (u[2] + 1.0) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cooldown_gates_fire_rate() {
        let mut env = duel(5.0);
        let fire = [ArenaCommand::Attack { target: 1 }, ArenaCommand::Idle];
        let mut hits = 0;
        for _ in 0..7 {
            let before = env.units()[1].hp;
            env.apply(&fire).unwrap();
            if env.units()[1].hp < before {
                hits += 1;
            }
            let cd = env.units()[0].cooldown;
            assert!(cd <= UnitKind::RangedGround.stats().cooldown);
        }
        assert_eq!(hits, 3);
    }

    #[test]
    fn ground_units_block_air_units_pass() {
        let config = ArenaConfig::versus(UnitKind::RangedGround, 1, UnitKind::RangedGround, 1);
        let mut env = Arena::from_units(
            config,
            vec![
                ArenaUnit::new(0, Team::Ally, UnitKind::RangedGround, [10.0, 10.0]),
                ArenaUnit::new(1, Team::Enemy, UnitKind::RangedGround, [11.0, 10.0]),
            ],
        )
        .unwrap();
        env.apply(&[ArenaCommand::Move { dx: 0.5, dy: 0.0 }, ArenaCommand::Idle])
            .unwrap();
        assert_eq!(env.units()[0].pos, [10.0, 10.0]);

        let config = ArenaConfig::versus(UnitKind::RangedAir, 1, UnitKind::RangedAir, 1);
        let mut env = Arena::from_units(
            config,
            vec![
                ArenaUnit::new(0, Team::Ally, UnitKind::RangedAir, [10.0, 10.0]),
                ArenaUnit::new(1, Team::Enemy, UnitKind::RangedAir, [11.0, 10.0]),
            ],
        )
        .unwrap();
        env.apply(&[ArenaCommand::Move { dx: 1.0, dy: 0.0 }, ArenaCommand::Idle])
            .unwrap();
        assert_eq!(env.units()[0].pos, [11.0, 10.0]);
    }

    #[test]
    fn mirrored_script_round_trips_through_decoder() {
        let env = Arena::reset(
            ArenaConfig::versus(UnitKind::RangedGround, 5, UnitKind::RangedGround, 6),
            2,
        )
        .unwrap();
        let cmds = scripted_opponent(env.units(), Team::Ally);
        for (i, a) in env.scripted_ally_actions().into_iter().enumerate() {
            let Some(Action::Continuous(u)) = a else { panic!() };
            let expected = match cmds[i] {
                ArenaCommand::Idle => ArenaCommand::Move { dx: 0.0, dy: 0.0 },
                c => c,
            };
            match (expected, decode_continuous_action(u, i, env.units())) {
                (ArenaCommand::Move { dx, dy }, ArenaCommand::Move { dx: ex, dy: ey }) => {
                    assert!((dx - ex).abs() < 1e-9 && (dy - ey).abs() < 1e-9);
                }
                (c, d) => assert_eq!(c, d),
            }
        }
    }
}
