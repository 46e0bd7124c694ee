//! Four-junction traffic grid: cars enter from eight lanes, follow one of
//! three fixed routes and choose between gas and brake.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action_count, Action, OccupancyMap, Outcome, StepResult};
use crate::error::{Error, Result};

pub(crate) const N_ACTIONS: usize = 2;
pub(crate) const GAS: usize = 0;
pub(crate) const BRAKE: usize = 1;

/// Roads occupy two adjacent rows (or columns) starting at these indices.
const ROAD_BASES: [i32; 2] = [5, 11];
const ROUTES_PER_ENTRY: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficConfig {
    pub grid: usize,
    pub arrival_prob: f64,
    pub max_cars: usize,
    pub horizon: usize,
    pub time_penalty: f64,
    pub collision_penalty: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            grid: 18,
            arrival_prob: 0.05,
            max_cars: 20,
            horizon: 80,
            time_penalty: 0.01,
            collision_penalty: 10.0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid != 18 {
            return Err(Error::config("env.grid", "the junction layout is fixed at 18"));
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return Err(Error::config("env.arrival_prob", "must lie in [0, 1]"));
        }
        if self.max_cars == 0 {
            return Err(Error::config("env.max_cars", "must be positive"));
        }
        Ok(())
    }

    pub fn n_routes(&self) -> usize {
        entries().len() * ROUTES_PER_ENTRY
    }

    pub fn obs_dim(&self) -> usize {
        9 + self.n_routes() + self.grid * self.grid
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Heading {
    East,
    South,
    West,
    North,
}

impl Heading {
    fn delta(self) -> (i32, i32) {
        match self {
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
            Heading::North => (0, -1),
        }
    }

    fn from_delta(d: (i32, i32)) -> Heading {
        match d {
            (1, 0) => Heading::East,
            (0, 1) => Heading::South,
            (-1, 0) => Heading::West,
            _ => Heading::North,
        }
    }

    /// Right-hand traffic with y pointing down.
    fn right(self) -> Heading {
        let (dx, dy) = self.delta();
        Heading::from_delta((-dy, dx))
    }

    fn left(self) -> Heading {
        let (dx, dy) = self.delta();
        Heading::from_delta((dy, -dx))
    }

    /// Row (horizontal headings) or column (vertical headings) of the lane
    /// on road `base`.
    fn lane(self, base: i32) -> i32 {
        match self {
            Heading::East => base + 1,
            Heading::West => base,
            Heading::South => base,
            Heading::North => base + 1,
        }
    }

    fn horizontal(self) -> bool {
        matches!(self, Heading::East | Heading::West)
    }

    /// Base index of the first crossing road met after entering.
    fn first_crossing(self) -> i32 {
        match self {
            Heading::East | Heading::South => ROAD_BASES[0],
            Heading::West | Heading::North => ROAD_BASES[1],
        }
    }
}

fn entries() -> Vec<(Heading, (i32, i32))> {
    let last = 17;
    let mut out = Vec::new();
    for &b in &ROAD_BASES {
        out.push((Heading::East, (0, Heading::East.lane(b))));
        out.push((Heading::West, (last, Heading::West.lane(b))));
        out.push((Heading::South, (Heading::South.lane(b), 0)));
        out.push((Heading::North, (Heading::North.lane(b), last)));
    }
    out
}

fn build_route(heading: Heading, start: (i32, i32), turn: Option<Heading>, grid: i32) -> Vec<(i32, i32)> {
    let inside = |p: (i32, i32)| (0..grid).contains(&p.0) && (0..grid).contains(&p.1);
    let mut cells = vec![start];
    let mut pos = start;
    let mut dir = heading;
    let mut pending = turn.map(|t| (t, t.lane(heading.first_crossing())));
    loop {
        if let Some((t, lane)) = pending {
            let along = if dir.horizontal() { pos.0 } else { pos.1 };
            if along == lane {
                dir = t;
                pending = None;
            }
        }
        let (dx, dy) = dir.delta();
        pos = (pos.0 + dx, pos.1 + dy);
        if !inside(pos) {
            return cells;
        }
        cells.push(pos);
    }
}

fn all_routes(grid: i32) -> Vec<Vec<(i32, i32)>> {
    let mut out = Vec::new();
    for (h, start) in entries() {
        out.push(build_route(h, start, None, grid));
        out.push(build_route(h, start, Some(h.right()), grid));
        out.push(build_route(h, start, Some(h.left()), grid));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Car {
    pub route: usize,
    pub progress: usize,
    pub age: u32,
}

#[derive(Clone, Debug)]
pub struct TrafficJunction {
    config: TrafficConfig,
    routes: Vec<Vec<(i32, i32)>>,
    slots: Vec<Option<Car>>,
    spawned: Vec<bool>,
    rng: ChaCha8Rng,
    steps: usize,
    collisions: usize,
    outcome: Option<Outcome>,
}

impl TrafficJunction {
    pub fn reset(config: TrafficConfig, seed: u64) -> Self {
        let routes = all_routes(config.grid as i32);
        let n = config.max_cars;
        let mut env = TrafficJunction {
            config,
            routes,
            slots: vec![None; n],
            spawned: vec![false; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            collisions: 0,
            outcome: None,
        };
        env.outcome = env.compute_outcome();
        env
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    pub fn routes(&self) -> &[Vec<(i32, i32)>] {
        &self.routes
    }

    pub fn cars(&self) -> &[Option<Car>] {
        &self.slots
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn n_agents(&self) -> usize {
        self.config.max_cars
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn alive(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    /// Slots filled by a new car during the last step.
    pub fn spawned(&self) -> &[bool] {
        &self.spawned
    }

    pub fn cell(&self, car: &Car) -> (i32, i32) {
        self.routes[car.route][car.progress]
    }

    fn count_at(&self, p: (i32, i32)) -> usize {
        self.slots
            .iter()
            .flatten()
            .filter(|c| self.cell(c) == p)
            .count()
    }

    /// 3×3 counts of other cars around the car, its route one-hot and its
    /// position one-hot. Empty slots observe zeros.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let g = self.config.grid;
        let mut out = vec![0.0; self.config.obs_dim()];
        let Some(car) = &self.slots[agent] else {
            return out;
        };
        let (x, y) = self.cell(car);
        let mut k = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let p = (x + dx, y + dy);
                let mut n = self.count_at(p) as f64;
                if p == (x, y) {
                    n -= 1.0;
                }
                out[k] = n;
                k += 1;
            }
        }
        out[9 + car.route] = 1.0;
        out[9 + self.config.n_routes() + y as usize * g + x as usize] = 1.0;
        out
    }

    pub fn occupancy(&self) -> OccupancyMap {
        let g = self.config.grid;
        let mut m = OccupancyMap::new(g, g);
        for car in self.slots.iter().flatten() {
            let (x, y) = self.cell(car);
            m.add(y as usize, x as usize);
        }
        m
    }

    pub fn agent_positions(&self) -> Vec<Option<[f64; 2]>> {
        self.slots
            .iter()
            .map(|s| {
                s.as_ref().map(|c| {
                    let (x, y) = self.cell(c);
                    [x as f64, y as f64]
                })
            })
            .collect()
    }

    fn compute_outcome(&self) -> Option<Outcome> {
        if self.steps < self.config.horizon {
            None
        } else if self.collisions == 0 {
            Some(Outcome::Win)
        } else {
            Some(Outcome::Loss)
        }
    }

    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepResult> {
        if self.outcome.is_some() {
            return Err(Error::contract("step called on a finished episode"));
        }
        check_action_count(actions, self.n_agents())?;
        let mut gas = vec![false; self.n_agents()];
        for (i, a) in actions.iter().enumerate() {
            if self.slots[i].is_none() {
                continue;
            }
            gas[i] = match a {
                Some(Action::Discrete(GAS)) => true,
                Some(Action::Discrete(BRAKE)) => false,
                Some(Action::Discrete(k)) => {
                    return Err(Error::contract(format!("traffic action {k} out of range")))
                }
                Some(Action::Continuous(_)) => {
                    return Err(Error::contract("traffic expects discrete actions"))
                }
                None => return Err(Error::contract(format!("no action for living car {i}"))),
            };
        }

        let mut rewards = vec![0.0; self.n_agents()];
        for (i, slot) in self.slots.iter_mut().enumerate() {
            let Some(car) = slot else { continue };
            if gas[i] {
                car.progress += 1;
                if car.progress == self.routes[car.route].len() {
                    *slot = None;
                    continue;
                }
            }
            car.age += 1;
        }

        let g = self.config.grid;
        let mut grid_count = vec![0usize; g * g];
        for car in self.slots.iter().flatten() {
            let (x, y) = self.cell(car);
            grid_count[y as usize * g + x as usize] += 1;
        }
        self.collisions += grid_count.iter().map(|&k| k * k.saturating_sub(1) / 2).sum::<usize>();
        for (i, slot) in self.slots.iter().enumerate() {
            let Some(car) = slot else { continue };
            let (x, y) = self.cell(car);
            if grid_count[y as usize * g + x as usize] > 1 {
                rewards[i] -= self.config.collision_penalty;
            }
            rewards[i] -= self.config.time_penalty * car.age as f64;
        }

        self.spawned.iter_mut().for_each(|s| *s = false);
        let n_entries = entries().len();
        for e in 0..n_entries {
            let arrive = self.rng.random::<f64>() < self.config.arrival_prob;
            if !arrive {
                continue;
            }
            let route = e * ROUTES_PER_ENTRY + self.rng.random_range(0..ROUTES_PER_ENTRY);
            let start = self.routes[route][0];
            let free_slot = self.slots.iter().position(Option::is_none);
            if let (Some(slot), 0) = (free_slot, self.count_at(start)) {
                self.slots[slot] = Some(Car {
                    route,
                    progress: 0,
                    age: 0,
                });
                self.spawned[slot] = true;
            }
        }

        self.steps += 1;
        self.outcome = self.compute_outcome();
        Ok(StepResult {
            rewards,
            terminal: self.outcome.is_some(),
            outcome: self.outcome,
        })
    }
}
