//! Circular local maps around a unit and the neighborhood-count reward.

use std::sync::OnceLock;

use super::Team;

/// Radius of the local map and of the reward neighborhood.
pub const VIEW_RADIUS: i32 = 7;

/// Per-cell features: is-self, is-ally, is-enemy, hp fraction, cooldown
/// fraction, unit-type one-hot (3).
pub const UNIT_FEATURES: usize = 8;

pub const UNIT_KINDS: usize = 3;

/// Snapshot of one unit, shared by the grid and continuous battles for
/// observation and reward computation.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitView {
    pub team: Team,
    pub pos: [f64; 2],
    pub alive: bool,
    pub hp_frac: f64,
    pub cooldown_frac: f64,
    pub kind: usize,
}

/// Integer offsets with dx² + dy² ≤ r², row-major (dy outer, dx inner).
pub fn circle_offsets(radius: i32) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

struct CircleIndex {
    cells: usize,
    // (2r+1)² lookup, -1 outside the circle.
    slot: Vec<i32>,
}

fn circle_index() -> &'static CircleIndex {
    static INDEX: OnceLock<CircleIndex> = OnceLock::new();
    INDEX.get_or_init(|| {
        let side = (2 * VIEW_RADIUS + 1) as usize;
        let mut slot = vec![-1; side * side];
        let offsets = circle_offsets(VIEW_RADIUS);
        for (k, (dx, dy)) in offsets.iter().enumerate() {
            let idx = (dy + VIEW_RADIUS) as usize * side + (dx + VIEW_RADIUS) as usize;
            slot[idx] = k as i32;
        }
        CircleIndex {
            cells: offsets.len(),
            slot,
        }
    })
}

pub fn local_map_len() -> usize {
    circle_index().cells * UNIT_FEATURES
}

fn cell_of(dx: i32, dy: i32) -> Option<usize> {
    if dx.abs() > VIEW_RADIUS || dy.abs() > VIEW_RADIUS {
        return None;
    }
    let side = (2 * VIEW_RADIUS + 1) as usize;
    let s = circle_index().slot[(dy + VIEW_RADIUS) as usize * side + (dx + VIEW_RADIUS) as usize];
    (s >= 0).then_some(s as usize)
}

/// Flattened local map for unit `me`. Relative offsets are rounded to the
/// nearest cell; several units in one cell add their features. A dead unit
/// sees nothing.
pub fn encode_local_map(units: &[UnitView], me: usize) -> Vec<f64> {
    let mut out = vec![0.0; local_map_len()];
    let center = &units[me];
    if !center.alive {
        return out;
    }
    for (j, u) in units.iter().enumerate() {
        if !u.alive {
            continue;
        }
        let dx = (u.pos[0] - center.pos[0]).round();
        let dy = (u.pos[1] - center.pos[1]).round();
        if dx.abs() > VIEW_RADIUS as f64 || dy.abs() > VIEW_RADIUS as f64 {
            continue;
        }
        let Some(cell) = cell_of(dx as i32, dy as i32) else {
            continue;
        };
        let f = &mut out[cell * UNIT_FEATURES..(cell + 1) * UNIT_FEATURES];
        if j == me {
            f[0] += 1.0;
        } else if u.team == center.team {
            f[1] += 1.0;
        } else {
            f[2] += 1.0;
        }
        f[3] += u.hp_frac;
        f[4] += u.cooldown_frac;
        f[5 + u.kind] += 1.0;
    }
    out
}

/// Living (same-team, other-team) units within `radius` of `center`,
/// counted relative to `team`.
pub fn neighborhood_counts(
    units: &[UnitView],
    center: [f64; 2],
    team: Team,
    radius: f64,
) -> (usize, usize) {
    let r2 = radius * radius;
    let mut ours = 0;
    let mut theirs = 0;
    for u in units.iter().filter(|u| u.alive) {
        let (dx, dy) = (u.pos[0] - center[0], u.pos[1] - center[1]);
        if dx * dx + dy * dy <= r2 {
            if u.team == team {
                ours += 1;
            } else {
                theirs += 1;
            }
        }
    }
    (ours, theirs)
}

/// Change in nearby friendly units minus change in nearby enemy units,
/// each neighborhood centred on the agent's position in that snapshot.
pub fn step_reward(prev: &[UnitView], next: &[UnitView], agent: usize, radius: f64) -> f64 {
    let team = prev[agent].team;
    let (m0, e0) = neighborhood_counts(prev, prev[agent].pos, team, radius);
    let (m1, e1) = neighborhood_counts(next, next[agent].pos, team, radius);
    let dm = m1 as f64 - m0 as f64;
    let de = e1 as f64 - e0 as f64;
    dm - de
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(team: Team, x: f64, y: f64) -> UnitView {
        UnitView {
            team,
            pos: [x, y],
            alive: true,
            hp_frac: 1.0,
            cooldown_frac: 0.0,
            kind: 0,
        }
    }

    #[test]
    fn circle_has_149_cells() {
        assert_eq!(circle_offsets(7).len(), 149);
        assert_eq!(local_map_len(), 149 * UNIT_FEATURES);
    }

    #[test]
    fn lone_unit_sees_only_itself() {
        let units = vec![unit(Team::Ally, 3.0, 3.0), unit(Team::Enemy, 14.0, 14.0)];
        let map = encode_local_map(&units, 0);
        let center = cell_of(0, 0).unwrap();
        let nonzero: Vec<usize> = map
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k / UNIT_FEATURES)
            .collect();
        assert!(nonzero.iter().all(|&c| c == center));
        assert_eq!(map[center * UNIT_FEATURES], 1.0);
    }

    #[test]
    fn dead_unit_sees_nothing() {
        let mut units = vec![unit(Team::Ally, 3.0, 3.0)];
        units[0].alive = false;
        assert!(encode_local_map(&units, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reward_cases() {
        let a = unit(Team::Ally, 5.0, 5.0);
        let b = unit(Team::Ally, 6.0, 5.0);
        let e1 = unit(Team::Enemy, 8.0, 5.0);
        let e2 = unit(Team::Enemy, 5.0, 9.0);
        let prev = vec![a.clone(), b.clone(), e1.clone(), e2.clone()];
        assert_eq!(step_reward(&prev, &prev, 0, 7.0), 0.0);

        let mut ally_dies = prev.clone();
        ally_dies[1].alive = false;
        assert_eq!(step_reward(&prev, &ally_dies, 0, 7.0), -1.0);

        let mut mixed = ally_dies.clone();
        mixed[2].alive = false;
        mixed[3].alive = false;
        assert_eq!(step_reward(&prev, &mixed, 0, 7.0), 1.0);
    }

    #[test]
    fn radius_is_inclusive() {
        let units = vec![unit(Team::Ally, 0.0, 0.0), unit(Team::Enemy, 7.0, 0.0)];
        assert_eq!(neighborhood_counts(&units, [0.0, 0.0], Team::Ally, 7.0), (1, 1));
    }
}
