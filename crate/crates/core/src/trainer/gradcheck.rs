use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{policy_gradient, rollout, ActionMode, Trajectory, UpdateOptions};
use crate::autodiff::ParamId;
use crate::envs::Scenario;
use crate::error::{Error, Result};
use crate::policy::Policy;

const STEP: f64 = 1e-5;
/// Floor on the relative-error denominator.
const FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    /// Largest analytic magnitude among the checked coordinates.
    pub max_abs_gradient: f64,
    pub tolerance: f64,
}

fn objective(policy: &Policy, traj: &[Trajectory], opts: &UpdateOptions) -> Result<f64> {
    Ok(policy_gradient(policy, traj, opts)?.1)
}

/// Rolls out one episode, freezes it, and compares the tape gradient of the
/// update objective with central differences on `n` random coordinates
/// (parameter tensor first, then element, both uniform).
pub fn grad_check(
    policy: &Policy,
    scenario: &Scenario,
    opts: &UpdateOptions,
    sigma: f64,
    n: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let traj = vec![rollout(policy, scenario, seed, ActionMode::Sample { sigma })?];
    let (grads, _) = policy_gradient(policy, &traj, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = policy.params().ids().collect();
    let mut probe = policy.clone();
    let mut worst = (0.0f64, String::new());
    let mut largest = 0.0f64;
    for _ in 0..n {
        let id = ids[rng.random_range(0..ids.len())];
        let k = rng.random_range(0..policy.params().get(id).len());
        let base = policy.params().get(id).data()[k];
        probe.params_mut().set_element(id, k, base + STEP)?;
        let plus = objective(&probe, &traj, opts)?;
        probe.params_mut().set_element(id, k, base - STEP)?;
        let minus = objective(&probe, &traj, opts)?;
        probe.params_mut().set_element(id, k, base)?;
        let numeric = (plus - minus) / (2.0 * STEP);
        let analytic = grads.get(id).data()[k];
        largest = largest.max(analytic.abs());
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        let name = format!("{}[{k}]", policy.params().name(id));
        log::debug!("{name}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, name);
        }
    }
    if worst.0 > tolerance {
        return Err(Error::GradCheck {
            param: worst.1,
            rel_error: worst.0,
            tolerance,
        });
    }
    Ok(GradCheckReport {
        checked: n,
        max_rel_error: worst.0,
        worst: worst.1,
        max_abs_gradient: largest,
        tolerance,
    })
}
