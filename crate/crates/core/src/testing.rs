//! Finite-difference oracle shared by unit tests. Independent of the tape's
//! backward rules: it only evaluates forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

pub(crate) type LossBuilder<'a> = dyn Fn(&mut Tape<'_, f64>) -> Result<Var> + 'a;

fn eval(store: &ParamStore<f64>, build: &LossBuilder) -> f64 {
    let mut tape = Tape::with_params(store);
    let loss = build(&mut tape).unwrap();
    tape.value(loss).item().unwrap()
}

/// Compares tape gradients against central differences on up to
/// `samples` randomly chosen scalars (all of them when `samples` is None).
/// Returns the largest relative error seen.
pub(crate) fn fd_param_check(
    store: &ParamStore<f64>,
    build: &LossBuilder,
    h: f64,
    samples: Option<usize>,
    seed: u64,
) -> f64 {
    let mut tape = Tape::with_params(store);
    let loss = build(&mut tape).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    if let Some(n) = samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords = (0..n)
            .map(|_| coords[rng.random_range(0..coords.len())])
            .collect();
    }

    let mut worst: f64 = 0.0;
    for (id, k) in coords {
        let base = store.get(id).data()[k];
        let mut plus = store.clone();
        plus.set_element(id, k, base + h).unwrap();
        let mut minus = store.clone();
        minus.set_element(id, k, base - h).unwrap();
        let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
        let analytic = grads.param(id).data()[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}
