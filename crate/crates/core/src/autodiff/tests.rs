use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const H: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Central-difference gradient of a scalar function of several inputs,
/// evaluated without any tape-gradient code.
fn numeric_grad(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..inputs[which].len() {
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        let mut dp = plus[which].data().to_vec();
        dp[k] += H;
        plus[which] = Tensor::new(plus[which].shape().to_vec(), dp).unwrap();
        let mut dm = minus[which].data().to_vec();
        dm[k] -= H;
        minus[which] = Tensor::new(minus[which].shape().to_vec(), dm).unwrap();
        out.push((f(&plus) - f(&minus)) / (2.0 * H));
    }
    out
}

/// Relative error with a floor on the denominator: central differences
/// carry roughly 1e-10 of roundoff, which dominates for tiny gradients.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Checks tape gradients of `build` against central differences for every
/// input.
fn check(build: &Build, inputs: &[Tensor<f64>], tol: f64) {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    for (w, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).unwrap();
        assert_eq!(analytic.shape(), inputs[w].shape());
        let numeric = numeric_grad(&eval, inputs, w);
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < tol, "input {w}: analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let row = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let col = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let d = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(d).shape(), &[1, 1]);
    assert_eq!(tape.value(d).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_sum_gradient_is_row_sums_of_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 5]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.input(a.clone()), tape.constant(b.clone()));
    let p = tape.matmul(va, vb).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    let ga = g.wrt(va).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let row_sum: f64 = b.data()[k * 5..(k + 1) * 5].iter().sum();
            assert!((ga.data()[i * 4 + k] - row_sum).abs() < 1e-12);
        }
    }
    check(
        &|t, v| {
            let p = t.matmul(v[0], v[1]).unwrap();
            t.sum(p).unwrap()
        },
        &[a, b],
        1e-5,
    );
}

#[test]
fn matvec_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_tensor(&mut rng, &[4, 6]);
    let mut xd = random_tensor(&mut rng, &[6]).into_data();
    xd[2] = 0.0;
    let x = Tensor::vector(xd).unwrap();
    check(
        &|t, v| {
            let p = t.matmul(v[0], v[1]).unwrap();
            let q = t.tanh(p).unwrap();
            t.sum(q).unwrap()
        },
        &[w, x],
        1e-5,
    );
}

#[test]
fn elementwise_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::scalar(0.0).unwrap());
    let t = tape.tanh(z).unwrap();
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(t).item().unwrap(), 0.0);
    assert_eq!(tape.value(s).item().unwrap(), 0.5);
}

#[test]
fn elementwise_shape_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    assert!(matches!(tape.mul(a, b), Err(Error::Shape { .. })));
}

#[test]
fn mul_gradient_is_other_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[5, 5]);
    let y = random_tensor(&mut rng, &[5, 5]);
    let mut tape = Tape::new();
    let (vx, vy) = (tape.input(x.clone()), tape.input(y.clone()));
    let p = tape.mul(vx, vy).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(vx).unwrap(), &y);
    check(
        &|t, v| {
            let p = t.mul(v[0], v[1]).unwrap();
            t.sum(p).unwrap()
        },
        &[x, y],
        1e-5,
    );
}

#[test]
fn scalar_broadcast_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[3, 2]);
    let s = random_tensor(&mut rng, &[1]);
    check(
        &|t, v| {
            let p = t.mul(v[0], v[1]).unwrap();
            let q = t.sub(v[1], p).unwrap();
            let r = t.sigmoid(q).unwrap();
            t.sum(r).unwrap()
        },
        &[x, s],
        1e-5,
    );
}

#[test]
fn softmax_values_and_stability() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[3]));
    let p = tape.softmax(z).unwrap();
    for &v in tape.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let big = tape.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
    let q = tape.softmax(big).unwrap();
    let qv = tape.value(q).data();
    assert!((qv[0] - 1.0).abs() < 1e-15 && qv[1] >= 0.0 && qv[1] < 1e-300);
    let lq = tape.log_softmax(big).unwrap();
    assert!(tape.value(lq).data()[0].abs() < 1e-12);
    assert!((tape.value(lq).data()[1] + 1000.0).abs() < 1e-9);
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = random_tensor(&mut rng, &[8]);
        let w = random_tensor(&mut rng, &[8]);
        for out in 0..8 {
            check(
                &move |t, v| {
                    let p = t.softmax(v[0]).unwrap();
                    t.index(p, out).unwrap()
                },
                std::slice::from_ref(&x),
                1e-6,
            );
        }
        check(
            &|t, v| {
                let p = t.log_softmax(v[0]).unwrap();
                let q = t.mul(p, v[1]).unwrap();
                t.sum(q).unwrap()
            },
            &[x, w],
            1e-5,
        );
    }
}

#[test]
fn reduce_and_concat() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![2.0, 4.0]).unwrap());
    let m = tape.mean_axis(x, 1).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0]);
    let a = tape.constant(Tensor::vector(vec![1.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![2.0, 3.0]).unwrap());
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn mean_gradient_spreads_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[4, 3]);
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let m = tape.mean(v).unwrap();
    let g = tape.backward(m).unwrap();
    assert!(g.wrt(v).unwrap().data().iter().all(|&d| (d - 1.0 / 12.0).abs() < 1e-15));
    let w = random_tensor(&mut rng, &[3]);
    check(
        &|t, v| {
            let m = t.mean_axis(v[0], 0).unwrap();
            let p = t.mul(m, v[1]).unwrap();
            t.sum(p).unwrap()
        },
        &[x.clone(), w],
        1e-5,
    );
    let w2 = random_tensor(&mut rng, &[4]);
    check(
        &|t, v| {
            let m = t.sum_axis(v[0], 1).unwrap();
            let p = t.mul(m, v[1]).unwrap();
            let q = t.tanh(p).unwrap();
            t.sum(q).unwrap()
        },
        &[x, w2],
        1e-5,
    );
}

#[test]
fn concat_gradient_along_both_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[2, 3]);
    let b = random_tensor(&mut rng, &[2, 2]);
    let w = random_tensor(&mut rng, &[2, 5]);
    check(
        &|t, v| {
            let c = t.concat(&[v[0], v[1]], 1).unwrap();
            let p = t.mul(c, v[2]).unwrap();
            let q = t.tanh(p).unwrap();
            t.sum(q).unwrap()
        },
        &[a, b, w],
        1e-5,
    );
    let c = random_tensor(&mut rng, &[1, 3]);
    let d = random_tensor(&mut rng, &[2, 3]);
    let w = random_tensor(&mut rng, &[3, 3]);
    check(
        &|t, v| {
            let c = t.concat(&[v[0], v[1]], 0).unwrap();
            let p = t.mul(c, v[2]).unwrap();
            let q = t.sigmoid(p).unwrap();
            t.sum(q).unwrap()
        },
        &[c, d, w],
        1e-5,
    );
}

#[test]
fn clamp_scale_reshape_gradients() {
    let x = Tensor::vector(vec![-2.0, -0.3, 0.4, 1.7]).unwrap();
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let c = tape.clamp(v, -1.0, 1.0).unwrap();
    assert_eq!(tape.value(c).data(), &[-1.0, -0.3, 0.4, 1.0]);
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(v).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);

    check(
        &|t, v| {
            let r = t.reshape(v[0], vec![2, 2]).unwrap();
            let s = t.scale(r, 3.0).unwrap();
            let a = t.add_scalar(s, 0.5).unwrap();
            let q = t.tanh(a).unwrap();
            t.mean(q).unwrap()
        },
        &[Tensor::vector(vec![0.1, -0.2, 0.3, 0.05]).unwrap()],
        1e-5,
    );
}

#[test]
fn backward_sum_of_param_is_all_ones() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::matrix(2, 3, vec![0.5; 6]).unwrap()).unwrap();
    let q = store.register("unused", Tensor::zeros(&[4])).unwrap();
    let mut tape = Tape::with_params(&store);
    let v = tape.param(p).unwrap();
    let s = tape.sum(v).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.param(p), &Tensor::ones(&[2, 3]));
    assert_eq!(g.param(q), &Tensor::zeros(&[4]));
}

#[test]
fn tanh_of_linear_map_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random_tensor(&mut rng, &[10, 10]);
    let x = random_tensor(&mut rng, &[10]);
    check(
        &|t, v| {
            let p = t.matmul(v[0], v[1]).unwrap();
            let q = t.tanh(p).unwrap();
            t.sum(q).unwrap()
        },
        &[w, x],
        1e-5,
    );
}

#[test]
fn backward_contract_errors() {
    let mut tape = Tape::<f64>::new();
    let v = tape.input(Tensor::zeros(&[3]));
    assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    let s = tape.sum(v).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
}

#[test]
fn param_loaded_once_accumulates() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::vector(vec![2.0]).unwrap()).unwrap();
    let mut tape = Tape::with_params(&store);
    let a = tape.param(p).unwrap();
    let b = tape.param(p).unwrap();
    assert_eq!(a, b);
    let m = tape.mul(a, b).unwrap();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.param(p).data(), &[4.0]);
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_tensor(&mut rng, &[16, 32]);
        let x = random_tensor(&mut rng, &[32]);
        let mut tape = Tape::new();
        let (vw, vx) = (tape.constant(w), tape.constant(x));
        let p = tape.matmul(vw, vx).unwrap();
        let q = tape.softmax(p).unwrap();
        tape.value(q).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn generic_over_f32() {
    let mut tape = Tape::<f32>::new();
    let x = tape.input(Tensor::vector(vec![0.5f32, -1.0]).unwrap());
    let t = tape.tanh(x).unwrap();
    let s = tape.sum(t).unwrap();
    let g = tape.backward(s).unwrap();
    let expect = 1.0 - 0.5f32.tanh().powi(2);
    assert!((g.wrt(x).unwrap().data()[0] - expect).abs() < 1e-6);
}

/// Twenty random instances per primitive, analytic vs central differences.
#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        let c = random_tensor(&mut rng, &[3, 2]);
        let builds: Vec<(Box<Build>, Vec<Tensor<f64>>)> = vec![
            (
                Box::new(|t, v| {
                    let p = t.matmul(v[0], v[1]).unwrap();
                    let q = t.mul(p, v[2]).unwrap();
                    t.sum(q).unwrap()
                }),
                vec![a.clone(), b.clone(), c.clone()],
            ),
            (
                Box::new(|t, v| {
                    let p = t.add(v[0], v[1]).unwrap();
                    let q = t.sub(p, v[1]).unwrap();
                    let r = t.mul(q, v[1]).unwrap();
                    let s = t.tanh(r).unwrap();
                    t.sum(s).unwrap()
                }),
                vec![c.clone(), random_tensor(&mut rng, &[3, 2])],
            ),
            (
                Box::new(|t, v| {
                    let s = t.sigmoid(v[0]).unwrap();
                    let q = t.mul(s, v[0]).unwrap();
                    t.mean(q).unwrap()
                }),
                vec![a.clone()],
            ),
            (
                Box::new(|t, v| {
                    let r = t.reshape(v[0], vec![12]).unwrap();
                    let s = t.softmax(r).unwrap();
                    let l = t.log_softmax(r).unwrap();
                    let p = t.mul(s, l).unwrap();
                    t.sum(p).unwrap()
                }),
                vec![a.clone()],
            ),
        ];
        for (build, inputs) in &builds {
            check(build.as_ref(), inputs, 1e-5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_normalized_and_permutation_equivariant(
        xs in prop::collection::vec(-50.0f64..50.0, 1..12),
        rot in 0usize..12,
    ) {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::vector(xs.clone()).unwrap());
        let p = tape.softmax(v).unwrap();
        let probs = tape.value(p).data().to_vec();
        let total: f64 = probs.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(probs.iter().all(|&q| (0.0..=1.0).contains(&q)));

        let k = rot % xs.len();
        let mut rotated = xs.clone();
        rotated.rotate_left(k);
        let w = tape.constant(Tensor::vector(rotated).unwrap());
        let q = tape.softmax(w).unwrap();
        let mut expect = probs.clone();
        expect.rotate_left(k);
        for (a, b) in tape.value(q).data().iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
        }
    }
}
