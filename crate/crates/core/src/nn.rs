//! Parameterized layers: affine maps, a vanilla recurrent cell and an LSTM
//! cell. Layers only hold parameter ids; values live in a [`ParamStore`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.08;

/// Seeded weight generator: weights ~ U(-0.08, 0.08), biases zero.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64_lossy(self.rng.random_range(-INIT_SCALE..INIT_SCALE)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("valid init shape")
    }
}

fn expect_len<S: Scalar>(tape: &Tape<'_, S>, x: Var, len: usize, op: &'static str) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape == [len] {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: vec![len],
            rhs: shape.to_vec(),
        })
    }
}

/// `W·x (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        output: usize,
        with_bias: bool,
        init: &mut Init,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), init.uniform(&[output, input]))?;
        let bias = if with_bias {
            Some(store.register(format!("{name}.bias"), Tensor::zeros(&[output]))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        expect_len(tape, x, self.input, "linear")?;
        let w = tape.param(self.weight)?;
        let y = tape.matmul(w, x)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b)?;
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// `h = tanh(W_ih·x + W_hh·h_prev + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(RnnCell {
            w_ih: store.register(format!("{name}.w_ih"), init.uniform(&[hidden, input]))?,
            w_hh: store.register(format!("{name}.w_hh"), init.uniform(&[hidden, hidden]))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[hidden]))?,
            input,
            hidden,
        })
    }

    /// Pre-activation `W_ih·x + W_hh·h_prev + b`, exposed so callers can add
    /// extra input terms before the squashing.
    pub fn preactivation<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        h_prev: Var,
    ) -> Result<Var> {
        expect_len(tape, x, self.input, "rnn_step")?;
        expect_len(tape, h_prev, self.hidden, "rnn_step")?;
        let w_ih = tape.param(self.w_ih)?;
        let w_hh = tape.param(self.w_hh)?;
        let b = tape.param(self.bias)?;
        let a = tape.matmul(w_ih, x)?;
        let r = tape.matmul(w_hh, h_prev)?;
        let s = tape.add(a, r)?;
        tape.add(s, b)
    }

    pub fn step<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, h_prev: Var) -> Result<Var> {
        let z = self.preactivation(tape, x, h_prev)?;
        tape.tanh(z)
    }
}

#[derive(Clone, Debug)]
pub struct Gate {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Single LSTM cell; every gate reads `[x; h_prev]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    pub candidate: Gate,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let mut gate = |store: &mut ParamStore<S>, g: &str, bias: f64| -> Result<Gate> {
            Ok(Gate {
                weight: store.register(
                    format!("{name}.{g}.weight"),
                    init.uniform(&[hidden, input + hidden]),
                )?,
                bias: store.register(
                    format!("{name}.{g}.bias"),
                    Tensor::filled(&[hidden], S::from_f64_lossy(bias)),
                )?,
            })
        };
        Ok(LstmCell {
            input_gate: gate(store, "input", 0.0)?,
            forget_gate: gate(store, "forget", 1.0)?,
            output_gate: gate(store, "output", 0.0)?,
            candidate: gate(store, "candidate", 0.0)?,
            input,
            hidden,
        })
    }

    fn gate<S: Scalar>(tape: &mut Tape<'_, S>, g: &Gate, z: Var) -> Result<Var> {
        let w = tape.param(g.weight)?;
        let b = tape.param(g.bias)?;
        let y = tape.matmul(w, z)?;
        tape.add(y, b)
    }

    /// Returns `(h, c)`.
    pub fn step<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        expect_len(tape, x, self.input, "lstm_step")?;
        expect_len(tape, h_prev, self.hidden, "lstm_step")?;
        expect_len(tape, c_prev, self.hidden, "lstm_step")?;
        let z = tape.concat(&[x, h_prev], 0)?;
        let i = Self::gate(tape, &self.input_gate, z)?;
        let i = tape.sigmoid(i)?;
        let f = Self::gate(tape, &self.forget_gate, z)?;
        let f = tape.sigmoid(f)?;
        let o = Self::gate(tape, &self.output_gate, z)?;
        let o = tape.sigmoid(o)?;
        let g = Self::gate(tape, &self.candidate, z)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }
}
