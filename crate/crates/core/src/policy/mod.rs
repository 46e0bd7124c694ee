//! Master-slave policy network, its gated composition module and the
//! mean-communication baseline.
//!
//! A forward step runs on a caller-owned [`Tape`] so the same code serves
//! sampling during rollouts and differentiation during updates.

mod dist;

use serde::{Deserialize, Serialize};

pub use dist::{
    gaussian_log_density, gaussian_score, gaussian_with_noise, greedy_discrete, log_prob,
    sample_discrete, sample_gaussian, softmax,
};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, LstmCell, RnnCell};

pub const HIDDEN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Master-slave network; the slave gate of the composition module is
    /// shut.
    Msmarl,
    /// Master-slave network with both composition gates open.
    MsmarlGcm,
    Commnet,
}

/// How the composition module mixes master and slave thoughts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcmMode {
    Regular,
    Gated,
    /// Gated algebra with the slave gate replaced by a constant zero.
    SlaveGateClamped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub kind: ModelKind,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub occupancy_dim: usize,
    pub action_space: ActionSpace,
    pub hidden: usize,
    pub use_occupancy: bool,
    pub share_slaves: bool,
}

impl PolicyConfig {
    pub fn action_dim(&self) -> usize {
        match self.action_space {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.obs_dim == 0 || self.occupancy_dim == 0 {
            return Err(Error::config("model", "agent count and input sizes must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if self.action_dim() == 0 {
            return Err(Error::config("model", "action space is empty"));
        }
        if self.kind == ModelKind::Commnet && !self.share_slaves {
            return Err(Error::config(
                "model.share_slaves",
                "the commnet baseline always shares its agent modules",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Slave {
    encoder: Linear,
    rnn: RnnCell,
    message: Linear,
    proposal: Linear,
}

impl Slave {
    fn new(store: &mut ParamStore<f64>, name: &str, c: &PolicyConfig, init: &mut Init) -> Result<Self> {
        let h = c.hidden;
        Ok(Slave {
            encoder: Linear::new(store, &format!("{name}.encoder"), c.obs_dim, h, true, init)?,
            rnn: RnnCell::new(store, &format!("{name}.rnn"), h, h, init)?,
            message: Linear::new(store, &format!("{name}.message"), h, h, true, init)?,
            proposal: Linear::new(store, &format!("{name}.proposal"), h, h, true, init)?,
        })
    }
}

#[derive(Clone, Debug)]
struct Gcm {
    gate_master: Linear,
    gate_slave: Linear,
    master: Linear,
    slave: Linear,
}

impl Gcm {
    fn forward(&self, tape: &mut Tape<'_, f64>, mode: GcmMode, h_m: Var, h_i: Var) -> Result<Var> {
        let both = tape.concat(&[h_m, h_i], 0)?;
        let g_m = self.gate_master.forward(tape, both)?;
        let g_m = tape.sigmoid(g_m)?;
        let wm = self.master.forward(tape, h_m)?;
        let master_term = tape.mul(g_m, wm)?;
        let z = match mode {
            GcmMode::Regular => master_term,
            GcmMode::Gated | GcmMode::SlaveGateClamped => {
                let g_s = match mode {
                    GcmMode::Gated => {
                        let g = self.gate_slave.forward(tape, both)?;
                        tape.sigmoid(g)?
                    }
                    _ => tape.constant(Tensor::zeros(&[self.slave.output])),
                };
                let ws = self.slave.forward(tape, h_i)?;
                let slave_term = tape.mul(g_s, ws)?;
                tape.add(master_term, slave_term)?
            }
        };
        tape.tanh(z)
    }
}

#[derive(Clone, Debug)]
struct MsNet {
    slaves: Vec<Slave>,
    occupancy: Linear,
    lstm: LstmCell,
    gcm: Gcm,
}

#[derive(Clone, Debug)]
struct CommNet {
    encoder: Linear,
    rnn: RnnCell,
    comm: Linear,
    proposal: Linear,
}

#[derive(Clone, Debug)]
enum Net {
    MsNet(MsNet),
    CommNet(CommNet),
}

/// Recurrent state as tape nodes.
#[derive(Clone, Debug)]
pub struct State {
    pub slaves: Vec<Var>,
    pub master: Option<(Var, Var)>,
}

/// Inputs for one synchronous step of all agents.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    /// One observation per agent slot; entries of inactive slots are
    /// never read.
    pub obs: &'a [Vec<f64>],
    pub occupancy: &'a [f64],
    pub alive: &'a [bool],
    /// Slots whose recurrent state restarts from zero this step.
    pub fresh: &'a [bool],
}

#[derive(Clone, Copy, Debug)]
pub struct AgentOut {
    /// Logits (discrete) or clamped mean (continuous).
    pub head: Var,
    pub master_proposal: Option<Var>,
    pub slave_proposal: Var,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub agents: Vec<Option<AgentOut>>,
    pub state: State,
}

/// Additive split of an agent's pre-clamp head output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    /// `W·a^{m→i}`.
    pub master: Vec<f64>,
    /// `W·a^i + b`.
    pub slave: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Policy {
    config: PolicyConfig,
    params: ParamStore<f64>,
    net: Net,
    head: Linear,
    mode: GcmMode,
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let h = config.hidden;
        let net = match config.kind {
            ModelKind::Msmarl | ModelKind::MsmarlGcm => {
                let slaves = if config.share_slaves {
                    vec![Slave::new(&mut store, "slave", &config, &mut init)?]
                } else {
                    (0..config.n_agents)
                        .map(|i| Slave::new(&mut store, &format!("slave{i}"), &config, &mut init))
                        .collect::<Result<_>>()?
                };
                let occupancy =
                    Linear::new(&mut store, "master.occupancy", config.occupancy_dim, h, true, &mut init)?;
                let lstm = LstmCell::new(&mut store, "master.lstm", 2 * h, h, &mut init)?;
                let gcm = Gcm {
                    gate_master: Linear::new(&mut store, "gcm.gate_master", 2 * h, h, true, &mut init)?,
                    gate_slave: Linear::new(&mut store, "gcm.gate_slave", 2 * h, h, true, &mut init)?,
                    master: Linear::new(&mut store, "gcm.master", h, h, false, &mut init)?,
                    slave: Linear::new(&mut store, "gcm.slave", h, h, false, &mut init)?,
                };
                Net::MsNet(MsNet {
                    slaves,
                    occupancy,
                    lstm,
                    gcm,
                })
            }
            ModelKind::Commnet => Net::CommNet(CommNet {
                encoder: Linear::new(&mut store, "commnet.encoder", config.obs_dim, h, true, &mut init)?,
                rnn: RnnCell::new(&mut store, "commnet.rnn", h, h, &mut init)?,
                comm: Linear::new(&mut store, "commnet.comm", h, h, false, &mut init)?,
                proposal: Linear::new(&mut store, "commnet.proposal", h, h, true, &mut init)?,
            }),
        };
        let head = Linear::new(&mut store, "head", h, config.action_dim(), true, &mut init)?;
        let mode = match config.kind {
            ModelKind::MsmarlGcm => GcmMode::Gated,
            _ => GcmMode::Regular,
        };
        Ok(Policy {
            config,
            params: store,
            net,
            head,
            mode,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    /// Replaces every parameter value; names and shapes must match.
    pub fn set_params(&mut self, params: ParamStore<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract("parameter count mismatch"));
        }
        for id in self.params.ids() {
            if params.name(id) != self.params.name(id) {
                return Err(Error::contract(format!(
                    "parameter `{}` found where `{}` was expected",
                    params.name(id),
                    self.params.name(id)
                )));
            }
            self.params.get(id).same_shape(params.get(id), "set_params")?;
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            self.params.set(id, params.get(id).clone())?;
        }
        Ok(())
    }

    pub fn gcm_mode(&self) -> GcmMode {
        self.mode
    }

    pub fn set_gcm_mode(&mut self, mode: GcmMode) {
        self.mode = mode;
    }

    pub fn initial_state(&self, tape: &mut Tape<'_, f64>) -> State {
        let h = self.config.hidden;
        let zero = tape.constant(Tensor::zeros(&[h]));
        let master = match self.net {
            Net::MsNet(_) => Some((zero, zero)),
            Net::CommNet(_) => None,
        };
        State {
            slaves: vec![zero; self.config.n_agents],
            master,
        }
    }

    fn check_input(&self, input: &StepInput<'_>) -> Result<()> {
        let n = self.config.n_agents;
        if input.obs.len() != n || input.alive.len() != n || input.fresh.len() != n {
            return Err(Error::contract(format!("step input must cover {n} agent slots")));
        }
        if input.occupancy.len() != self.config.occupancy_dim {
            return Err(Error::Shape {
                op: "occupancy",
                lhs: vec![self.config.occupancy_dim],
                rhs: vec![input.occupancy.len()],
            });
        }
        for (i, o) in input.obs.iter().enumerate() {
            if input.alive[i] && o.len() != self.config.obs_dim {
                return Err(Error::Shape {
                    op: "observation",
                    lhs: vec![self.config.obs_dim],
                    rhs: vec![o.len()],
                });
            }
        }
        if !input.alive.iter().any(|&a| a) {
            return Err(Error::contract("forward step needs at least one live agent"));
        }
        Ok(())
    }

    /// One synchronous step. Inactive slots keep their recurrent state and
    /// produce no output.
    pub fn step(&self, tape: &mut Tape<'_, f64>, input: &StepInput<'_>, state: &State) -> Result<StepOutput> {
        self.check_input(input)?;
        let h = self.config.hidden;
        let mut prev = state.slaves.clone();
        for (i, p) in prev.iter_mut().enumerate() {
            if input.fresh[i] {
                *p = tape.constant(Tensor::zeros(&[h]));
            }
        }
        let live: Vec<usize> = (0..self.config.n_agents).filter(|&i| input.alive[i]).collect();
        let mut next = prev.clone();
        let mut agents = vec![None; self.config.n_agents];
        let continuous = matches!(self.config.action_space, ActionSpace::Continuous(_));

        match &self.net {
            Net::MsNet(net) => {
                let mut props = Vec::with_capacity(live.len());
                let mut messages = Vec::with_capacity(live.len());
                for &i in &live {
                    let slave = &net.slaves[if net.slaves.len() == 1 { 0 } else { i }];
                    let x = tape.constant(Tensor::vector(input.obs[i].clone())?);
                    let e = slave.encoder.forward(tape, x)?;
                    let hi = slave.rnn.step(tape, e, prev[i])?;
                    messages.push(slave.message.forward(tape, hi)?);
                    props.push(slave.proposal.forward(tape, hi)?);
                    next[i] = hi;
                }
                let pooled = mean_of(tape, &messages)?;
                let occ = if self.config.use_occupancy {
                    let o = tape.constant(Tensor::vector(input.occupancy.to_vec())?);
                    net.occupancy.forward(tape, o)?
                } else {
                    tape.constant(Tensor::zeros(&[h]))
                };
                let x_m = tape.concat(&[occ, pooled], 0)?;
                let (h_m, c_m) = state
                    .master
                    .ok_or_else(|| Error::contract("master state missing"))?;
                let (h_m, c_m) = net.lstm.step(tape, x_m, h_m, c_m)?;
                for (k, &i) in live.iter().enumerate() {
                    let a_m = net.gcm.forward(tape, self.mode, h_m, next[i])?;
                    let sum = tape.add(a_m, props[k])?;
                    let head = self.head_forward(tape, sum, continuous)?;
                    agents[i] = Some(AgentOut {
                        head,
                        master_proposal: Some(a_m),
                        slave_proposal: props[k],
                    });
                }
                Ok(StepOutput {
                    agents,
                    state: State {
                        slaves: next,
                        master: Some((h_m, c_m)),
                    },
                })
            }
            Net::CommNet(net) => {
                let peers_total = if live.len() > 1 {
                    let hs: Vec<Var> = live.iter().map(|&i| prev[i]).collect();
                    Some(sum_of(tape, &hs)?)
                } else {
                    None
                };
                for &i in &live {
                    let x = tape.constant(Tensor::vector(input.obs[i].clone())?);
                    let e = net.encoder.forward(tape, x)?;
                    let z = net.rnn.preactivation(tape, e, prev[i])?;
                    let z = match peers_total {
                        Some(total) => {
                            let others = tape.sub(total, prev[i])?;
                            let mean = tape.scale(others, 1.0 / (live.len() - 1) as f64)?;
                            let c = net.comm.forward(tape, mean)?;
                            tape.add(z, c)?
                        }
                        None => z,
                    };
                    let hi = tape.tanh(z)?;
                    let prop = net.proposal.forward(tape, hi)?;
                    let head = self.head_forward(tape, prop, continuous)?;
                    agents[i] = Some(AgentOut {
                        head,
                        master_proposal: None,
                        slave_proposal: prop,
                    });
                    next[i] = hi;
                }
                Ok(StepOutput {
                    agents,
                    state: State {
                        slaves: next,
                        master: None,
                    },
                })
            }
        }
    }

    fn head_forward(&self, tape: &mut Tape<'_, f64>, x: Var, continuous: bool) -> Result<Var> {
        let y = self.head.forward(tape, x)?;
        if continuous {
            tape.clamp(y, -1.0, 1.0)
        } else {
            Ok(y)
        }
    }

    /// Splits the pre-clamp head output of `out` into master and slave
    /// contributions.
    pub fn decompose(&self, tape: &Tape<'_, f64>, out: &AgentOut) -> Decomposition {
        let w = self.params.get(self.head.weight);
        let b = self.head.bias.map(|b| self.params.get(b).data().to_vec());
        let project = |v: &[f64]| -> Vec<f64> {
            let cols = v.len();
            w.data().chunks(cols).map(|row| row.iter().zip(v).map(|(a, x)| a * x).sum()).collect()
        };
        let mut slave = project(tape.value(out.slave_proposal).data());
        if let Some(b) = b {
            for (s, bi) in slave.iter_mut().zip(b) {
                *s += bi;
            }
        }
        let master = match out.master_proposal {
            Some(m) => project(tape.value(m).data()),
            None => vec![0.0; slave.len()],
        };
        Decomposition { master, slave }
    }
}

fn sum_of(tape: &mut Tape<'_, f64>, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

fn mean_of(tape: &mut Tape<'_, f64>, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(Error::contract("master step needs at least one message"));
    }
    let s = sum_of(tape, xs)?;
    tape.scale(s, 1.0 / xs.len() as f64)
}
