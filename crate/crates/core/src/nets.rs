//! Neural building blocks: MLP, GRU cell, and the recurrent Q-network.
//!
//! The Q-network consumes observation tuples o_t = (r_{t-1}, s_t, a_{t-1})
//! through a linear+ReLU encoder, a GRU producing the history encoding ĥ_t,
//! and a two-layer head emitting one q-value per action. In contextual mode
//! the recurrent path is dropped and only the current state feeds the MLP.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::history::HistoryView;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Feed-forward network spec: input width plus (width, activation) per layer.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    input: usize,
    layers: Vec<(usize, Activation)>,
}

impl MlpSpec {
    pub fn new(input: usize, layers: Vec<(usize, Activation)>) -> Result<Self> {
        if input == 0 || layers.is_empty() || layers.iter().any(|(w, _)| *w == 0) {
            return Err(Error::Config(
                "MLP needs a positive input width and at least one positive-width layer".into(),
            ));
        }
        Ok(Self { input, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().0
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize, Activation)> + '_ {
        let ins = core::iter::once(self.input).chain(self.layers.iter().map(|(w, _)| *w));
        ins.zip(self.layers.iter()).map(|(i, (o, a))| (i, *o, *a))
    }

    /// Total number of scalar parameters (used by packed forwards).
    pub fn param_count(&self) -> usize {
        self.layer_dims().map(|(i, o, _)| o * i + o).sum()
    }

    pub fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        for (idx, (fan_in, out, _)) in self.layer_dims().enumerate() {
            store.insert_uniform_fan_in(&format!("{prefix}.w{idx}"), &[out, fan_in], fan_in, rng)?;
            store.insert_uniform_fan_in(&format!("{prefix}.b{idx}"), &[out], fan_in, rng)?;
        }
        Ok(())
    }

    fn activate(tape: &mut Tape, v: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::None => Ok(v),
        }
    }

    /// Forward pass with parameters bound from a store.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        for (idx, (_, _, act)) in self.layer_dims().enumerate() {
            let w = tape.param(store, &format!("{prefix}.w{idx}"))?;
            let b = tape.param(store, &format!("{prefix}.b{idx}"))?;
            let z = tape.affine(w, h, b)?;
            h = Self::activate(tape, z, act)?;
        }
        Ok(h)
    }

    /// Forward pass with all parameters packed into one flat tape variable,
    /// laid out layer by layer as row-major weight then bias. Used when the
    /// parameters are themselves the output of another network.
    pub fn forward_packed(&self, tape: &mut Tape, packed: Var, x: Var) -> Result<Var> {
        if tape.value(packed).len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "packed MLP params: expected {}, got {}",
                self.param_count(),
                tape.value(packed).len()
            )));
        }
        let mut h = x;
        let mut offset = 0;
        for (fan_in, out, act) in self.layer_dims() {
            let w_flat = tape.slice(packed, offset, offset + out * fan_in)?;
            offset += out * fan_in;
            let b = tape.slice(packed, offset, offset + out)?;
            offset += out;
            let w = tape.reshape(w_flat, vec![out, fan_in])?;
            let z = tape.affine(w, h, b)?;
            h = Self::activate(tape, z, act)?;
        }
        Ok(h)
    }
}

/// Standard GRU cell with a single candidate bias:
/// r = σ(W_r x + U_r h + b_r), z = σ(W_z x + U_z h + b_z),
/// n = tanh(W_n x + r ⊙ (U_n h) + b_n), h' = (1−z) ⊙ n + z ⊙ h.
#[derive(Debug, Clone, Copy)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
}

const GRU_GATES: [&str; 3] = ["reset", "update", "cand"];

impl GruSpec {
    pub fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        for gate in GRU_GATES {
            store.insert_uniform_fan_in(
                &format!("{prefix}.w_{gate}"),
                &[self.hidden, self.input],
                self.input,
                rng,
            )?;
            store.insert_uniform_fan_in(
                &format!("{prefix}.u_{gate}"),
                &[self.hidden, self.hidden],
                self.hidden,
                rng,
            )?;
            store.insert_uniform_fan_in(
                &format!("{prefix}.b_{gate}"),
                &[self.hidden],
                self.hidden,
                rng,
            )?;
        }
        Ok(())
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        h: Var,
        x: Var,
    ) -> Result<Var> {
        let gate = |tape: &mut Tape, name: &str| -> Result<(Var, Var, Var)> {
            Ok((
                tape.param(store, &format!("{prefix}.w_{name}"))?,
                tape.param(store, &format!("{prefix}.u_{name}"))?,
                tape.param(store, &format!("{prefix}.b_{name}"))?,
            ))
        };

        let (wr, ur, br) = gate(tape, "reset")?;
        let pre_r = {
            let wx = tape.matvec(wr, x)?;
            let uh = tape.matvec(ur, h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, br)?
        };
        let r = tape.sigmoid(pre_r)?;

        let (wz, uz, bz) = gate(tape, "update")?;
        let pre_z = {
            let wx = tape.matvec(wz, x)?;
            let uh = tape.matvec(uz, h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, bz)?
        };
        let z = tape.sigmoid(pre_z)?;

        let (wn, un, bn) = gate(tape, "cand")?;
        let pre_n = {
            let wx = tape.matvec(wn, x)?;
            let uh = tape.matvec(un, h)?;
            let gated = tape.mul(r, uh)?;
            let s = tape.add(wx, gated)?;
            tape.add(s, bn)?
        };
        let n = tape.tanh(pre_n)?;

        let zn = tape.neg(z)?;
        let one_minus_z = tape.add_scalar(zn, 1.0)?;
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

/// Observation tuple o_t fed to the Q-network.
#[derive(Debug, Clone)]
pub struct Observation {
    pub prev_reward: f64,
    pub state: Tensor,
    /// `None` at t=0 (one-hot slot is all-zero).
    pub prev_action: Option<usize>,
}

impl Observation {
    pub fn initial(state: Tensor) -> Self {
        Self {
            prev_reward: 0.0,
            state,
            prev_action: None,
        }
    }

    /// Flattens to `[prev_reward, state..., one-hot prev_action]`.
    pub fn vectorize(&self, n_actions: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(1 + self.state.len() + n_actions);
        data.push(self.prev_reward);
        data.extend_from_slice(self.state.data());
        let mut one_hot = vec![0.0; n_actions];
        if let Some(a) = self.prev_action {
            if a >= n_actions {
                return Err(Error::Config(format!(
                    "prev_action {a} out of {n_actions} actions"
                )));
            }
            one_hot[a] = 1.0;
        }
        data.extend_from_slice(&one_hot);
        Ok(Tensor::vector(data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMode {
    Recurrent,
    Contextual,
}

#[derive(Debug, Clone, Copy)]
pub struct QNetConfig {
    pub mode: HistoryMode,
    pub state_dim: usize,
    pub n_actions: usize,
    /// Width of the feed-forward layers.
    pub hidden: usize,
    /// Width H of the recurrent encoding ĥ.
    pub encoding: usize,
}

/// Recurrent (or contextual) Q-network emitting a q-vector over actions.
#[derive(Debug, Clone)]
pub struct QNet {
    cfg: QNetConfig,
    encoder: MlpSpec,
    gru: GruSpec,
    head: MlpSpec,
}

impl QNet {
    pub fn new(cfg: QNetConfig) -> Result<Self> {
        let obs_dim = match cfg.mode {
            HistoryMode::Recurrent => 1 + cfg.state_dim + cfg.n_actions,
            HistoryMode::Contextual => cfg.state_dim,
        };
        let encoder = MlpSpec::new(obs_dim, vec![(cfg.hidden, Activation::Relu)])?;
        let gru = GruSpec {
            input: cfg.hidden,
            hidden: cfg.encoding,
        };
        let head_in = match cfg.mode {
            HistoryMode::Recurrent => cfg.encoding,
            HistoryMode::Contextual => cfg.hidden,
        };
        let head = MlpSpec::new(
            head_in,
            vec![
                (cfg.hidden, Activation::Relu),
                (cfg.n_actions, Activation::None),
            ],
        )?;
        Ok(Self {
            cfg,
            encoder,
            gru,
            head,
        })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.cfg
    }

    pub fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.encoder
            .init_params(store, &format!("{prefix}.enc"), rng)?;
        if self.cfg.mode == HistoryMode::Recurrent {
            self.gru.init_params(store, &format!("{prefix}.gru"), rng)?;
        }
        self.head.init_params(store, &format!("{prefix}.head"), rng)
    }

    /// ĥ_init: zeros.
    pub fn initial_encoding(&self) -> Tensor {
        Tensor::zeros(&[self.cfg.encoding])
    }

    /// One step: consumes an observation, returns (ĥ_t, q-vector).
    /// In contextual mode the passed encoding is returned untouched and only
    /// the observation's state is used.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        h: Var,
        obs: &Observation,
    ) -> Result<(Var, Var)> {
        match self.cfg.mode {
            HistoryMode::Recurrent => {
                let x = tape.leaf(obs.vectorize(self.cfg.n_actions)?);
                let enc = self
                    .encoder
                    .forward(tape, store, &format!("{prefix}.enc"), x)?;
                let h_next = self.gru.step(tape, store, &format!("{prefix}.gru"), h, enc)?;
                let q = self
                    .head
                    .forward(tape, store, &format!("{prefix}.head"), h_next)?;
                Ok((h_next, q))
            }
            HistoryMode::Contextual => {
                let x = tape.leaf(obs.state.clone());
                let enc = self
                    .encoder
                    .forward(tape, store, &format!("{prefix}.enc"), x)?;
                let q = self
                    .head
                    .forward(tape, store, &format!("{prefix}.head"), enc)?;
                Ok((h, q))
            }
        }
    }

    /// Unrolls over a history window. Returns per-timestep encodings and
    /// q-vectors for timesteps 0..=window.len().
    pub fn unroll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        window: &HistoryView<'_>,
    ) -> Result<QnetUnroll> {
        let mut h = tape.leaf(self.initial_encoding());
        let mut encodings = Vec::with_capacity(window.len() + 1);
        let mut qvecs = Vec::with_capacity(window.len() + 1);
        for i in 0..=window.len() {
            let (prev_reward, state, prev_action) = window.obs_parts_at(i);
            let obs = Observation {
                prev_reward,
                state: state.clone(),
                prev_action,
            };
            let (h_next, q) = self.step(tape, store, prefix, h, &obs)?;
            h = h_next;
            encodings.push(h);
            qvecs.push(q);
        }
        Ok(QnetUnroll { encodings, qvecs })
    }
}

/// Tape variables produced by [`QNet::unroll`], indexed by timestep.
pub struct QnetUnroll {
    pub encodings: Vec<Var>,
    pub qvecs: Vec<Var>,
}

impl QnetUnroll {
    /// Encoding and q-vector at the final timestep of the window.
    pub fn last(&self) -> (Var, Var) {
        (
            *self.encodings.last().unwrap(),
            *self.qvecs.last().unwrap(),
        )
    }
}
