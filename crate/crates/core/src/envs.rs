//! Benchmark environments and their exact auxiliary structures.
//!
//! Both environments are contextual MDPs: a hidden context `φ` is drawn once
//! per episode and fixed thereafter. For the tiger problem the posterior over
//! `φ` is available in closed form, which gives the training loop an exact
//! reference posterior to swap in for the learned one; for search-and-rescue
//! only a prior dataset of known-dynamics transitions is available.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::flows::sample_standard_normal;
use crate::history::HistoryView;
use crate::math;
use crate::model::BellmanSampler;
use crate::nets::{Observation, QNet};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result, Rng};

/// How `reset` picks the hidden context.
#[derive(Debug, Clone)]
pub enum PhiDraw<P> {
    SamplePrior,
    Fixed(P),
}

/// A contextual MDP with a per-episode hidden context.
pub trait CmdpEnv {
    type Phi: Clone;

    /// Starts a new episode and returns the initial state vector.
    fn reset(&mut self, draw: PhiDraw<Self::Phi>) -> Result<Tensor>;
    /// Takes one action; returns the reward and successor state vector.
    fn step(&mut self, action: usize) -> Result<(f64, Tensor)>;
    fn n_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn gamma(&self) -> f64;
    /// `(victims saved, hazards hit)` progress counters; environments
    /// without such notions report zeros.
    fn counters(&self) -> (usize, usize) {
        (0, 0)
    }
    /// Whether the current episode has ended on its own. Budget-limited
    /// environments return `false` forever.
    fn episode_over(&self) -> bool {
        false
    }
}

pub const TIGER_OPEN_LEFT: usize = 0;
pub const TIGER_OPEN_RIGHT: usize = 1;
pub const TIGER_LISTEN: usize = 2;
pub const TIGER_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TigerSide {
    Left,
    Right,
}

/// Observable tiger states: `S0` is the start room, `S1`/`S2` are the two
/// listen-signal rooms (`S1` hints tiger-left).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TigerState {
    S0,
    S1,
    S2,
}

impl TigerState {
    pub fn index(self) -> usize {
        match self {
            TigerState::S0 => 0,
            TigerState::S1 => 1,
            TigerState::S2 => 2,
        }
    }

    pub fn one_hot(self) -> Tensor {
        Tensor::one_hot(3, self.index()).unwrap()
    }

    /// Recovers the state from its one-hot vector.
    pub fn from_one_hot(t: &Tensor) -> Result<Self> {
        if t.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "tiger state vector has {} entries, expected 3",
                t.len()
            )));
        }
        let data = t.data();
        let mut best = 0usize;
        for i in 1..3 {
            if data[i] > data[best] {
                best = i;
            }
        }
        Ok(match best {
            0 => TigerState::S0,
            1 => TigerState::S1,
            _ => TigerState::S2,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TigerConfig {
    pub r_tiger: f64,
    pub r_gold: f64,
    pub r_listen: f64,
    pub gamma: f64,
    /// Listen lands in the correct-side signal room with this probability...
    pub p_correct: f64,
    /// ...the wrong-side room with this one...
    pub p_wrong: f64,
    /// ...and stays in the uninformative start room otherwise.
    pub p_stay: f64,
}

impl Default for TigerConfig {
    fn default() -> Self {
        Self {
            r_tiger: -500.0,
            r_gold: 10.0,
            r_listen: -1.0,
            gamma: 0.9,
            p_correct: 0.85,
            p_wrong: 0.10,
            p_stay: 0.05,
        }
    }
}

impl TigerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("tiger gamma {} not in (0,1)", self.gamma)));
        }
        let probs = [self.p_correct, self.p_wrong, self.p_stay];
        if probs.iter().any(|p| *p < 0.0 || *p > 1.0) {
            return Err(Error::Config("tiger listen probabilities outside [0,1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "tiger listen probabilities sum to {total}, expected 1"
            )));
        }
        if self.r_gold == self.r_tiger {
            return Err(Error::Config(
                "tiger rewards must distinguish gold from tiger".into(),
            ));
        }
        Ok(())
    }
}

/// Samples one transition given the hidden context. Shared by the
/// environment and by exact-posterior bootstrap draws.
pub fn tiger_transition(
    cfg: &TigerConfig,
    tiger_left: bool,
    action: usize,
    rng: &mut Rng,
) -> Result<(f64, TigerState)> {
    match action {
        TIGER_OPEN_LEFT => Ok((
            if tiger_left { cfg.r_tiger } else { cfg.r_gold },
            TigerState::S0,
        )),
        TIGER_OPEN_RIGHT => Ok((
            if tiger_left { cfg.r_gold } else { cfg.r_tiger },
            TigerState::S0,
        )),
        TIGER_LISTEN => {
            let u: f64 = rng.random();
            let next = if u < cfg.p_correct {
                if tiger_left {
                    TigerState::S1
                } else {
                    TigerState::S2
                }
            } else if u < cfg.p_correct + cfg.p_wrong {
                if tiger_left {
                    TigerState::S2
                } else {
                    TigerState::S1
                }
            } else {
                TigerState::S0
            };
            Ok((cfg.r_listen, next))
        }
        _ => Err(Error::Config(format!("tiger action {action} out of range"))),
    }
}

/// Enumerates `(probability, reward, next state)` branches of one action
/// under a belief, marginalising over the hidden context. Listens expand to
/// six branches (two contexts, three signals), opens to two.
pub fn tiger_outcome_enumeration(
    cfg: &TigerConfig,
    belief_left: f64,
    action: usize,
) -> Result<Vec<(f64, f64, TigerState)>> {
    if !(0.0..=1.0).contains(&belief_left) {
        return Err(Error::Domain(format!("belief {belief_left} outside [0,1]")));
    }
    let mut out = Vec::new();
    for (side_prob, tiger_left) in [(belief_left, true), (1.0 - belief_left, false)] {
        match action {
            TIGER_OPEN_LEFT => out.push((
                side_prob,
                if tiger_left { cfg.r_tiger } else { cfg.r_gold },
                TigerState::S0,
            )),
            TIGER_OPEN_RIGHT => out.push((
                side_prob,
                if tiger_left { cfg.r_gold } else { cfg.r_tiger },
                TigerState::S0,
            )),
            TIGER_LISTEN => {
                let (correct, wrong) = if tiger_left {
                    (TigerState::S1, TigerState::S2)
                } else {
                    (TigerState::S2, TigerState::S1)
                };
                out.push((side_prob * cfg.p_correct, cfg.r_listen, correct));
                out.push((side_prob * cfg.p_wrong, cfg.r_listen, wrong));
                out.push((side_prob * cfg.p_stay, cfg.r_listen, TigerState::S0));
            }
            _ => return Err(Error::Config(format!("tiger action {action} out of range"))),
        }
    }
    Ok(out)
}

/// Probability of each listen signal (`s1`, `s2`, `s0`) under a belief.
pub fn tiger_listen_probs(cfg: &TigerConfig, belief_left: f64) -> [f64; 3] {
    let b = belief_left;
    [
        b * cfg.p_correct + (1.0 - b) * cfg.p_wrong,
        b * cfg.p_wrong + (1.0 - b) * cfg.p_correct,
        cfg.p_stay,
    ]
}

/// Belief after observing one listen signal, by Bayes' rule. The `s0`
/// outcome is uninformative and leaves the belief unchanged.
pub fn tiger_listen_posterior(cfg: &TigerConfig, belief_left: f64, outcome: TigerState) -> f64 {
    let b = belief_left;
    match outcome {
        TigerState::S0 => b,
        TigerState::S1 => {
            let num = b * cfg.p_correct;
            num / (num + (1.0 - b) * cfg.p_wrong)
        }
        TigerState::S2 => {
            let num = b * cfg.p_wrong;
            num / (num + (1.0 - b) * cfg.p_correct)
        }
    }
}

#[derive(Debug)]
pub struct TigerEnv {
    cfg: TigerConfig,
    phi: Option<TigerSide>,
    state: TigerState,
    steps: usize,
    rng: Rng,
}

impl TigerEnv {
    pub fn new(cfg: TigerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            phi: None,
            state: TigerState::S0,
            steps: 0,
            rng: <Rng as rand::SeedableRng>::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &TigerConfig {
        &self.cfg
    }

    pub fn phi(&self) -> Option<TigerSide> {
        self.phi
    }

    pub fn state(&self) -> TigerState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl CmdpEnv for TigerEnv {
    type Phi = TigerSide;

    fn reset(&mut self, draw: PhiDraw<TigerSide>) -> Result<Tensor> {
        self.phi = Some(match draw {
            PhiDraw::SamplePrior => {
                if self.rng.random_bool(0.5) {
                    TigerSide::Left
                } else {
                    TigerSide::Right
                }
            }
            PhiDraw::Fixed(side) => side,
        });
        self.state = TigerState::S0;
        self.steps = 0;
        Ok(self.state.one_hot())
    }

    fn step(&mut self, action: usize) -> Result<(f64, Tensor)> {
        let phi = self
            .phi
            .ok_or_else(|| Error::Config("tiger step before reset".into()))?;
        let (r, next) = tiger_transition(
            &self.cfg,
            phi == TigerSide::Left,
            action,
            &mut self.rng,
        )?;
        self.state = next;
        self.steps += 1;
        Ok((r, next.one_hot()))
    }

    fn n_actions(&self) -> usize {
        TIGER_ACTIONS
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }
}

/// Exact posterior over the tiger side. Listen signals only enter through
/// their visit counts; any door opening reveals the context outright.
#[derive(Debug, Clone, Copy, Default)]
pub struct TigerBelief {
    n1: u64,
    n2: u64,
    collapsed: Option<TigerSide>,
}

impl TigerBelief {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.n1, self.n2)
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed.is_some()
    }

    /// P(tiger-left | history), computed in log space so long histories
    /// cannot underflow.
    pub fn belief_left(&self, cfg: &TigerConfig) -> f64 {
        match self.collapsed {
            Some(TigerSide::Left) => 1.0,
            Some(TigerSide::Right) => 0.0,
            None => {
                let d = self.n1 as f64 - self.n2 as f64;
                let log_ratio = d * (math::ln(cfg.p_wrong) - math::ln(cfg.p_correct));
                1.0 / (1.0 + math::exp(log_ratio))
            }
        }
    }

    pub fn observe_listen(&mut self, outcome: TigerState) {
        if self.collapsed.is_some() {
            return;
        }
        match outcome {
            TigerState::S1 => self.n1 += 1,
            TigerState::S2 => self.n2 += 1,
            TigerState::S0 => {}
        }
    }

    pub fn observe_open(&mut self, cfg: &TigerConfig, action: usize, reward: f64) {
        let gold = reward == cfg.r_gold;
        self.collapsed = Some(match (action, gold) {
            (TIGER_OPEN_LEFT, true) | (TIGER_OPEN_RIGHT, false) => TigerSide::Right,
            _ => TigerSide::Left,
        });
    }

    /// Folds one observed transition into the posterior.
    pub fn update(&mut self, cfg: &TigerConfig, action: usize, reward: f64, next: TigerState) {
        if action == TIGER_LISTEN {
            self.observe_listen(next);
        } else {
            self.observe_open(cfg, action, reward);
        }
    }
}

/// Replays a history window through the exact posterior. The window is
/// treated as a complete history started from the uniform prior; its
/// pseudo-initial state contributes no evidence.
pub fn tiger_belief_from_window(
    cfg: &TigerConfig,
    window: &HistoryView<'_>,
) -> Result<TigerBelief> {
    let mut belief = TigerBelief::new();
    for i in 0..window.len() {
        let step = window.step_at(i);
        let next = TigerState::from_one_hot(&step.state)?;
        belief.update(cfg, step.action, step.reward, next);
    }
    Ok(belief)
}

/// Bootstrap-value draws from the *exact* tiger posterior: sample the
/// context from the current belief, sample one transition, then continue
/// the Q-network a single step from the passed history encoding.
pub struct TigerExactSampler<'a> {
    pub qnet: &'a QNet,
    pub omega: &'a ParamStore,
    pub omega_prefix: &'a str,
    pub cfg: &'a TigerConfig,
    pub belief_left: f64,
}

impl BellmanSampler for TigerExactSampler<'_> {
    fn draw_b(
        &self,
        tape: &mut Tape,
        _window: &HistoryView<'_>,
        encoding: Var,
        _qvec: Var,
        action: usize,
        rng: &mut Rng,
    ) -> Result<Var> {
        let tiger_left = rng.random_bool(self.belief_left.clamp(0.0, 1.0));
        let (reward, next) = tiger_transition(self.cfg, tiger_left, action, rng)?;
        let obs = Observation {
            prev_reward: reward,
            state: next.one_hot(),
            prev_action: Some(action),
        };
        let (_, qvec) = self
            .qnet
            .step(tape, self.omega, self.omega_prefix, encoding, &obs)?;
        let mx = tape.max(qvec)?;
        let scaled = tape.scale(mx, self.cfg.gamma)?;
        tape.add_scalar(scaled, reward)
    }
}

pub const SAR_UP: usize = 0;
pub const SAR_DOWN: usize = 1;
pub const SAR_LEFT: usize = 2;
pub const SAR_RIGHT: usize = 3;
pub const SAR_LISTEN: usize = 4;
pub const SAR_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct SarConfig {
    /// Odd grid side length; the agent starts at the central square (0,0).
    pub n_grid: usize,
    pub n_victims: usize,
    pub n_hazards: usize,
    pub r_victim: f64,
    pub r_hazard: f64,
    pub r_listen: f64,
    pub gamma: f64,
    /// Standard deviation of the noise added inside the listen channels.
    pub sigma_noise: f64,
}

impl Default for SarConfig {
    fn default() -> Self {
        Self {
            n_grid: 7,
            n_victims: 4,
            n_hazards: 8,
            r_victim: 10.0,
            r_hazard: -100.0,
            r_listen: -1.0,
            gamma: 0.99,
            sigma_noise: 0.1,
        }
    }
}

impl SarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 || self.n_grid % 2 == 0 {
            return Err(Error::Config(format!(
                "grid side {} must be odd and at least 3",
                self.n_grid
            )));
        }
        if self.n_victims + self.n_hazards > self.n_doors() {
            return Err(Error::Config(format!(
                "{} victims + {} hazards exceed {} doors",
                self.n_victims,
                self.n_hazards,
                self.n_doors()
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if self.sigma_noise < 0.0 {
            return Err(Error::Config("sigma_noise must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn half(&self) -> i64 {
        (self.n_grid as i64 - 1) / 2
    }

    /// Door cells ring the grid: one exterior cell per boundary square.
    pub fn n_doors(&self) -> usize {
        4 * self.n_grid
    }

    pub fn state_dim(&self) -> usize {
        2 + self.n_victims + self.n_hazards
    }

    pub fn max_steps(&self) -> usize {
        5 * self.n_grid * self.n_grid
    }

    /// Center of door cell `idx`; sides are ordered top, bottom, left, right.
    pub fn door_position(&self, idx: usize) -> Result<(i64, i64)> {
        if idx >= self.n_doors() {
            return Err(Error::Config(format!(
                "door {idx} out of {} doors",
                self.n_doors()
            )));
        }
        let h = self.half();
        let side = idx / self.n_grid;
        let off = (idx % self.n_grid) as i64 - h;
        Ok(match side {
            0 => (off, h + 1),
            1 => (off, -h - 1),
            2 => (-h - 1, off),
            _ => (h + 1, off),
        })
    }

    fn door_index_of(&self, cell: (i64, i64)) -> Option<usize> {
        let h = self.half();
        let n = self.n_grid;
        let (x, y) = cell;
        if y == h + 1 && x.abs() <= h {
            Some((x + h) as usize)
        } else if y == -h - 1 && x.abs() <= h {
            Some(n + (x + h) as usize)
        } else if x == -h - 1 && y.abs() <= h {
            Some(2 * n + (y + h) as usize)
        } else if x == h + 1 && y.abs() <= h {
            Some(3 * n + (y + h) as usize)
        } else {
            None
        }
    }
}

/// One placed victim or hazard: its door plus a continuous offset inside the
/// door square (the offset only matters for listen distances).
#[derive(Debug, Clone)]
pub struct SarEntity {
    pub door: usize,
    pub jitter: (f64, f64),
}

/// Hidden context of one search-and-rescue episode.
#[derive(Debug, Clone)]
pub struct SarContext {
    pub victims: Vec<SarEntity>,
    pub hazards: Vec<SarEntity>,
}

impl SarContext {
    pub fn validate(&self, cfg: &SarConfig) -> Result<()> {
        if self.victims.len() != cfg.n_victims || self.hazards.len() != cfg.n_hazards {
            return Err(Error::Config(format!(
                "context has {} victims / {} hazards, config wants {} / {}",
                self.victims.len(),
                self.hazards.len(),
                cfg.n_victims,
                cfg.n_hazards
            )));
        }
        let mut seen = vec![false; cfg.n_doors()];
        for e in self.victims.iter().chain(self.hazards.iter()) {
            if e.door >= cfg.n_doors() {
                return Err(Error::Config(format!("door {} out of range", e.door)));
            }
            if seen[e.door] {
                return Err(Error::Config(format!("door {} assigned twice", e.door)));
            }
            seen[e.door] = true;
            if e.jitter.0.abs() > 0.5 || e.jitter.1.abs() > 0.5 {
                return Err(Error::Config("entity jitter outside its square".into()));
            }
        }
        Ok(())
    }

    pub fn sample(cfg: &SarConfig, rng: &mut Rng) -> Self {
        let picks = rand::seq::index::sample(rng, cfg.n_doors(), cfg.n_victims + cfg.n_hazards);
        let mut entities: Vec<SarEntity> = picks
            .iter()
            .map(|door| SarEntity {
                door,
                jitter: (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            })
            .collect();
        let hazards = entities.split_off(cfg.n_victims);
        Self {
            victims: entities,
            hazards,
        }
    }
}

const SAR_FAR_AWAY: f64 = 1000.0;

#[derive(Debug)]
pub struct SearchRescueEnv {
    cfg: SarConfig,
    ctx: Option<SarContext>,
    rescued: Vec<bool>,
    agent: (i64, i64),
    steps: usize,
    victims_saved: usize,
    hazards_hit: usize,
    rng: Rng,
}

impl SearchRescueEnv {
    pub fn new(cfg: SarConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            ctx: None,
            rescued: Vec::new(),
            agent: (0, 0),
            steps: 0,
            victims_saved: 0,
            hazards_hit: 0,
            rng: <Rng as rand::SeedableRng>::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &SarConfig {
        &self.cfg
    }

    pub fn context(&self) -> Option<&SarContext> {
        self.ctx.as_ref()
    }

    pub fn agent(&self) -> (i64, i64) {
        self.agent
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn victims_saved(&self) -> usize {
        self.victims_saved
    }

    pub fn hazards_hit(&self) -> usize {
        self.hazards_hit
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.cfg.max_steps()
    }

    /// Continuous position used for listen distances; rescued victims sit
    /// far outside the grid so their channel reads zero.
    fn entity_pos(&self, victim_idx: Option<usize>, e: &SarEntity) -> Result<(f64, f64)> {
        if let Some(i) = victim_idx {
            if self.rescued[i] {
                let far = SAR_FAR_AWAY * self.cfg.n_grid as f64;
                return Ok((far, far));
            }
        }
        let (dx, dy) = self.cfg.door_position(e.door)?;
        Ok((dx as f64 + e.jitter.0, dy as f64 + e.jitter.1))
    }

    fn channel(&mut self, pos: (f64, f64)) -> f64 {
        let ax = self.agent.0 as f64;
        let ay = self.agent.1 as f64;
        let d2 = (ax - pos.0) * (ax - pos.0) + (ay - pos.1) * (ay - pos.1);
        let eta = if self.cfg.sigma_noise > 0.0 {
            self.cfg.sigma_noise * sample_standard_normal(1, &mut self.rng).data()[0]
        } else {
            0.0
        };
        math::exp(-d2 / self.cfg.n_grid as f64 + eta)
    }

    /// State vector `(x, y, victim channels…, hazard channels…)`; channels
    /// are zero except in the state emitted by a listen action.
    fn state_vector(&mut self, with_channels: bool) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.cfg.state_dim());
        data.push(self.agent.0 as f64);
        data.push(self.agent.1 as f64);
        if with_channels {
            let ctx = self.ctx.clone().expect("checked by caller");
            for (i, v) in ctx.victims.iter().enumerate() {
                let pos = self.entity_pos(Some(i), v)?;
                data.push(self.channel(pos));
            }
            for hz in &ctx.hazards {
                let pos = self.entity_pos(None, hz)?;
                data.push(self.channel(pos));
            }
        } else {
            data.resize(self.cfg.state_dim(), 0.0);
        }
        Ok(Tensor::vector(data))
    }
}

fn movement_delta(action: usize) -> Option<(i64, i64)> {
    match action {
        SAR_UP => Some((0, 1)),
        SAR_DOWN => Some((0, -1)),
        SAR_LEFT => Some((-1, 0)),
        SAR_RIGHT => Some((1, 0)),
        _ => None,
    }
}

impl CmdpEnv for SearchRescueEnv {
    type Phi = SarContext;

    fn reset(&mut self, draw: PhiDraw<SarContext>) -> Result<Tensor> {
        let ctx = match draw {
            PhiDraw::SamplePrior => SarContext::sample(&self.cfg, &mut self.rng),
            PhiDraw::Fixed(ctx) => {
                ctx.validate(&self.cfg)?;
                ctx
            }
        };
        self.rescued = vec![false; ctx.victims.len()];
        self.ctx = Some(ctx);
        self.agent = (0, 0);
        self.steps = 0;
        self.victims_saved = 0;
        self.hazards_hit = 0;
        self.state_vector(false)
    }

    fn step(&mut self, action: usize) -> Result<(f64, Tensor)> {
        if self.ctx.is_none() {
            return Err(Error::Config("search-and-rescue step before reset".into()));
        }
        if self.is_done() {
            return Err(Error::Config(format!(
                "episode exceeded its {}-step cap; reset first",
                self.cfg.max_steps()
            )));
        }
        let h = self.cfg.half();
        let (reward, listen) = if action == SAR_LISTEN {
            (self.cfg.r_listen, true)
        } else if let Some((dx, dy)) = movement_delta(action) {
            let target = (self.agent.0 + dx, self.agent.1 + dy);
            if target.0.abs() <= h && target.1.abs() <= h {
                self.agent = target;
                (0.0, false)
            } else {
                // Boundary exit: the move opens the exterior door cell.
                let door = self
                    .cfg
                    .door_index_of(target)
                    .ok_or_else(|| Error::Config("exit does not face a door".into()))?;
                let ctx = self.ctx.as_ref().unwrap();
                let victim = ctx
                    .victims
                    .iter()
                    .position(|v| v.door == door)
                    .filter(|i| !self.rescued[*i]);
                let hazard = ctx.hazards.iter().any(|hz| hz.door == door);
                let r = if let Some(i) = victim {
                    self.rescued[i] = true;
                    self.victims_saved += 1;
                    self.cfg.r_victim
                } else if hazard {
                    self.hazards_hit += 1;
                    self.cfg.r_hazard
                } else {
                    0.0
                };
                (r, false)
            }
        } else {
            return Err(Error::Config(format!(
                "search-and-rescue action {action} out of range"
            )));
        };
        self.steps += 1;
        let state = self.state_vector(listen)?;
        Ok((reward, state))
    }

    fn n_actions(&self) -> usize {
        SAR_ACTIONS
    }

    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    fn counters(&self) -> (usize, usize) {
        (self.victims_saved, self.hazards_hit)
    }

    fn episode_over(&self) -> bool {
        self.is_done()
    }
}

/// What the agent is told about the world before interacting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKnowledge {
    /// Tabula rasa: empty dataset.
    None,
    /// Deterministic interior movement plus expected door rewards.
    Weak,
    /// Weak knowledge plus listening demonstrations.
    Strong,
}

/// One pretraining transition. `next_a`/`next_b` are two independent draws
/// of the successor state so double-sampled Bellman products stay unbiased;
/// they coincide when the transition is deterministic.
#[derive(Debug, Clone)]
pub struct PriorPair {
    pub state: Tensor,
    pub action: usize,
    pub reward: f64,
    pub next_a: Tensor,
    pub next_b: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct PriorDataset {
    pub pairs: Vec<PriorPair>,
}

impl PriorDataset {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

/// Expected reward of opening an unknown door under the placement prior.
pub fn sar_r_prior(cfg: &SarConfig) -> f64 {
    (cfg.n_victims as f64 * cfg.r_victim + cfg.n_hazards as f64 * cfg.r_hazard)
        / cfg.n_doors() as f64
}

/// Builds the pretraining dataset for a knowledge level.
///
/// Weak knowledge enumerates every cell and movement action: interior moves
/// have known zero reward and deterministic successor, boundary exits use
/// the expected door reward with the agent staying put. Strong knowledge
/// adds `n_listen_demos` listening demonstrations, each sampling a fresh
/// placement from the prior and two independent noisy channel draws.
pub fn build_prior_dataset(
    cfg: &SarConfig,
    knowledge: PriorKnowledge,
    n_listen_demos: usize,
    rng: &mut Rng,
) -> Result<PriorDataset> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    if knowledge == PriorKnowledge::None {
        return Ok(PriorDataset { pairs });
    }
    let h = cfg.half();
    let dim = cfg.state_dim();
    let cell_state = |x: i64, y: i64| -> Tensor {
        let mut data = vec![0.0; dim];
        data[0] = x as f64;
        data[1] = y as f64;
        Tensor::vector(data)
    };
    let r_prior = sar_r_prior(cfg);
    for x in -h..=h {
        for y in -h..=h {
            for action in [SAR_UP, SAR_DOWN, SAR_LEFT, SAR_RIGHT] {
                let (dx, dy) = movement_delta(action).unwrap();
                let target = (x + dx, y + dy);
                let state = cell_state(x, y);
                let (reward, next) = if target.0.abs() <= h && target.1.abs() <= h {
                    (0.0, cell_state(target.0, target.1))
                } else {
                    (r_prior, state.clone())
                };
                pairs.push(PriorPair {
                    state,
                    action,
                    reward,
                    next_a: next.clone(),
                    next_b: next,
                });
            }
        }
    }
    if knowledge == PriorKnowledge::Strong {
        for _ in 0..n_listen_demos {
            let ctx = SarContext::sample(cfg, rng);
            let x = rng.random_range(-h..=h);
            let y = rng.random_range(-h..=h);
            let state = cell_state(x, y);
            let mut demo_env = SearchRescueEnv::new(*cfg, rng.random())?;
            demo_env.reset(PhiDraw::Fixed(ctx))?;
            demo_env.agent = (x, y);
            let (_, next_a) = demo_env.step(SAR_LISTEN)?;
            demo_env.agent = (x, y);
            let (_, next_b) = demo_env.step(SAR_LISTEN)?;
            pairs.push(PriorPair {
                state,
                action: SAR_LISTEN,
                reward: cfg.r_listen,
                next_a,
                next_b,
            });
        }
    }
    Ok(PriorDataset { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{HistoryMode, QNetConfig};
    use crate::Rng;
    use rand::SeedableRng;
    use std::println;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn tiger_reset_starts_in_s0() {
        let mut env = TigerEnv::new(TigerConfig::default(), 1).unwrap();
        let s = env.reset(PhiDraw::SamplePrior).unwrap();
        assert_eq!(s.data(), TigerState::S0.one_hot().data());
        assert_eq!(env.state(), TigerState::S0);
    }

    #[test]
    fn tiger_prior_draw_is_a_fair_coin() {
        let seed = 0xE1F_0001u64;
        println!("coin seed: {seed}");
        let mut env = TigerEnv::new(TigerConfig::default(), seed).unwrap();
        let n = 10_000usize;
        let mut left = 0usize;
        for _ in 0..n {
            env.reset(PhiDraw::SamplePrior).unwrap();
            if env.phi() == Some(TigerSide::Left) {
                left += 1;
            }
        }
        let freq = left as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!(
            (freq - 0.5).abs() < 3.0 * sigma,
            "tiger-left frequency {freq}"
        );
    }

    #[test]
    fn tiger_opening_the_gold_door_pays_and_returns_to_s0() {
        let mut env = TigerEnv::new(TigerConfig::default(), 2).unwrap();
        env.reset(PhiDraw::Fixed(TigerSide::Left)).unwrap();
        let (r, s) = env.step(TIGER_OPEN_RIGHT).unwrap();
        assert_eq!(r, 10.0);
        assert_eq!(s.data(), TigerState::S0.one_hot().data());
        let (r, _) = env.step(TIGER_OPEN_LEFT).unwrap();
        assert_eq!(r, -500.0);
    }

    #[test]
    fn tiger_listen_signal_frequencies_match_the_model() {
        let seed = 0xE1F_0002u64;
        println!("listen seed: {seed}");
        let mut env = TigerEnv::new(TigerConfig::default(), seed).unwrap();
        env.reset(PhiDraw::Fixed(TigerSide::Left)).unwrap();
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (r, _) = env.step(TIGER_LISTEN).unwrap();
            assert_eq!(r, -1.0);
            counts[env.state().index()] += 1;
        }
        for (state, expect) in [(1usize, 0.85f64), (2, 0.10), (0, 0.05)] {
            let freq = counts[state] as f64 / n as f64;
            let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
            assert!(
                (freq - expect).abs() < 3.0 * sigma,
                "state {state}: freq {freq} vs {expect}"
            );
        }
    }

    #[test]
    fn tiger_step_before_reset_is_rejected() {
        let mut env = TigerEnv::new(TigerConfig::default(), 3).unwrap();
        assert!(env.step(TIGER_LISTEN).is_err());
        env.reset(PhiDraw::SamplePrior).unwrap();
        assert!(env.step(7).is_err());
    }

    #[test]
    fn belief_matches_the_count_formula() {
        let cfg = TigerConfig::default();
        let mut b = TigerBelief::new();
        assert_eq!(b.belief_left(&cfg), 0.5);
        b.observe_listen(TigerState::S1);
        assert!((b.belief_left(&cfg) - 0.85 / 0.95).abs() < 1e-12);
        b.observe_listen(TigerState::S0);
        assert!((b.belief_left(&cfg) - 0.85 / 0.95).abs() < 1e-12);
        b.observe_listen(TigerState::S2);
        assert!((b.belief_left(&cfg) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn belief_depends_only_on_counts_not_order() {
        let cfg = TigerConfig::default();
        let seq_a = [TigerState::S1, TigerState::S1, TigerState::S2, TigerState::S1];
        let seq_b = [TigerState::S2, TigerState::S1, TigerState::S1, TigerState::S1];
        let run = |seq: &[TigerState]| {
            let mut b = TigerBelief::new();
            for s in seq {
                b.observe_listen(*s);
            }
            b.belief_left(&cfg)
        };
        assert_eq!(run(&seq_a), run(&seq_b));
    }

    #[test]
    fn belief_is_symmetric_under_count_swap() {
        let cfg = TigerConfig::default();
        let mut a = TigerBelief::new();
        let mut b = TigerBelief::new();
        for _ in 0..3 {
            a.observe_listen(TigerState::S1);
            b.observe_listen(TigerState::S2);
        }
        a.observe_listen(TigerState::S2);
        b.observe_listen(TigerState::S1);
        assert!((a.belief_left(&cfg) + b.belief_left(&cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn belief_survives_very_long_histories() {
        let cfg = TigerConfig::default();
        let mut b = TigerBelief::new();
        for _ in 0..100_000 {
            b.observe_listen(TigerState::S1);
        }
        assert_eq!(b.belief_left(&cfg), 1.0);
        for _ in 0..200_000 {
            b.observe_listen(TigerState::S2);
        }
        assert_eq!(b.belief_left(&cfg), 0.0);
    }

    #[test]
    fn opening_a_door_collapses_the_belief() {
        let cfg = TigerConfig::default();
        let mut b = TigerBelief::new();
        b.update(&cfg, TIGER_OPEN_LEFT, cfg.r_gold, TigerState::S0);
        assert_eq!(b.belief_left(&cfg), 0.0);
        assert!(b.is_collapsed());

        let mut b = TigerBelief::new();
        b.update(&cfg, TIGER_OPEN_LEFT, cfg.r_tiger, TigerState::S0);
        assert_eq!(b.belief_left(&cfg), 1.0);
        // Collapsed beliefs ignore later signals.
        b.observe_listen(TigerState::S2);
        assert_eq!(b.belief_left(&cfg), 1.0);
    }

    #[test]
    fn belief_from_window_replays_transitions() {
        let cfg = TigerConfig::default();
        let mut hist = crate::history::History::new(TigerState::S0.one_hot());
        hist.push(TIGER_LISTEN, -1.0, TigerState::S1.one_hot());
        hist.push(TIGER_LISTEN, -1.0, TigerState::S0.one_hot());
        let b = tiger_belief_from_window(&cfg, &hist.view()).unwrap();
        assert!((b.belief_left(&cfg) - 0.85 / 0.95).abs() < 1e-12);
        hist.push(TIGER_OPEN_LEFT, cfg.r_gold, TigerState::S0.one_hot());
        let b = tiger_belief_from_window(&cfg, &hist.view()).unwrap();
        assert_eq!(b.belief_left(&cfg), 0.0);
        // A truncated suffix forgets the dropped evidence.
        let b = tiger_belief_from_window(&cfg, &hist.suffix(0)).unwrap();
        assert_eq!(b.belief_left(&cfg), 0.5);
    }

    #[test]
    fn listen_posterior_matches_single_count_update() {
        let cfg = TigerConfig::default();
        let post = tiger_listen_posterior(&cfg, 0.5, TigerState::S1);
        assert!((post - 0.85 / 0.95).abs() < 1e-12);
        assert_eq!(tiger_listen_posterior(&cfg, 0.3, TigerState::S0), 0.3);
        let probs = tiger_listen_probs(&cfg, 0.5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((probs[0] - 0.475).abs() < 1e-12);
    }

    #[test]
    fn outcome_enumeration_is_a_probability_distribution() {
        let cfg = TigerConfig::default();
        for action in 0..TIGER_ACTIONS {
            let branches = tiger_outcome_enumeration(&cfg, 0.3, action).unwrap();
            let total: f64 = branches.iter().map(|(p, _, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "action {action}");
        }
        let open = tiger_outcome_enumeration(&cfg, 0.3, TIGER_OPEN_LEFT).unwrap();
        let expect: f64 = open.iter().map(|(p, r, _)| p * r).sum();
        assert!((expect - (0.3 * -500.0 + 0.7 * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_sampler_mean_matches_enumeration() {
        let seed = 0xE1F_0003u64;
        println!("sampler seed: {seed}");
        let mut r = rng(seed);
        let cfg = TigerConfig::default();
        let qnet = QNet::new(QNetConfig {
            mode: HistoryMode::Recurrent,
            state_dim: 3,
            n_actions: 3,
            hidden: 6,
            encoding: 4,
        })
        .unwrap();
        let mut omega = ParamStore::new();
        qnet.init_params(&mut omega, "q", &mut r).unwrap();

        let mut hist = crate::history::History::new(TigerState::S0.one_hot());
        hist.push(TIGER_LISTEN, -1.0, TigerState::S1.one_hot());
        let view = hist.view();
        let belief = tiger_listen_posterior(&cfg, 0.5, TigerState::S1);
        let sampler = TigerExactSampler {
            qnet: &qnet,
            omega: &omega,
            omega_prefix: "q",
            cfg: &cfg,
            belief_left: belief,
        };

        let action = TIGER_LISTEN;
        // Model-based expectation: enumerate branches, evaluate the same
        // one-step continuation for each.
        let mut tape = Tape::new();
        let unroll = qnet.unroll(&mut tape, &omega, "q", &view).unwrap();
        let (encoding, _) = unroll.last();
        let mut expect = 0.0;
        for (p, rew, next) in tiger_outcome_enumeration(&cfg, belief, action).unwrap() {
            let obs = Observation {
                prev_reward: rew,
                state: next.one_hot(),
                prev_action: Some(action),
            };
            let (_, qv) = qnet.step(&mut tape, &omega, "q", encoding, &obs).unwrap();
            let mx = tape.max(qv).unwrap();
            expect += p * (rew + cfg.gamma * tape.value(mx).item().unwrap());
        }

        let n = 20_000usize;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut tape = Tape::new();
        let unroll = qnet.unroll(&mut tape, &omega, "q", &view).unwrap();
        let (encoding, qvec) = unroll.last();
        for _ in 0..n {
            let b = sampler
                .draw_b(&mut tape, &view, encoding, qvec, action, &mut r)
                .unwrap();
            let v = tape.value(b).item().unwrap();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "sampler mean {mean} vs enumeration {expect} (se {se:.3e})"
        );
    }

    #[test]
    fn sar_reset_places_agent_at_center() {
        let mut env = SearchRescueEnv::new(SarConfig::default(), 4).unwrap();
        let s = env.reset(PhiDraw::SamplePrior).unwrap();
        assert_eq!(env.agent(), (0, 0));
        assert_eq!(s.data()[0], 0.0);
        assert_eq!(s.data()[1], 0.0);
        assert!(s.data()[2..].iter().all(|c| *c == 0.0));
        assert_eq!(s.len(), env.state_dim());
    }

    #[test]
    fn sar_interior_movement_is_deterministic_and_free() {
        let mut env = SearchRescueEnv::new(SarConfig::default(), 5).unwrap();
        env.reset(PhiDraw::SamplePrior).unwrap();
        let (r, s) = env.step(SAR_UP).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(env.agent(), (0, 1));
        assert_eq!((s.data()[0], s.data()[1]), (0.0, 1.0));
        let (r, _) = env.step(SAR_RIGHT).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(env.agent(), (1, 1));
    }

    #[test]
    fn sar_context_doors_are_distinct() {
        let cfg = SarConfig::default();
        let mut r = rng(6);
        for _ in 0..200 {
            let ctx = SarContext::sample(&cfg, &mut r);
            ctx.validate(&cfg).unwrap();
        }
    }

    fn door_context(cfg: &SarConfig, victim_doors: &[usize], hazard_doors: &[usize]) -> SarContext {
        let mk = |doors: &[usize]| {
            doors
                .iter()
                .map(|d| SarEntity {
                    door: *d,
                    jitter: (0.0, 0.0),
                })
                .collect()
        };
        let mut ctx = SarContext {
            victims: mk(victim_doors),
            hazards: mk(hazard_doors),
        };
        // Pad with filler doors so counts match the config.
        let used: Vec<usize> = victim_doors.iter().chain(hazard_doors).cloned().collect();
        let mut filler = (0..cfg.n_doors()).filter(|d| !used.contains(d));
        while ctx.victims.len() < cfg.n_victims {
            ctx.victims.push(SarEntity {
                door: filler.next().unwrap(),
                jitter: (0.0, 0.0),
            });
        }
        while ctx.hazards.len() < cfg.n_hazards {
            ctx.hazards.push(SarEntity {
                door: filler.next().unwrap(),
                jitter: (0.0, 0.0),
            });
        }
        ctx
    }

    #[test]
    fn sar_victim_rescue_pays_once_and_hazard_repeats() {
        let cfg = SarConfig {
            n_grid: 5,
            n_victims: 1,
            n_hazards: 1,
            sigma_noise: 0.0,
            ..SarConfig::default()
        };
        // Victim behind the top door above (0, 2); hazard at the bottom.
        let top_door = cfg.door_index_of((0, 3)).unwrap();
        let bottom_door = cfg.door_index_of((0, -3)).unwrap();
        let ctx = door_context(&cfg, &[top_door], &[bottom_door]);
        let mut env = SearchRescueEnv::new(cfg, 7).unwrap();
        env.reset(PhiDraw::Fixed(ctx)).unwrap();

        env.step(SAR_UP).unwrap();
        env.step(SAR_UP).unwrap();
        let (r, _) = env.step(SAR_UP).unwrap();
        assert_eq!(r, 10.0);
        assert_eq!(env.agent(), (0, 2));
        assert_eq!(env.victims_saved(), 1);
        // Re-opening the same door: the victim is gone.
        let (r, _) = env.step(SAR_UP).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(env.victims_saved(), 1);

        for _ in 0..4 {
            env.step(SAR_DOWN).unwrap();
        }
        assert_eq!(env.agent(), (0, -2));
        let (r, _) = env.step(SAR_DOWN).unwrap();
        assert_eq!(r, -100.0);
        let (r, _) = env.step(SAR_DOWN).unwrap();
        assert_eq!(r, -100.0);
        assert_eq!(env.hazards_hit(), 2);
        assert_eq!(env.victims_saved(), 1);
    }

    #[test]
    fn sar_listen_channels_decrease_with_distance() {
        let cfg = SarConfig {
            n_grid: 5,
            n_victims: 1,
            n_hazards: 1,
            sigma_noise: 0.0,
            ..SarConfig::default()
        };
        let top_door = cfg.door_index_of((0, 3)).unwrap();
        let side_door = cfg.door_index_of((-3, 0)).unwrap();
        let ctx = door_context(&cfg, &[top_door], &[side_door]);

        let mut env = SearchRescueEnv::new(cfg, 8).unwrap();
        env.reset(PhiDraw::Fixed(ctx.clone())).unwrap();
        let (r, far) = env.step(SAR_LISTEN).unwrap();
        assert_eq!(r, -1.0);
        let far_victim = far.data()[2];
        assert!((far_victim - math::exp(-9.0 / 5.0)).abs() < 1e-12);

        env.step(SAR_UP).unwrap();
        let (_, near) = env.step(SAR_LISTEN).unwrap();
        let near_victim = near.data()[2];
        assert!((near_victim - math::exp(-4.0 / 5.0)).abs() < 1e-12);
        assert!(near_victim > far_victim);
        // Moving toward the victim moved away from the hazard.
        assert!(near.data()[3] < far.data()[3]);
    }

    #[test]
    fn sar_rescued_victim_channel_reads_zero() {
        let cfg = SarConfig {
            n_grid: 5,
            n_victims: 1,
            n_hazards: 1,
            sigma_noise: 0.0,
            ..SarConfig::default()
        };
        let top_door = cfg.door_index_of((0, 3)).unwrap();
        let bottom_door = cfg.door_index_of((0, -3)).unwrap();
        let ctx = door_context(&cfg, &[top_door], &[bottom_door]);
        let mut env = SearchRescueEnv::new(cfg, 9).unwrap();
        env.reset(PhiDraw::Fixed(ctx)).unwrap();
        env.step(SAR_UP).unwrap();
        env.step(SAR_UP).unwrap();
        env.step(SAR_UP).unwrap();
        let (_, s) = env.step(SAR_LISTEN).unwrap();
        assert_eq!(s.data()[2], 0.0);
        assert!(s.data()[3] > 0.0);
    }

    #[test]
    fn sar_episode_cap_is_enforced() {
        let cfg = SarConfig {
            n_grid: 3,
            n_victims: 1,
            n_hazards: 1,
            ..SarConfig::default()
        };
        let mut env = SearchRescueEnv::new(cfg, 10).unwrap();
        env.reset(PhiDraw::SamplePrior).unwrap();
        for _ in 0..cfg.max_steps() {
            assert!(!env.is_done());
            env.step(SAR_LISTEN).unwrap();
        }
        assert!(env.is_done());
        assert!(env.step(SAR_LISTEN).is_err());
        env.reset(PhiDraw::SamplePrior).unwrap();
        assert!(!env.is_done());
    }

    #[test]
    fn sar_runs_are_reproducible_for_a_seed() {
        let cfg = SarConfig::default();
        let run = || {
            let mut env = SearchRescueEnv::new(cfg, 11).unwrap();
            env.reset(PhiDraw::SamplePrior).unwrap();
            let mut out = Vec::new();
            for action in [SAR_LISTEN, SAR_UP, SAR_LISTEN, SAR_LEFT, SAR_LISTEN] {
                let (r, s) = env.step(action).unwrap();
                out.push((r, s.data().to_vec()));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn r_prior_matches_the_door_average() {
        let cfg = SarConfig {
            n_grid: 7,
            n_victims: 4,
            n_hazards: 8,
            ..SarConfig::default()
        };
        assert!((sar_r_prior(&cfg) - (-27.142857142857142)).abs() < 1e-12);
    }

    #[test]
    fn empty_knowledge_gives_an_empty_dataset() {
        let cfg = SarConfig::default();
        let mut r = rng(12);
        let ds = build_prior_dataset(&cfg, PriorKnowledge::None, 10, &mut r).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn weak_dataset_covers_every_cell_and_movement() {
        let cfg = SarConfig::default();
        let mut r = rng(13);
        let ds = build_prior_dataset(&cfg, PriorKnowledge::Weak, 0, &mut r).unwrap();
        assert_eq!(ds.len(), cfg.n_grid * cfg.n_grid * 4);

        let r_prior = sar_r_prior(&cfg);
        let mut center_up = None;
        let mut boundary = 0usize;
        for p in &ds.pairs {
            assert_eq!(p.next_a.data(), p.next_b.data());
            if p.state.data()[0] == 0.0 && p.state.data()[1] == 0.0 && p.action == SAR_UP {
                center_up = Some(p.clone());
            }
            if p.reward != 0.0 {
                assert_eq!(p.reward, r_prior);
                assert_eq!(p.next_a.data(), p.state.data());
                boundary += 1;
            }
        }
        let p = center_up.expect("center cell with up action present");
        assert_eq!(p.reward, 0.0);
        assert_eq!((p.next_a.data()[0], p.next_a.data()[1]), (0.0, 1.0));
        // One boundary exit per edge cell per outward direction: 4·N_grid.
        assert_eq!(boundary, 4 * cfg.n_grid);
    }

    #[test]
    fn strong_dataset_adds_listening_demonstrations() {
        let cfg = SarConfig::default();
        let mut r = rng(14);
        let ds = build_prior_dataset(&cfg, PriorKnowledge::Strong, 25, &mut r).unwrap();
        assert_eq!(ds.len(), cfg.n_grid * cfg.n_grid * 4 + 25);
        let demos: Vec<&PriorPair> =
            ds.pairs.iter().filter(|p| p.action == SAR_LISTEN).collect();
        assert_eq!(demos.len(), 25);
        for d in demos {
            assert_eq!(d.reward, cfg.r_listen);
            // Independent noise draws differ, but the agent cell agrees.
            assert_eq!(d.next_a.data()[0], d.state.data()[0]);
            assert_eq!(d.next_a.data()[1], d.state.data()[1]);
            assert!(d.next_a.data()[2..] != d.next_b.data()[2..]);
            assert!(d.next_a.data()[2..].iter().any(|c| *c > 0.0));
        }
    }

    #[test]
    fn sar_config_validation_rejects_bad_grids() {
        let bad_even = SarConfig {
            n_grid: 6,
            ..SarConfig::default()
        };
        assert!(bad_even.validate().is_err());
        let too_many = SarConfig {
            n_grid: 3,
            n_victims: 10,
            n_hazards: 10,
            ..SarConfig::default()
        };
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn door_positions_and_indices_are_inverse() {
        let cfg = SarConfig::default();
        for idx in 0..cfg.n_doors() {
            let pos = cfg.door_position(idx).unwrap();
            assert_eq!(cfg.door_index_of(pos), Some(idx));
        }
        assert!(cfg.door_position(cfg.n_doors()).is_err());
        assert_eq!(cfg.door_index_of((0, 0)), None);
    }
}
