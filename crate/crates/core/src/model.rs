//! The Bayesian Bellman model.
//!
//! Uncertainty over the Bellman operator is split in two. The *aleatoric*
//! model is a conditional normalizing flow over bootstrap values `b` given a
//! context `(ĥ_t, q_t)`; all of its free parameters are one flat vector `φ`.
//! The *epistemic* net is a flow `t_ψ` over `φ` itself, acting as the
//! variational posterior. Training alternates between a variational loss on
//! observed bootstrap samples (fitting the posterior over `φ`) and the
//! mean-squared Bayesian Bellman error (fitting the Q-network to the
//! posterior-predictive Bellman operator).
//!
//! A [`BellmanSampler`] abstracts where bootstrap draws come from, so the
//! learned posterior can be swapped for an exact one where available.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::flows::{
    sample_standard_normal, ActNorm, FlowBinding, FlowStack, Layer, LuLinear, Made,
    Permutation,
};
use crate::history::HistoryView;
use crate::math;
use crate::nets::QNet;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result, Rng};

/// Diagonal Gaussian prior over the aleatoric parameter vector `φ`.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    mean: Tensor,
    var: Tensor,
}

impl PriorSpec {
    pub fn new(mean: Tensor, var: Tensor) -> Result<Self> {
        if mean.shape() != var.shape() || mean.rank() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "prior mean {:?} vs var {:?}",
                mean.shape(),
                var.shape()
            )));
        }
        if var.iter().any(|v| *v <= 0.0) {
            return Err(Error::Domain("prior variances must be positive".into()));
        }
        Ok(Self { mean, var })
    }

    /// Zero-mean prior with constant diagonal variance.
    pub fn isotropic(dim: usize, var: f64) -> Result<Self> {
        Self::new(Tensor::zeros(&[dim]), Tensor::full(&[dim], var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> Tensor {
        let z = sample_standard_normal(self.dim(), rng);
        let data = self
            .mean
            .iter()
            .zip(self.var.iter())
            .zip(z.iter())
            .map(|((m, v), zi)| m + math::sqrt(*v) * zi)
            .collect();
        Tensor::vector(data)
    }

    /// Differentiable log-density of `phi`.
    pub fn log_prob(&self, tape: &mut Tape, phi: Var) -> Result<Var> {
        let mean = tape.leaf(self.mean.clone());
        let diff = tape.sub(phi, mean)?;
        let sq = tape.square(diff)?;
        let half_inv_var =
            Tensor::vector(self.var.iter().map(|v| 0.5 / v).collect::<Vec<f64>>());
        let w = tape.leaf(half_inv_var);
        let weighted = tape.mul(sq, w)?;
        let ssum = tape.sum(weighted)?;
        let neg = tape.neg(ssum)?;
        let log_norm: f64 = self
            .var
            .iter()
            .map(|v| -0.5 * (math::LOG_TWO_PI + math::ln(*v)))
            .sum();
        tape.add_scalar(neg, log_norm)
    }
}

/// Variational posterior flow `t_ψ : R^d → R^d` over the aleatoric
/// parameters. Layers: two actnorms, two masked autoregressive sub-blocks
/// split by a reversing permutation (so the second transforms what the first
/// conditions on), and a dense LU-linear mix. The autoregressive sub-blocks
/// run one-pass in the sampling direction, which is the only direction
/// training uses.
#[derive(Debug, Clone)]
pub struct EpistemicNet {
    stack: FlowStack,
    dim: usize,
}

impl EpistemicNet {
    pub fn new(dim: usize, hidden: usize) -> Result<Self> {
        let stack = FlowStack::new(
            dim,
            vec![
                Layer::ActNorm(ActNorm::new(dim)),
                Layer::ActNorm(ActNorm::new(dim)),
                Layer::Iaf(Made::new(dim, 0, hidden)?),
                Layer::Permutation(Permutation::reverse(dim)),
                Layer::Iaf(Made::new(dim, 0, hidden)?),
                Layer::LuLinear(LuLinear::new(dim)),
            ],
        )?;
        Ok(Self { stack, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stack(&self) -> &FlowStack {
        &self.stack
    }

    pub fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.stack.init_params(store, prefix, rng)
    }

    /// Data-dependent actnorm init on a batch of base samples.
    pub fn data_init(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        batch: &[Tensor],
    ) -> Result<()> {
        self.stack.data_init(store, prefix, batch)
    }

    /// Pushes one base draw through the flow: `(φ, log|det ∂z t_ψ|)`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        z_ep: &Tensor,
    ) -> Result<(Var, Var)> {
        let bound = self.stack.bind(tape, &FlowBinding::Store { store, prefix })?;
        let z = tape.leaf(z_ep.clone());
        bound.forward(tape, z, None)
    }
}

/// A conditional model over scalar bootstrap values, parameterised by a flat
/// `φ` living on the tape.
pub trait AleatoricModel {
    /// Length of the packed parameter vector.
    fn phi_dim(&self) -> usize;
    /// Context width the model conditions on (0 = ignores context).
    fn context_dim(&self) -> usize;
    /// Draws one bootstrap value; returns a length-1 tape vector.
    fn sample_b(&self, tape: &mut Tape, phi: Var, ctx: Var, rng: &mut Rng) -> Result<Var>;
    /// Per-sample negative log-likelihood term, additive constants dropped.
    /// Differentiable in `phi`, `ctx` and `b`.
    fn nll_term(&self, tape: &mut Tape, phi: Var, ctx: Var, b: Var, rng: &mut Rng)
        -> Result<Var>;
}

/// The learned aleatoric flow: a two-dimensional standard-Gaussian base, a
/// bijective core of `[masked-autoregressive, LU-linear, reverse]`
/// repetitions (conditioner weights shared across repetitions), and the
/// first coordinate taken as `b`. The second base coordinate plays the role
/// of the padding dimension: the likelihood term pads `b` with a Gaussian
/// draw, and the pad's own density cancels out of the bookkeeping.
#[derive(Debug, Clone)]
pub struct AleatoricNet {
    core: FlowStack,
    context: usize,
}

impl AleatoricNet {
    pub fn new(context_dim: usize, hidden: usize, n_layers: usize) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("aleatoric net needs at least one layer".into()));
        }
        let made = Made::new(2, context_dim, hidden)?;
        let mut layers = Vec::new();
        let mut ties = Vec::new();
        for k in 0..n_layers {
            ties.push(if k == 0 { layers.len() } else { 0 });
            layers.push(Layer::Iaf(made.clone()));
            ties.push(layers.len());
            layers.push(Layer::LuLinear(LuLinear::new(2)));
            // Reversals sit between repetitions, never after the last one,
            // so `b` stays the first transformed coordinate.
            if k + 1 < n_layers {
                ties.push(layers.len());
                layers.push(Layer::Permutation(Permutation::reverse(2)));
            }
        }
        let core = FlowStack::new_tied(2, layers, ties)?;
        Ok(Self {
            core,
            context: context_dim,
        })
    }

    /// The bijective core over `(b, pad)`; exposed so callers can initialise
    /// or inspect a named-parameter version of `φ`.
    pub fn core(&self) -> &FlowStack {
        &self.core
    }

    /// Packed identity parameters: the flow maps base noise to itself.
    pub fn identity_phi(&self) -> Result<Tensor> {
        let mut store = ParamStore::new();
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        self.core.init_params(&mut store, "id", &mut rng)?;
        self.core.pack_params(&store, "id")
    }

    /// Marginal density of `b` by trapezoid quadrature over the pad
    /// coordinate. Evaluation-only (plain floats).
    pub fn density_quadrature(
        &self,
        phi: &Tensor,
        ctx: &Tensor,
        b: f64,
        pad_half_width: f64,
        n_grid: usize,
    ) -> Result<f64> {
        let joint = |u: f64| -> Result<f64> {
            let mut tape = Tape::new();
            let phi_v = tape.leaf(phi.clone());
            let bound = self.core.bind(&mut tape, &FlowBinding::Packed { phi: phi_v })?;
            let ctx_v = tape.leaf(ctx.clone());
            let x = tape.leaf(Tensor::vector(vec![b, u]));
            let (z, ld) = bound.inverse_deterministic(&mut tape, x, Some(ctx_v))?;
            let logp: f64 = tape.value(z).iter().map(|zi| math::std_normal_logpdf(*zi)).sum();
            Ok(math::exp(logp + tape.value(ld).item()?))
        };
        let step = 2.0 * pad_half_width / n_grid as f64;
        let mut integral = 0.0;
        let mut prev = joint(-pad_half_width)?;
        for k in 1..=n_grid {
            let u = -pad_half_width + step * k as f64;
            let cur = joint(u)?;
            integral += 0.5 * (prev + cur) * step;
            prev = cur;
        }
        Ok(integral)
    }
}

impl AleatoricModel for AleatoricNet {
    fn phi_dim(&self) -> usize {
        self.core.demand()
    }

    fn context_dim(&self) -> usize {
        self.context
    }

    fn sample_b(&self, tape: &mut Tape, phi: Var, ctx: Var, rng: &mut Rng) -> Result<Var> {
        let bound = self.core.bind(tape, &FlowBinding::Packed { phi })?;
        let z = tape.leaf(sample_standard_normal(2, rng));
        let (x, _) = bound.forward(tape, z, Some(ctx))?;
        tape.slice(x, 0, 1)
    }

    fn nll_term(
        &self,
        tape: &mut Tape,
        phi: Var,
        ctx: Var,
        b: Var,
        rng: &mut Rng,
    ) -> Result<Var> {
        let bound = self.core.bind(tape, &FlowBinding::Packed { phi })?;
        let pad = sample_standard_normal(1, rng);
        let pad_sq = 0.5 * pad.data()[0] * pad.data()[0];
        let pad_leaf = tape.leaf(pad);
        let b1 = to_vec1(tape, b)?;
        let x = tape.concat(&[b1, pad_leaf])?;
        // ld is log|det ∂z/∂x|; the data term is ½‖z‖² − ½u² − ld with the
        // pad's base density cancelled against its proposal.
        let (z, ld) = bound.inverse_deterministic(tape, x, Some(ctx))?;
        let sq = tape.square(z)?;
        let ssq = tape.sum(sq)?;
        let half = tape.scale(ssq, 0.5)?;
        let centered = tape.add_scalar(half, -pad_sq)?;
        tape.sub(centered, ld)
    }
}

/// Analytic stand-in aleatoric model `b = φ[0] + σ·z`, used wherever a
/// closed-form likelihood is needed.
#[derive(Debug, Clone)]
pub struct AffineAleatoric {
    pub sigma: f64,
}

impl AleatoricModel for AffineAleatoric {
    fn phi_dim(&self) -> usize {
        1
    }

    fn context_dim(&self) -> usize {
        0
    }

    fn sample_b(&self, tape: &mut Tape, phi: Var, _ctx: Var, rng: &mut Rng) -> Result<Var> {
        let phi0 = tape.slice(phi, 0, 1)?;
        let z = tape.leaf(sample_standard_normal(1, rng));
        let noise = tape.scale(z, self.sigma)?;
        tape.add(phi0, noise)
    }

    fn nll_term(
        &self,
        tape: &mut Tape,
        phi: Var,
        _ctx: Var,
        b: Var,
        _rng: &mut Rng,
    ) -> Result<Var> {
        let phi0 = tape.slice(phi, 0, 1)?;
        let phi_s = to_scalar(tape, phi0)?;
        let b_s = to_scalar(tape, b)?;
        let diff = tape.sub(b_s, phi_s)?;
        let sq = tape.square(diff)?;
        let scaled = tape.scale(sq, 0.5 / (self.sigma * self.sigma))?;
        tape.add_scalar(scaled, math::ln(self.sigma))
    }
}

/// One observed transition prepared for the variational loss.
pub struct BootstrapSample {
    /// Bootstrap value `r_i + γ·max_a q(h_{i+1}, a)`, scalar.
    pub b: Var,
    /// `q(h_i, a_i)` for the action actually taken, scalar.
    pub q: Var,
    /// History encoding `ĥ_i`.
    pub encoding: Var,
    /// Timestep index within the window.
    pub step: usize,
}

/// Builds bootstrap samples for every transition in `window` with the
/// current Q-network. Gradients flow into the network through both `b`
/// and `q`.
pub fn bootstrap(
    tape: &mut Tape,
    qnet: &QNet,
    store: &ParamStore,
    prefix: &str,
    gamma: f64,
    window: &HistoryView<'_>,
) -> Result<Vec<BootstrapSample>> {
    if window.len() == 0 {
        return Err(Error::Config(
            "bootstrap needs a window with at least one transition".into(),
        ));
    }
    let unroll = qnet.unroll(tape, store, prefix, window)?;
    let mut out = Vec::with_capacity(window.len());
    for i in 0..window.len() {
        let step = window.step_at(i);
        let q_i = tape.at(unroll.qvecs[i], step.action)?;
        let q = to_scalar(tape, q_i)?;
        let mx = tape.max(unroll.qvecs[i + 1])?;
        let scaled = tape.scale(mx, gamma)?;
        let b = tape.add_scalar(scaled, step.reward)?;
        out.push(BootstrapSample {
            b,
            q,
            encoding: unroll.encodings[i],
            step: i,
        });
    }
    Ok(out)
}

/// Monte-Carlo negative-ELBO estimate over `n_mc` epistemic draws.
///
/// Each draw pays the per-sample data terms plus `prior_weight` times the
/// prior and entropy terms `−log p_Φ(φ) − log|det ∂z t_ψ(z)|`. Passing
/// `prior_weight = 1` with all samples gives the full objective; passing
/// `1/T` with a single sample gives the per-step summand of the same total.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    tape: &mut Tape,
    epi: &EpistemicNet,
    psi: &ParamStore,
    psi_prefix: &str,
    aleo: &dyn AleatoricModel,
    samples: &[BootstrapSample],
    prior: &PriorSpec,
    prior_weight: f64,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<Var> {
    if n_mc == 0 {
        return Err(Error::Config("elbo_loss needs n_mc >= 1".into()));
    }
    if prior.dim() != epi.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prior dim {} vs epistemic dim {}",
            prior.dim(),
            epi.dim()
        )));
    }
    let mut total = tape.scalar(0.0);
    for _ in 0..n_mc {
        let z_ep = sample_standard_normal(epi.dim(), rng);
        let (phi, ld_ep) = epi.sample(tape, psi, psi_prefix, &z_ep)?;
        let mut draw = tape.scalar(0.0);
        for s in samples {
            let ctx = sample_context(tape, s)?;
            let term = aleo.nll_term(tape, phi, ctx, s.b, rng)?;
            draw = tape.add(draw, term)?;
        }
        let lp = prior.log_prob(tape, phi)?;
        let reg = tape.add(lp, ld_ep)?;
        let penalty = tape.scale(reg, -prior_weight)?;
        draw = tape.add(draw, penalty)?;
        total = tape.add(total, draw)?;
    }
    tape.scale(total, 1.0 / n_mc as f64)
}

fn sample_context(tape: &mut Tape, s: &BootstrapSample) -> Result<Var> {
    let q1 = to_vec1(tape, s.q)?;
    tape.concat(&[s.encoding, q1])
}

/// Builds the aleatoric conditioning context `(ĥ, q_a)` for an action.
pub fn bellman_context(tape: &mut Tape, encoding: Var, qvec: Var, action: usize) -> Result<Var> {
    let qa = tape.at(qvec, action)?;
    tape.concat(&[encoding, qa])
}

/// A source of bootstrap-value draws `b ~ B⁺`-ish for one history point.
/// Implementations must make every call an independent draw of both the
/// parameter and the aleatoric noise.
pub trait BellmanSampler {
    fn draw_b(
        &self,
        tape: &mut Tape,
        window: &HistoryView<'_>,
        encoding: Var,
        qvec: Var,
        action: usize,
        rng: &mut Rng,
    ) -> Result<Var>;
}

/// Draws `φ` from the variational posterior, then `b` from the aleatoric
/// model.
pub struct FlowSampler<'a> {
    pub epi: &'a EpistemicNet,
    pub psi: &'a ParamStore,
    pub psi_prefix: &'a str,
    pub aleo: &'a dyn AleatoricModel,
}

impl BellmanSampler for FlowSampler<'_> {
    fn draw_b(
        &self,
        tape: &mut Tape,
        _window: &HistoryView<'_>,
        encoding: Var,
        qvec: Var,
        action: usize,
        rng: &mut Rng,
    ) -> Result<Var> {
        let z_ep = sample_standard_normal(self.epi.dim(), rng);
        let (phi, _) = self.epi.sample(tape, self.psi, self.psi_prefix, &z_ep)?;
        let ctx = bellman_context(tape, encoding, qvec, action)?;
        let b = self.aleo.sample_b(tape, phi, ctx, rng)?;
        to_scalar(tape, b)
    }
}

/// Draws `φ` straight from the prior; used before any data has been seen.
pub struct PriorSampler<'a> {
    pub prior: &'a PriorSpec,
    pub aleo: &'a dyn AleatoricModel,
}

impl BellmanSampler for PriorSampler<'_> {
    fn draw_b(
        &self,
        tape: &mut Tape,
        _window: &HistoryView<'_>,
        encoding: Var,
        qvec: Var,
        action: usize,
        rng: &mut Rng,
    ) -> Result<Var> {
        let phi = tape.leaf(self.prior.sample(rng));
        let ctx = bellman_context(tape, encoding, qvec, action)?;
        let b = self.aleo.sample_b(tape, phi, ctx, rng)?;
        to_scalar(tape, b)
    }
}

/// Mean-squared Bayesian Bellman error at the end of `window`, averaged
/// uniformly over actions.
///
/// Each term multiplies two residuals built from independent draws,
/// `(b₁ − q_a)·(b₂ − q_a)`, which keeps the gradient estimate unbiased;
/// no randomness is shared between the two draws, and gradients flow
/// through the `b`s as well as `q`.
#[allow(clippy::too_many_arguments)]
pub fn msbbe_loss(
    tape: &mut Tape,
    qnet: &QNet,
    omega: &ParamStore,
    omega_prefix: &str,
    window: &HistoryView<'_>,
    sampler: &dyn BellmanSampler,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<Var> {
    if n_mc == 0 {
        return Err(Error::Config("msbbe_loss needs n_mc >= 1".into()));
    }
    let unroll = qnet.unroll(tape, omega, omega_prefix, window)?;
    let (encoding, qvec) = unroll.last();
    let n_actions = qnet.config().n_actions;
    let mut total = tape.scalar(0.0);
    for action in 0..n_actions {
        let q_a = tape.at(qvec, action)?;
        let q = to_scalar(tape, q_a)?;
        for _ in 0..n_mc {
            let b1 = sampler.draw_b(tape, window, encoding, qvec, action, rng)?;
            let b2 = sampler.draw_b(tape, window, encoding, qvec, action, rng)?;
            let d1 = tape.sub(b1, q)?;
            let d2 = tape.sub(b2, q)?;
            let prod = tape.mul(d1, d2)?;
            total = tape.add(total, prod)?;
        }
    }
    tape.scale(total, 1.0 / (n_actions * n_mc) as f64)
}

/// Monte-Carlo estimate of the predictive optimal Bellman operator
/// `B⁺[Q](h, a) = E[b]`. Returns the mean and its standard error.
#[allow(clippy::too_many_arguments)]
pub fn predictive_bellman(
    qnet: &QNet,
    omega: &ParamStore,
    omega_prefix: &str,
    window: &HistoryView<'_>,
    action: usize,
    sampler: &dyn BellmanSampler,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if n_mc == 0 {
        return Err(Error::Config("predictive_bellman needs n_mc >= 1".into()));
    }
    let chunk = 256usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut done = 0usize;
    while done < n_mc {
        let take = chunk.min(n_mc - done);
        let mut tape = Tape::new();
        let unroll = qnet.unroll(&mut tape, omega, omega_prefix, window)?;
        let (encoding, qvec) = unroll.last();
        for _ in 0..take {
            let b = sampler.draw_b(&mut tape, window, encoding, qvec, action, rng)?;
            let v = tape.value(b).item()?;
            sum += v;
            sum_sq += v * v;
        }
        done += take;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let std_err = if n_mc > 1 {
        math::sqrt(var / (n - 1.0))
    } else {
        0.0
    };
    Ok((mean, std_err))
}

pub(crate) fn to_scalar(tape: &mut Tape, v: Var) -> Result<Var> {
    if tape.value(v).is_scalar() {
        Ok(v)
    } else if tape.value(v).len() == 1 {
        tape.reshape(v, vec![])
    } else {
        Err(Error::ShapeMismatch(format!(
            "expected a single value, got shape {:?}",
            tape.value(v).shape()
        )))
    }
}

fn to_vec1(tape: &mut Tape, v: Var) -> Result<Var> {
    if tape.value(v).len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected a single value, got shape {:?}",
            tape.value(v).shape()
        )));
    }
    if tape.value(v).rank() == 1 {
        Ok(v)
    } else {
        tape.reshape(v, vec![1])
    }
}
