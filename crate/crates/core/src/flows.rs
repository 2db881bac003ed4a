//! Normalizing-flow layers and their composition.
//!
//! A [`FlowStack`] maps base-Gaussian noise `z` to samples `x` (forward) and
//! back (inverse), tracking the log-determinant of the transform so densities
//! can be evaluated. Two surjective layers are included: [`SliceLayer`]
//! (dimension-reducing) and [`AbsLayer`] (sign-collapsing). Their "log-det"
//! contributions are the likelihood-contribution terms of the surjective-flow
//! treatment rather than literal Jacobians: with those conventions
//! [`BoundStack::log_prob`] is exact (the stochastic parts of the inverse
//! cancel pointwise).
//!
//! Layer parameters can be bound from a named [`ParamStore`] (trained
//! directly) or sliced out of a single packed tape variable (parameters that
//! are themselves the output of another network). Both bindings produce
//! identical computations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::math;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result, Rng};

/// Floor added to every softplus-constrained scale so transforms stay
/// invertible.
pub const SCALE_FLOOR: f64 = 1e-4;

/// Where a stack's parameters come from.
pub enum FlowBinding<'a> {
    /// Named parameters under `{prefix}.l{i}.{field}`.
    Store {
        store: &'a ParamStore,
        prefix: &'a str,
    },
    /// Sequential slices of one flat tape variable.
    Packed { phi: Var },
}

struct Cursor<'a, 'b> {
    binding: &'b FlowBinding<'a>,
    layer: usize,
    offset: usize,
}

impl Cursor<'_, '_> {
    fn take(&mut self, tape: &mut Tape, field: &str, shape: &[usize]) -> Result<Var> {
        match self.binding {
            FlowBinding::Store { store, prefix } => {
                let name = format!("{prefix}.l{}.{field}", self.layer);
                let v = tape.param(store, &name)?;
                if tape.value(v).shape() != shape {
                    return Err(Error::ShapeMismatch(format!(
                        "param {name}: expected {:?}, got {:?}",
                        shape,
                        tape.value(v).shape()
                    )));
                }
                Ok(v)
            }
            FlowBinding::Packed { phi } => {
                let count: usize = shape.iter().product();
                let flat = tape.slice(*phi, self.offset, self.offset + count)?;
                self.offset += count;
                if shape.len() == 1 {
                    Ok(flat)
                } else {
                    tape.reshape(flat, shape.to_vec())
                }
            }
        }
    }
}

/// Samples a standard-normal vector.
pub fn sample_standard_normal<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Tensor {
    let data: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::vector(data)
}

/// How a stochastic inverse fills in unobserved quantities (padding
/// coordinates, collapsed signs).
pub enum PadSource<'r> {
    Rng(&'r mut Rng),
    /// Zero padding and positive signs. Density bookkeeping is unaffected:
    /// the contributions cancel against the base density in `log_prob`.
    Deterministic,
}

/// Element-wise affine layer `x = scale ⊙ z + shift` with directly stored
/// scale (identity at init). The scale may move through zero during training;
/// both directions raise on an exactly zero scale.
#[derive(Debug, Clone)]
pub struct ActNorm {
    dim: usize,
}

impl ActNorm {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn fields(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("scale".into(), vec![self.dim]),
            ("shift".into(), vec![self.dim]),
        ]
    }

    fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        _rng: &mut R,
    ) -> Result<()> {
        store.insert(&format!("{prefix}.scale"), Tensor::full(&[self.dim], 1.0))?;
        store.insert(&format!("{prefix}.shift"), Tensor::zeros(&[self.dim]))
    }
}

/// MADE-style masked conditioner producing the shift and scale of an affine
/// autoregressive coupling. Input degrees are 1..=d for the transformed
/// vector and 0 for context, so context feeds every output. When context is
/// present, masked direct input-to-output connections are added so the first
/// coordinate's parameters can also depend on the context (its hidden-path
/// mask is empty by construction).
#[derive(Debug, Clone)]
pub struct Made {
    dim: usize,
    context: usize,
    hidden: usize,
    mask_w1: Tensor,
    mask_w2: Tensor,
    mask_direct: Option<Tensor>,
}

impl Made {
    pub fn new(dim: usize, context: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Config("made: dim and hidden must be positive".into()));
        }
        let in_total = dim + context;
        let max_deg = if dim > 1 { dim - 1 } else { 1 };
        let deg_in: Vec<usize> = (1..=dim).chain(core::iter::repeat(0).take(context)).collect();
        let deg_hidden: Vec<usize> = (0..hidden).map(|j| 1 + j % max_deg).collect();
        let deg_out: Vec<usize> = (0..2 * dim).map(|o| 1 + o % dim).collect();

        let mut m1 = Tensor::zeros(&[hidden, in_total]);
        for j in 0..hidden {
            for k in 0..in_total {
                if deg_hidden[j] >= deg_in[k] {
                    m1.data_mut()[j * in_total + k] = 1.0;
                }
            }
        }
        let mut m2 = Tensor::zeros(&[2 * dim, hidden]);
        for o in 0..2 * dim {
            for j in 0..hidden {
                if deg_out[o] > deg_hidden[j] {
                    m2.data_mut()[o * hidden + j] = 1.0;
                }
            }
        }
        let mask_direct = if context > 0 {
            let mut md = Tensor::zeros(&[2 * dim, in_total]);
            for o in 0..2 * dim {
                for k in 0..in_total {
                    if deg_out[o] > deg_in[k] {
                        md.data_mut()[o * in_total + k] = 1.0;
                    }
                }
            }
            Some(md)
        } else {
            None
        };
        Ok(Self {
            dim,
            context,
            hidden,
            mask_w1: m1,
            mask_w2: m2,
            mask_direct,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context(&self) -> usize {
        self.context
    }

    fn fields(&self) -> Vec<(String, Vec<usize>)> {
        let mut f = vec![
            ("w1".into(), vec![self.hidden, self.dim + self.context]),
            ("b1".into(), vec![self.hidden]),
            ("w2".into(), vec![2 * self.dim, self.hidden]),
            ("b2".into(), vec![2 * self.dim]),
        ];
        if self.context > 0 {
            f.push(("direct".into(), vec![2 * self.dim, self.dim + self.context]));
        }
        f
    }

    /// Identity-coupling init: the output layer starts at zero with the scale
    /// bias chosen so s = 1; the hidden layer is randomly initialized.
    fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        let in_total = self.dim + self.context;
        store.insert_uniform_fan_in(
            &format!("{prefix}.w1"),
            &[self.hidden, in_total],
            in_total,
            rng,
        )?;
        store.insert_uniform_fan_in(&format!("{prefix}.b1"), &[self.hidden], in_total, rng)?;
        store.insert(
            &format!("{prefix}.w2"),
            Tensor::zeros(&[2 * self.dim, self.hidden]),
        )?;
        let mut b2 = Tensor::zeros(&[2 * self.dim]);
        let s_bias = math::softplus_inv(1.0 - SCALE_FLOOR);
        for i in self.dim..2 * self.dim {
            b2.data_mut()[i] = s_bias;
        }
        store.insert(&format!("{prefix}.b2"), b2)?;
        if self.context > 0 {
            store.insert(
                &format!("{prefix}.direct"),
                Tensor::zeros(&[2 * self.dim, in_total]),
            )?;
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, cursor: &mut Cursor<'_, '_>) -> Result<BoundMade> {
        let in_total = self.dim + self.context;
        let w1 = cursor.take(tape, "w1", &[self.hidden, in_total])?;
        let b1 = cursor.take(tape, "b1", &[self.hidden])?;
        let w2 = cursor.take(tape, "w2", &[2 * self.dim, self.hidden])?;
        let b2 = cursor.take(tape, "b2", &[2 * self.dim])?;
        let m1 = tape.leaf(self.mask_w1.clone());
        let mw1 = tape.mul(w1, m1)?;
        let m2 = tape.leaf(self.mask_w2.clone());
        let mw2 = tape.mul(w2, m2)?;
        let mdirect = if let Some(md) = &self.mask_direct {
            let direct = cursor.take(tape, "direct", &[2 * self.dim, in_total])?;
            let ml = tape.leaf(md.clone());
            Some(tape.mul(direct, ml)?)
        } else {
            None
        };
        Ok(BoundMade {
            dim: self.dim,
            context: self.context,
            mw1,
            b1,
            mw2,
            b2,
            mdirect,
        })
    }
}

/// A [`Made`] conditioner with its parameters bound to a tape.
#[derive(Clone)]
pub struct BoundMade {
    dim: usize,
    context: usize,
    mw1: Var,
    b1: Var,
    mw2: Var,
    b2: Var,
    mdirect: Option<Var>,
}

impl BoundMade {
    /// Evaluates the conditioner: `(mu, s)` with `s` already softplus-floored.
    /// Masking guarantees `mu[i]`, `s[i]` depend only on `x[..i]` and context.
    pub fn eval(&self, tape: &mut Tape, x: Var, ctx: Option<Var>) -> Result<(Var, Var)> {
        let inp = if self.context > 0 {
            let c = ctx.ok_or_else(|| {
                Error::Config("masked block requires a context vector".into())
            })?;
            if tape.value(c).len() != self.context {
                return Err(Error::ShapeMismatch(format!(
                    "context length {} != {}",
                    tape.value(c).len(),
                    self.context
                )));
            }
            tape.concat(&[x, c])?
        } else {
            x
        };
        let pre = tape.affine(self.mw1, inp, self.b1)?;
        let h = tape.relu(pre)?;
        let mut out = tape.affine(self.mw2, h, self.b2)?;
        if let Some(md) = self.mdirect {
            let skip = tape.matvec(md, inp)?;
            out = tape.add(out, skip)?;
        }
        let mu = tape.slice(out, 0, self.dim)?;
        let s_raw = tape.slice(out, self.dim, 2 * self.dim)?;
        let sp = tape.softplus(s_raw)?;
        let s = tape.add_scalar(sp, SCALE_FLOOR)?;
        Ok((mu, s))
    }
}

/// Dense linear layer `x = P·L·U·z + bias` stored as masked dense factors:
/// unit lower-triangular `L`, upper-triangular `U` with softplus-floored
/// diagonal. The determinant is the product of the `U` diagonal, so the
/// log-det is cheap and the transform is invertible by construction.
#[derive(Debug, Clone)]
pub struct LuLinear {
    dim: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl LuLinear {
    pub fn new(dim: usize) -> Self {
        Self::with_permutation(dim, (0..dim).collect()).unwrap()
    }

    pub fn with_permutation(dim: usize, perm: Vec<usize>) -> Result<Self> {
        let inv_perm = invert_permutation(dim, &perm)?;
        Ok(Self {
            dim,
            perm,
            inv_perm,
        })
    }

    fn fields(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("l".into(), vec![self.dim, self.dim]),
            ("u".into(), vec![self.dim, self.dim]),
            ("bias".into(), vec![self.dim]),
        ]
    }

    fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        _rng: &mut R,
    ) -> Result<()> {
        let d = self.dim;
        store.insert(&format!("{prefix}.l"), Tensor::zeros(&[d, d]))?;
        let mut u = Tensor::zeros(&[d, d]);
        let diag = math::softplus_inv(1.0 - SCALE_FLOOR);
        for i in 0..d {
            u.data_mut()[i * d + i] = diag;
        }
        store.insert(&format!("{prefix}.u"), u)?;
        store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[d]))
    }

    fn bind(&self, tape: &mut Tape, cursor: &mut Cursor<'_, '_>) -> Result<BoundLu> {
        let d = self.dim;
        let l = cursor.take(tape, "l", &[d, d])?;
        let u = cursor.take(tape, "u", &[d, d])?;
        let bias = cursor.take(tape, "bias", &[d])?;

        let mut lower_mask = Tensor::zeros(&[d, d]);
        let mut upper_mask = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                if j < i {
                    lower_mask.data_mut()[i * d + j] = 1.0;
                } else if j > i {
                    upper_mask.data_mut()[i * d + j] = 1.0;
                }
            }
        }
        let lm = tape.leaf(lower_mask);
        let masked_l = tape.mul(l, lm)?;
        let eye = tape.leaf(Tensor::eye(d));
        let l_eff = tape.add(masked_l, eye)?;

        let um = tape.leaf(upper_mask);
        let masked_u = tape.mul(u, um)?;
        let u_flat = tape.reshape(u, vec![d * d])?;
        let diag_idx: Vec<usize> = (0..d).map(|i| i * d + i).collect();
        let diag_raw = tape.gather(u_flat, &diag_idx)?;
        let sp = tape.softplus(diag_raw)?;
        let s = tape.add_scalar(sp, SCALE_FLOOR)?;
        let diag = tape.diag_embed(s)?;
        let u_eff = tape.add(masked_u, diag)?;

        Ok(BoundLu {
            dim: d,
            perm: self.perm.clone(),
            inv_perm: self.inv_perm.clone(),
            l_eff,
            u_eff,
            s,
            bias,
        })
    }
}

#[derive(Clone)]
pub struct BoundLu {
    dim: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    l_eff: Var,
    u_eff: Var,
    s: Var,
    bias: Var,
}

impl BoundLu {
    fn forward(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        let uz = tape.matvec(self.u_eff, z)?;
        let luz = tape.matvec(self.l_eff, uz)?;
        let permuted = tape.gather(luz, &self.perm)?;
        let x = tape.add(permuted, self.bias)?;
        let ln_s = tape.ln(self.s)?;
        let ld = tape.sum(ln_s)?;
        Ok((x, ld))
    }

    fn inverse(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let d = self.dim;
        let centered = tape.sub(x, self.bias)?;
        let w = tape.gather(centered, &self.inv_perm)?;

        // Forward substitution: L·a = w with unit diagonal.
        let l_flat = tape.reshape(self.l_eff, vec![d * d])?;
        let mut a: Vec<Var> = Vec::with_capacity(d);
        for i in 0..d {
            let mut ai = tape.at(w, i)?;
            for (j, aj) in a.iter().enumerate().take(i) {
                let lij = tape.at(l_flat, i * d + j)?;
                let term = tape.mul(lij, *aj)?;
                ai = tape.sub(ai, term)?;
            }
            a.push(ai);
        }

        // Back substitution: U·z = a with diagonal `s`.
        let u_flat = tape.reshape(self.u_eff, vec![d * d])?;
        let mut z_rev: Vec<Var> = Vec::with_capacity(d);
        for back in 0..d {
            let i = d - 1 - back;
            let mut zi = a[i];
            for (k, zj) in z_rev.iter().enumerate() {
                let j = d - 1 - k;
                let uij = tape.at(u_flat, i * d + j)?;
                let term = tape.mul(uij, *zj)?;
                zi = tape.sub(zi, term)?;
            }
            let sii = tape.at(self.s, i)?;
            zi = tape.div(zi, sii)?;
            z_rev.push(zi);
        }
        z_rev.reverse();
        let z = tape.concat(&z_rev)?;
        let ln_s = tape.ln(self.s)?;
        let sum_ln = tape.sum(ln_s)?;
        let ld = tape.neg(sum_ln)?;
        Ok((z, ld))
    }
}

/// Fixed, parameter-free permutation `x[i] = z[perm[i]]`.
#[derive(Debug, Clone)]
pub struct Permutation {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let inv = invert_permutation(perm.len(), &perm)?;
        Ok(Self { perm, inv })
    }

    pub fn reverse(dim: usize) -> Self {
        Self::new((0..dim).rev().collect()).unwrap()
    }
}

fn invert_permutation(dim: usize, perm: &[usize]) -> Result<Vec<usize>> {
    if perm.len() != dim {
        return Err(Error::Config(format!(
            "permutation length {} != dim {dim}",
            perm.len()
        )));
    }
    let mut inv = vec![usize::MAX; dim];
    for (i, &p) in perm.iter().enumerate() {
        if p >= dim || inv[p] != usize::MAX {
            return Err(Error::Config("not a permutation".into()));
        }
        inv[p] = i;
    }
    Ok(inv)
}

/// Keeps the first `keep` coordinates and drops the rest. The inverse pads
/// the dropped coordinates with base-Gaussian draws; the forward contribution
/// is the base log-density of what was dropped, so stacks containing slices
/// still evaluate exact marginal densities.
#[derive(Debug, Clone)]
pub struct SliceLayer {
    in_dim: usize,
    keep: usize,
}

impl SliceLayer {
    pub fn new(in_dim: usize, keep: usize) -> Result<Self> {
        if keep == 0 || keep >= in_dim {
            return Err(Error::Config(format!(
                "slice: keep {keep} must be in 1..{in_dim}"
            )));
        }
        Ok(Self { in_dim, keep })
    }
}

/// Coordinate-wise absolute value. The inverse draws signs uniformly; each
/// coordinate contributes log 2 in the inverse direction (log ½ forward).
#[derive(Debug, Clone)]
pub struct AbsLayer {
    dim: usize,
}

impl AbsLayer {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

/// One layer of a [`FlowStack`].
#[derive(Debug, Clone)]
pub enum Layer {
    ActNorm(ActNorm),
    /// Affine autoregressive block whose one-pass direction is the inverse
    /// (density evaluation); the forward pass is sequential.
    Maf(Made),
    /// Affine autoregressive block whose one-pass direction is the forward
    /// (sampling); the inverse is sequential.
    Iaf(Made),
    LuLinear(LuLinear),
    Permutation(Permutation),
    Slice(SliceLayer),
    Abs(AbsLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::ActNorm(l) => l.dim,
            Layer::Maf(m) | Layer::Iaf(m) => m.dim,
            Layer::LuLinear(l) => l.dim,
            Layer::Permutation(p) => p.perm.len(),
            Layer::Slice(s) => s.in_dim,
            Layer::Abs(a) => a.dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Slice(s) => s.keep,
            other => other.in_dim(),
        }
    }

    pub fn is_bijective(&self) -> bool {
        !matches!(self, Layer::Slice(_) | Layer::Abs(_))
    }

    pub fn context_dim(&self) -> usize {
        match self {
            Layer::Maf(m) | Layer::Iaf(m) => m.context,
            _ => 0,
        }
    }

    fn fields(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::ActNorm(l) => l.fields(),
            Layer::Maf(m) | Layer::Iaf(m) => m.fields(),
            Layer::LuLinear(l) => l.fields(),
            Layer::Permutation(_) | Layer::Slice(_) | Layer::Abs(_) => Vec::new(),
        }
    }

    /// Number of scalar parameters this layer consumes.
    pub fn demand(&self) -> usize {
        self.fields()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        match self {
            Layer::ActNorm(l) => l.init_params(store, prefix, rng),
            Layer::Maf(m) | Layer::Iaf(m) => m.init_params(store, prefix, rng),
            Layer::LuLinear(l) => l.init_params(store, prefix, rng),
            Layer::Permutation(_) | Layer::Slice(_) | Layer::Abs(_) => Ok(()),
        }
    }

    fn bind(&self, tape: &mut Tape, cursor: &mut Cursor<'_, '_>) -> Result<BoundLayer> {
        Ok(match self {
            Layer::ActNorm(l) => BoundLayer::ActNorm {
                scale: cursor.take(tape, "scale", &[l.dim])?,
                shift: cursor.take(tape, "shift", &[l.dim])?,
            },
            Layer::Maf(m) => BoundLayer::Maf(m.bind(tape, cursor)?),
            Layer::Iaf(m) => BoundLayer::Iaf(m.bind(tape, cursor)?),
            Layer::LuLinear(l) => BoundLayer::LuLinear(l.bind(tape, cursor)?),
            Layer::Permutation(p) => BoundLayer::Permutation {
                perm: p.perm.clone(),
                inv: p.inv.clone(),
            },
            Layer::Slice(s) => BoundLayer::Slice {
                in_dim: s.in_dim,
                keep: s.keep,
            },
            Layer::Abs(a) => BoundLayer::Abs { dim: a.dim },
        })
    }
}

#[derive(Clone)]
pub enum BoundLayer {
    ActNorm { scale: Var, shift: Var },
    Maf(BoundMade),
    Iaf(BoundMade),
    LuLinear(BoundLu),
    Permutation { perm: Vec<usize>, inv: Vec<usize> },
    Slice { in_dim: usize, keep: usize },
    Abs { dim: usize },
}

impl BoundLayer {
    pub fn forward(&self, tape: &mut Tape, z: Var, ctx: Option<Var>) -> Result<(Var, Var)> {
        match self {
            BoundLayer::ActNorm { scale, shift } => {
                let scaled = tape.mul(z, *scale)?;
                let x = tape.add(scaled, *shift)?;
                let ld = actnorm_logdet(tape, *scale)?;
                Ok((x, ld))
            }
            BoundLayer::Iaf(made) => {
                let (mu, s) = made.eval(tape, z, ctx)?;
                let sz = tape.mul(s, z)?;
                let x = tape.add(mu, sz)?;
                let ln_s = tape.ln(s)?;
                let ld = tape.sum(ln_s)?;
                Ok((x, ld))
            }
            BoundLayer::Maf(made) => {
                // Sequential direction: coordinate i needs x[..i] finalized.
                let d = made.dim;
                let mut parts: Vec<Var> = Vec::with_capacity(d);
                let mut ln_terms: Vec<Var> = Vec::with_capacity(d);
                for i in 0..d {
                    let x_partial = partial_vector(tape, &parts, d)?;
                    let (mu, s) = made.eval(tape, x_partial, ctx)?;
                    let mui = tape.at(mu, i)?;
                    let si = tape.at(s, i)?;
                    let zi = tape.at(z, i)?;
                    let szi = tape.mul(si, zi)?;
                    let xi = tape.add(mui, szi)?;
                    parts.push(xi);
                    ln_terms.push(tape.ln(si)?);
                }
                let x = tape.concat(&parts)?;
                let lns = tape.concat(&ln_terms)?;
                let ld = tape.sum(lns)?;
                Ok((x, ld))
            }
            BoundLayer::LuLinear(lu) => lu.forward(tape, z),
            BoundLayer::Permutation { perm, .. } => {
                let x = tape.gather(z, perm)?;
                let ld = tape.scalar(0.0);
                Ok((x, ld))
            }
            BoundLayer::Slice { in_dim, keep } => {
                let x = tape.slice(z, 0, *keep)?;
                let dropped = tape.slice(z, *keep, *in_dim)?;
                let n_drop = (*in_dim - *keep) as f64;
                let sq = tape.square(dropped)?;
                let ssq = tape.sum(sq)?;
                let half = tape.scale(ssq, -0.5)?;
                let ld = tape.add_scalar(half, -0.5 * math::LOG_TWO_PI * n_drop)?;
                Ok((x, ld))
            }
            BoundLayer::Abs { dim } => {
                let x = tape.abs(z)?;
                let ld = tape.scalar(*dim as f64 * math::ln(0.5));
                Ok((x, ld))
            }
        }
    }

    pub fn inverse(
        &self,
        tape: &mut Tape,
        x: Var,
        ctx: Option<Var>,
        pad: &mut PadSource<'_>,
    ) -> Result<(Var, Var)> {
        match self {
            BoundLayer::ActNorm { scale, shift } => {
                let ld_fwd = actnorm_logdet(tape, *scale)?;
                let ld = tape.neg(ld_fwd)?;
                let centered = tape.sub(x, *shift)?;
                let z = tape.div(centered, *scale)?;
                Ok((z, ld))
            }
            BoundLayer::Iaf(made) => {
                // Sequential direction: coordinate i needs z[..i] finalized.
                let d = made.dim;
                let mut parts: Vec<Var> = Vec::with_capacity(d);
                let mut ln_terms: Vec<Var> = Vec::with_capacity(d);
                for i in 0..d {
                    let z_partial = partial_vector(tape, &parts, d)?;
                    let (mu, s) = made.eval(tape, z_partial, ctx)?;
                    let mui = tape.at(mu, i)?;
                    let si = tape.at(s, i)?;
                    let xi = tape.at(x, i)?;
                    let diff = tape.sub(xi, mui)?;
                    let zi = tape.div(diff, si)?;
                    parts.push(zi);
                    ln_terms.push(tape.ln(si)?);
                }
                let z = tape.concat(&parts)?;
                let lns = tape.concat(&ln_terms)?;
                let sum_ln = tape.sum(lns)?;
                let ld = tape.neg(sum_ln)?;
                Ok((z, ld))
            }
            BoundLayer::Maf(made) => {
                let (mu, s) = made.eval(tape, x, ctx)?;
                let diff = tape.sub(x, mu)?;
                let z = tape.div(diff, s)?;
                let ln_s = tape.ln(s)?;
                let sum_ln = tape.sum(ln_s)?;
                let ld = tape.neg(sum_ln)?;
                Ok((z, ld))
            }
            BoundLayer::LuLinear(lu) => lu.inverse(tape, x),
            BoundLayer::Permutation { inv, .. } => {
                let z = tape.gather(x, inv)?;
                let ld = tape.scalar(0.0);
                Ok((z, ld))
            }
            BoundLayer::Slice { in_dim, keep } => {
                let n_drop = *in_dim - *keep;
                let pad_values = match pad {
                    PadSource::Rng(rng) => sample_standard_normal(n_drop, *rng),
                    PadSource::Deterministic => Tensor::zeros(&[n_drop]),
                };
                let mut ld_const = 0.0;
                for v in pad_values.iter() {
                    ld_const -= math::std_normal_logpdf(*v);
                }
                let pad_leaf = tape.leaf(pad_values);
                let z = tape.concat(&[x, pad_leaf])?;
                let ld = tape.scalar(ld_const);
                Ok((z, ld))
            }
            BoundLayer::Abs { dim } => {
                let signs: Vec<f64> = match pad {
                    PadSource::Rng(rng) => (0..*dim)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                        .collect(),
                    PadSource::Deterministic => vec![1.0; *dim],
                };
                let sign_leaf = tape.leaf(Tensor::vector(signs));
                let z = tape.mul(x, sign_leaf)?;
                let ld = tape.scalar(*dim as f64 * math::ln(2.0));
                Ok((z, ld))
            }
        }
    }
}

fn actnorm_logdet(tape: &mut Tape, scale: Var) -> Result<Var> {
    for v in tape.value(scale).iter() {
        if *v == 0.0 {
            return Err(Error::Domain("actnorm scale is zero".into()));
        }
    }
    let abs_s = tape.abs(scale)?;
    let ln_s = tape.ln(abs_s)?;
    tape.sum(ln_s)
}

/// Builds a length-`dim` vector from finalized coordinate parts, padding the
/// not-yet-computed tail with zeros. Masking makes the padding inert.
fn partial_vector(tape: &mut Tape, parts: &[Var], dim: usize) -> Result<Var> {
    if parts.is_empty() {
        return Ok(tape.leaf(Tensor::zeros(&[dim])));
    }
    if parts.len() == dim {
        return tape.concat(parts);
    }
    let tail = tape.leaf(Tensor::zeros(&[dim - parts.len()]));
    let mut all: Vec<Var> = parts.to_vec();
    all.push(tail);
    tape.concat(&all)
}

/// An ordered composition of layers over a standard-Gaussian base of
/// dimension `base_dim`.
#[derive(Debug, Clone)]
pub struct FlowStack {
    layers: Vec<Layer>,
    /// `ties[i] == i` means layer `i` owns its parameters; otherwise it
    /// reuses the parameters of the (earlier) owner layer `ties[i]`.
    ties: Vec<usize>,
    base_dim: usize,
    out_dim: usize,
    context: usize,
}

impl FlowStack {
    /// An empty stack is the identity on `base_dim`.
    pub fn new(base_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let ties = (0..layers.len()).collect();
        Self::new_tied(base_dim, layers, ties)
    }

    /// Like [`FlowStack::new`], with weight sharing: layer `i` uses the
    /// parameters of layer `ties[i]`, which must be an earlier (or the same)
    /// layer of identical kind and parameter shapes.
    pub fn new_tied(base_dim: usize, layers: Vec<Layer>, ties: Vec<usize>) -> Result<Self> {
        if base_dim == 0 {
            return Err(Error::Config("flow stack of dimension zero".into()));
        }
        if ties.len() != layers.len() {
            return Err(Error::Config("ties length != layer count".into()));
        }
        let mut dim = base_dim;
        let mut context = 0usize;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects dim {}, previous produces {dim}",
                    layer.in_dim()
                )));
            }
            dim = layer.out_dim();
            let c = layer.context_dim();
            if c > 0 {
                if context > 0 && context != c {
                    return Err(Error::Config(
                        "layers disagree on context width".into(),
                    ));
                }
                context = c;
            }
            let owner = ties[i];
            if owner > i || ties[owner] != owner {
                return Err(Error::Config(format!(
                    "layer {i}: tie target {owner} is not an earlier owner"
                )));
            }
            if owner != i
                && (core::mem::discriminant(layer)
                    != core::mem::discriminant(&layers[owner])
                    || layer.fields() != layers[owner].fields())
            {
                return Err(Error::Config(format!(
                    "layer {i} cannot share parameters with layer {owner}"
                )));
            }
        }
        Ok(Self {
            layers,
            ties,
            base_dim,
            out_dim: dim,
            context,
        })
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn context_dim(&self) -> usize {
        self.context
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_bijective(&self) -> bool {
        self.layers.iter().all(Layer::is_bijective)
    }

    /// Total scalar-parameter demand (packed binding length). Shared layers
    /// are counted once, at their owner.
    pub fn demand(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .filter(|(i, _)| self.ties[*i] == *i)
            .map(|(_, l)| l.demand())
            .sum()
    }

    pub fn init_params<R: rand::Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if self.ties[i] == i {
                layer.init_params(store, &format!("{prefix}.l{i}"), rng)?;
            }
        }
        Ok(())
    }

    /// Flattens the stack's named parameters into one packed vector in
    /// binding order, so a `Packed` binding reproduces the `Store` binding.
    pub fn pack_params(&self, store: &ParamStore, prefix: &str) -> Result<Tensor> {
        let mut flat = Vec::with_capacity(self.demand());
        for (i, layer) in self.layers.iter().enumerate() {
            if self.ties[i] != i {
                continue;
            }
            for (field, _) in layer.fields() {
                let name = format!("{prefix}.l{i}.{field}");
                let t = store
                    .get(&name)
                    .ok_or_else(|| Error::UnknownParam(name.clone()))?;
                flat.extend_from_slice(t.data());
            }
        }
        Ok(Tensor::vector(flat))
    }

    /// Data-dependent init: walks the stack over `batch`, setting each
    /// actnorm's scale/shift so its outputs have zero mean and unit variance
    /// on what reaches it. Only context-free stacks are supported.
    pub fn data_init(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        batch: &[Tensor],
    ) -> Result<()> {
        if self.context > 0 {
            return Err(Error::Config(
                "data_init supports context-free stacks only".into(),
            ));
        }
        if batch.is_empty() {
            return Err(Error::Config("data_init needs a non-empty batch".into()));
        }
        let mut current: Vec<Tensor> = batch.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::ActNorm(an) = layer {
                let d = an.dim;
                let n = current.len() as f64;
                let mut mean = vec![0.0; d];
                for t in &current {
                    for (m, v) in mean.iter_mut().zip(t.iter()) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n;
                }
                let mut var = vec![0.0; d];
                for t in &current {
                    for k in 0..d {
                        let dv = t.data()[k] - mean[k];
                        var[k] += dv * dv;
                    }
                }
                let mut scale = vec![0.0; d];
                let mut shift = vec![0.0; d];
                for k in 0..d {
                    // Degenerate dimensions are left unscaled.
                    let std = math::sqrt(var[k] / n);
                    let std = if std < 1e-6 { 1.0 } else { std };
                    scale[k] = 1.0 / std;
                    shift[k] = -mean[k] / std;
                }
                store.set(&format!("{prefix}.l{i}.scale"), Tensor::vector(scale))?;
                store.set(&format!("{prefix}.l{i}.shift"), Tensor::vector(shift))?;
            }
            let binding = FlowBinding::Store { store, prefix };
            let mut next = Vec::with_capacity(current.len());
            for t in &current {
                let mut tape = Tape::new();
                let mut cursor = Cursor {
                    binding: &binding,
                    layer: self.ties[i],
                    offset: 0,
                };
                let bound = layer.bind(&mut tape, &mut cursor)?;
                let z = tape.leaf(t.clone());
                let (x, _) = bound.forward(&mut tape, z, None)?;
                next.push(tape.value(x).clone());
            }
            current = next;
        }
        Ok(())
    }

    /// Binds every layer's parameters onto the tape.
    pub fn bind(&self, tape: &mut Tape, binding: &FlowBinding<'_>) -> Result<BoundStack> {
        if let FlowBinding::Packed { phi } = binding {
            let have = tape.value(*phi).len();
            if have != self.demand() {
                return Err(Error::ShapeMismatch(format!(
                    "packed parameters: have {have}, stack demands {}",
                    self.demand()
                )));
            }
        }
        let mut offset = 0usize;
        let mut bound: Vec<BoundLayer> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if self.ties[i] != i {
                let shared = bound[self.ties[i]].clone();
                bound.push(shared);
                continue;
            }
            let mut cursor = Cursor {
                binding,
                layer: i,
                offset,
            };
            bound.push(layer.bind(tape, &mut cursor)?);
            offset = cursor.offset;
        }
        Ok(BoundStack {
            layers: bound,
            base_dim: self.base_dim,
            out_dim: self.out_dim,
        })
    }
}

/// A [`FlowStack`] with parameters bound to a tape.
pub struct BoundStack {
    layers: Vec<BoundLayer>,
    base_dim: usize,
    out_dim: usize,
}

impl BoundStack {
    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Base sample to output, with the total forward log-det.
    pub fn forward(&self, tape: &mut Tape, z: Var, ctx: Option<Var>) -> Result<(Var, Var)> {
        if tape.value(z).len() != self.base_dim {
            return Err(Error::ShapeMismatch(format!(
                "forward input dim {} != base dim {}",
                tape.value(z).len(),
                self.base_dim
            )));
        }
        let mut x = z;
        let mut ld = tape.scalar(0.0);
        for layer in &self.layers {
            let (next, layer_ld) = layer.forward(tape, x, ctx)?;
            x = next;
            ld = tape.add(ld, layer_ld)?;
        }
        Ok((x, ld))
    }

    /// Output back to base, sampling any padding or signs from `rng`.
    pub fn inverse(
        &self,
        tape: &mut Tape,
        x: Var,
        ctx: Option<Var>,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        self.inverse_impl(tape, x, ctx, &mut PadSource::Rng(rng))
    }

    /// Deterministic inverse (zero padding, positive signs); used for density
    /// evaluation where those choices cancel exactly.
    pub fn inverse_deterministic(
        &self,
        tape: &mut Tape,
        x: Var,
        ctx: Option<Var>,
    ) -> Result<(Var, Var)> {
        self.inverse_impl(tape, x, ctx, &mut PadSource::Deterministic)
    }

    fn inverse_impl(
        &self,
        tape: &mut Tape,
        x: Var,
        ctx: Option<Var>,
        pad: &mut PadSource<'_>,
    ) -> Result<(Var, Var)> {
        if tape.value(x).len() != self.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "inverse input dim {} != out dim {}",
                tape.value(x).len(),
                self.out_dim
            )));
        }
        let mut z = x;
        let mut ld = tape.scalar(0.0);
        for layer in self.layers.iter().rev() {
            let (next, layer_ld) = layer.inverse(tape, z, ctx, pad)?;
            z = next;
            ld = tape.add(ld, layer_ld)?;
        }
        Ok((z, ld))
    }

    /// Log-density of `x` under base-Gaussian noise pushed through the stack.
    pub fn log_prob(&self, tape: &mut Tape, x: Var, ctx: Option<Var>) -> Result<Var> {
        let (z, ld) = self.inverse_deterministic(tape, x, ctx)?;
        let sq = tape.square(z)?;
        let ssq = tape.sum(sq)?;
        let half = tape.scale(ssq, -0.5)?;
        let base = tape.add_scalar(half, -0.5 * math::LOG_TWO_PI * self.base_dim as f64)?;
        tape.add(base, ld)
    }
}
