//! Exact reference solutions for the tiger problem.
//!
//! These are independent of the learned networks: closed-form contextual
//! values, the posterior-mixture baseline, and Bayes-adaptive value
//! iteration on a belief grid. The trainer and the acceptance suite compare
//! learned behaviour against them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::envs::{
    tiger_listen_posterior, tiger_listen_probs, CmdpEnv, PhiDraw, TigerBelief, TigerConfig,
    TigerEnv, TigerState, TIGER_LISTEN, TIGER_OPEN_LEFT, TIGER_OPEN_RIGHT,
};
use crate::{Error, Result, Rng};

const VI_SWEEP_CAP: usize = 10_000;

/// Values of the optimal context-aware policy: `q_correct` is the return
/// from always opening the gold door, `q_wrong` from opening the tiger door
/// once and then acting on the revealed context. Requires `γ < 1`.
pub fn contextual_q_values(cfg: &TigerConfig) -> (f64, f64) {
    let q_correct = cfg.r_gold / (1.0 - cfg.gamma);
    let q_wrong = cfg.r_tiger + cfg.gamma * q_correct;
    (q_correct, q_wrong)
}

/// Expected return of the posterior-mixture policy that samples open-right
/// with probability `prior_left` and never listens. The first opening is
/// correct with probability `p² + (1−p)²` and reveals the context either
/// way.
pub fn qbrl_value(cfg: &TigerConfig, prior_left: f64) -> f64 {
    let (q_correct, q_wrong) = contextual_q_values(cfg);
    let p = prior_left;
    let p_correct_open = p * p + (1.0 - p) * (1.0 - p);
    p_correct_open * q_correct + (1.0 - p_correct_open) * q_wrong
}

/// Return of listening forever.
pub fn j_listen(cfg: &TigerConfig) -> f64 {
    cfg.r_listen / (1.0 - cfg.gamma)
}

/// One draw from the posterior-mixture policy: open-right with probability
/// `belief_left`, open-left otherwise.
pub fn qbrl_policy_action(belief_left: f64, rng: &mut Rng) -> usize {
    if rng.random_bool(belief_left.clamp(0.0, 1.0)) {
        TIGER_OPEN_RIGHT
    } else {
        TIGER_OPEN_LEFT
    }
}

/// Converged value function over a uniform belief grid on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct BeliefGrid {
    cfg: TigerConfig,
    values: Vec<f64>,
    residuals: Vec<f64>,
}

impl BeliefGrid {
    pub fn config(&self) -> &TigerConfig {
        &self.cfg
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sup-norm Bellman residual after each sweep, in order.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// `V(b)` with linear interpolation between grid points.
    pub fn value(&self, belief: f64) -> f64 {
        interpolate(&self.values, belief)
    }
}

fn interpolate(values: &[f64], belief: f64) -> f64 {
    let m = values.len();
    let x = belief.clamp(0.0, 1.0) * (m - 1) as f64;
    let i = (x as usize).min(m - 2);
    let frac = x - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Action values at a belief given a converged grid: index 0 open-left,
/// 1 open-right, 2 listen. Opening reveals the context, so both open
/// values are affine in the belief with the known-context continuation.
pub fn tiger_action_values(grid: &BeliefGrid, belief: f64) -> [f64; 3] {
    action_values(&grid.cfg, &grid.values, belief)
}

fn action_values(cfg: &TigerConfig, values: &[f64], belief: f64) -> [f64; 3] {
    let (q_correct, _) = contextual_q_values(cfg);
    let cont = cfg.gamma * q_correct;
    let b = belief;
    let open_left = b * (cfg.r_tiger + cont) + (1.0 - b) * (cfg.r_gold + cont);
    let open_right = b * (cfg.r_gold + cont) + (1.0 - b) * (cfg.r_tiger + cont);
    let probs = tiger_listen_probs(cfg, b);
    let outcomes = [TigerState::S1, TigerState::S2, TigerState::S0];
    let mut listen = cfg.r_listen;
    for (p, o) in probs.iter().zip(outcomes) {
        let next = tiger_listen_posterior(cfg, b, o);
        listen += cfg.gamma * p * interpolate(values, next);
    }
    [open_left, open_right, listen]
}

/// Value iteration for the Bayes-adaptive tiger problem on a uniform
/// belief grid, run to a sup-norm residual below `tol`.
pub fn belief_value_iteration(
    cfg: &TigerConfig,
    resolution: usize,
    tol: f64,
) -> Result<BeliefGrid> {
    belief_value_iteration_capped(cfg, resolution, tol, VI_SWEEP_CAP)
}

/// As [`belief_value_iteration`] with an explicit sweep cap.
pub fn belief_value_iteration_capped(
    cfg: &TigerConfig,
    resolution: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<BeliefGrid> {
    cfg.validate()?;
    if resolution < 3 {
        return Err(Error::Config(format!(
            "belief grid resolution {resolution} below 3"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let points: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    let mut values = vec![0.0; resolution];
    let mut residuals = Vec::new();
    for _ in 0..max_sweeps {
        let mut next = vec![0.0; resolution];
        let mut residual = 0.0f64;
        for (i, b) in points.iter().enumerate() {
            let av = action_values(cfg, &values, *b);
            next[i] = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((next[i] - values[i]).abs());
        }
        values = next;
        residuals.push(residual);
        if residual < tol {
            return Ok(BeliefGrid {
                cfg: *cfg,
                values,
                residuals,
            });
        }
    }
    Err(Error::NotConverged(format!(
        "belief value iteration residual {:.3e} after {max_sweeps} sweeps (tol {tol:.1e})",
        residuals.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Greedy action under the converged value function; exact ties between
/// listening and opening resolve to listening.
pub fn bayes_optimal_action(grid: &BeliefGrid, belief: f64) -> usize {
    let av = tiger_action_values(grid, belief);
    if av[TIGER_LISTEN] >= av[TIGER_OPEN_LEFT] && av[TIGER_LISTEN] >= av[TIGER_OPEN_RIGHT] {
        TIGER_LISTEN
    } else if av[TIGER_OPEN_LEFT] >= av[TIGER_OPEN_RIGHT] {
        TIGER_OPEN_LEFT
    } else {
        TIGER_OPEN_RIGHT
    }
}

/// Discounted return of one fresh episode under a belief-conditioned
/// policy. The environment samples its context from the prior; the belief
/// starts uniform and is updated from observations.
pub fn tiger_rollout<F>(
    env: &mut TigerEnv,
    horizon: usize,
    policy_rng: &mut Rng,
    mut policy: F,
) -> Result<f64>
where
    F: FnMut(f64, &mut Rng) -> usize,
{
    let cfg = *env.config();
    env.reset(PhiDraw::SamplePrior)?;
    let mut belief = TigerBelief::new();
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = policy(belief.belief_left(&cfg), policy_rng);
        let (r, _) = env.step(action)?;
        belief.update(&cfg, action, r, env.state());
        ret += discount * r;
        discount *= cfg.gamma;
    }
    Ok(ret)
}

/// Mean and standard error of `n` rollouts.
pub fn rollout_stats<F>(
    env: &mut TigerEnv,
    n: usize,
    horizon: usize,
    policy_rng: &mut Rng,
    mut policy: F,
) -> Result<(f64, f64)>
where
    F: FnMut(f64, &mut Rng) -> usize,
{
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let ret = tiger_rollout(env, horizon, policy_rng, &mut policy)?;
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok((mean, crate::math::sqrt(var / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::println;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    /// Truncation horizon: γ^250 · 500 ≈ 2e-9, far below statistical noise.
    const HORIZON: usize = 250;

    #[test]
    fn contextual_values_match_closed_form() {
        let cfg = TigerConfig::default();
        let (q_correct, q_wrong) = contextual_q_values(&cfg);
        assert!((q_correct - 100.0).abs() < 1e-12);
        assert!((q_wrong - -410.0).abs() < 1e-12);

        let myopic = TigerConfig {
            gamma: 0.0,
            ..cfg
        };
        let (qc, qw) = contextual_q_values(&myopic);
        assert_eq!(qc, 10.0);
        assert_eq!(qw, -500.0);
    }

    #[test]
    fn qbrl_value_examples_and_symmetry() {
        let cfg = TigerConfig::default();
        assert!((qbrl_value(&cfg, 0.5) - -155.0).abs() < 1e-12);
        assert!((qbrl_value(&cfg, 1.0) - 100.0).abs() < 1e-12);
        assert!((qbrl_value(&cfg, 0.0) - 100.0).abs() < 1e-12);
        for b in [0.1, 0.3, 0.42] {
            assert!((qbrl_value(&cfg, b) - qbrl_value(&cfg, 1.0 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn listening_forever_is_worth_minus_ten() {
        assert!((j_listen(&TigerConfig::default()) - -10.0).abs() < 1e-12);
    }

    #[test]
    fn value_iteration_recovers_the_known_context_value() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        assert!((grid.value(1.0) - 100.0).abs() < 1e-6);
        assert!((grid.value(0.0) - 100.0).abs() < 1e-6);
        assert!(grid.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn value_function_is_symmetric_on_the_grid() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        let v = grid.values();
        let m = v.len();
        for i in 0..m {
            assert!(
                (v[i] - v[m - 1 - i]).abs() < 1e-9,
                "asymmetry at grid point {i}: {} vs {}",
                v[i],
                v[m - 1 - i]
            );
        }
    }

    #[test]
    fn uncertainty_value_beats_listening_forever() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        let v_half = grid.value(0.5);
        println!("V(0.5) = {v_half}");
        assert!(v_half > j_listen(&cfg));
    }

    #[test]
    fn residuals_shrink_monotonically() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 501, 1e-8).unwrap();
        let res = grid.residuals();
        assert!(res.len() > 2);
        for w in res.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "residual rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn doubling_the_resolution_barely_moves_the_value() {
        let cfg = TigerConfig::default();
        let coarse = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        let fine = belief_value_iteration(&cfg, 4001, 1e-8).unwrap();
        let delta = (coarse.value(0.5) - fine.value(0.5)).abs();
        assert!(delta < 1e-3, "V(0.5) moved by {delta}");
    }

    #[test]
    fn non_convergence_is_reported() {
        let cfg = TigerConfig::default();
        let err = belief_value_iteration_capped(&cfg, 51, 1e-8, 3).unwrap_err();
        assert!(matches!(err, Error::NotConverged(_)));
        assert!(belief_value_iteration(&cfg, 2, 1e-8).is_err());
        assert!(belief_value_iteration(&cfg, 51, 0.0).is_err());
    }

    #[test]
    fn optimal_actions_at_reference_beliefs() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        assert_eq!(bayes_optimal_action(&grid, 0.5), TIGER_LISTEN);
        assert_eq!(bayes_optimal_action(&grid, 1.0), TIGER_OPEN_RIGHT);
        assert_eq!(bayes_optimal_action(&grid, 0.0), TIGER_OPEN_LEFT);
        // Near-certain beliefs still open the right door.
        assert_eq!(bayes_optimal_action(&grid, 0.999), TIGER_OPEN_RIGHT);
    }

    #[test]
    fn mixture_policy_draws_match_the_posterior() {
        let seed = 0x04AC1Eu64;
        println!("mixture seed: {seed}");
        let mut r = rng(seed);
        let n = 10_000usize;
        let mut right = 0usize;
        for _ in 0..n {
            match qbrl_policy_action(0.5, &mut r) {
                TIGER_OPEN_RIGHT => right += 1,
                TIGER_OPEN_LEFT => {}
                other => panic!("mixture policy listened: {other}"),
            }
        }
        let freq = right as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "open-right freq {freq}");
        assert_eq!(qbrl_policy_action(1.0, &mut r), TIGER_OPEN_RIGHT);
        assert_eq!(qbrl_policy_action(0.0, &mut r), TIGER_OPEN_LEFT);
    }

    #[test]
    fn mixture_rollouts_match_the_analytic_value() {
        let mut env = TigerEnv::new(TigerConfig::default(), 21).unwrap();
        let mut r = rng(22);
        let n = 10_000;
        let (mean, se) = rollout_stats(&mut env, n, HORIZON, &mut r, |b, rng| {
            qbrl_policy_action(b, rng)
        })
        .unwrap();
        println!("mixture rollouts: {mean} +- {se}");
        assert!(
            (mean - -155.0).abs() < 3.0 * se,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn rollouts_certify_the_value_ordering() {
        let cfg = TigerConfig::default();
        let grid = belief_value_iteration(&cfg, 2001, 1e-8).unwrap();
        let mut env = TigerEnv::new(cfg, 23).unwrap();
        let mut r = rng(24);
        let n = 10_000;

        let (qbrl_mean, qbrl_se) = rollout_stats(&mut env, n, HORIZON, &mut r, |b, rng| {
            qbrl_policy_action(b, rng)
        })
        .unwrap();
        let (opt_mean, opt_se) = rollout_stats(&mut env, n, HORIZON, &mut r, |b, _| {
            bayes_optimal_action(&grid, b)
        })
        .unwrap();
        let listen_forever = j_listen(&cfg);
        println!(
            "qbrl {qbrl_mean:.2}+-{qbrl_se:.2}, listen {listen_forever}, optimal {opt_mean:.2}+-{opt_se:.2}, V(0.5) {:.2}",
            grid.value(0.5)
        );

        assert!(qbrl_mean + 3.0 * qbrl_se < listen_forever);
        assert!(opt_mean - 3.0 * opt_se > listen_forever);
        assert!((opt_mean - grid.value(0.5)).abs() < 3.0 * opt_se);
    }
}
