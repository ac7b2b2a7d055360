//! Exact and Monte Carlo evaluation of sampling policies.
//!
//! Exact evaluation restricts the induced chain to the states reachable
//! from `(1, none)`, solves for its stationary distribution, and reads the
//! long-run average age and sampling rate off that distribution. The
//! simulator replays the slot dynamics with untruncated integer ages, so
//! cross-checking the two quantifies truncation error.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{transition, Action, ModelError, ModelParams, State, StateSpace};
use crate::policy::{wait_and_sample_policy, MixturePolicy, PolicyError, StationaryPolicy};

/// Required `l1` residual of the stationary solve, `||pi P - pi||_1`.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Reachable sets up to this size are solved by dense LU; larger ones
/// fall back to damped power iteration on the (at most two nonzeros per
/// row) sparse kernel.
const DENSE_SOLVE_LIMIT: usize = 4096;

/// Minimum simulation horizon in slots.
pub const MIN_HORIZON: u64 = 10_000;

/// Number of equal batches used for the batch-means confidence interval.
pub const NUM_BATCHES: usize = 30;

/// Two-sided 95% Student-t critical value at `NUM_BATCHES - 1 = 29`
/// degrees of freedom.
const T_CRIT_95_DF29: f64 = 2.045229642132703;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error("reachable set contains {0} closed classes; the policy chain must be unichain")]
    MultipleClosedClasses(usize),

    #[error("stationary solve residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL:.1e}")]
    StationarySolveFailed { residual: f64 },

    #[error("horizon {horizon} too small; need at least {required}")]
    HorizonTooSmall { horizon: u64, required: u64 },
}

/// Stationary distribution of a policy's chain, supported on the states
/// reachable from `(1, none)`.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    states: Vec<State>,
    probs: Vec<f64>,
    residual: f64,
}

impl StationaryDistribution {
    /// `(state, probability)` pairs in state-space enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.states.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Achieved `||pi P - pi||_1`.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// How an [`EvalResult`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Exact,
    ClosedForm,
    MonteCarlo,
}

/// Long-run average age and sampling rate of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Long-run average monitor age, slots.
    pub avg_age: f64,
    /// Long-run fraction of slots with a sampling action.
    pub sampling_rate: f64,
    pub method: EvalMethod,
    /// 95% confidence half-width (Monte Carlo only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

// ── Exact evaluation ──────────────────────────────────────────────────

/// Breadth-first closure of the policy chain from `(1, none)`.
fn reachable_closure(
    policy: &StationaryPolicy,
    params: &ModelParams,
) -> Result<(Vec<State>, Vec<Vec<(usize, f64)>>), EvalError> {
    let space = StateSpace::new(params.v_max)?;
    let start = State::no_packet(1).expect("valid start state");
    let start_idx = space.index_of(start).expect("start state in range");

    // space-index -> local reachable index
    let mut local = vec![usize::MAX; space.len()];
    let mut states = vec![start];
    local[start_idx] = 0;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut frontier = vec![0usize];

    while let Some(i) = frontier.pop() {
        let s = states[i];
        let dist = transition(s, policy.action(s), params)?;
        let mut row = Vec::with_capacity(dist.pairs().len());
        for &(succ, prob) in dist.pairs() {
            let gidx = space.index_of(succ).expect("successors stay in range");
            let j = if local[gidx] == usize::MAX {
                let j = states.len();
                local[gidx] = j;
                states.push(succ);
                frontier.push(j);
                j
            } else {
                local[gidx]
            };
            row.push((j, prob));
        }
        if rows.len() <= i {
            rows.resize(states.len(), Vec::new());
        }
        rows[i] = row;
    }
    rows.resize(states.len(), Vec::new());
    Ok((states, rows))
}

/// Number of closed communicating classes in the reachable chain.
fn closed_class_count(rows: &[Vec<(usize, f64)>]) -> usize {
    let mut graph = DiGraph::<(), ()>::with_capacity(rows.len(), 2 * rows.len());
    let nodes: Vec<_> = (0..rows.len()).map(|_| graph.add_node(())).collect();
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            graph.add_edge(nodes[i], nodes[j], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut scc_of = vec![usize::MAX; rows.len()];
    for (k, scc) in sccs.iter().enumerate() {
        for &node in scc {
            scc_of[node.index()] = k;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            if scc_of[i] != scc_of[j] {
                closed[scc_of[i]] = false;
            }
        }
    }
    closed.iter().filter(|&&c| c).count()
}

fn l1_residual(rows: &[Vec<(usize, f64)>], pi: &[f64]) -> f64 {
    let mut next = vec![0.0f64; pi.len()];
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in row {
            next[j] += pi[i] * p;
        }
    }
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

/// Dense solve of `pi P = pi`, `sum pi = 1`: LU on the transposed system
/// with the last equation replaced by normalization.
fn solve_dense(rows: &[Vec<(usize, f64)>]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        a[(i, i)] -= 1.0;
        for &(j, p) in row {
            a[(j, i)] += p;
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b)?;
    if pi.iter().any(|&x| x < -1e-9 || !x.is_finite()) {
        return None;
    }
    let mut pi: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    for x in &mut pi {
        *x /= total;
    }
    Some(pi)
}

/// Damped power iteration on `(I + P) / 2`; the damping removes the
/// periodicity of cyclic sampling schedules without moving the fixed
/// point. Iterates far below the residual tolerance because slow mixing
/// amplifies the successive-difference stopping signal into a larger
/// distribution error.
fn solve_power(rows: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let n = rows.len();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0f64; n];
    const MAX_SWEEPS: usize = 500_000;
    const DIFF_TOL: f64 = 1e-13;
    for sweep in 0..MAX_SWEEPS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in rows.iter().enumerate() {
            let half = 0.5 * pi[i];
            next[i] += half;
            for &(j, p) in row {
                next[j] += half * p;
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff <= DIFF_TOL && sweep > 4 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    for x in &mut pi {
        *x /= total;
    }
    pi
}

/// Stationary distribution of the chain induced by `policy`, restricted
/// to the breadth-first closure of `(1, none)`.
///
/// Errors if the reachable set splits into more than one closed class
/// (no policy family in this crate produces one; it signals a malformed
/// policy table).
pub fn stationary_distribution(
    policy: &StationaryPolicy,
    params: &ModelParams,
) -> Result<StationaryDistribution, EvalError> {
    let (states, rows) = reachable_closure(policy, params)?;
    let closed = closed_class_count(&rows);
    if closed != 1 {
        return Err(EvalError::MultipleClosedClasses(closed));
    }

    let dense = if rows.len() <= DENSE_SOLVE_LIMIT {
        solve_dense(&rows)
    } else {
        None
    };
    let pi = match dense {
        Some(pi) if l1_residual(&rows, &pi) <= STATIONARY_RESIDUAL_TOL => pi,
        _ => solve_power(&rows),
    };
    let residual = l1_residual(&rows, &pi);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(EvalError::StationarySolveFailed { residual });
    }

    // report in enumeration order for reproducible serialization
    let space = StateSpace::new(params.v_max)?;
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by_key(|&i| space.index_of(states[i]).expect("state in range"));
    Ok(StationaryDistribution {
        states: order.iter().map(|&i| states[i]).collect(),
        probs: order.iter().map(|&i| pi[i]).collect(),
        residual,
    })
}

/// Exact long-run averages of a stationary policy: age is the stationary
/// mean of the monitor age, the sampling rate the stationary mass of
/// states where the policy samples.
pub fn evaluate_exact(
    policy: &StationaryPolicy,
    params: &ModelParams,
) -> Result<EvalResult, EvalError> {
    let dist = stationary_distribution(policy, params)?;
    let mut avg_age = 0.0;
    let mut rate = 0.0;
    for (s, p) in dist.iter() {
        avg_age += p * f64::from(s.v1());
        if policy.action(s) == Action::Sample {
            rate += p;
        }
    }
    Ok(EvalResult {
        avg_age,
        sampling_rate: rate,
        method: EvalMethod::Exact,
        ci_half_width: None,
        horizon: None,
        seed: None,
    })
}

/// Exact evaluation of a Bernoulli mixture: the `p`-convex combination of
/// its components' long-run averages.
pub fn evaluate_mixture(
    mixture: &MixturePolicy,
    params: &ModelParams,
) -> Result<EvalResult, EvalError> {
    let a = evaluate_exact(&mixture.policy_a, params)?;
    let b = evaluate_exact(&mixture.policy_b, params)?;
    let p = mixture.p();
    Ok(EvalResult {
        avg_age: p * a.avg_age + (1.0 - p) * b.avg_age,
        sampling_rate: p * a.sampling_rate + (1.0 - p) * b.sampling_rate,
        method: EvalMethod::Exact,
        ci_half_width: None,
        horizon: None,
        seed: None,
    })
}

// ── Monte Carlo simulation ────────────────────────────────────────────

/// Simulation knobs. The generator is ChaCha12 (`rand_chacha` 0.9),
/// seeded from the `seed` field; identical inputs give identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of slots, at least [`MIN_HORIZON`].
    pub horizon: u64,
    pub seed: u64,
    /// Slots discarded before the batch-means window.
    pub warmup: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1_000_000,
            seed: 1,
            warmup: 10_000,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(u64, u64), EvalError> {
        if self.horizon < MIN_HORIZON {
            return Err(EvalError::HorizonTooSmall {
                horizon: self.horizon,
                required: MIN_HORIZON,
            });
        }
        let required = self.warmup + NUM_BATCHES as u64;
        if self.horizon < required {
            return Err(EvalError::HorizonTooSmall {
                horizon: self.horizon,
                required,
            });
        }
        let batch_len = (self.horizon - self.warmup) / NUM_BATCHES as u64;
        Ok((batch_len, self.warmup))
    }
}

/// Simulates `sim.horizon` slots of the slot dynamics from `(1, none)`
/// with untruncated ages. The age average and its 95% batch-means
/// half-width cover the slots after warm-up (trailing slots beyond the
/// last full batch are excluded); the sampling rate counts over the whole
/// horizon.
pub fn simulate(
    policy: &StationaryPolicy,
    params: &ModelParams,
    sim: &SimConfig,
) -> Result<EvalResult, EvalError> {
    let (batch_len, warmup) = sim.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(sim.seed);
    let q = params.q;

    let mut v1: u64 = 1;
    let mut v2: Option<u64> = None;
    let mut batch_sums = vec![0.0f64; NUM_BATCHES];
    let used = batch_len * NUM_BATCHES as u64;
    let mut samples: u64 = 0;

    for t in 1..=sim.horizon {
        if t > warmup && t <= warmup + used {
            batch_sums[((t - warmup - 1) / batch_len) as usize] += v1 as f64;
        }
        match policy.action_clamped(v1, v2) {
            Action::Sample => {
                samples += 1;
                if rng.random::<f64>() < q {
                    v1 = 1;
                    v2 = None;
                } else {
                    v1 += 1;
                    v2 = Some(1);
                }
            }
            Action::Idle => match v2 {
                Some(age) => {
                    if rng.random::<f64>() < q {
                        v1 = age + 1;
                        v2 = None;
                    } else {
                        v1 += 1;
                        v2 = Some(age + 1);
                    }
                }
                None => v1 += 1,
            },
        }
    }

    let means: Vec<f64> = batch_sums.iter().map(|s| s / batch_len as f64).collect();
    let mean = means.iter().sum::<f64>() / NUM_BATCHES as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (NUM_BATCHES as f64 - 1.0);
    let half_width = T_CRIT_95_DF29 * (var / NUM_BATCHES as f64).sqrt();

    Ok(EvalResult {
        avg_age: mean,
        sampling_rate: samples as f64 / sim.horizon as f64,
        method: EvalMethod::MonteCarlo,
        ci_half_width: Some(half_width),
        horizon: Some(sim.horizon),
        seed: Some(sim.seed),
    })
}

/// Simulates a Bernoulli mixture. The branch is fixed once per run, so
/// each component is run on its own stream and the results are combined
/// analytically: the `p`-weighted mean, and half-widths composed as
/// `sqrt(p^2 hw_a^2 + (1-p)^2 hw_b^2)`.
pub fn simulate_mixture(
    mixture: &MixturePolicy,
    params: &ModelParams,
    sim: &SimConfig,
) -> Result<EvalResult, EvalError> {
    let p = mixture.p();
    if p == 1.0 {
        return simulate(&mixture.policy_a, params, sim);
    }
    if p == 0.0 {
        return simulate(&mixture.policy_b, params, sim);
    }
    let sim_b = SimConfig {
        // decorrelate the two branch streams deterministically
        seed: sim.seed ^ 0x9E37_79B9_7F4A_7C15,
        ..*sim
    };
    let a = simulate(&mixture.policy_a, params, sim)?;
    let b = simulate(&mixture.policy_b, params, &sim_b)?;
    let hw_a = a.ci_half_width.unwrap_or(0.0);
    let hw_b = b.ci_half_width.unwrap_or(0.0);
    Ok(EvalResult {
        avg_age: p * a.avg_age + (1.0 - p) * b.avg_age,
        sampling_rate: p * a.sampling_rate + (1.0 - p) * b.sampling_rate,
        method: EvalMethod::MonteCarlo,
        ci_half_width: Some((p * p * hw_a * hw_a + (1.0 - p) * (1.0 - p) * hw_b * hw_b).sqrt()),
        horizon: Some(sim.horizon),
        seed: Some(sim.seed),
    })
}

// ── Wait-and-sample rate matching ─────────────────────────────────────

/// Thresholds and weight chosen by [`rate_matched_wait_and_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitSampleTuning {
    pub tau: u32,
    /// Weight on the `tau` component (vs `tau + 1`).
    pub weight: f64,
}

/// Tunes a wait-and-sample mixture `(tau, tau + 1, weight)` to a sampling
/// budget by exact rate evaluation; the mixture rate is linear in the
/// weight, so the solve is a single linear equation.
///
/// The family's rate is capped at `q` (threshold one keeps the server busy
/// every slot), so when `f_max >= rate(tau = 1)` the fastest member is
/// returned pure: every member already satisfies the budget.
pub fn rate_matched_wait_and_sample(
    f_max: f64,
    params: &ModelParams,
) -> Result<(MixturePolicy, WaitSampleTuning), EvalError> {
    if !(f_max > 0.0 && f_max <= 1.0) {
        return Err(EvalError::Policy(PolicyError::InvalidBudget(f_max)));
    }
    let rate_of = |tau: u32| -> Result<(StationaryPolicy, f64), EvalError> {
        let policy = wait_and_sample_policy(tau, params)?;
        let rate = evaluate_exact(&policy, params)?.sampling_rate;
        Ok((policy, rate))
    };

    let (mut lo_policy, mut lo_rate) = rate_of(1)?;
    if lo_rate <= f_max {
        let tuning = WaitSampleTuning {
            tau: 1,
            weight: 1.0,
        };
        let mixture = MixturePolicy::new(lo_policy.clone(), lo_policy, 1.0)?;
        return Ok((mixture, tuning));
    }
    let mut tau = 1;
    loop {
        let (hi_policy, hi_rate) = rate_of(tau + 1)?;
        if hi_rate <= f_max {
            // lo_rate > f_max >= hi_rate: solve w lo + (1 - w) hi = f_max
            let weight = ((f_max - hi_rate) / (lo_rate - hi_rate)).clamp(0.0, 1.0);
            let tuning = WaitSampleTuning { tau, weight };
            return Ok((MixturePolicy::new(lo_policy, hi_policy, weight)?, tuning));
        }
        tau += 1;
        lo_policy = hi_policy;
        lo_rate = hi_rate;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::equidistant_policy;

    fn params(q: f64, v_max: u32) -> ModelParams {
        ModelParams::new(q, v_max, 1.0).unwrap()
    }

    #[test]
    fn equidistant_perfect_channel_hand_enumeration() {
        // d = 1, q = 1: the chain is the single state (1, none)
        let p = params(1.0, 20);
        let pol = equidistant_policy(1, &p).unwrap();
        let dist = stationary_distribution(&pol, &p).unwrap();
        assert_eq!(dist.len(), 1);
        let res = evaluate_exact(&pol, &p).unwrap();
        assert!((res.avg_age - 1.0).abs() < 1e-12);
        assert!((res.sampling_rate - 1.0).abs() < 1e-12);

        // d = 4, q = 1: one cycle with ages 1, 2, 3, 4
        let pol = equidistant_policy(4, &p).unwrap();
        let res = evaluate_exact(&pol, &p).unwrap();
        assert!((res.avg_age - 2.5).abs() < 1e-12);
        assert!((res.sampling_rate - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equidistant_matches_closed_form() {
        let p = params(0.5, 120);
        let pol = equidistant_policy(2, &p).unwrap();
        let res = evaluate_exact(&pol, &p).unwrap();
        assert!((res.avg_age - 2.5).abs() < 1e-10);
        assert!((res.sampling_rate - 0.5).abs() < 1e-10);
    }

    #[test]
    fn sampling_rate_is_reciprocal_period() {
        let p = params(0.5, 100);
        for d in [1u32, 2, 3, 5, 10, 25] {
            let pol = equidistant_policy(d, &p).unwrap();
            let res = evaluate_exact(&pol, &p).unwrap();
            assert!(
                (res.sampling_rate - 1.0 / d as f64).abs() < 1e-10,
                "d = {d}: rate {}",
                res.sampling_rate
            );
        }
    }

    #[test]
    fn stationary_residual_within_tolerance() {
        let p = params(0.3, 150);
        let pol = equidistant_policy(7, &p).unwrap();
        let dist = stationary_distribution(&pol, &p).unwrap();
        assert!(dist.residual() <= STATIONARY_RESIDUAL_TOL);
        let total: f64 = dist.iter().map(|(_, pr)| pr).sum();
        assert!((total - 1.0).abs() <= 1e-10);
        assert!(dist.iter().all(|(_, pr)| pr >= 0.0));
    }

    #[test]
    fn wait_and_sample_tau1_hand_value() {
        // renewal over geometric service: average age (2 - q) / q
        for q in [0.3, 0.5, 0.8] {
            let p = params(q, 150);
            let pol = wait_and_sample_policy(1, &p).unwrap();
            let res = evaluate_exact(&pol, &p).unwrap();
            assert!(
                (res.avg_age - (2.0 - q) / q).abs() < 1e-9,
                "q = {q}: {}",
                res.avg_age
            );
            assert!((res.sampling_rate - q).abs() < 1e-9);
        }
    }

    #[test]
    fn mixture_evaluation_is_convex_combination() {
        let p = params(0.5, 120);
        let a = equidistant_policy(2, &p).unwrap();
        let b = equidistant_policy(3, &p).unwrap();
        let degenerate = MixturePolicy::new(a.clone(), b.clone(), 1.0).unwrap();
        let pure = evaluate_exact(&a, &p).unwrap();
        let got = evaluate_mixture(&degenerate, &p).unwrap();
        assert!((got.avg_age - pure.avg_age).abs() < 1e-14);

        let mixture = MixturePolicy::new(a, b, 0.4).unwrap();
        let got = evaluate_mixture(&mixture, &p).unwrap();
        assert!((got.avg_age - 2.8).abs() < 1e-9);
        assert!((got.sampling_rate - 0.4).abs() < 1e-10);
    }

    #[test]
    fn rate_matched_wait_and_sample_meets_budget() {
        let p = params(0.5, 100);
        let (mixture, tuning) = rate_matched_wait_and_sample(0.3, &p).unwrap();
        let res = evaluate_mixture(&mixture, &p).unwrap();
        assert!((res.sampling_rate - 0.3).abs() < 1e-9);
        assert!(tuning.weight >= 0.0 && tuning.weight <= 1.0);
    }

    #[test]
    fn rate_matched_wait_and_sample_caps_at_family_maximum() {
        // the family's fastest member has rate q; budgets above that are
        // slack for every member
        let p = params(0.3, 100);
        let (mixture, tuning) = rate_matched_wait_and_sample(0.5, &p).unwrap();
        assert_eq!(tuning.tau, 1);
        assert_eq!(tuning.weight, 1.0);
        let res = evaluate_mixture(&mixture, &p).unwrap();
        assert!(res.sampling_rate <= 0.5);
        assert!((res.sampling_rate - 0.3).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_reproducible_and_near_exact() {
        let p = params(0.5, 100);
        let pol = equidistant_policy(2, &p).unwrap();
        let sim = SimConfig {
            horizon: 200_000,
            seed: 7,
            warmup: 10_000,
        };
        let r1 = simulate(&pol, &p, &sim).unwrap();
        let r2 = simulate(&pol, &p, &sim).unwrap();
        assert_eq!(r1, r2);
        let se = r1.ci_half_width.unwrap() / T_CRIT_95_DF29;
        assert!(
            (r1.avg_age - 2.5).abs() <= 3.0 * se,
            "sim {} vs exact 2.5 (se {se})",
            r1.avg_age
        );
    }

    #[test]
    fn simulation_perfect_channel_age_is_one() {
        let p = params(1.0, 20);
        let pol = equidistant_policy(1, &p).unwrap();
        let sim = SimConfig {
            horizon: 20_000,
            seed: 3,
            warmup: 10_000,
        };
        let res = simulate(&pol, &p, &sim).unwrap();
        assert_eq!(res.avg_age, 1.0);
        assert_eq!(res.sampling_rate, 1.0);
        assert_eq!(res.ci_half_width, Some(0.0));
    }

    #[test]
    fn simulation_sample_count_is_deterministic() {
        let p = params(0.5, 100);
        for d in [2u32, 3, 5] {
            let pol = equidistant_policy(d, &p).unwrap();
            let sim = SimConfig {
                horizon: 100_000,
                seed: 11,
                warmup: 10_000,
            };
            let res = simulate(&pol, &p, &sim).unwrap();
            let count = (res.sampling_rate * sim.horizon as f64).round() as u64;
            assert_eq!(count, (sim.horizon - u64::from(d)) / u64::from(d) + 1);
        }
    }

    #[test]
    fn simulation_rejects_short_horizons() {
        let p = params(0.5, 20);
        let pol = equidistant_policy(2, &p).unwrap();
        let sim = SimConfig {
            horizon: 100,
            seed: 1,
            warmup: 10,
        };
        assert!(matches!(
            simulate(&pol, &p, &sim),
            Err(EvalError::HorizonTooSmall { .. })
        ));
        let sim = SimConfig {
            horizon: 10_000,
            seed: 1,
            warmup: 10_000,
        };
        assert!(simulate(&pol, &p, &sim).is_err());
    }

    #[test]
    fn mixture_simulation_combines_branches() {
        let p = params(0.5, 100);
        let a = equidistant_policy(2, &p).unwrap();
        let b = equidistant_policy(3, &p).unwrap();
        let mixture = MixturePolicy::new(a, b, 0.4).unwrap();
        let sim = SimConfig {
            horizon: 400_000,
            seed: 5,
            warmup: 10_000,
        };
        let r1 = simulate_mixture(&mixture, &p, &sim).unwrap();
        let r2 = simulate_mixture(&mixture, &p, &sim).unwrap();
        assert_eq!(r1, r2);
        assert!((r1.avg_age - 2.8).abs() < 0.05);
        assert!((r1.sampling_rate - 0.4).abs() < 0.01);
    }
}
