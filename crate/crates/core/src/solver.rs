//! Dynamic-programming solvers for the sampling MDP.
//!
//! `discounted_vi` iterates the discounted Bellman operator
//!
//! ```text
//!     V_{n+1}(s) = min_a { C1(s, a; lambda) + alpha sum_s' P_a(s, s') V_n(s') }
//! ```
//!
//! from `V_0 = 0`. `relative_vi` solves the average-cost problem with a
//! damped relative iteration anchored at the reference state `t = (1, none)`:
//!
//! ```text
//!     h_{n+1}(s) = (1 - gamma) h_n(s) + T_gamma(h_n)(s) - T_gamma(h_n)(t),
//! ```
//!
//! where `T_gamma(h)(s) = min_a { C1(s, a; lambda) + gamma sum P_a h }`; the
//! subtracted reference minimum converges to the optimal average cost
//! `tau`. `bisect_lambda` searches the Lagrange multiplier for a sampling
//! budget and mixes the two bracketing policies; `find_indifference_lambda`
//! locates the multiplier at which idling and sampling tie at a no-packet
//! state.
//!
//! All solves are single-threaded with a fixed iteration order, so
//! identical inputs produce bitwise identical outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate_exact, EvalError};
use crate::mdp::{stage_cost, transition, Action, ModelError, ModelParams, State, StateSpace};
use crate::policy::{MixturePolicy, PolicyError, StationaryPolicy};

pub const DEFAULT_DISCOUNTED_TOL: f64 = 1e-9;
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-8;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Two one-step action values are flagged as tied below this relative gap.
const TIE_REL_TOL: f64 = 1e-9;

/// Multiplier ceiling for adaptive doubling brackets.
const LAMBDA_CEILING: f64 = 1e9;

/// Tolerance of the discounted solves inside `find_indifference_lambda`.
const INDIFFERENCE_VI_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("discount factor alpha = {0} must lie in (0, 1)")]
    InvalidDiscount(f64),

    #[error("damping factor gamma = {0} must lie in (0, 1)")]
    InvalidDamping(f64),

    #[error("tolerance {0} must be positive and finite")]
    InvalidTolerance(f64),

    #[error("lambda = {0} must be nonnegative and finite")]
    InvalidLambda(f64),

    #[error("sampling budget f_max = {0} must lie in (0, 1]")]
    InvalidBudget(f64),

    #[error("value table has {got} entries, expected {expected}")]
    WrongTableSize { got: usize, expected: usize },

    #[error(
        "no indifference multiplier below {ceiling:.1e} for v1 = {v1} at alpha = {alpha}; \
         the monitor age is below the smallest meaningful threshold at this discount"
    )]
    BracketFailure { alpha: f64, v1: u32, ceiling: f64 },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// What a [`ValueTable`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Discounted value function `V_alpha`.
    Discounted,
    /// Relative value function `h`, zero at the reference state `(1, none)`.
    Relative,
}

/// A total map from the truncated state space to values, in enumeration
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    kind: ValueKind,
    v_max: u32,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn from_values(kind: ValueKind, v_max: u32, values: Vec<f64>) -> Result<Self, SolverError> {
        let expected = StateSpace::size_for(v_max);
        if values.len() != expected {
            return Err(SolverError::WrongTableSize {
                got: values.len(),
                expected,
            });
        }
        Ok(ValueTable {
            kind,
            v_max,
            values,
        })
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn v_max(&self) -> u32 {
        self.v_max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at a state of the truncated space.
    pub fn value(&self, s: State) -> f64 {
        let row_start = (s.v1() as usize - 1) * (s.v1() as usize + 2) / 2;
        let idx = match s.v2() {
            Some(v2) => row_start + v2 as usize - 1,
            None => row_start + s.v1() as usize,
        };
        assert!(
            s.v1() <= self.v_max,
            "state {s} outside table domain (v_max = {})",
            self.v_max
        );
        self.values[idx]
    }
}

/// Convergence report of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Backup sweeps performed (for `bisect_lambda`, multiplier probes).
    pub iterations: usize,
    /// Final sup-norm (discounted), span (relative), or bracket width
    /// (bisection) of successive iterates.
    pub residual: f64,
    /// Converged average-cost estimate (relative solver only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub converged: bool,
}

/// A policy extracted by per-state minimization of the one-step lookahead,
/// with a per-state flag for (near-)tied action values. Ties resolve to
/// sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    pub policy: StationaryPolicy,
    ties: Vec<bool>,
}

impl GreedyPolicy {
    /// Wraps an arbitrary policy with no tie flags (harness self-tests).
    pub fn untied(policy: StationaryPolicy) -> Self {
        let ties = vec![false; StateSpace::size_for(policy.v_max())];
        GreedyPolicy { policy, ties }
    }

    pub fn ties(&self) -> &[bool] {
        &self.ties
    }

    pub fn tie_count(&self) -> usize {
        self.ties.iter().filter(|&&t| t).count()
    }
}

// ── Precomputed kernel ────────────────────────────────────────────────

/// At most two successor branches per state-action; absent branches carry
/// probability zero so the expectation is branchless.
#[derive(Debug, Clone, Copy)]
struct Branches {
    idx_a: u32,
    p_a: f64,
    idx_b: u32,
    p_b: f64,
}

impl Branches {
    #[inline]
    fn expect(&self, values: &[f64]) -> f64 {
        self.p_a * values[self.idx_a as usize] + self.p_b * values[self.idx_b as usize]
    }
}

struct Kernel {
    space: StateSpace,
    cost: Vec<f64>,
    idle: Vec<Branches>,
    sample: Vec<Branches>,
}

impl Kernel {
    fn build(params: &ModelParams) -> Result<Self, SolverError> {
        let space = StateSpace::new(params.v_max)?;
        let n = space.len();
        let mut cost = Vec::with_capacity(n);
        let mut idle = Vec::with_capacity(n);
        let mut sample = Vec::with_capacity(n);
        for &s in space.states() {
            cost.push(f64::from(s.v1()));
            for (action, out) in [(Action::Idle, &mut idle), (Action::Sample, &mut sample)] {
                let dist = transition(s, action, params)?;
                let pairs = dist.pairs();
                let (idx_a, p_a) = (
                    space.index_of(pairs[0].0).expect("successor in range") as u32,
                    pairs[0].1,
                );
                let (idx_b, p_b) = match pairs.get(1) {
                    Some(&(succ, p)) => (
                        space.index_of(succ).expect("successor in range") as u32,
                        p,
                    ),
                    None => (0, 0.0),
                };
                out.push(Branches {
                    idx_a,
                    p_a,
                    idx_b,
                    p_b,
                });
            }
        }
        Ok(Kernel {
            space,
            cost,
            idle,
            sample,
        })
    }

    fn n(&self) -> usize {
        self.space.len()
    }

    /// `min_a { C1(s, a; lambda) + beta * E[values] }` for every state.
    fn lookahead_into(&self, beta: f64, lambda: f64, values: &[f64], out: &mut [f64]) {
        for i in 0..self.n() {
            let q_idle = self.cost[i] + beta * self.idle[i].expect(values);
            let q_sample = self.cost[i] + lambda + beta * self.sample[i].expect(values);
            out[i] = q_idle.min(q_sample);
        }
    }

    /// Per-state argmin of the lookahead, ties to `Sample`.
    fn greedy(
        &self,
        beta: f64,
        lambda: f64,
        values: &[f64],
        label: String,
    ) -> Result<GreedyPolicy, SolverError> {
        let mut actions = Vec::with_capacity(self.n());
        let mut ties = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let q_idle = self.cost[i] + beta * self.idle[i].expect(values);
            let q_sample = self.cost[i] + lambda + beta * self.sample[i].expect(values);
            actions.push(if q_sample <= q_idle {
                Action::Sample
            } else {
                Action::Idle
            });
            ties.push((q_sample - q_idle).abs() <= TIE_REL_TOL * (1.0 + q_sample.abs()));
        }
        let policy = StationaryPolicy::from_actions(label, self.space.v_max(), actions)?;
        Ok(GreedyPolicy { policy, ties })
    }
}

fn check_common(lambda: f64, tol: f64) -> Result<(), SolverError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SolverError::InvalidLambda(lambda));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(SolverError::InvalidTolerance(tol));
    }
    Ok(())
}

/// One discounted Bellman backup of `values`. Exposed so callers can
/// inspect individual iterates (the solver applies exactly this map).
pub fn bellman_backup(
    values: &[f64],
    alpha: f64,
    lambda: f64,
    params: &ModelParams,
) -> Result<Vec<f64>, SolverError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SolverError::InvalidDiscount(alpha));
    }
    check_common(lambda, 1.0)?;
    let kernel = Kernel::build(params)?;
    if values.len() != kernel.n() {
        return Err(SolverError::WrongTableSize {
            got: values.len(),
            expected: kernel.n(),
        });
    }
    let mut out = vec![0.0; kernel.n()];
    kernel.lookahead_into(alpha, lambda, values, &mut out);
    Ok(out)
}

/// Greedy policy of the one-step lookahead at `table` with continuation
/// weight `beta` (the solve's `alpha` or `gamma`). Recomputing this at a
/// solver's output table reproduces the returned actions.
pub fn extract_greedy(
    table: &ValueTable,
    beta: f64,
    lambda: f64,
    params: &ModelParams,
) -> Result<GreedyPolicy, SolverError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(SolverError::InvalidDiscount(beta));
    }
    check_common(lambda, 1.0)?;
    let kernel = Kernel::build(params)?;
    if table.values().len() != kernel.n() {
        return Err(SolverError::WrongTableSize {
            got: table.values().len(),
            expected: kernel.n(),
        });
    }
    kernel.greedy(
        beta,
        lambda,
        table.values(),
        format!("greedy(lambda={lambda}, beta={beta})"),
    )
}

/// Discounted value iteration from `V_0 = 0` until the sup-norm of
/// successive iterates is at most `tol` (or `max_iter` sweeps).
///
/// Returns the final table, its greedy policy, and a report; on
/// non-convergence the table is still returned with `converged = false`.
pub fn discounted_vi(
    alpha: f64,
    lambda: f64,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueTable, GreedyPolicy, SolveReport), SolverError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SolverError::InvalidDiscount(alpha));
    }
    check_common(lambda, tol)?;
    let kernel = Kernel::build(params)?;
    let n = kernel.n();
    let mut values = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        kernel.lookahead_into(alpha, lambda, &values, &mut next);
        iterations += 1;
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            break;
        }
    }
    let converged = residual <= tol;
    let greedy = kernel.greedy(
        alpha,
        lambda,
        &values,
        format!("vi_greedy(alpha={alpha}, lambda={lambda})"),
    )?;
    let table = ValueTable {
        kind: ValueKind::Discounted,
        v_max: params.v_max,
        values,
    };
    let report = SolveReport {
        iterations,
        residual,
        tau: None,
        lambda,
        alpha: Some(alpha),
        converged,
    };
    Ok((table, greedy, report))
}

/// Relative value iteration from `h_0 = 0`; see the module docs for the
/// recursion. Stops when the span of successive differences is at most
/// `tol`; `tau` is the subtracted reference minimum at the last sweep,
/// which brackets the optimal average cost within the span.
pub fn relative_vi(
    lambda: f64,
    gamma: f64,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueTable, GreedyPolicy, SolveReport), SolverError> {
    relative_vi_from(None, lambda, gamma, params, tol, max_iter)
}

/// Warm-started variant used by the multiplier search; `relative_vi`
/// passes `None` for the contractual all-zero start.
pub(crate) fn relative_vi_from(
    init: Option<&[f64]>,
    lambda: f64,
    gamma: f64,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueTable, GreedyPolicy, SolveReport), SolverError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(SolverError::InvalidDamping(gamma));
    }
    check_common(lambda, tol)?;
    let kernel = Kernel::build(params)?;
    let n = kernel.n();
    let reference = kernel
        .space
        .index_of(State::no_packet(1).expect("valid reference state"))
        .expect("reference state in range");

    let mut h = match init {
        Some(init) if init.len() == n => init.to_vec(),
        Some(init) => {
            return Err(SolverError::WrongTableSize {
                got: init.len(),
                expected: n,
            })
        }
        None => vec![0.0f64; n],
    };
    let mut lookahead = vec![0.0f64; n];

    let mut iterations = 0;
    let mut span = f64::INFINITY;
    let mut tau = f64::NAN;
    while iterations < max_iter {
        kernel.lookahead_into(gamma, lambda, &h, &mut lookahead);
        iterations += 1;
        tau = lookahead[reference];
        // h_{n+1} - h_n = lookahead - gamma h - tau; its span bounds the
        // distance of tau from the optimal average cost
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let delta = lookahead[i] - gamma * h[i] - tau;
            h[i] += delta;
            lo = lo.min(delta);
            hi = hi.max(delta);
        }
        span = hi - lo;
        if span <= tol {
            break;
        }
    }
    let converged = span <= tol;
    let greedy = kernel.greedy(
        gamma,
        lambda,
        &h,
        format!("rvi_greedy(lambda={lambda}, gamma={gamma})"),
    )?;
    let table = ValueTable {
        kind: ValueKind::Relative,
        v_max: params.v_max,
        values: h,
    };
    let report = SolveReport {
        iterations,
        residual: span,
        tau: Some(tau),
        lambda,
        alpha: None,
        converged,
    };
    Ok((table, greedy, report))
}

/// Knobs of the relative-value-iteration solves driven by
/// [`bisect_lambda`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverKnobs {
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        SolverKnobs {
            gamma: DEFAULT_GAMMA,
            tol: DEFAULT_RELATIVE_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Bisection search on the Lagrange multiplier for a sampling budget.
///
/// Starts from `lambda- = 0`; if the unconstrained policy already meets
/// the budget the pure `lambda = 0` policy is returned. Otherwise
/// `lambda+` is found by doubling from 1 until its policy's exact rate
/// drops to the budget, the bracket is bisected (rate below budget moves
/// `lambda+`, above moves `lambda-`, exact equality terminates) until its
/// width is below `epsilon`, and the two bracket policies are mixed with
/// the weight solving `p s- + (1 - p) s+ = f_max`, clamped to `[0, 1]`.
///
/// Rates are exact (stationary-distribution) evaluations of each probe's
/// greedy policy. Probes after the first warm-start the relative solver
/// from the previous table; the fixed point is unchanged and the probe
/// sequence is deterministic.
pub fn bisect_lambda(
    f_max: f64,
    params: &ModelParams,
    epsilon: f64,
    knobs: &SolverKnobs,
) -> Result<(MixturePolicy, SolveReport), SolverError> {
    if !(f_max > 0.0 && f_max <= 1.0) || !f_max.is_finite() {
        return Err(SolverError::InvalidBudget(f_max));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(SolverError::InvalidTolerance(epsilon));
    }

    let mut probes = 0usize;
    let mut all_converged = true;
    let mut warm: Option<Vec<f64>> = None;
    let mut last_tau = None;
    // adjacent probes usually land on the same policy plateau; reuse its
    // exact rate instead of re-solving the stationary distribution
    let rate_cache: std::cell::RefCell<std::collections::HashMap<Vec<Action>, f64>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
    let solve_at = |lambda: f64,
                        warm: &mut Option<Vec<f64>>,
                        probes: &mut usize,
                        all_converged: &mut bool,
                        last_tau: &mut Option<f64>|
     -> Result<(StationaryPolicy, f64), SolverError> {
        let (table, greedy, report) = relative_vi_from(
            warm.as_deref(),
            lambda,
            knobs.gamma,
            params,
            knobs.tol,
            knobs.max_iter,
        )?;
        *probes += 1;
        *all_converged &= report.converged;
        *last_tau = report.tau;
        *warm = Some(table.values().to_vec());
        let cached = rate_cache.borrow().get(greedy.policy.actions()).copied();
        let rate = match cached {
            Some(rate) => rate,
            None => {
                let rate = evaluate_exact(&greedy.policy, params)?.sampling_rate;
                rate_cache
                    .borrow_mut()
                    .insert(greedy.policy.actions().to_vec(), rate);
                rate
            }
        };
        Ok((greedy.policy, rate))
    };

    let (policy0, rate0) = solve_at(0.0, &mut warm, &mut probes, &mut all_converged, &mut last_tau)?;
    if rate0 <= f_max {
        // budget slack at lambda = 0: the unconstrained policy stands alone
        let mixture = MixturePolicy::new(policy0.clone(), policy0, 1.0)?;
        let report = SolveReport {
            iterations: probes,
            residual: 0.0,
            tau: last_tau,
            lambda: 0.0,
            alpha: None,
            converged: all_converged,
        };
        return Ok((mixture, report));
    }

    let mut lo = 0.0f64;
    let (mut lo_policy, mut lo_rate) = (policy0, rate0);
    let mut hi = 1.0f64;
    let (mut hi_policy, mut hi_rate) = loop {
        let (policy, rate) = solve_at(hi, &mut warm, &mut probes, &mut all_converged, &mut last_tau)?;
        if rate <= f_max {
            break (policy, rate);
        }
        hi *= 2.0;
        if hi > LAMBDA_CEILING {
            return Err(SolverError::BracketFailure {
                alpha: f64::NAN,
                v1: 0,
                ceiling: LAMBDA_CEILING,
            });
        }
    };

    while hi - lo >= epsilon {
        let mid = 0.5 * (lo + hi);
        let (policy, rate) = solve_at(mid, &mut warm, &mut probes, &mut all_converged, &mut last_tau)?;
        if rate < f_max {
            hi = mid;
            hi_policy = policy;
            hi_rate = rate;
        } else if rate > f_max {
            lo = mid;
            lo_policy = policy;
            lo_rate = rate;
        } else {
            lo = mid;
            hi = mid;
            lo_policy = policy.clone();
            lo_rate = rate;
            hi_policy = policy;
            hi_rate = rate;
            break;
        }
    }

    // p s- + (1 - p) s+ = f_max; rates can coincide on a plateau, in which
    // case any weight gives the same chain
    let p = if lo_rate == hi_rate {
        1.0
    } else {
        ((f_max - hi_rate) / (lo_rate - hi_rate)).clamp(0.0, 1.0)
    };
    let mixture = MixturePolicy::new(lo_policy, hi_policy, p)?;
    let report = SolveReport {
        iterations: probes,
        residual: hi - lo,
        tau: last_tau,
        lambda: 0.5 * (lo + hi),
        alpha: None,
        converged: all_converged,
    };
    Ok((mixture, report))
}

/// Difference of the one-step discounted action values at `(v1, none)`:
/// positive while sampling is strictly preferred.
fn action_value_gap(
    alpha: f64,
    lambda: f64,
    v1: u32,
    params: &ModelParams,
) -> Result<f64, SolverError> {
    let (table, _, _) = discounted_vi(alpha, lambda, params, INDIFFERENCE_VI_TOL, DEFAULT_MAX_ITER)?;
    let kernel = Kernel::build(params)?;
    let s = State::no_packet(v1)?;
    let idx = kernel
        .space
        .index_of(s)
        .ok_or(ModelError::StateOutOfRange(s, params.v_max))?;
    let q_idle = stage_cost(s, Action::Idle, lambda) + alpha * kernel.idle[idx].expect(table.values());
    let q_sample =
        stage_cost(s, Action::Sample, lambda) + alpha * kernel.sample[idx].expect(table.values());
    Ok(q_idle - q_sample)
}

/// Smallest multiplier (within `tol`) at which idling and sampling have
/// equal discounted action values at `(v1, none)`, located by bisection
/// with a fresh converged discounted solve per probe.
///
/// At `lambda = 0` sampling is weakly preferred at every state, so zero is
/// a valid lower bracket; the upper bracket doubles from 1 until idling is
/// strictly preferred and errors out at a ceiling if it never is.
pub fn find_indifference_lambda(
    alpha: f64,
    v1: u32,
    params: &ModelParams,
    tol: f64,
) -> Result<f64, SolverError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SolverError::InvalidDiscount(alpha));
    }
    check_common(0.0, tol)?;
    if v1 == 0 || v1 > params.v_max {
        return Err(SolverError::Model(ModelError::StateOutOfRange(
            State::no_packet(v1.max(1))?,
            params.v_max,
        )));
    }

    if action_value_gap(alpha, 0.0, v1, params)? <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    while action_value_gap(alpha, hi, v1, params)? >= 0.0 {
        hi *= 2.0;
        if hi > LAMBDA_CEILING {
            return Err(SolverError::BracketFailure {
                alpha,
                v1,
                ceiling: LAMBDA_CEILING,
            });
        }
    }
    let mut lo = 0.0f64;
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if action_value_gap(alpha, mid, v1, params)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
