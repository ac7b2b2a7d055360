//! Solver, evaluator, and simulator for discrete-time age-of-information
//! minimization under a sampling-rate constraint.
//!
//! A sampler decides each slot whether to draw a fresh update packet; the
//! transmitter sends whatever it holds over a channel that delivers with
//! probability `q`, and the monitor's age resets to the delivered packet's
//! age. Sampling is limited to a long-run rate budget `f_max`.
//!
//! The crate provides:
//!
//! - [`mdp`]: the constrained-MDP model (states, actions, stage costs,
//!   transition kernel) and its saturating finite truncation;
//! - [`policy`]: the equidistant sampling family, its rate-matched
//!   Bernoulli mixture, the wait-and-sample comparison family, and the
//!   closed-form equidistant average age;
//! - [`solver`]: discounted value iteration, damped relative value
//!   iteration for the average-cost problem, the Lagrange-multiplier
//!   bisection, and the idle/sample indifference multiplier;
//! - [`eval`]: exact policy evaluation through stationary distributions
//!   and a slot-level Monte Carlo simulator with batch-means confidence
//!   intervals;
//! - [`checks`]: numerical verification of the structural properties of
//!   converged value tables and greedy policies.

pub mod checks;
pub mod eval;
pub mod mdp;
pub mod policy;
pub mod solver;

pub use checks::{
    check_always_sample_at_zero_lambda, check_concavity_second_differences,
    check_difference_bounds, check_monotonicity, check_no_packet_equivalence,
    check_threshold_structure, run_structure_suite, CheckConfig, CheckReport, SuiteConfig,
};
pub use eval::{
    evaluate_exact, evaluate_mixture, rate_matched_wait_and_sample, simulate, simulate_mixture,
    stationary_distribution, EvalError, EvalMethod, EvalResult, SimConfig,
    StationaryDistribution, WaitSampleTuning, MIN_HORIZON,
};
pub use mdp::{
    stage_cost, transition, Action, ModelError, ModelParams, State, StateSpace, TransitionDist,
};
pub use policy::{
    closed_form_age, equidistant_mixture, equidistant_period, equidistant_policy, mixture_age,
    wait_and_sample_policy, EquidistantSpec, MixturePolicy, PolicyDocument, PolicyEntry,
    PolicyError, StationaryPolicy,
};
pub use solver::{
    bellman_backup, bisect_lambda, discounted_vi, extract_greedy, find_indifference_lambda,
    relative_vi, GreedyPolicy, SolveReport, SolverError, SolverKnobs, ValueKind, ValueTable,
    DEFAULT_DISCOUNTED_TOL, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_MAX_ITER,
    DEFAULT_RELATIVE_TOL,
};
