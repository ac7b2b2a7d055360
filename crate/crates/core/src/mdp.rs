//! The sampling CMDP: states, actions, stage costs, and the one-slot
//! transition kernel, together with the finite truncation used by the
//! solvers and exact evaluators.
//!
//! A state pairs the monitor age `v1` with the age `v2` of the packet
//! currently held by the transmitter (`None` when the transmitter is
//! empty). Every slot the sampler either idles or samples a fresh packet;
//! the transmitter sends whatever it holds over a channel that delivers
//! with probability `q`, and feedback is instantaneous. Sampling preempts
//! the packet in service.
//!
//! Ages are truncated by saturation at `v_max`: successor ages are capped
//! with `min(age + 1, v_max)`, which keeps the chain closed and stochastic.
//! All operations here are pure; values are immutable after construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities of a single transition distribution must sum to one
/// within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Errors raised by model construction and kernel evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("monitor age must be at least 1, got {0}")]
    MonitorAgeZero(u32),

    #[error("packet age {v2} violates 1 <= v2 <= v1 = {v1}")]
    PacketAgeOutOfRange { v1: u32, v2: u32 },

    #[error("state {0} exceeds truncation cap v_max = {1}")]
    StateOutOfRange(State, u32),

    #[error("success probability q = {0} must lie in (0, 1]")]
    InvalidSuccessProbability(f64),

    #[error("sampling budget f_max = {0} must lie in (0, 1]")]
    InvalidSamplingBudget(f64),

    #[error("truncation cap v_max = {v_max} too small; need at least {needed}")]
    TruncationTooSmall { v_max: u32, needed: u32 },
}

/// Sampler decision for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Do not sample; the transmitter keeps retransmitting what it holds.
    Idle,
    /// Sample a fresh packet; it immediately enters service, replacing any
    /// packet already there.
    Sample,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Idle => write!(f, "idle"),
            Action::Sample => write!(f, "sample"),
        }
    }
}

/// A CMDP state: monitor age `v1`, and the in-service packet age `v2`
/// (`None` when the transmitter holds no packet).
///
/// Invariant: `v1 >= 1`, and when a packet is present `1 <= v2 <= v1`
/// (a packet can never be fresher than information already delivered).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(try_from = "RawState")]
pub struct State {
    v1: u32,
    v2: Option<u32>,
}

/// Unvalidated mirror of [`State`] used for deserialization.
#[derive(Deserialize)]
struct RawState {
    v1: u32,
    v2: Option<u32>,
}

impl TryFrom<RawState> for State {
    type Error = ModelError;

    fn try_from(raw: RawState) -> Result<Self, ModelError> {
        State::new(raw.v1, raw.v2)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = RawState::deserialize(deserializer)?;
        State::try_from(raw).map_err(serde::de::Error::custom)
    }
}

impl State {
    /// Validated constructor; `v2 = None` means the transmitter is empty.
    pub fn new(v1: u32, v2: Option<u32>) -> Result<Self, ModelError> {
        if v1 == 0 {
            return Err(ModelError::MonitorAgeZero(v1));
        }
        if let Some(v2) = v2 {
            if v2 == 0 || v2 > v1 {
                return Err(ModelError::PacketAgeOutOfRange { v1, v2 });
            }
        }
        Ok(State { v1, v2 })
    }

    /// State with a packet of age `v2` in service.
    pub fn with_packet(v1: u32, v2: u32) -> Result<Self, ModelError> {
        State::new(v1, Some(v2))
    }

    /// State with an empty transmitter.
    pub fn no_packet(v1: u32) -> Result<Self, ModelError> {
        State::new(v1, None)
    }

    /// Monitor age in slots.
    pub fn v1(&self) -> u32 {
        self.v1
    }

    /// In-service packet age in slots, `None` if the transmitter is empty.
    pub fn v2(&self) -> Option<u32> {
        self.v2
    }

    /// True when the transmitter holds a packet.
    pub fn has_packet(&self) -> bool {
        self.v2.is_some()
    }

    fn in_range(&self, v_max: u32) -> bool {
        self.v1 <= v_max && self.v2.map_or(true, |v2| v2 <= v_max)
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.v2 {
            Some(v2) => write!(f, "({}, {})", self.v1, v2),
            None => write!(f, "({}, -)", self.v1),
        }
    }
}

/// Model parameters shared by every solver and evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per-slot probability of successful delivery, in (0, 1].
    pub q: f64,
    /// Truncation cap on ages (saturating).
    pub v_max: u32,
    /// Long-run sampling-rate budget, in (0, 1].
    pub f_max: f64,
}

impl ModelParams {
    /// Validates `0 < q <= 1`, `0 < f_max <= 1`, and
    /// `v_max >= ceil(1 / f_max) + 2` so the budget is representable
    /// inside the truncated space.
    pub fn new(q: f64, v_max: u32, f_max: f64) -> Result<Self, ModelError> {
        if !(q > 0.0 && q <= 1.0) || !q.is_finite() {
            return Err(ModelError::InvalidSuccessProbability(q));
        }
        if !(f_max > 0.0 && f_max <= 1.0) || !f_max.is_finite() {
            return Err(ModelError::InvalidSamplingBudget(f_max));
        }
        let needed = (1.0 / f_max).ceil() as u32 + 2;
        if v_max < needed.max(2) {
            return Err(ModelError::TruncationTooSmall {
                v_max,
                needed: needed.max(2),
            });
        }
        Ok(ModelParams { q, v_max, f_max })
    }
}

/// One-slot successor distribution: `(state, probability)` pairs with
/// probabilities in (0, 1] summing to one. Zero-probability branches are
/// dropped (e.g. the failure branch when `q = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDist {
    pairs: Vec<(State, f64)>,
}

impl TransitionDist {
    fn new(pairs: Vec<(State, f64)>) -> Self {
        let pairs: Vec<_> = pairs.into_iter().filter(|&(_, p)| p > 0.0).collect();
        debug_assert!(
            (pairs.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs() <= PROB_SUM_TOL,
            "transition probabilities must sum to 1"
        );
        TransitionDist { pairs }
    }

    /// Successor states with their probabilities, in a fixed order
    /// (failure branch first, delivery branch last).
    pub fn pairs(&self) -> &[(State, f64)] {
        &self.pairs
    }

    /// Sum of probabilities (should be 1 up to rounding).
    pub fn total_mass(&self) -> f64 {
        self.pairs.iter().map(|&(_, p)| p).sum()
    }
}

/// One-slot transition kernel under truncation by saturation.
///
/// With a packet of age `v2` in service:
///   Sample: fresh packet replaces it; failure -> `(v1+1, 1)` with `1-q`,
///           delivery -> `(1, none)` with `q`.
///   Idle:   retransmission; failure -> `(v1+1, v2+1)` with `1-q`,
///           delivery -> `(v2+1, none)` with `q`. The two idle branches
///           must sum to one, so the delivery branch carries `q`.
/// With no packet, Sample behaves as above and Idle deterministically
/// ages the monitor. All successor ages saturate at `params.v_max`.
pub fn transition(s: State, a: Action, params: &ModelParams) -> Result<TransitionDist, ModelError> {
    if !s.in_range(params.v_max) {
        return Err(ModelError::StateOutOfRange(s, params.v_max));
    }
    let v_max = params.v_max;
    let q = params.q;
    let up = |age: u32| (age + 1).min(v_max);

    let pairs = match (a, s.v2) {
        (Action::Sample, _) => vec![
            (State::with_packet(up(s.v1), 1)?, 1.0 - q),
            (State::no_packet(1)?, q),
        ],
        (Action::Idle, Some(v2)) => vec![
            (State::with_packet(up(s.v1), up(v2))?, 1.0 - q),
            (State::no_packet(up(v2))?, q),
        ],
        (Action::Idle, None) => vec![(State::no_packet(up(s.v1))?, 1.0)],
    };
    Ok(TransitionDist::new(pairs))
}

/// Lagrangian stage cost `C1(s, a; lambda) = v1 + lambda * 1{a = Sample}`.
/// With `lambda = 0` this is the pure age cost, independent of the action.
pub fn stage_cost(s: State, a: Action, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    f64::from(s.v1) + if a == Action::Sample { lambda } else { 0.0 }
}

/// The truncated state space in a fixed deterministic order: row-major by
/// `v1`, packet ages `1..=v1` first, the no-packet state last in each row.
/// Size is `v_max (v_max + 1) / 2 + v_max`.
#[derive(Debug, Clone)]
pub struct StateSpace {
    v_max: u32,
    states: Vec<State>,
}

impl StateSpace {
    pub fn new(v_max: u32) -> Result<Self, ModelError> {
        if v_max < 2 {
            return Err(ModelError::TruncationTooSmall { v_max, needed: 2 });
        }
        let n = Self::size_for(v_max);
        let mut states = Vec::with_capacity(n);
        for v1 in 1..=v_max {
            for v2 in 1..=v1 {
                states.push(State { v1, v2: Some(v2) });
            }
            states.push(State { v1, v2: None });
        }
        debug_assert_eq!(states.len(), n);
        Ok(StateSpace { v_max, states })
    }

    /// Number of states for a given cap: `v_max (v_max + 1) / 2 + v_max`.
    pub fn size_for(v_max: u32) -> usize {
        let v = v_max as usize;
        v * (v + 1) / 2 + v
    }

    pub fn v_max(&self) -> u32 {
        self.v_max
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// States in enumeration order.
    pub fn states(&self) -> &[State] {
        &self.states
    }

    /// Position of `s` in enumeration order, `None` if out of range.
    ///
    /// Row `v1` starts at `(v1 - 1)(v1 + 2) / 2` and holds `v1 + 1` entries.
    pub fn index_of(&self, s: State) -> Option<usize> {
        if !s.in_range(self.v_max) {
            return None;
        }
        let v1 = s.v1 as usize;
        let row_start = (v1 - 1) * (v1 + 2) / 2;
        Some(match s.v2 {
            Some(v2) => row_start + (v2 as usize - 1),
            None => row_start + v1,
        })
    }

    /// State at enumeration position `idx`.
    pub fn state_at(&self, idx: usize) -> State {
        self.states[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(q: f64, v_max: u32) -> ModelParams {
        ModelParams::new(q, v_max, 1.0).unwrap()
    }

    #[test]
    fn state_invariants_enforced() {
        assert!(State::new(0, None).is_err());
        assert!(State::new(3, Some(0)).is_err());
        assert!(State::new(3, Some(4)).is_err());
        assert!(State::new(3, Some(3)).is_ok());
        assert!(State::new(1, None).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 10, 0.5).is_err());
        assert!(ModelParams::new(1.5, 10, 0.5).is_err());
        assert!(ModelParams::new(0.5, 10, 0.0).is_err());
        assert!(ModelParams::new(0.5, 10, 1.5).is_err());
        // v_max must be at least ceil(1/f_max) + 2
        assert!(ModelParams::new(0.5, 11, 0.1).is_err());
        assert!(ModelParams::new(0.5, 12, 0.1).is_ok());
    }

    #[test]
    fn sample_transition_with_packet() {
        // ((3,2), Sample, q=0.5) -> {(4,1): 0.5, (1,none): 0.5}
        let p = params(0.5, 50);
        let s = State::with_packet(3, 2).unwrap();
        let dist = transition(s, Action::Sample, &p).unwrap();
        assert_eq!(
            dist.pairs(),
            &[
                (State::with_packet(4, 1).unwrap(), 0.5),
                (State::no_packet(1).unwrap(), 0.5),
            ]
        );
    }

    #[test]
    fn idle_transition_no_packet_is_deterministic() {
        // ((3,none), Idle, any q) -> {(4,none): 1.0}
        for q in [0.1, 0.5, 1.0] {
            let p = params(q, 50);
            let s = State::no_packet(3).unwrap();
            let dist = transition(s, Action::Idle, &p).unwrap();
            assert_eq!(dist.pairs(), &[(State::no_packet(4).unwrap(), 1.0)]);
        }
    }

    #[test]
    fn idle_transition_with_packet_mass_conservation() {
        // ((3,2), Idle, q=0.25) -> {(4,3): 0.75, (3,none): 0.25}; the
        // one-slot outcomes are "not delivered" (both ages grow) and
        // "delivered" (monitor picks up the packet age plus one).
        let p = params(0.25, 50);
        let s = State::with_packet(3, 2).unwrap();
        let dist = transition(s, Action::Idle, &p).unwrap();
        assert_eq!(
            dist.pairs(),
            &[
                (State::with_packet(4, 3).unwrap(), 0.75),
                (State::no_packet(3).unwrap(), 0.25),
            ]
        );
    }

    #[test]
    fn perfect_channel_drops_zero_probability_branch() {
        let p = params(1.0, 50);
        let s = State::with_packet(5, 2).unwrap();
        let dist = transition(s, Action::Sample, &p).unwrap();
        assert_eq!(dist.pairs(), &[(State::no_packet(1).unwrap(), 1.0)]);
        let dist = transition(s, Action::Idle, &p).unwrap();
        assert_eq!(dist.pairs(), &[(State::no_packet(3).unwrap(), 1.0)]);
    }

    #[test]
    fn transition_rejects_out_of_range_state() {
        let p = params(0.5, 10);
        let s = State::with_packet(11, 2).unwrap();
        assert_eq!(
            transition(s, Action::Idle, &p),
            Err(ModelError::StateOutOfRange(s, 10))
        );
    }

    #[test]
    fn saturation_keeps_successors_in_range() {
        let p = params(0.5, 10);
        let s = State::with_packet(10, 10).unwrap();
        let dist = transition(s, Action::Idle, &p).unwrap();
        assert_eq!(
            dist.pairs(),
            &[
                (State::with_packet(10, 10).unwrap(), 0.5),
                (State::no_packet(10).unwrap(), 0.5),
            ]
        );
    }

    #[test]
    fn stage_cost_examples() {
        let s = State::with_packet(7, 3).unwrap();
        assert_eq!(stage_cost(s, Action::Idle, 2.5), 7.0);
        assert_eq!(stage_cost(s, Action::Sample, 2.5), 9.5);
        let s = State::no_packet(1).unwrap();
        assert_eq!(stage_cost(s, Action::Sample, 0.0), 1.0);
    }

    #[test]
    fn state_space_enumeration_v_max_2() {
        let space = StateSpace::new(2).unwrap();
        let expected = [
            State::with_packet(1, 1).unwrap(),
            State::no_packet(1).unwrap(),
            State::with_packet(2, 1).unwrap(),
            State::with_packet(2, 2).unwrap(),
            State::no_packet(2).unwrap(),
        ];
        assert_eq!(space.states(), &expected);
        assert_eq!(space.len(), 5);
    }

    #[test]
    fn state_space_sizes() {
        assert!(StateSpace::new(1).is_err());
        assert_eq!(StateSpace::new(3).unwrap().len(), 9);
        // formula check against explicit enumeration count
        let space = StateSpace::new(200).unwrap();
        assert_eq!(space.len(), 20_300);
        assert_eq!(space.len(), space.states().len());
    }

    #[test]
    fn index_of_is_inverse_of_enumeration() {
        let space = StateSpace::new(40).unwrap();
        for (i, &s) in space.states().iter().enumerate() {
            assert_eq!(space.index_of(s), Some(i));
        }
        assert_eq!(space.index_of(State::no_packet(41).unwrap()), None);
    }

    #[test]
    fn state_json_round_trip_rejects_invalid() {
        let s = State::with_packet(4, 2).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        let back: State = serde_json::from_str(&js).unwrap();
        assert_eq!(s, back);
        let bad: Result<State, _> = serde_json::from_str(r#"{"v1":2,"v2":5}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn transition_probabilities_sum_to_one(
            v1 in 1u32..30,
            packet in proptest::option::of(0u32..30),
            q in 0.01f64..=1.0,
            sample in proptest::bool::ANY,
        ) {
            let v2 = packet.map(|x| 1 + x % v1);
            let s = State::new(v1, v2).unwrap();
            let p = params(q, 30);
            let a = if sample { Action::Sample } else { Action::Idle };
            let dist = transition(s, a, &p).unwrap();
            prop_assert!((dist.total_mass() - 1.0).abs() <= PROB_SUM_TOL);
            for &(succ, prob) in dist.pairs() {
                prop_assert!(prob > 0.0 && prob <= 1.0);
                // closure: every successor of an in-range state is in-range
                prop_assert!(succ.v1() <= 30);
                prop_assert!(succ.v2().map_or(true, |v| v <= succ.v1()));
            }
        }

        #[test]
        fn monitor_age_only_resets_on_delivery(
            v1 in 1u32..30,
            packet in proptest::option::of(0u32..30),
            q in 0.01f64..0.999,
            sample in proptest::bool::ANY,
        ) {
            let v2 = packet.map(|x| 1 + x % v1);
            let s = State::new(v1, v2).unwrap();
            let p = params(q, 30);
            let a = if sample { Action::Sample } else { Action::Idle };
            for &(succ, _) in transition(s, a, &p).unwrap().pairs() {
                if succ.v1() < s.v1() + 1 {
                    // a drop in monitor age means a delivery emptied the
                    // transmitter; on the sample-success branch it is 1
                    prop_assert!(!succ.has_packet());
                    if a == Action::Sample {
                        prop_assert_eq!(succ.v1(), 1);
                    }
                }
            }
        }

        #[test]
        fn zero_lambda_cost_is_action_independent(
            v1 in 1u32..100,
            packet in proptest::option::of(0u32..100),
        ) {
            let v2 = packet.map(|x| 1 + x % v1);
            let s = State::new(v1, v2).unwrap();
            prop_assert_eq!(
                stage_cost(s, Action::Idle, 0.0),
                stage_cost(s, Action::Sample, 0.0)
            );
        }
    }
}
