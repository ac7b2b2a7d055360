//! Sampling policies: the equidistant family and its rate-matched
//! Bernoulli mixture, a wait-and-sample comparison family, and the
//! closed-form average age of equidistant sampling.
//!
//! The equidistant policy with period `d` samples a fresh packet every
//! `d` slots regardless of channel feedback. When the budget `f_max` is
//! not the reciprocal of an integer, two adjacent periods `d` and `d + 1`
//! are mixed: one of them is chosen once at the first slot (probability
//! `p` for period `d`) and followed forever, with `p` solving
//!
//! ```text
//!     p / d + (1 - p) / (d + 1) = f_max.
//! ```
//!
//! Policies are immutable after construction and safe to share across
//! threads; all constructors are pure.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mdp::{Action, ModelError, ModelParams, State, StateSpace};

/// Tolerance used to detect an integer `1 / f_max` arriving from config
/// text with rounding.
pub const PERIOD_INTEGER_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("sampling budget f_max = {0} must lie in (0, 1]")]
    InvalidBudget(f64),

    #[error("period {period} must satisfy 1 <= period <= v_max - 1 = {limit}")]
    PeriodOutOfRange { period: u32, limit: u32 },

    #[error("mixing probability p = {0} must lie in [0, 1]")]
    InvalidMixWeight(f64),

    #[error("policy table has {got} entries, expected {expected} for v_max = {v_max}")]
    WrongTableSize {
        got: usize,
        expected: usize,
        v_max: u32,
    },

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A deterministic stationary policy: a total map from the truncated state
/// space to actions, stored in state-space enumeration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationaryPolicy {
    label: String,
    v_max: u32,
    actions: Vec<Action>,
}

impl StationaryPolicy {
    /// Builds a policy by evaluating `decide` on every state of the
    /// truncated space.
    pub fn from_fn(
        label: impl Into<String>,
        v_max: u32,
        decide: impl Fn(State) -> Action,
    ) -> Result<Self, PolicyError> {
        let space = StateSpace::new(v_max)?;
        let actions = space.states().iter().map(|&s| decide(s)).collect();
        Ok(StationaryPolicy {
            label: label.into(),
            v_max,
            actions,
        })
    }

    /// Builds a policy from a pre-computed action table in enumeration
    /// order.
    pub fn from_actions(
        label: impl Into<String>,
        v_max: u32,
        actions: Vec<Action>,
    ) -> Result<Self, PolicyError> {
        let expected = StateSpace::size_for(v_max);
        if v_max < 2 || actions.len() != expected {
            return Err(PolicyError::WrongTableSize {
                got: actions.len(),
                expected,
                v_max,
            });
        }
        Ok(StationaryPolicy {
            label: label.into(),
            v_max,
            actions,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn v_max(&self) -> u32 {
        self.v_max
    }

    /// Action table in state-space enumeration order.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Action at a state of the truncated space.
    ///
    /// Panics if `s` lies outside the space the policy was built for.
    pub fn action(&self, s: State) -> Action {
        let row_start = (s.v1() as usize - 1) * (s.v1() as usize + 2) / 2;
        let idx = match s.v2() {
            Some(v2) => row_start + v2 as usize - 1,
            None => row_start + s.v1() as usize,
        };
        assert!(
            s.v1() <= self.v_max && idx < self.actions.len(),
            "state {s} outside policy domain (v_max = {})",
            self.v_max
        );
        self.actions[idx]
    }

    /// Action for a possibly untruncated state, saturating both ages at
    /// `v_max` for the lookup. Used by the simulator, whose ages are
    /// plain integers.
    pub fn action_clamped(&self, v1: u64, v2: Option<u64>) -> Action {
        let cap = u64::from(self.v_max);
        let v1c = v1.min(cap) as u32;
        let v2c = v2.map(|v| v.min(cap) as u32);
        let s = State::new(v1c, v2c).expect("clamped state is valid");
        self.action(s)
    }
}

/// Two stationary policies with a Bernoulli mixing probability: policy
/// `a` is chosen with probability `p` once at the first slot and kept for
/// the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    pub policy_a: StationaryPolicy,
    pub policy_b: StationaryPolicy,
    p: f64,
}

impl MixturePolicy {
    pub fn new(
        policy_a: StationaryPolicy,
        policy_b: StationaryPolicy,
        p: f64,
    ) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(PolicyError::InvalidMixWeight(p));
        }
        Ok(MixturePolicy {
            policy_a,
            policy_b,
            p,
        })
    }

    /// Probability of following `policy_a`.
    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Sampling period `d` and the weight `p` on period `d` (vs `d + 1`)
/// that meets a budget exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquidistantSpec {
    pub d: u32,
    pub p: f64,
}

/// Splits a budget into adjacent periods: returns `(d, 1)` when
/// `1 / f_max` is an integer `d` (within [`PERIOD_INTEGER_TOL`]), else
/// `d = floor(1 / f_max)` and `p = f_max d (d + 1) - d`, the solution of
/// `p / d + (1 - p) / (d + 1) = f_max`.
pub fn equidistant_period(f_max: f64) -> Result<EquidistantSpec, PolicyError> {
    if !(f_max > 0.0 && f_max <= 1.0) || !f_max.is_finite() {
        return Err(PolicyError::InvalidBudget(f_max));
    }
    let inv = 1.0 / f_max;
    let nearest = inv.round();
    if (inv - nearest).abs() <= PERIOD_INTEGER_TOL && nearest >= 1.0 {
        return Ok(EquidistantSpec {
            d: nearest as u32,
            p: 1.0,
        });
    }
    let d = inv.floor() as u32;
    let p = f_max * (d as f64) * (d as f64 + 1.0) - d as f64;
    Ok(EquidistantSpec { d, p })
}

/// The period-`d` equidistant policy: sample when the in-service packet
/// age reaches `d`, or when the transmitter is empty and the monitor age
/// reaches `d`. Ties at the threshold sample. Started from `(1, none)`,
/// the induced trajectory samples exactly every `d` slots.
pub fn equidistant_policy(d: u32, params: &ModelParams) -> Result<StationaryPolicy, PolicyError> {
    if d == 0 || d >= params.v_max {
        return Err(PolicyError::PeriodOutOfRange {
            period: d,
            limit: params.v_max.saturating_sub(1),
        });
    }
    StationaryPolicy::from_fn(format!("equidistant(d={d})"), params.v_max, move |s| {
        let trigger = match s.v2() {
            Some(v2) => v2 >= d,
            None => s.v1() >= d,
        };
        if trigger {
            Action::Sample
        } else {
            Action::Idle
        }
    })
}

/// The wait-and-sample policy: sample only when the transmitter is empty
/// and the monitor age reaches `tau`; never preempt a packet in service.
pub fn wait_and_sample_policy(
    tau: u32,
    params: &ModelParams,
) -> Result<StationaryPolicy, PolicyError> {
    if tau == 0 || tau >= params.v_max {
        return Err(PolicyError::PeriodOutOfRange {
            period: tau,
            limit: params.v_max.saturating_sub(1),
        });
    }
    StationaryPolicy::from_fn(
        format!("wait_and_sample(tau={tau})"),
        params.v_max,
        move |s| {
            if !s.has_packet() && s.v1() >= tau {
                Action::Sample
            } else {
                Action::Idle
            }
        },
    )
}

/// Long-run average monitor age of the period-`d` equidistant policy
/// started from `(1, none)`: `(d - 1) / 2 + 1 / q`.
///
/// Renewal argument over `d`-slot cycles: the packet sampled at a cycle
/// start is delivered after `M = min(Geom(q), d)` transmission slots, the
/// cycle age-sum is `M a + d (d - 1) / 2` for cycle-start age `a` with
/// stationary mean `d / (1 - (1-q)^d)`, and `E[M] = (1 - (1-q)^d) / q`,
/// so the cross term telescopes to `d / q`.
pub fn closed_form_age(d: u32, q: f64) -> f64 {
    assert!(d >= 1, "period must be positive");
    assert!(q > 0.0 && q <= 1.0, "q must lie in (0, 1]");
    (d as f64 - 1.0) / 2.0 + 1.0 / q
}

/// Average age of the rate-matched equidistant mixture: the `p`-convex
/// combination of the period-`d` and period-`d+1` closed-form ages.
pub fn mixture_age(spec: &EquidistantSpec, q: f64) -> f64 {
    spec.p * closed_form_age(spec.d, q) + (1.0 - spec.p) * closed_form_age(spec.d + 1, q)
}

/// Builds the rate-matched equidistant mixture for a budget: periods from
/// [`equidistant_period`], components from [`equidistant_policy`].
pub fn equidistant_mixture(
    f_max: f64,
    params: &ModelParams,
) -> Result<(MixturePolicy, EquidistantSpec), PolicyError> {
    let spec = equidistant_period(f_max)?;
    let a = equidistant_policy(spec.d, params)?;
    let b = equidistant_policy(spec.d + 1, params)?;
    Ok((MixturePolicy::new(a, b, spec.p)?, spec))
}

// ── Policy serialization ──────────────────────────────────────────────

/// Wire form of one action-table entry; `v2` is a packet age or the
/// string `"none"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub v1: u32,
    #[serde(
        serialize_with = "serialize_packet_age",
        deserialize_with = "deserialize_packet_age"
    )]
    pub v2: Option<u32>,
    pub action: Action,
}

fn serialize_packet_age<S: Serializer>(v2: &Option<u32>, ser: S) -> Result<S::Ok, S::Error> {
    match v2 {
        Some(age) => ser.serialize_u32(*age),
        None => ser.serialize_str("none"),
    }
}

fn deserialize_packet_age<'de, D: Deserializer<'de>>(de: D) -> Result<Option<u32>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Field {
        Age(u32),
        Tag(String),
    }
    match Field::deserialize(de)? {
        Field::Age(age) => Ok(Some(age)),
        Field::Tag(tag) if tag == "none" => Ok(None),
        Field::Tag(tag) => Err(D::Error::custom(format!(
            "packet age must be an integer or \"none\", got {tag:?}"
        ))),
    }
}

/// Serializable policy document with entries in state-space enumeration
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub label: String,
    pub v_max: u32,
    pub entries: Vec<PolicyEntry>,
}

impl From<&StationaryPolicy> for PolicyDocument {
    fn from(policy: &StationaryPolicy) -> Self {
        let space = StateSpace::new(policy.v_max).expect("policy v_max is valid");
        let entries = space
            .states()
            .iter()
            .zip(policy.actions())
            .map(|(&s, &action)| PolicyEntry {
                v1: s.v1(),
                v2: s.v2(),
                action,
            })
            .collect();
        PolicyDocument {
            label: policy.label.clone(),
            v_max: policy.v_max,
            entries,
        }
    }
}

impl TryFrom<PolicyDocument> for StationaryPolicy {
    type Error = PolicyError;

    fn try_from(doc: PolicyDocument) -> Result<Self, PolicyError> {
        let space = StateSpace::new(doc.v_max)?;
        if doc.entries.len() != space.len() {
            return Err(PolicyError::WrongTableSize {
                got: doc.entries.len(),
                expected: space.len(),
                v_max: doc.v_max,
            });
        }
        let mut actions = vec![Action::Idle; space.len()];
        for entry in &doc.entries {
            let s = State::new(entry.v1, entry.v2)?;
            let idx = space
                .index_of(s)
                .ok_or(ModelError::StateOutOfRange(s, doc.v_max))?;
            actions[idx] = entry.action;
        }
        StationaryPolicy::from_actions(doc.label, doc.v_max, actions)
    }
}
