use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ExoError;
use crate::factor::FactorSet;
use crate::state::{restriction_count, FactoredState, StateIndex};
use crate::Result;

/// A deterministic single-timestep policy: a total table from restriction
/// values of `actsOn` to actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OneStepPolicy {
    pub acts_on: FactorSet,
    pub s_per_factor: usize,
    /// One action per restriction value, indexed by the packed restriction.
    pub table: Vec<u8>,
}

impl OneStepPolicy {
    pub fn new(acts_on: FactorSet, s_per_factor: usize, table: Vec<u8>) -> Result<Self> {
        let expect = restriction_count(acts_on.len(), s_per_factor);
        if table.len() != expect {
            return Err(ExoError::InvalidArgument(format!(
                "one-step policy on {acts_on} needs {expect} table entries, got {}",
                table.len()
            )));
        }
        Ok(OneStepPolicy {
            acts_on,
            s_per_factor,
            table,
        })
    }

    /// The policy that ignores the state and always plays `action`.
    pub fn constant(action: u8, s_per_factor: usize) -> Self {
        OneStepPolicy {
            acts_on: FactorSet::empty(),
            s_per_factor,
            table: vec![action],
        }
    }

    pub fn action(&self, s: &FactoredState) -> u8 {
        self.table[s.restrict(&self.acts_on, self.s_per_factor)]
    }

    /// Action for an already-packed restriction on a superset of `actsOn`.
    pub fn action_for_restriction(&self, packed: StateIndex, on: &FactorSet) -> u8 {
        let idx = crate::state::project_restriction(packed, on, &self.acts_on, self.s_per_factor);
        self.table[idx]
    }
}

/// A deterministic policy covering a contiguous range of timesteps.
///
/// `start` is 1-indexed; the policy covers `start .. start + steps.len() - 1`
/// inclusive. An empty step list is a valid policy covering nothing, used as
/// the base case of backward constructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    pub start: usize,
    pub steps: Vec<OneStepPolicy>,
}

impl NonstationaryPolicy {
    pub fn new(start: usize, steps: Vec<OneStepPolicy>) -> Self {
        NonstationaryPolicy { start, steps }
    }

    /// Covers nothing; composition treats it as a neutral suffix.
    pub fn empty(start: usize) -> Self {
        NonstationaryPolicy {
            start,
            steps: Vec::new(),
        }
    }

    /// First covered timestep, if any.
    pub fn first_step(&self) -> Option<usize> {
        (!self.steps.is_empty()).then_some(self.start)
    }

    /// Last covered timestep, if any.
    pub fn last_step(&self) -> Option<usize> {
        (!self.steps.is_empty()).then_some(self.start + self.steps.len() - 1)
    }

    pub fn covers(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.steps.len()
    }

    pub fn step_policy(&self, t: usize) -> Option<&OneStepPolicy> {
        self.covers(t).then(|| &self.steps[t - self.start])
    }

    /// Action at timestep `t`; errors outside the covered range.
    pub fn action_at(&self, t: usize, s: &FactoredState) -> Result<u8> {
        self.step_policy(t)
            .map(|p| p.action(s))
            .ok_or(ExoError::TimestepOutOfRange {
                t,
                lo: self.start,
                hi: self.start + self.steps.len().max(1) - 1,
            })
    }

    /// `self ∘_t other`: follow `self` before `t`, `other` from `t` on.
    pub fn compose_at(&self, t: usize, other: &NonstationaryPolicy) -> NonstationaryPolicy {
        let mut steps = Vec::new();
        let mut start = t;
        for step_t in (self.start..t).rev() {
            match self.step_policy(step_t) {
                Some(p) => {
                    steps.push(p.clone());
                    start = step_t;
                }
                None => break,
            }
        }
        steps.reverse();
        for step_t in t.. {
            match other.step_policy(step_t) {
                Some(p) => steps.push(p.clone()),
                None => break,
            }
        }
        NonstationaryPolicy { start, steps }
    }

    /// Prepends a one-step policy at timestep `t`; the suffix must start at
    /// `t + 1` (or be empty).
    pub fn prepend(&self, t: usize, head: OneStepPolicy) -> NonstationaryPolicy {
        debug_assert!(self.steps.is_empty() || self.start == t + 1);
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.push(head);
        steps.extend(self.steps.iter().cloned());
        NonstationaryPolicy { start: t, steps }
    }

    /// True when every step's decision depends only on coordinates in `set`.
    pub fn acts_within(&self, set: &FactorSet) -> bool {
        self.steps.iter().all(|p| p.acts_on.is_subset_of(set))
    }
}

/// Convenience wrapper matching the operator-style call `π(s, t)`.
pub fn evaluate_policy(policy: &NonstationaryPolicy, s: &FactoredState, t: usize) -> Result<u8> {
    policy.action_at(t, s)
}

/// One single-timestep policy per restriction value of `factor_set`, the
/// shape returned by a one-step refinement round before composition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepPolicyFamily {
    pub factor_set: FactorSet,
    pub s_per_factor: usize,
    /// Indexed by the packed restriction of `factor_set`.
    pub policies: Vec<OneStepPolicy>,
}

impl StepPolicyFamily {
    pub fn new(
        factor_set: FactorSet,
        s_per_factor: usize,
        policies: Vec<OneStepPolicy>,
    ) -> Result<Self> {
        let expect = restriction_count(factor_set.len(), s_per_factor);
        if policies.len() != expect {
            return Err(ExoError::InvalidArgument(format!(
                "family on {factor_set} needs {expect} policies, got {}",
                policies.len()
            )));
        }
        Ok(StepPolicyFamily {
            factor_set,
            s_per_factor,
            policies,
        })
    }

    pub fn policy_for(&self, packed: StateIndex) -> &OneStepPolicy {
        &self.policies[packed]
    }
}

/// A policy cover: one roll-in policy per restriction value of `factor_set`,
/// each spanning timesteps `t .. h-1` and steering toward its restriction at
/// layer `h`. The empty factor set gives the trivial cover holding the single
/// do-nothing policy, which uniformizes the `t = h` base case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyCover {
    /// First timestep the cover's policies act at (equal to `h` when empty).
    pub t: usize,
    /// Target layer the cover steers toward.
    pub h: usize,
    pub factor_set: FactorSet,
    pub s_per_factor: usize,
    /// Indexed by the packed restriction of `factor_set`.
    pub policies: Vec<NonstationaryPolicy>,
}

impl PolicyCover {
    pub fn new(
        t: usize,
        h: usize,
        factor_set: FactorSet,
        s_per_factor: usize,
        policies: Vec<NonstationaryPolicy>,
    ) -> Result<Self> {
        let cover = PolicyCover {
            t,
            h,
            factor_set,
            s_per_factor,
            policies,
        };
        cover.validate_shape()?;
        Ok(cover)
    }

    /// The `t = h` base case: no factors pinned, one policy covering nothing.
    pub fn trivial(h: usize, s_per_factor: usize) -> Self {
        PolicyCover {
            t: h,
            h,
            factor_set: FactorSet::empty(),
            s_per_factor,
            policies: vec![NonstationaryPolicy::empty(h)],
        }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policy_for(&self, packed: StateIndex) -> &NonstationaryPolicy {
        &self.policies[packed]
    }

    /// Uniform mixture over the cover's policies, the roll-in distribution
    /// used when collecting data at layer `h`.
    pub fn mixture(&self) -> MixturePolicy {
        MixturePolicy {
            members: self.policies.clone(),
        }
    }

    pub fn validate_shape(&self) -> Result<()> {
        let expect = restriction_count(self.factor_set.len(), self.s_per_factor);
        if self.policies.len() != expect {
            return Err(ExoError::InvalidArgument(format!(
                "cover on {} needs {expect} policies, got {}",
                self.factor_set,
                self.policies.len()
            )));
        }
        if self.t > self.h {
            return Err(ExoError::InvalidArgument(format!(
                "cover start {} lies past its target layer {}",
                self.t, self.h
            )));
        }
        for p in &self.policies {
            let covers_range = if self.t == self.h {
                p.steps.is_empty()
            } else {
                p.first_step() == Some(self.t) && p.last_step() == Some(self.h - 1)
            };
            if !covers_range {
                return Err(ExoError::InvalidArgument(format!(
                    "cover policy must span timesteps {}..{} toward layer {}",
                    self.t,
                    self.h.max(1) - 1,
                    self.h
                )));
            }
        }
        Ok(())
    }

    /// Full validation against model dimensions, for covers read from disk.
    pub fn validate(&self, d: usize, s_per_factor: usize, a_count: usize) -> Result<()> {
        self.factor_set.validate(d)?;
        if self.s_per_factor != s_per_factor {
            return Err(ExoError::InvalidArgument(format!(
                "cover radix {} does not match model radix {s_per_factor}",
                self.s_per_factor
            )));
        }
        self.validate_shape()?;
        for p in &self.policies {
            for step in &p.steps {
                step.acts_on.validate(d)?;
                if step.s_per_factor != s_per_factor {
                    return Err(ExoError::InvalidArgument(format!(
                        "policy radix {} does not match model radix {s_per_factor}",
                        step.s_per_factor
                    )));
                }
                if step.table.iter().any(|&a| (a as usize) >= a_count) {
                    return Err(ExoError::InvalidArgument(format!(
                        "policy table holds an action outside 0..{a_count}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Borrowed view accepting either a single deterministic policy or a
/// uniform mixture wherever an expectation-level routine needs "a policy".
#[derive(Clone, Copy)]
pub enum PolicyRef<'a> {
    Pure(&'a NonstationaryPolicy),
    Mixture(&'a MixturePolicy),
}

impl<'a> PolicyRef<'a> {
    /// The deterministic policies mixed with uniform weight (a single
    /// policy is a one-member mixture).
    pub fn members(&self) -> &'a [NonstationaryPolicy] {
        match self {
            PolicyRef::Pure(p) => std::slice::from_ref(*p),
            PolicyRef::Mixture(m) => &m.members,
        }
    }
}

impl<'a> From<&'a NonstationaryPolicy> for PolicyRef<'a> {
    fn from(p: &'a NonstationaryPolicy) -> Self {
        PolicyRef::Pure(p)
    }
}

impl<'a> From<&'a MixturePolicy> for PolicyRef<'a> {
    fn from(m: &'a MixturePolicy) -> Self {
        PolicyRef::Mixture(m)
    }
}

/// A uniform mixture over deterministic policies. An episode draws one
/// member up front and follows it throughout; the mixture never re-draws
/// mid-episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub members: Vec<NonstationaryPolicy>,
}

impl MixturePolicy {
    pub fn new(members: Vec<NonstationaryPolicy>) -> Result<Self> {
        if members.is_empty() {
            return Err(ExoError::InvalidArgument(
                "mixture policy needs at least one member".into(),
            ));
        }
        Ok(MixturePolicy { members })
    }

    /// Degenerate mixture holding a single policy.
    pub fn single(member: NonstationaryPolicy) -> Self {
        MixturePolicy {
            members: vec![member],
        }
    }

    /// The empty roll-in: one member covering no timesteps.
    pub fn trivial() -> Self {
        MixturePolicy::single(NonstationaryPolicy::empty(1))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sample_member_index(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.members.len())
    }

    pub fn member(&self, idx: usize) -> &NonstationaryPolicy {
        &self.members[idx]
    }

    pub fn acts_within(&self, set: &FactorSet) -> bool {
        self.members.iter().all(|m| m.acts_within(set))
    }
}
