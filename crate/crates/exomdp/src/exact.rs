//! Exact finite-horizon oracles over the joint state space: occupancy
//! measures, values, skolemized one-step maximization, joint value
//! iteration, and the exact state-refinement algorithms that build
//! endogenous policy covers layer by layer.
//!
//! Everything here enumerates the full joint space `S^d` (as an
//! endogenous-block by exogenous-block grid), so it is a desk-scale
//! verifier: construction refuses models past a state cap. The sampled
//! pipeline in [`crate::ossr`] and [`crate::psdp`] is the scalable path and
//! never calls into this module.

use serde::Serialize;

use crate::config::DEFAULT_STATE_CAP;
use crate::error::ExoError;
use crate::factor::{subsets_up_to, FactorSet};
use crate::model::{ExoMdpModel, OracleView};
use crate::policy::{
    NonstationaryPolicy, OneStepPolicy, PolicyCover, PolicyRef, StepPolicyFamily,
};
use crate::state::{project_restriction, restriction_count, StateIndex};
use crate::Result;

/// Tolerance for the equality conditions inside the exact refinement
/// phases. The conditions hold exactly in real arithmetic; DP introduces
/// rounding at most orders of magnitude below this.
pub const EXACT_EQ_TOL: f64 = 1e-9;

/// Occupancy of every restriction value of `target` at layer `h`:
/// `values[x] = P(s_h[target] = x)` under the queried policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OccupancyTable {
    pub target: FactorSet,
    pub h: usize,
    pub values: Vec<f64>,
}

impl OccupancyTable {
    pub fn value_at(&self, x: StateIndex) -> f64 {
        self.values[x]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Reward structure to integrate in value computations. `Model` reads the
/// model's own reward table; the other two support synthetic objectives
/// (reachability as value, constant-reward sanity checks).
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSpec {
    Model,
    Constant(f64),
    /// One unit of reward at layer `h` iff `s_h[target] = x`; makes
    /// occupancy a special case of value.
    Indicator {
        h: usize,
        target: FactorSet,
        x: StateIndex,
    },
}

/// Output of joint value iteration: the optimal expected value from `d_1`
/// and the greedy action per layer and joint state (indexed
/// `en * S^(d-|I*|) + ex`), ties broken toward the smaller action.
#[derive(Debug, Clone)]
pub struct JointDpResult {
    pub value: f64,
    pub greedy: Vec<Vec<u8>>,
}

/// A layer distribution or backward kernel over the joint space, stored as
/// an endogenous-by-exogenous grid `w[en * s_ex + ex]`.
#[derive(Debug, Clone)]
struct Grid {
    s_ex: usize,
    w: Vec<f64>,
}

impl Grid {
    fn zeros(s_en: usize, s_ex: usize) -> Grid {
        Grid {
            s_ex,
            w: vec![0.0; s_en * s_ex],
        }
    }

    #[inline]
    fn at(&self, en: usize, ex: usize) -> f64 {
        self.w[en * self.s_ex + ex]
    }
}

/// Precomputed additive decomposition of "restrict the joint state to
/// `set`": the packed restriction equals `en_part[en] + ex_part[ex]`, since
/// each factor of `set` lives in exactly one block.
struct BlockMap {
    en_part: Vec<usize>,
    ex_part: Vec<usize>,
    count: usize,
}

impl BlockMap {
    #[inline]
    fn index(&self, en: usize, ex: usize) -> usize {
        self.en_part[en] + self.ex_part[ex]
    }
}

fn block_contrib(block: &FactorSet, set: &FactorSet, s: usize) -> Vec<usize> {
    let n = restriction_count(block.len(), s);
    let mut pairs = Vec::new();
    for (pos_set, j) in set.iter().enumerate() {
        if let Some(pos_blk) = block.position_of(j) {
            let divisor = s.pow((block.len() - 1 - pos_blk) as u32);
            let weight = s.pow((set.len() - 1 - pos_set) as u32);
            pairs.push((divisor, weight));
        }
    }
    (0..n)
        .map(|packed| {
            pairs
                .iter()
                .map(|&(divisor, weight)| ((packed / divisor) % s) * weight)
                .sum()
        })
        .collect()
}

/// Exact-DP context over one model. Construction enforces the state cap;
/// all methods are pure and reentrant.
#[derive(Clone, Copy)]
pub struct ExactDp<'a> {
    model: &'a ExoMdpModel,
    oracle: OracleView<'a>,
}

impl<'a> ExactDp<'a> {
    pub fn new(model: &'a ExoMdpModel) -> Result<Self> {
        Self::with_cap(model, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(model: &'a ExoMdpModel, state_cap: u128) -> Result<Self> {
        let states = model.joint_state_count();
        if states > state_cap {
            return Err(ExoError::StateSpaceTooLarge {
                states,
                cap: state_cap,
            });
        }
        Ok(ExactDp {
            model,
            oracle: model.oracle(),
        })
    }

    pub fn model(&self) -> &'a ExoMdpModel {
        self.model
    }

    fn dims(&self) -> (usize, usize) {
        (self.oracle.s_en_count(), self.oracle.s_ex_count())
    }

    fn block_map(&self, set: &FactorSet) -> BlockMap {
        let s = self.model.s_per_factor();
        BlockMap {
            en_part: block_contrib(self.oracle.i_star(), set, s),
            ex_part: block_contrib(self.oracle.i_exo(), set, s),
            count: restriction_count(set.len(), s),
        }
    }

    fn initial_grid(&self) -> Grid {
        let (s_en, s_ex) = self.dims();
        let mut g = Grid::zeros(s_en, s_ex);
        for en in 0..s_en {
            let w_en = self.oracle.d1_en()[en];
            if w_en == 0.0 {
                continue;
            }
            for ex in 0..s_ex {
                g.w[en * s_ex + ex] = w_en * self.oracle.d1_ex()[ex];
            }
        }
        g
    }

    /// One forward transition under a per-cell action rule.
    fn forward_step<F: Fn(usize, usize) -> usize>(&self, g: &Grid, act: F) -> Grid {
        let (s_en, s_ex) = self.dims();
        let t_en = self.oracle.t_en();
        let t_ex = self.oracle.t_ex();
        let mut moved = Grid::zeros(s_en, s_ex);
        for en in 0..s_en {
            for ex in 0..s_ex {
                let w = g.at(en, ex);
                if w == 0.0 {
                    continue;
                }
                let row = &t_en[en][act(en, ex)];
                for (en2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        moved.w[en2 * s_ex + ex] += w * p;
                    }
                }
            }
        }
        let mut out = Grid::zeros(s_en, s_ex);
        for ex in 0..s_ex {
            let row = &t_ex[ex];
            for en2 in 0..s_en {
                let w = moved.at(en2, ex);
                if w == 0.0 {
                    continue;
                }
                for (ex2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        out.w[en2 * s_ex + ex2] += w * p;
                    }
                }
            }
        }
        out
    }

    /// Distribution of `s_h` under a (mixture) policy covering `1..h-1`.
    fn forward_layer(&self, policy: PolicyRef<'_>, h: usize) -> Result<Grid> {
        let (s_en, s_ex) = self.dims();
        let members = policy.members();
        let mut acc = Grid::zeros(s_en, s_ex);
        let weight = 1.0 / members.len() as f64;
        for m in members {
            let mut g = self.initial_grid();
            for t in 1..h {
                let step = step_at(m, t)?;
                let map = self.block_map(&step.acts_on);
                g = self.forward_step(&g, |en, ex| step.table[map.index(en, ex)] as usize);
            }
            for (slot, v) in acc.w.iter_mut().zip(&g.w) {
                *slot += weight * v;
            }
        }
        Ok(acc)
    }

    /// `Σ_ex' tEx[ex][ex'] g[en', ex']` for every `(en', ex)`: the exogenous
    /// half of one backward expectation.
    fn ex_contract(&self, g: &Grid) -> Grid {
        let (s_en, s_ex) = self.dims();
        let t_ex = self.oracle.t_ex();
        let mut out = Grid::zeros(s_en, s_ex);
        for ex in 0..s_ex {
            let row = &t_ex[ex];
            for en2 in 0..s_en {
                let mut acc = 0.0;
                for (ex2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        acc += p * g.at(en2, ex2);
                    }
                }
                out.w[en2 * s_ex + ex] = acc;
            }
        }
        out
    }

    /// One backward expectation under a per-cell action rule.
    fn backward_step<F: Fn(usize, usize) -> usize>(&self, g: &Grid, act: F) -> Grid {
        let (s_en, s_ex) = self.dims();
        let t_en = self.oracle.t_en();
        let gx = self.ex_contract(g);
        let mut out = Grid::zeros(s_en, s_ex);
        for en in 0..s_en {
            for ex in 0..s_ex {
                let row = &t_en[en][act(en, ex)];
                let mut acc = 0.0;
                for (en2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        acc += p * gx.at(en2, ex);
                    }
                }
                out.w[en * s_ex + ex] = acc;
            }
        }
        out
    }

    /// `P(s_h[target] = x)` for every value of `target`, under a policy (or
    /// uniform mixture) covering `1..h-1`. A mixture's occupancy is the
    /// uniform average of its members' occupancies.
    pub fn occupancy<'p>(
        &self,
        policy: impl Into<PolicyRef<'p>>,
        h: usize,
        target: &FactorSet,
    ) -> Result<OccupancyTable> {
        self.check_layer(h)?;
        target.validate(self.model.d())?;
        let g = self.forward_layer(policy.into(), h)?;
        let map = self.block_map(target);
        let mut values = vec![0.0; map.count];
        let (s_en, s_ex) = self.dims();
        for en in 0..s_en {
            for ex in 0..s_ex {
                values[map.index(en, ex)] += g.at(en, ex);
            }
        }
        Ok(OccupancyTable {
            target: target.clone(),
            h,
            values,
        })
    }

    /// Expected cumulative reward `E[Σ_{t'=t}^{h} r_{t'}]` over one episode
    /// segment, starting from `d_1` and following the policy throughout.
    pub fn value<'p>(
        &self,
        policy: impl Into<PolicyRef<'p>>,
        reward: &RewardSpec,
        range: (usize, usize),
    ) -> Result<f64> {
        let (t0, h_end) = range;
        if t0 == 0 || t0 > h_end {
            return Err(ExoError::InvalidArgument(format!(
                "value range ({t0}, {h_end}) is not a 1-indexed interval"
            )));
        }
        self.check_layer(h_end)?;
        let members = policy.into().members();
        let mut total = 0.0;
        for m in members {
            let mut g = self.initial_grid();
            let mut v = 0.0;
            for t in 1..=h_end {
                if t >= t0 {
                    v += self.reward_mass(&g, m, t, reward)?;
                }
                if t < h_end {
                    let step = step_at(m, t)?;
                    let map = self.block_map(&step.acts_on);
                    g = self.forward_step(&g, |en, ex| step.table[map.index(en, ex)] as usize);
                }
            }
            total += v;
        }
        Ok(total / members.len() as f64)
    }

    /// Expected reward collected at layer `t` from distribution `g`.
    fn reward_mass(
        &self,
        g: &Grid,
        m: &NonstationaryPolicy,
        t: usize,
        reward: &RewardSpec,
    ) -> Result<f64> {
        let (s_en, s_ex) = self.dims();
        match reward {
            RewardSpec::Constant(c) => Ok(c * g.w.iter().sum::<f64>()),
            RewardSpec::Indicator { h, target, x } => {
                if t != *h {
                    return Ok(0.0);
                }
                let map = self.block_map(target);
                let mut acc = 0.0;
                for en in 0..s_en {
                    for ex in 0..s_ex {
                        if map.index(en, ex) == *x {
                            acc += g.at(en, ex);
                        }
                    }
                }
                Ok(acc)
            }
            RewardSpec::Model => {
                let step = step_at(m, t)?;
                let map = self.block_map(&step.acts_on);
                let r_en = self.oracle.r_en();
                let mut acc = 0.0;
                for en in 0..s_en {
                    for ex in 0..s_ex {
                        let w = g.at(en, ex);
                        if w > 0.0 {
                            acc += w * r_en[en][step.table[map.index(en, ex)] as usize];
                        }
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Expected total model reward of a policy over the full horizon.
    pub fn policy_return<'p>(&self, policy: impl Into<PolicyRef<'p>>) -> Result<f64> {
        self.value(policy, &RewardSpec::Model, (1, self.model.horizon()))
    }

    /// Finite-horizon value iteration over the joint state: the optimal
    /// value achievable by ANY (joint, nonstationary) policy, with greedy
    /// action tables. Ties break toward the smaller action.
    pub fn joint_value_iteration(&self, reward: &RewardSpec) -> JointDpResult {
        let (s_en, s_ex) = self.dims();
        let a_count = self.model.a_count();
        let horizon = self.model.horizon();
        let t_en = self.oracle.t_en();
        let r_en = self.oracle.r_en();
        let ind = match reward {
            RewardSpec::Indicator { h, target, x } => Some((*h, self.block_map(target), *x)),
            _ => None,
        };
        let mut v_next = Grid::zeros(s_en, s_ex);
        let mut greedy = vec![Vec::new(); horizon];
        for t in (1..=horizon).rev() {
            let gx = self.ex_contract(&v_next);
            let mut v = Grid::zeros(s_en, s_ex);
            let mut table = vec![0u8; s_en * s_ex];
            for en in 0..s_en {
                for ex in 0..s_ex {
                    let bonus = match (&ind, reward) {
                        (Some((h, map, x)), _) if *h == t => {
                            if map.index(en, ex) == *x {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        (Some(_), _) => 0.0,
                        (None, RewardSpec::Constant(c)) => *c,
                        _ => 0.0,
                    };
                    let mut best = f64::NEG_INFINITY;
                    let mut best_a = 0usize;
                    for a in 0..a_count {
                        let step_r = match reward {
                            RewardSpec::Model => r_en[en][a],
                            _ => bonus,
                        };
                        let mut q = step_r;
                        for (en2, &p) in t_en[en][a].iter().enumerate() {
                            if p > 0.0 {
                                q += p * gx.at(en2, ex);
                            }
                        }
                        if q > best {
                            best = q;
                            best_a = a;
                        }
                    }
                    v.w[en * s_ex + ex] = best;
                    table[en * s_ex + ex] = best_a as u8;
                }
            }
            greedy[t - 1] = table;
            v_next = v;
        }
        let mut value = 0.0;
        for en in 0..s_en {
            let w_en = self.oracle.d1_en()[en];
            if w_en == 0.0 {
                continue;
            }
            for ex in 0..s_ex {
                value += w_en * self.oracle.d1_ex()[ex] * v_next.at(en, ex);
            }
        }
        JointDpResult { value, greedy }
    }

    /// Best achievable `P(s_h[target] = x)` over all policies.
    pub fn max_reach(&self, h: usize, target: &FactorSet, x: StateIndex) -> Result<f64> {
        self.check_layer(h)?;
        target.validate(self.model.d())?;
        Ok(self
            .joint_value_iteration(&RewardSpec::Indicator {
                h,
                target: target.clone(),
                x,
            })
            .value)
    }

    /// Per-action backward kernels `K_a(s_t) = P(s_h[target] = x | s_t, a,
    /// then rollout)`, for a rollout covering `t+1..h-1`.
    fn action_kernels(
        &self,
        t: usize,
        h: usize,
        rollout: &NonstationaryPolicy,
        target: &FactorSet,
        x: StateIndex,
    ) -> Result<Vec<Grid>> {
        let (s_en, s_ex) = self.dims();
        let map = self.block_map(target);
        let mut g = Grid::zeros(s_en, s_ex);
        for en in 0..s_en {
            for ex in 0..s_ex {
                if map.index(en, ex) == x {
                    g.w[en * s_ex + ex] = 1.0;
                }
            }
        }
        for tau in (t + 1..h).rev() {
            let step = step_at(rollout, tau)?;
            let rule = self.block_map(&step.acts_on);
            g = self.backward_step(&g, |en, ex| step.table[rule.index(en, ex)] as usize);
        }
        let gx = self.ex_contract(&g);
        let t_en = self.oracle.t_en();
        let mut kernels = Vec::with_capacity(self.model.a_count());
        for a in 0..self.model.a_count() {
            let mut k = Grid::zeros(s_en, s_ex);
            for en in 0..s_en {
                for ex in 0..s_ex {
                    let mut acc = 0.0;
                    for (en2, &p) in t_en[en][a].iter().enumerate() {
                        if p > 0.0 {
                            acc += p * gx.at(en2, ex);
                        }
                    }
                    k.w[en * s_ex + ex] = acc;
                }
            }
            kernels.push(k);
        }
        Ok(kernels)
    }

    /// Per-group action scores for policies on `acts_on`:
    /// `scores[v][a] = Σ_{s_t: s_t[acts_on]=v} d_t(s_t) K_a(s_t)`.
    fn group_scores(&self, d_t: &Grid, kernels: &[Grid], acts_on: &FactorSet) -> Vec<Vec<f64>> {
        let (s_en, s_ex) = self.dims();
        let map = self.block_map(acts_on);
        let mut scores = vec![vec![0.0; kernels.len()]; map.count];
        for en in 0..s_en {
            for ex in 0..s_ex {
                let w = d_t.at(en, ex);
                if w == 0.0 {
                    continue;
                }
                let row = &mut scores[map.index(en, ex)];
                for (a, k) in kernels.iter().enumerate() {
                    row[a] += w * k.at(en, ex);
                }
            }
        }
        scores
    }

    fn scores_max(scores: &[Vec<f64>]) -> f64 {
        scores
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }

    fn scores_argmax(
        &self,
        scores: &[Vec<f64>],
        acts_on: &FactorSet,
    ) -> (OneStepPolicy, f64) {
        let mut table = Vec::with_capacity(scores.len());
        let mut value = 0.0;
        for row in scores {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for (a, &q) in row.iter().enumerate() {
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            table.push(best_a as u8);
            value += best;
        }
        (
            OneStepPolicy {
                acts_on: acts_on.clone(),
                s_per_factor: self.model.s_per_factor(),
                table,
            },
            value,
        )
    }

    /// Maximizes `P(s_h[target] = x)` over one-step policies on `acts_on`
    /// at timestep `t`, with roll-in `mu` (covering `1..t-1`) before and
    /// `rollout` (covering `t+1..h-1`) after. Skolemization turns the
    /// policy max into an independent per-restriction-group argmax over
    /// actions; ties break toward the smaller action.
    pub fn skolem_max_one_step<'p>(
        &self,
        mu: impl Into<PolicyRef<'p>>,
        t: usize,
        h: usize,
        rollout: &NonstationaryPolicy,
        acts_on: &FactorSet,
        target: &FactorSet,
        x: StateIndex,
    ) -> Result<(OneStepPolicy, f64)> {
        if t == 0 || t >= h {
            return Err(ExoError::InvalidArgument(format!(
                "one-step maximization needs 1 <= t < h, got t={t}, h={h}"
            )));
        }
        self.check_layer(h)?;
        acts_on.validate(self.model.d())?;
        target.validate(self.model.d())?;
        let d_t = self.forward_layer(mu.into(), t)?;
        let kernels = self.action_kernels(t, h, rollout, target, x)?;
        let scores = self.group_scores(&d_t, &kernels, acts_on);
        Ok(self.scores_argmax(&scores, acts_on))
    }

    /// Reach probability of a specific one-step policy at `t` given
    /// precomputed kernels.
    fn policy_reach(&self, d_t: &Grid, kernels: &[Grid], pi: &OneStepPolicy) -> f64 {
        let (s_en, s_ex) = self.dims();
        let map = self.block_map(&pi.acts_on);
        let mut acc = 0.0;
        for en in 0..s_en {
            for ex in 0..s_ex {
                let w = d_t.at(en, ex);
                if w > 0.0 {
                    acc += w * kernels[pi.table[map.index(en, ex)] as usize].at(en, ex);
                }
            }
        }
        acc
    }

    /// One backward refinement round at timestep `t` toward layer `h`.
    ///
    /// Phase I finds the minimal-cardinality factor set whose one-step
    /// policies match the unrestricted maximum for every target restriction
    /// simultaneously; Phase II finds the minimal superset of the incoming
    /// factor set whose policy family covers every target through
    /// intersection indexing. Scan order is ascending cardinality,
    /// lexicographic within, so ties resolve deterministically.
    fn refinement_round(
        &self,
        mu: PolicyRef<'_>,
        t: usize,
        h: usize,
        prev: &PolicyCover,
    ) -> Result<(FactorSet, StepPolicyFamily)> {
        let d = self.model.d();
        let k = self.model.k();
        let s = self.model.s_per_factor();
        let all_sets = subsets_up_to(d, k, &FactorSet::empty());
        let j_sets = subsets_up_to(d, k, &prev.factor_set);
        let d_t = self.forward_layer(mu, t)?;

        let mut targets = Vec::new();
        for (j_idx, j) in j_sets.iter().enumerate() {
            for x in 0..restriction_count(j.len(), s) {
                let psi = project_restriction(x, j, &prev.factor_set, s);
                let rollout = prev.policy_for(psi);
                let kernels = self.action_kernels(t, h, rollout, j, x)?;
                let per_set: Vec<f64> = all_sets
                    .iter()
                    .map(|i| Self::scores_max(&self.group_scores(&d_t, &kernels, i)))
                    .collect();
                let global = per_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                targets.push(Target {
                    j_idx,
                    x,
                    kernels,
                    per_set,
                    global,
                });
            }
        }

        // Phase I: smallest set matching the unrestricted max everywhere.
        let mut i_tilde_idx = None;
        'phase1: for (idx, _) in all_sets.iter().enumerate() {
            for tg in &targets {
                if tg.global - tg.per_set[idx] > EXACT_EQ_TOL {
                    continue 'phase1;
                }
            }
            i_tilde_idx = Some(idx);
            break;
        }
        let i_tilde_idx = i_tilde_idx.ok_or_else(|| self.worst_violation(&targets, &j_sets, 0))?;
        let i_tilde = &all_sets[i_tilde_idx];

        // Policy families: per target set J, the Phase-I argmax policy for
        // each restriction value, all acting on the Phase-I factor set.
        let mut families = Vec::with_capacity(j_sets.len());
        {
            let mut cursor = 0usize;
            for (j_idx, j) in j_sets.iter().enumerate() {
                let n_x = restriction_count(j.len(), s);
                let mut policies = Vec::with_capacity(n_x);
                for x in 0..n_x {
                    let tg = &targets[cursor];
                    debug_assert!(tg.j_idx == j_idx && tg.x == x);
                    cursor += 1;
                    let scores = self.group_scores(&d_t, &tg.kernels, i_tilde);
                    policies.push(self.scores_argmax(&scores, i_tilde).0);
                }
                families.push(StepPolicyFamily::new(j.clone(), s, policies)?);
            }
        }

        // Phase II: smallest superset of the incoming set whose families,
        // indexed through intersections, still attain every target's max.
        let mut chosen = None;
        'phase2: for cand in &j_sets {
            for tg in &targets {
                let j = &j_sets[tg.j_idx];
                let overlap = j.intersection(cand);
                let fam_idx = j_sets
                    .iter()
                    .position(|g| *g == overlap)
                    .expect("intersection of scanned sets is a scanned set");
                let pi = families[fam_idx].policy_for(project_restriction(tg.x, j, &overlap, s));
                let achieved = self.policy_reach(&d_t, &tg.kernels, pi);
                if tg.global - achieved > EXACT_EQ_TOL {
                    continue 'phase2;
                }
            }
            chosen = Some(cand.clone());
            break;
        }
        let i_hat = chosen.ok_or_else(|| self.worst_violation(&targets, &j_sets, i_tilde_idx))?;
        let fam_idx = j_sets.iter().position(|g| *g == i_hat).expect("scanned");
        Ok((i_hat, families[fam_idx].clone()))
    }

    /// Diagnostic error for an unsatisfiable refinement phase, naming the
    /// target with the largest gap under the best candidate considered.
    fn worst_violation(
        &self,
        targets: &[Target],
        j_sets: &[FactorSet],
        best_idx: usize,
    ) -> ExoError {
        let mut worst_gap = f64::NEG_INFINITY;
        let mut worst_set = FactorSet::empty();
        let mut worst_value = 0usize;
        for tg in targets {
            let gap = tg.global - tg.per_set[best_idx];
            if gap > worst_gap {
                worst_gap = gap;
                worst_set = j_sets[tg.j_idx].clone();
                worst_value = tg.x;
            }
        }
        ExoError::SelectionFailed {
            worst_set,
            worst_value,
            worst_gap,
        }
    }

    /// The single-round refinement for layer 2: returns the chosen factor
    /// set and its one-step policy family. Deterministic given the model.
    pub fn one_step_refinement(&self) -> Result<(FactorSet, StepPolicyFamily)> {
        if self.model.horizon() < 2 {
            return Err(ExoError::InvalidArgument(
                "one-step refinement needs a horizon of at least 2".into(),
            ));
        }
        let mu = crate::policy::MixturePolicy::trivial();
        let prev = PolicyCover::trivial(2, self.model.s_per_factor());
        self.refinement_round((&mu).into(), 1, 2, &prev)
    }

    /// Backward refinement chain for layer `h`, consuming the covers
    /// already built for layers `1..h-1` (`prior[t-1]` must target layer
    /// `t`). Returns the layer-`h` cover, whose factor set grows (weakly)
    /// as the loop walks back to `t = 1`.
    pub fn layer_cover(&self, prior: &[PolicyCover], h: usize) -> Result<PolicyCover> {
        self.check_layer(h)?;
        let s = self.model.s_per_factor();
        if h == 1 {
            return Ok(PolicyCover::trivial(1, s));
        }
        for t in 1..h {
            match prior.get(t - 1) {
                Some(c) if c.h == t => {}
                _ => {
                    return Err(ExoError::InvalidArgument(format!(
                        "layer {h} cover needs prior covers for layers 1..{}; missing layer {t}",
                        h - 1
                    )))
                }
            }
        }
        let mut current = PolicyCover::trivial(h, s);
        for t in (1..h).rev() {
            let mu = prior[t - 1].mixture();
            let (i_hat, family) = self.refinement_round((&mu).into(), t, h, &current)?;
            let mut policies = Vec::with_capacity(restriction_count(i_hat.len(), s));
            for v in 0..restriction_count(i_hat.len(), s) {
                let head = family.policy_for(v).clone();
                let tail = current.policy_for(project_restriction(v, &i_hat, &current.factor_set, s));
                policies.push(tail.prepend(t, head));
            }
            current = PolicyCover::new(t, h, i_hat, s, policies)?;
        }
        Ok(current)
    }

    /// Exact covers for every layer `1..=H`, built forward. `covers[h-1]`
    /// targets layer `h`; layer 1 is the trivial cover.
    pub fn cover_chain(&self) -> Result<Vec<PolicyCover>> {
        let mut covers = vec![PolicyCover::trivial(1, self.model.s_per_factor())];
        for h in 2..=self.model.horizon() {
            let next = self.layer_cover(&covers, h)?;
            covers.push(next);
        }
        Ok(covers)
    }

    /// Worst shortfall of a cover: `max over s[I*]` of best-possible reach
    /// minus best reach achieved by any cover policy. Zero (up to DP
    /// rounding) for exact covers.
    pub fn cover_deficiency(&self, cover: &PolicyCover) -> Result<f64> {
        let i_star = self.oracle.i_star();
        let n = restriction_count(i_star.len(), self.model.s_per_factor());
        let mut best_reach = vec![0.0f64; n];
        for psi in &cover.policies {
            let table = self.occupancy(psi, cover.h, i_star)?;
            for (slot, &v) in best_reach.iter_mut().zip(&table.values) {
                *slot = slot.max(v);
            }
        }
        let mut worst = f64::NEG_INFINITY;
        for (x, &achieved) in best_reach.iter().enumerate() {
            let optimal = self.max_reach(cover.h, i_star, x)?;
            worst = worst.max(optimal - achieved);
        }
        Ok(worst)
    }

    fn check_layer(&self, h: usize) -> Result<()> {
        if h == 0 || h > self.model.horizon() {
            return Err(ExoError::TimestepOutOfRange {
                t: h,
                lo: 1,
                hi: self.model.horizon(),
            });
        }
        Ok(())
    }
}

/// Access a policy's step at `t` or produce the range error.
fn step_at(m: &NonstationaryPolicy, t: usize) -> Result<&OneStepPolicy> {
    m.step_policy(t).ok_or(ExoError::TimestepOutOfRange {
        t,
        lo: m.start,
        hi: m.start + m.steps.len().max(1) - 1,
    })
}

/// One refinement target `(J, x)`: the kernels for the rollout tied to `x`,
/// the best value per candidate factor set, and the overall best.
struct Target {
    j_idx: usize,
    x: StateIndex,
    kernels: Vec<Grid>,
    per_set: Vec<f64>,
    global: f64,
}
