//! Error-tolerant factor searches over implicit estimates: a widening
//! tolerance ladder, one-step endogenous policy optimization, and the
//! simultaneous factor-selection scan that certifies a policy cover slice.
//!
//! Both searches scan candidate factor sets by ascending cardinality and
//! lexicographic order within a cardinality level; candidates within one
//! level are evaluated in parallel but acceptance always goes to the
//! lexicographically first satisfier, so reruns are deterministic.

use rayon::prelude::*;

use crate::error::ExoError;
use crate::estimator::{QTensor, WeightTensor};
use crate::factor::{subsets_exactly, subsets_up_to, FactorSet};
use crate::policy::{OneStepPolicy, StepPolicyFamily};
use crate::state::{project_restriction, restriction_count, StateIndex};
use crate::Result;

/// Tolerance schedule `eps_{k'} = (1 + 1/k)^(k - k') * multiplier * eps`:
/// wide at low cardinality, tightening to `multiplier * eps` at `k' = k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsLadder {
    pub k: usize,
    pub eps: f64,
    pub multiplier: f64,
}

impl EpsLadder {
    pub fn new(k: usize, eps: f64, multiplier: f64) -> Result<Self> {
        if k == 0 {
            return Err(ExoError::InvalidArgument(
                "tolerance ladder requires k >= 1".into(),
            ));
        }
        if !(eps > 0.0) || !(multiplier > 0.0) {
            return Err(ExoError::InvalidArgument(format!(
                "tolerance ladder requires positive eps and multiplier, got eps={eps} multiplier={multiplier}"
            )));
        }
        Ok(EpsLadder { k, eps, multiplier })
    }

    /// Tolerance at cardinality level `k_prime` (must be <= k).
    pub fn eps_at(&self, k_prime: usize) -> f64 {
        debug_assert!(k_prime <= self.k);
        let base = 1.0 + 1.0 / self.k as f64;
        base.powi((self.k - k_prime) as i32) * self.multiplier * self.eps
    }

    /// All rungs `eps_0 ..= eps_k`.
    pub fn rungs(&self) -> Vec<f64> {
        (0..=self.k).map(|kp| self.eps_at(kp)).collect()
    }

    /// Slack between adjacent cardinality levels that the separation
    /// property must absorb.
    pub fn separation_slack(&self) -> f64 {
        self.eps / (3.0 * self.k as f64)
    }

    /// Minimum of `eps_{k2} - eps_{k1} - eps/(3k)` over `1 <= k2 < k1 <= k`;
    /// the ladder separates levels iff this is strictly positive. Vacuously
    /// infinite when k = 1.
    pub fn min_separation_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for k1 in 2..=self.k {
            for k2 in 1..k1 {
                margin = margin.min(self.eps_at(k2) - self.eps_at(k1) - self.separation_slack());
            }
        }
        margin
    }
}

/// Implicit access to estimated values of one-step policies: the best
/// policy on any candidate factor set, without enumerating the class.
pub trait ImplicitValues: Sync {
    fn factor_count(&self) -> usize;
    fn best_on(&self, set: &FactorSet) -> Result<(OneStepPolicy, f64)>;
}

/// Value access backed by a return-mass tensor whose switch restriction
/// covers every factor.
pub struct ValueAccess<'a> {
    tensor: &'a QTensor,
}

impl<'a> ValueAccess<'a> {
    pub fn new(tensor: &'a QTensor) -> Result<Self> {
        check_full_set(&tensor.acts_on)?;
        Ok(ValueAccess { tensor })
    }
}

impl ImplicitValues for ValueAccess<'_> {
    fn factor_count(&self) -> usize {
        self.tensor.acts_on.len()
    }

    fn best_on(&self, set: &FactorSet) -> Result<(OneStepPolicy, f64)> {
        self.tensor.implicit_argmax_value(set)
    }
}

/// Value access backed by one occupancy-tensor cell: a fixed rollout index
/// and target restriction value.
pub struct OccupancySlice<'a> {
    tensor: &'a WeightTensor,
    psi_index: usize,
    y: StateIndex,
}

impl<'a> OccupancySlice<'a> {
    pub fn new(tensor: &'a WeightTensor, psi_index: usize, y: StateIndex) -> Result<Self> {
        check_full_set(&tensor.acts_on)?;
        Ok(OccupancySlice {
            tensor,
            psi_index,
            y,
        })
    }
}

impl ImplicitValues for OccupancySlice<'_> {
    fn factor_count(&self) -> usize {
        self.tensor.acts_on.len()
    }

    fn best_on(&self, set: &FactorSet) -> Result<(OneStepPolicy, f64)> {
        self.tensor
            .implicit_argmax_occupancy(set, self.psi_index, self.y)
    }
}

fn check_full_set(acts_on: &FactorSet) -> Result<()> {
    let full = FactorSet::from_indices(0..acts_on.len());
    if *acts_on != full {
        return Err(ExoError::InvalidArgument(format!(
            "search requires a tensor whose switch restriction covers all factors, got {acts_on}"
        )));
    }
    Ok(())
}

/// Best estimate over every policy acting on at most `k` factors.
fn global_best(values: &impl ImplicitValues, k: usize) -> Result<f64> {
    let d = values.factor_count();
    let mut best = f64::NEG_INFINITY;
    for set in subsets_exactly(d, k.min(d), &FactorSet::empty()) {
        best = best.max(values.best_on(&set)?.1);
    }
    Ok(best)
}

/// Returns a near-optimal one-step policy acting on few factors: scans
/// cardinality levels 0..=k and accepts the first candidate set whose best
/// policy is within the level's ladder tolerance of the global best.
///
/// The error branch is unreachable when estimates are self-consistent (a
/// globally maximizing set always satisfies its own level with zero slack),
/// so it surfaces implementation bugs rather than sampling failures.
pub fn endo_policy_optimization(
    values: &impl ImplicitValues,
    k: usize,
    eps: f64,
) -> Result<OneStepPolicy> {
    let ladder = EpsLadder::new(k, eps, 1.0)?;
    let d = values.factor_count();
    let global = global_best(values, k)?;
    for k_prime in 0..=k.min(d) {
        let tol = ladder.eps_at(k_prime);
        let candidates = subsets_exactly(d, k_prime, &FactorSet::empty());
        let evaluated: Vec<(OneStepPolicy, f64)> = candidates
            .par_iter()
            .map(|set| values.best_on(set))
            .collect::<Result<_>>()?;
        for (pi, value) in evaluated {
            if global <= value + tol {
                return Ok(pi);
            }
        }
    }
    Err(ExoError::OptimizationFailed)
}

/// Per-restriction maximizing policies for every candidate factor set
/// containing `base`, produced by [`endo_policy_optimization`]. Sets follow
/// the canonical scan order of `subsets_up_to`.
#[derive(Debug, Clone)]
pub struct GammaTable {
    pub base: FactorSet,
    pub sets: Vec<FactorSet>,
    pub families: Vec<StepPolicyFamily>,
}

impl GammaTable {
    pub fn new(base: FactorSet, sets: Vec<FactorSet>, families: Vec<StepPolicyFamily>) -> Self {
        debug_assert_eq!(sets.len(), families.len());
        GammaTable {
            base,
            sets,
            families,
        }
    }

    pub fn family_for(&self, set: &FactorSet) -> Result<&StepPolicyFamily> {
        self.sets
            .iter()
            .position(|s| s == set)
            .map(|i| &self.families[i])
            .ok_or_else(|| {
                ExoError::InvalidArgument(format!("no policy family recorded for factor set {set}"))
            })
    }
}

/// Implicit access to estimated target-layer occupancies: the global best
/// over every small-set policy, and the estimate under one explicit policy,
/// for a given target set and restriction value.
pub trait OccupancyAccess: Sync {
    fn factor_count(&self) -> usize;
    fn s_per_factor(&self) -> usize;
    fn global_max(&self, target: &FactorSet, y: StateIndex) -> Result<f64>;
    fn estimate(&self, target: &FactorSet, y: StateIndex, pi: &OneStepPolicy) -> Result<f64>;
}

/// Selects the factor set whose recorded policies cover every small target
/// simultaneously: scans supersets of `i_prev` by ascending cardinality and
/// accepts the first candidate `I` such that for every target set `J` and
/// value `y`, the policy recorded for `(J intersect I, y)` reaches within
/// the level tolerance of the best achievable occupancy.
///
/// On failure returns the best candidate's worst target and gap; under the
/// sampling guarantees this is a low-probability event.
pub fn endo_factor_selection(
    access: &impl OccupancyAccess,
    gamma: &GammaTable,
    i_prev: &FactorSet,
    k: usize,
    eps: f64,
) -> Result<(FactorSet, StepPolicyFamily)> {
    let ladder = EpsLadder::new(k, eps, 5.0)?;
    let d = access.factor_count();
    let s = access.s_per_factor();
    let j_sets = subsets_up_to(d, k, i_prev);
    let global: Vec<Vec<f64>> = j_sets
        .iter()
        .map(|j| {
            (0..restriction_count(j.len(), s))
                .map(|y| access.global_max(j, y))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    // worst (target, value, gap) of the least-violating candidate, kept for
    // the failure diagnostics
    let mut best_violation = f64::INFINITY;
    let mut best_witness: Option<(FactorSet, usize, f64)> = None;

    for k_prime in i_prev.len()..=k {
        let tol = ladder.eps_at(k_prime);
        let level: Vec<&FactorSet> = j_sets.iter().filter(|i| i.len() == k_prime).collect();
        let evaluated: Vec<(f64, (FactorSet, usize, f64))> = level
            .par_iter()
            .map(|cand| candidate_violation(access, gamma, &j_sets, &global, cand, s))
            .collect::<Result<_>>()?;
        for (cand, (violation, witness)) in level.iter().zip(evaluated) {
            if violation <= tol {
                return Ok(((*cand).clone(), gamma.family_for(cand)?.clone()));
            }
            if violation < best_violation {
                best_violation = violation;
                best_witness = Some(witness);
            }
        }
    }
    let (worst_set, worst_value, worst_gap) =
        best_witness.expect("selection scanned at least the base candidate");
    Err(ExoError::SelectionFailed {
        worst_set,
        worst_value,
        worst_gap,
    })
}

/// Largest coverage gap of one candidate across all targets, with the
/// target realizing it.
fn candidate_violation(
    access: &impl OccupancyAccess,
    gamma: &GammaTable,
    j_sets: &[FactorSet],
    global: &[Vec<f64>],
    cand: &FactorSet,
    s: usize,
) -> Result<(f64, (FactorSet, usize, f64))> {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut witness = (FactorSet::empty(), 0usize, 0.0f64);
    for (j_idx, j) in j_sets.iter().enumerate() {
        let overlap = j.intersection(cand);
        let family = gamma.family_for(&overlap)?;
        for y in 0..restriction_count(j.len(), s) {
            let v = project_restriction(y, j, &overlap, s);
            let achieved = access.estimate(j, y, family.policy_for(v))?;
            let gap = global[j_idx][y] - achieved;
            if gap > worst_gap {
                worst_gap = gap;
                witness = (j.clone(), y, gap);
            }
        }
    }
    Ok((worst_gap, witness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_model;
    use crate::sampler::{PsdpDataset, PsdpRecord};
    use crate::state::FactoredState;

    #[test]
    fn ladder_rungs_match_closed_form() {
        let ladder = EpsLadder::new(2, 0.1, 1.0).unwrap();
        let expect = [0.225, 0.15, 0.1];
        for (kp, want) in expect.iter().enumerate() {
            assert!((ladder.eps_at(kp) - want).abs() < 1e-12, "rung {kp}");
        }
        let wide = EpsLadder::new(2, 0.1, 5.0).unwrap();
        assert!((wide.eps_at(1) - 0.75).abs() < 1e-12);
        assert!((wide.eps_at(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_separation_sweep() {
        for k in 1..=10usize {
            for &eps in &[0.01, 0.1, 1.0] {
                for &mult in &[1.0, 5.0] {
                    let ladder = EpsLadder::new(k, eps, mult).unwrap();
                    let rungs = ladder.rungs();
                    for w in rungs.windows(2) {
                        assert!(w[0] > w[1], "rungs must strictly decrease");
                    }
                    assert!(
                        ladder.min_separation_margin() > 0.0,
                        "separation failed at k={k} eps={eps} mult={mult}"
                    );
                }
            }
        }
    }

    #[test]
    fn ladder_rejects_degenerate_parameters() {
        assert!(EpsLadder::new(0, 0.1, 1.0).is_err());
        assert!(EpsLadder::new(2, 0.0, 1.0).is_err());
        assert!(EpsLadder::new(2, 0.1, -1.0).is_err());
    }

    /// Every (state, action) pair once; return mass 1 iff the action copies
    /// the first coordinate. The best small policy reads factor 0.
    fn factor0_q_tensor() -> QTensor {
        let model = tiny_model();
        let mut records = Vec::new();
        for c0 in 0..2u8 {
            for c1 in 0..2u8 {
                for a in 0..2u8 {
                    records.push(PsdpRecord {
                        s_t: FactoredState::new(vec![c0, c1]),
                        a_t: a,
                        rewards: vec![if a == c0 { 1.0 } else { 0.0 }, 0.0, 0.0],
                    });
                }
            }
        }
        let ds = PsdpDataset { t: 1, records };
        QTensor::build(&ds, &model, &FactorSet::from_indices([0, 1])).unwrap()
    }

    #[test]
    fn policy_optimization_finds_the_relevant_factor() {
        let q = factor0_q_tensor();
        let access = ValueAccess::new(&q).unwrap();
        let pi = endo_policy_optimization(&access, 1, 0.1).unwrap();
        assert_eq!(pi.acts_on, FactorSet::singleton(0));
        assert_eq!(pi.table, vec![0, 1]);
        // attains the global max over all single-factor policies
        let got = q.estimate_value(&pi).unwrap();
        assert!((got - global_best(&access, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn policy_optimization_accepts_empty_set_when_values_are_flat() {
        let model = tiny_model();
        let mut records = Vec::new();
        for c0 in 0..2u8 {
            for a in 0..2u8 {
                records.push(PsdpRecord {
                    s_t: FactoredState::new(vec![c0, 0]),
                    a_t: a,
                    rewards: vec![0.5, 0.0, 0.0],
                });
            }
        }
        let ds = PsdpDataset { t: 1, records };
        let q = QTensor::build(&ds, &model, &FactorSet::from_indices([0, 1])).unwrap();
        let access = ValueAccess::new(&q).unwrap();
        let pi = endo_policy_optimization(&access, 1, 0.1).unwrap();
        assert!(pi.acts_on.is_empty());
    }

    /// Two factors: factor 0 is steered deterministically by the action
    /// from a fixed start, factor 1 is an exogenous fair coin. Occupancies
    /// at the next layer are exact.
    struct ToyOccupancy;

    fn initial_action(pi: &OneStepPolicy, coin: u8) -> u8 {
        pi.action(&FactoredState::new(vec![0, coin]))
    }

    impl OccupancyAccess for ToyOccupancy {
        fn factor_count(&self) -> usize {
            2
        }

        fn s_per_factor(&self) -> usize {
            2
        }

        fn global_max(&self, target: &FactorSet, _y: StateIndex) -> Result<f64> {
            Ok(if target.contains(0) {
                1.0
            } else if target.contains(1) {
                0.5
            } else {
                1.0
            })
        }

        fn estimate(&self, target: &FactorSet, y: StateIndex, pi: &OneStepPolicy) -> Result<f64> {
            // average over the initial coin value
            let mut total = 0.0;
            for coin in 0..2u8 {
                let next0 = initial_action(pi, coin);
                let reached = match (target.contains(0), target.contains(1)) {
                    (false, false) => true,
                    (true, false) => y == next0 as usize,
                    (false, true) => y == coin as usize,
                    (true, true) => y == (next0 as usize) * 2 + coin as usize,
                };
                if reached {
                    total += 0.5;
                }
            }
            Ok(total)
        }
    }

    fn toy_gamma(good: bool) -> GammaTable {
        let base = FactorSet::empty();
        let sets = subsets_up_to(2, 1, &base);
        let families = sets
            .iter()
            .map(|set| {
                let policies = (0..restriction_count(set.len(), 2))
                    .map(|v| {
                        let action = if good && set.contains(0) { v as u8 } else { 0 };
                        OneStepPolicy::constant(action, 2)
                    })
                    .collect();
                StepPolicyFamily::new(set.clone(), 2, policies).unwrap()
            })
            .collect();
        GammaTable::new(base, sets, families)
    }

    #[test]
    fn factor_selection_picks_the_controllable_factor() {
        let gamma = toy_gamma(true);
        let (i_hat, family) =
            endo_factor_selection(&ToyOccupancy, &gamma, &FactorSet::empty(), 1, 0.05).unwrap();
        assert_eq!(i_hat, FactorSet::singleton(0));
        assert_eq!(family.factor_set, FactorSet::singleton(0));
        // the empty set must have been rejected first: its single recorded
        // policy cannot reach both values of factor 0
        let empty_family = gamma.family_for(&FactorSet::empty()).unwrap();
        let pi = empty_family.policy_for(0);
        let miss = (0..2)
            .map(|y| ToyOccupancy.estimate(&FactorSet::singleton(0), y, pi).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(miss, 0.0);
    }

    #[test]
    fn factor_selection_failure_carries_worst_target() {
        // recorded policies never reach factor-0 value 1
        let gamma = toy_gamma(false);
        let err =
            endo_factor_selection(&ToyOccupancy, &gamma, &FactorSet::empty(), 1, 0.05).unwrap_err();
        match err {
            ExoError::SelectionFailed {
                worst_set,
                worst_value,
                worst_gap,
            } => {
                assert!(worst_set.contains(0));
                assert_eq!(worst_value, 1);
                assert!((worst_gap - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn occupancy_slice_argmax_matches_tensor() {
        let model = tiny_model();
        let mu = crate::policy::MixturePolicy::trivial();
        let cover = crate::policy::PolicyCover::trivial(2, 2);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ds =
            crate::sampler::collect_ossr_dataset(&model, &mu, &cover, 1, 2, 300, &mut rng).unwrap();
        let full = FactorSet::from_indices([0, 1]);
        let w = WeightTensor::build(&ds, &model, &full, &FactorSet::singleton(0)).unwrap();
        let slice = OccupancySlice::new(&w, 0, 1).unwrap();
        let (pi, v) = slice.best_on(&FactorSet::singleton(0)).unwrap();
        let (pi2, v2) = w
            .implicit_argmax_occupancy(&FactorSet::singleton(0), 0, 1)
            .unwrap();
        assert_eq!(pi.table, pi2.table);
        assert_eq!(v, v2);
    }
}
