//! Sample-based backward policy-cover construction for one target layer:
//! per backward step, collect a switch dataset, optimize per-restriction
//! policies for every candidate target set, select the factor set whose
//! policies cover all targets simultaneously, and compose with the cover
//! built so far.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BudgetMeter, SampleConfig};
use crate::error::ExoError;
use crate::estimator::WeightTensor;
use crate::factor::{subsets_exactly, subsets_up_to, FactorSet};
use crate::model::ExoMdpModel;
use crate::policy::{OneStepPolicy, PolicyCover, StepPolicyFamily};
use crate::sampler::collect_ossr_dataset;
use crate::search::{
    endo_factor_selection, endo_policy_optimization, GammaTable, OccupancyAccess, OccupancySlice,
};
use crate::state::{project_restriction, restriction_count, StateIndex};
use crate::Result;

/// What one backward step chose, for run summaries and verbose traces.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OssrStepReport {
    pub t: usize,
    pub h: usize,
    pub episodes: u64,
    pub chosen: FactorSet,
}

#[derive(Debug)]
pub struct OssrOutcome {
    pub cover: PolicyCover,
    pub steps: Vec<OssrStepReport>,
}

/// Occupancy estimates for the selection phase: one tensor per candidate
/// target set, all sharing the full-state switch restriction; the rollout
/// index of a target value is its projection onto the previous cover's set.
struct LayerOccupancy<'a> {
    sets: &'a [FactorSet],
    tensors: &'a [WeightTensor],
    i_prev: &'a FactorSet,
    d: usize,
    s: usize,
    k: usize,
}

impl LayerOccupancy<'_> {
    fn tensor_for(&self, target: &FactorSet) -> Result<&WeightTensor> {
        self.sets
            .iter()
            .position(|j| j == target)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| {
                ExoError::InvalidArgument(format!("no tensor built for target set {target}"))
            })
    }

    fn psi_index(&self, target: &FactorSet, y: StateIndex) -> usize {
        project_restriction(y, target, self.i_prev, self.s)
    }
}

impl OccupancyAccess for LayerOccupancy<'_> {
    fn factor_count(&self) -> usize {
        self.d
    }

    fn s_per_factor(&self) -> usize {
        self.s
    }

    fn global_max(&self, target: &FactorSet, y: StateIndex) -> Result<f64> {
        let tensor = self.tensor_for(target)?;
        let psi = self.psi_index(target, y);
        let mut best = f64::NEG_INFINITY;
        for set in subsets_exactly(self.d, self.k.min(self.d), &FactorSet::empty()) {
            best = best.max(tensor.implicit_argmax_occupancy(&set, psi, y)?.1);
        }
        Ok(best)
    }

    fn estimate(&self, target: &FactorSet, y: StateIndex, pi: &OneStepPolicy) -> Result<f64> {
        let tensor = self.tensor_for(target)?;
        tensor.estimate_occupancy(pi, self.psi_index(target, y), y)
    }
}

/// Builds an approximate policy cover for layer `h`, given covers for
/// layers `1..h` (`prior[t-1]` is the layer-`t` cover used as roll-in).
/// Backward steps are strictly sequential; each consumes one dataset of
/// `config.round_episodes` episodes charged to `meter`.
pub fn ossr_h(
    model: &ExoMdpModel,
    prior: &[PolicyCover],
    h: usize,
    config: &SampleConfig,
    meter: &mut BudgetMeter,
    rng: &mut ChaCha8Rng,
) -> Result<OssrOutcome> {
    config.validate()?;
    let s = model.s_per_factor();
    if h == 0 || h > model.horizon() {
        return Err(ExoError::InvalidArgument(format!(
            "cover layer h={h} outside 1..={}",
            model.horizon()
        )));
    }
    if h == 1 {
        return Ok(OssrOutcome {
            cover: PolicyCover::trivial(1, s),
            steps: Vec::new(),
        });
    }
    if prior.len() < h - 1 {
        return Err(ExoError::InvalidArgument(format!(
            "layer {h} needs {} roll-in covers, got {}",
            h - 1,
            prior.len()
        )));
    }
    for t in 1..h {
        if prior[t - 1].h != t {
            return Err(ExoError::InvalidArgument(format!(
                "roll-in cover at position {} targets layer {}, expected {t}",
                t - 1,
                prior[t - 1].h
            )));
        }
    }

    let d = model.d();
    let k = model.k();
    let n = config.round_episodes(model);
    let eps0 = config.cell_eps(model);
    let full = FactorSet::from_indices(0..d);

    let mut cover = PolicyCover::trivial(h, s);
    let mut steps = Vec::with_capacity(h - 1);
    for t in (1..h).rev() {
        meter.charge(n)?;
        let mu = prior[t - 1].mixture();
        let ds = collect_ossr_dataset(model, &mu, &cover, t, h, n, rng)?;
        let i_prev = cover.factor_set.clone();
        let sets = subsets_up_to(d, k, &i_prev);
        let tensors: Vec<WeightTensor> = sets
            .par_iter()
            .map(|j| WeightTensor::build(&ds, model, &full, j))
            .collect::<Result<_>>()?;

        // optimization phase: a maximizing policy per (target set, value)
        let families: Vec<StepPolicyFamily> = sets
            .par_iter()
            .zip(&tensors)
            .map(|(set, tensor)| {
                let policies = (0..restriction_count(set.len(), s))
                    .map(|v| {
                        let psi = project_restriction(v, set, &i_prev, s);
                        let slice = OccupancySlice::new(tensor, psi, v)?;
                        endo_policy_optimization(&slice, k, eps0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                StepPolicyFamily::new(set.clone(), s, policies)
            })
            .collect::<Result<_>>()?;
        let gamma = GammaTable::new(i_prev.clone(), sets.clone(), families);

        // selection phase
        let access = LayerOccupancy {
            sets: &sets,
            tensors: &tensors,
            i_prev: &i_prev,
            d,
            s,
            k,
        };
        let (i_hat, family) = endo_factor_selection(&access, &gamma, &i_prev, k, eps0)?;

        // composition: steer to v at t+1 scale, then follow the tail cover
        // policy for v's projection
        let policies = (0..restriction_count(i_hat.len(), s))
            .map(|v| {
                let tail_v = project_restriction(v, &i_hat, &i_prev, s);
                let tail = cover.policy_for(tail_v).clone();
                tail.prepend(t, family.policy_for(v).clone())
            })
            .collect();
        steps.push(OssrStepReport {
            t,
            h,
            episodes: n,
            chosen: i_hat.clone(),
        });
        cover = PolicyCover::new(t, h, i_hat, s, policies)?;
    }
    steps.reverse();
    Ok(OssrOutcome { cover, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Caps, SampleConfig};
    use crate::exact::ExactDp;
    use crate::model::tests::tiny_model;
    use rand::SeedableRng;

    fn layer_one_prior(model: &ExoMdpModel) -> Vec<PolicyCover> {
        vec![PolicyCover::trivial(1, model.s_per_factor())]
    }

    fn test_config() -> SampleConfig {
        SampleConfig::new(0.3, 0.1).with_n_override(Some(6000))
    }

    #[test]
    fn layer_one_is_trivial() {
        let model = tiny_model();
        let mut meter = BudgetMeter::new(Caps::default().episode_cap);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = ossr_h(&model, &[], 1, &test_config(), &mut meter, &mut rng).unwrap();
        assert!(out.cover.factor_set.is_empty());
        assert!(out.steps.is_empty());
        assert_eq!(meter.used(), 0);
    }

    #[test]
    fn recovers_the_controllable_factor() {
        let model = tiny_model();
        let mut meter = BudgetMeter::new(Caps::default().episode_cap);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = ossr_h(
            &model,
            &layer_one_prior(&model),
            2,
            &test_config(),
            &mut meter,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.cover.factor_set, FactorSet::singleton(0));
        assert_eq!(out.cover.policies.len(), 2);
        for pi in &out.cover.policies {
            assert!(pi.acts_within(model.oracle().i_star()));
        }
        let dp = ExactDp::new(&model).unwrap();
        assert!(dp.cover_deficiency(&out.cover).unwrap() < 0.05);
        assert_eq!(meter.used(), 6000);
    }

    #[test]
    fn deeper_layer_keeps_nesting_and_low_deficiency() {
        let model = tiny_model();
        let mut meter = BudgetMeter::new(Caps::default().episode_cap);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut priors = layer_one_prior(&model);
        let layer2 = ossr_h(&model, &priors, 2, &test_config(), &mut meter, &mut rng)
            .unwrap()
            .cover;
        priors.push(layer2);
        let out = ossr_h(&model, &priors, 3, &test_config(), &mut meter, &mut rng).unwrap();
        // nesting: chosen sets grow backward in t
        assert_eq!(out.steps.len(), 2);
        assert_eq!(out.steps[0].t, 1);
        assert!(out.steps[1].chosen.is_subset_of(&out.steps[0].chosen));
        assert!(out.cover.factor_set.is_subset_of(model.oracle().i_star()));
        let dp = ExactDp::new(&model).unwrap();
        assert!(dp.cover_deficiency(&out.cover).unwrap() < 0.1);
    }

    #[test]
    fn budget_guard_refuses_before_collecting() {
        let model = tiny_model();
        let mut meter = BudgetMeter::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = ossr_h(
            &model,
            &layer_one_prior(&model),
            2,
            &test_config(),
            &mut meter,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, ExoError::EpisodeBudget { .. }));
        assert_eq!(meter.used(), 0);
    }

    #[test]
    fn same_seed_reproduces_the_cover() {
        let model = tiny_model();
        let run = || {
            let mut meter = BudgetMeter::new(Caps::default().episode_cap);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            ossr_h(
                &model,
                &layer_one_prior(&model),
                2,
                &test_config(),
                &mut meter,
                &mut rng,
            )
            .unwrap()
            .cover
        };
        assert_eq!(run(), run());
    }
}
