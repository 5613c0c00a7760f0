//! Backward policy search over learned covers: per step, roll in with the
//! layer cover, switch to a uniform action, follow the suffix built so far,
//! and fit the step policy by endogenous optimization of estimated return
//! mass.
//!
//! The loop starts at t = H even though the final action affects no
//! transition: it still earns the final reward, and routing it through the
//! same endogenous optimization keeps every step's factor set small. This
//! completes the backward recursion deliberately rather than leaving the
//! last step unoptimized.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BudgetMeter, SampleConfig};
use crate::error::ExoError;
use crate::estimator::QTensor;
use crate::factor::FactorSet;
use crate::model::ExoMdpModel;
use crate::policy::{NonstationaryPolicy, PolicyCover};
use crate::sampler::collect_psdp_dataset;
use crate::search::{endo_policy_optimization, ValueAccess};
use crate::Result;

/// What one backward step chose, for run summaries and verbose traces.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PsdpStepReport {
    pub t: usize,
    pub episodes: u64,
    pub acts_on: FactorSet,
    /// Estimated value of the suffix starting at this step.
    pub value_estimate: f64,
}

#[derive(Debug)]
pub struct PsdpOutcome {
    pub policy: NonstationaryPolicy,
    pub steps: Vec<PsdpStepReport>,
}

/// Learns a full-horizon policy from layer covers (`covers[t-1]` is the
/// layer-`t` cover used as roll-in). Each backward step consumes one
/// dataset of `config.round_episodes` episodes charged to `meter`.
pub fn exo_psdp(
    model: &ExoMdpModel,
    covers: &[PolicyCover],
    config: &SampleConfig,
    meter: &mut BudgetMeter,
    rng: &mut ChaCha8Rng,
) -> Result<PsdpOutcome> {
    config.validate()?;
    let horizon = model.horizon();
    if covers.len() < horizon {
        return Err(ExoError::InvalidArgument(format!(
            "policy search needs a cover per layer 1..={horizon}, got {}",
            covers.len()
        )));
    }
    for t in 1..=horizon {
        if covers[t - 1].h != t {
            return Err(ExoError::InvalidArgument(format!(
                "cover at position {} targets layer {}, expected {t}",
                t - 1,
                covers[t - 1].h
            )));
        }
    }

    let n = config.round_episodes(model);
    let eps0 = config.cell_eps(model);
    let k = model.k();
    let full = FactorSet::from_indices(0..model.d());

    let mut pihat = NonstationaryPolicy::empty(horizon + 1);
    let mut steps = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        meter.charge(n)?;
        let mu = covers[t - 1].mixture();
        let ds = collect_psdp_dataset(model, &mu, &pihat, t, n, rng)?;
        let q = QTensor::build(&ds, model, &full)?;
        let access = ValueAccess::new(&q)?;
        let pi_t = endo_policy_optimization(&access, k, eps0)?;
        let value_estimate = q.estimate_value(&pi_t)?;
        steps.push(PsdpStepReport {
            t,
            episodes: n,
            acts_on: pi_t.acts_on.clone(),
            value_estimate,
        });
        pihat = pihat.prepend(t, pi_t);
    }
    steps.reverse();
    Ok(PsdpOutcome {
        policy: pihat,
        steps,
    })
}
