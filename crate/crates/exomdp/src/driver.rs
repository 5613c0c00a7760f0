//! End-to-end learning runs: the cover-then-optimize pipeline, the
//! subset-enumeration baseline it is compared against, and the oracle-side
//! checks (ground-truth optimum, behavioral endogeneity) used to judge
//! both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BudgetMeter, Caps, SampleConfig, DEFAULT_C_CONST};
use crate::error::ExoError;
use crate::exact::{ExactDp, RewardSpec};
use crate::factor::{subsets_up_to, FactorSet};
use crate::model::ExoMdpModel;
use crate::ossr::ossr_h;
use crate::policy::{NonstationaryPolicy, OneStepPolicy, PolicyCover};
use crate::psdp::exo_psdp;
use crate::sampler::{collect_uniform_episodes, roll_episode};
use crate::state::{restriction_count, unpack_joint};
use crate::trajectory::Trajectory;
use crate::Result;

/// Episode counts charged by one named phase of a run.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseReport {
    pub phase: String,
    pub episodes: u64,
}

/// Chosen factor set for one layer cover, with its exact deficiency when
/// the oracle evaluation was tractable.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerReport {
    pub h: usize,
    pub factor_set: FactorSet,
    pub deficiency: Option<f64>,
}

/// Summary document written after a learning run.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub instance: Option<String>,
    pub seed: Option<u64>,
    pub phases: Vec<PhaseReport>,
    pub layers: Vec<LayerReport>,
    pub j_hat: Option<f64>,
    pub j_star: Option<f64>,
    pub total_episodes: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ExoRlConfig {
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
    pub c_const: f64,
    pub n_override: Option<u64>,
}

impl ExoRlConfig {
    pub fn new(eps: f64, delta: f64, eta: f64) -> Self {
        ExoRlConfig {
            eps,
            delta,
            eta,
            c_const: DEFAULT_C_CONST,
            n_override: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("delta", self.delta), ("eta", self.eta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ExoError::InvalidArgument(format!(
                    "{name} must lie in (0,1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ExoRlOutcome {
    pub policy: NonstationaryPolicy,
    pub covers: Vec<PolicyCover>,
    pub summary: RunSummary,
}

/// Full pipeline: build a policy cover per layer (at tolerance eta/2), then
/// optimize reward over the covers (at tolerance eps). The summary's oracle
/// fields are filled when the joint state space fits under the cap.
pub fn exo_rl(
    model: &ExoMdpModel,
    cfg: &ExoRlConfig,
    caps: &Caps,
    rng: &mut ChaCha8Rng,
) -> Result<ExoRlOutcome> {
    cfg.validate()?;
    let s = model.s_per_factor();
    let mut meter = BudgetMeter::new(caps.episode_cap);
    let cover_cfg = SampleConfig::new(cfg.eta / 2.0, cfg.delta)
        .with_c_const(cfg.c_const)
        .with_n_override(cfg.n_override);
    let reward_cfg = SampleConfig::new(cfg.eps, cfg.delta)
        .with_c_const(cfg.c_const)
        .with_n_override(cfg.n_override);

    let mut covers = vec![PolicyCover::trivial(1, s)];
    let mut phases = Vec::new();
    for h in 2..=model.horizon() {
        let out = ossr_h(model, &covers, h, &cover_cfg, &mut meter, rng)?;
        phases.push(PhaseReport {
            phase: format!("cover-layer-{h}"),
            episodes: out.steps.iter().map(|s| s.episodes).sum(),
        });
        covers.push(out.cover);
    }
    let learned = exo_psdp(model, &covers, &reward_cfg, &mut meter, rng)?;
    phases.push(PhaseReport {
        phase: "policy-search".into(),
        episodes: learned.steps.iter().map(|s| s.episodes).sum(),
    });

    let oracle_ok = model.joint_state_count() <= caps.state_cap;
    let (j_hat, j_star, layers) = if oracle_ok {
        let dp = ExactDp::with_cap(model, caps.state_cap)?;
        let j_hat = dp.policy_return(&learned.policy)?;
        let j_star = dp.joint_value_iteration(&RewardSpec::Model).value;
        let layers = covers
            .iter()
            .map(|c| {
                Ok(LayerReport {
                    h: c.h,
                    factor_set: c.factor_set.clone(),
                    deficiency: Some(dp.cover_deficiency(c)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        (Some(j_hat), Some(j_star), layers)
    } else {
        let layers = covers
            .iter()
            .map(|c| LayerReport {
                h: c.h,
                factor_set: c.factor_set.clone(),
                deficiency: None,
            })
            .collect();
        (None, None, layers)
    };

    let summary = RunSummary {
        instance: None,
        seed: None,
        phases,
        layers,
        j_hat,
        j_star,
        total_episodes: meter.used(),
    };
    Ok(ExoRlOutcome {
        policy: learned.policy,
        covers,
        summary,
    })
}

/// Ground-truth optimum: full-joint finite-horizon value iteration, with
/// the greedy tables repackaged as a policy over all factors.
pub fn full_joint_value_iteration(
    model: &ExoMdpModel,
) -> Result<(f64, NonstationaryPolicy)> {
    let dp = ExactDp::new(model)?;
    let result = dp.joint_value_iteration(&RewardSpec::Model);
    let oracle = model.oracle();
    let d = model.d();
    let s = model.s_per_factor();
    let full = FactorSet::from_indices(0..d);
    let joint = restriction_count(d, s);
    let s_ex = oracle.s_ex_count();
    let steps = result
        .greedy
        .iter()
        .map(|grid_table| {
            let mut table = vec![0u8; joint];
            for (packed, slot) in table.iter_mut().enumerate() {
                let state = unpack_joint(packed, d, s);
                let en = oracle.en_index_of(&state);
                let ex = oracle.ex_index_of(&state);
                *slot = grid_table[en * s_ex + ex];
            }
            OneStepPolicy::new(full.clone(), s, table)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((result.value, NonstationaryPolicy::new(1, steps)))
}

/// Exhaustive check that perturbing any exogenous coordinate of any state
/// never changes the action at any covered step.
pub fn behavioral_endogeneity(
    model: &ExoMdpModel,
    policy: &NonstationaryPolicy,
) -> Result<bool> {
    let cap = Caps::default().state_cap;
    if model.joint_state_count() > cap {
        return Err(ExoError::StateSpaceTooLarge {
            states: model.joint_state_count(),
            cap,
        });
    }
    let oracle = model.oracle();
    let d = model.d();
    let s = model.s_per_factor();
    let joint = restriction_count(d, s);
    let (Some(first), Some(last)) = (policy.first_step(), policy.last_step()) else {
        return Ok(true);
    };
    for t in first..=last {
        for packed in 0..joint {
            let base = unpack_joint(packed, d, s);
            let a0 = policy.action_at(t, &base)?;
            for i in oracle.i_exo().iter() {
                for alt in 0..s as u8 {
                    if alt == base.coords[i] {
                        continue;
                    }
                    let mut perturbed = base.clone();
                    perturbed.coords[i] = alt;
                    if policy.action_at(t, &perturbed)? != a0 {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Episode budget split for the enumeration baseline: one shared batch of
/// uniform-policy episodes to fit every candidate, plus a Monte-Carlo
/// evaluation allowance per candidate.
#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    pub learn_episodes: u64,
    pub eval_episodes: u64,
}

impl BaselineConfig {
    /// Splits a total episode budget: half to the shared learning batch,
    /// the rest divided evenly across candidate subsets.
    pub fn from_total_budget(total: u64, candidate_count: u64) -> Result<Self> {
        let learn_episodes = total / 2;
        let eval_episodes = (total - learn_episodes) / candidate_count.max(1);
        if learn_episodes == 0 || eval_episodes == 0 {
            return Err(ExoError::InvalidArgument(format!(
                "budget {total} too small to learn and evaluate {candidate_count} candidates"
            )));
        }
        Ok(BaselineConfig {
            learn_episodes,
            eval_episodes,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateReport {
    pub factor_set: FactorSet,
    pub mc_value: f64,
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub policy: NonstationaryPolicy,
    pub chosen: FactorSet,
    pub candidates: Vec<CandidateReport>,
}

/// Tabular baseline: for every factor subset of size at most k, fit an
/// empirical per-timestep model treating the restriction as the state
/// (deliberately non-Markov off the true set), plan by value iteration,
/// Monte-Carlo evaluate every candidate, and return the best.
pub fn baseline_subset_enumeration(
    model: &ExoMdpModel,
    config: &BaselineConfig,
    meter: &mut BudgetMeter,
    rng: &mut ChaCha8Rng,
) -> Result<BaselineOutcome> {
    let candidates = subsets_up_to(model.d(), model.k(), &FactorSet::empty());
    let count = candidates.len() as u64;
    meter.charge(config.learn_episodes + config.eval_episodes * count)?;
    let batch = collect_uniform_episodes(model, config.learn_episodes, rng)?;
    // per-candidate evaluation streams drawn up front so the parallel scan
    // cannot perturb determinism
    let masters: Vec<u64> = candidates.iter().map(|_| rng.r#gen()).collect();
    let evaluated: Vec<(NonstationaryPolicy, f64)> = candidates
        .par_iter()
        .zip(masters)
        .map(|(set, master)| {
            let pi = fit_subset_policy(model, &batch, set);
            let mut eval_rng = ChaCha8Rng::seed_from_u64(master);
            let mut total = 0.0;
            for _ in 0..config.eval_episodes {
                total += roll_episode(model, &pi, &mut eval_rng)?.total_return();
            }
            Ok((pi, total / config.eval_episodes as f64))
        })
        .collect::<Result<_>>()?;

    let mut best_idx = 0;
    for (i, (_, v)) in evaluated.iter().enumerate() {
        if *v > evaluated[best_idx].1 {
            best_idx = i;
        }
    }
    let reports = candidates
        .iter()
        .zip(&evaluated)
        .map(|(set, (_, v))| CandidateReport {
            factor_set: set.clone(),
            mc_value: *v,
        })
        .collect();
    let (policy, _) = evaluated.into_iter().nth(best_idx).expect("nonempty scan");
    Ok(BaselineOutcome {
        policy,
        chosen: candidates[best_idx].clone(),
        candidates: reports,
    })
}

/// Empirical time-indexed tables over the restriction to `set`, then
/// finite-horizon value iteration on them. Unvisited cells fall back to a
/// uniform next-restriction and zero reward.
fn fit_subset_policy(
    model: &ExoMdpModel,
    batch: &[Trajectory],
    set: &FactorSet,
) -> NonstationaryPolicy {
    let s = model.s_per_factor();
    let a_count = model.a_count();
    let horizon = model.horizon();
    let x_count = restriction_count(set.len(), s);
    let cell = |x: usize, a: usize| x * a_count + a;
    let mut visits = vec![vec![0u64; x_count * a_count]; horizon];
    let mut reward_sum = vec![vec![0.0f64; x_count * a_count]; horizon];
    let mut trans = vec![vec![0u64; x_count * a_count * x_count]; horizon];
    for traj in batch {
        for t in 1..=horizon {
            let x = traj.state_at(t).restrict(set, s);
            let a = traj.action_at(t) as usize;
            visits[t - 1][cell(x, a)] += 1;
            reward_sum[t - 1][cell(x, a)] += traj.reward_at(t);
            if t < horizon {
                let x_next = traj.state_at(t + 1).restrict(set, s);
                trans[t - 1][cell(x, a) * x_count + x_next] += 1;
            }
        }
    }
    let mut v_next = vec![0.0f64; x_count];
    let mut steps_rev = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        let mut v = vec![0.0f64; x_count];
        let mut table = vec![0u8; x_count];
        for x in 0..x_count {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for a in 0..a_count {
                let n = visits[t - 1][cell(x, a)];
                let q = if n == 0 {
                    // uniform continuation, zero reward
                    v_next.iter().sum::<f64>() / x_count as f64
                } else {
                    let r = reward_sum[t - 1][cell(x, a)] / n as f64;
                    let mut cont = 0.0;
                    if t < horizon {
                        for (x_next, value) in v_next.iter().enumerate() {
                            let c = trans[t - 1][cell(x, a) * x_count + x_next];
                            cont += (c as f64 / n as f64) * value;
                        }
                    }
                    r + cont
                };
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[x] = best;
            table[x] = best_a as u8;
        }
        steps_rev.push(OneStepPolicy {
            acts_on: set.clone(),
            s_per_factor: s,
            table,
        });
        v_next = v;
    }
    steps_rev.reverse();
    NonstationaryPolicy::new(1, steps_rev)
}
