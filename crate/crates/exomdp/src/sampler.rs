//! Episode simulation and dataset collection for the sampled pipeline.
//!
//! Collection is deterministic under parallelism: the caller's RNG yields
//! one master seed, episodes are split into fixed-size chunks, and chunk
//! `c` runs on an independent counter-derived stream. Records concatenate
//! in chunk order, so output bytes never depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ExoError;
use crate::model::ExoMdpModel;
use crate::policy::{MixturePolicy, NonstationaryPolicy, PolicyCover, PolicyRef};
use crate::state::FactoredState;
use crate::trajectory::Trajectory;
use crate::Result;

/// Episodes per deterministic RNG substream.
const CHUNK_EPISODES: u64 = 1024;

/// One record of the cover-construction data pass at `(t, h)`: the state
/// and uniform action at the switch step, which rollout policy ran after,
/// and the state observed at the target layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OssrRecord {
    pub s_t: FactoredState,
    pub a_t: u8,
    pub psi_index: usize,
    pub s_h: FactoredState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OssrDataset {
    pub t: usize,
    pub h: usize,
    pub psi_count: usize,
    pub records: Vec<OssrRecord>,
}

/// One record of the policy-search data pass at `t`: switch state, uniform
/// action, and the episode's full reward sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PsdpRecord {
    pub s_t: FactoredState,
    pub a_t: u8,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PsdpDataset {
    pub t: usize,
    pub records: Vec<PsdpRecord>,
}

/// Runs episodes in parallel chunks with deterministic per-chunk streams.
fn collect_chunked<R, F>(n: u64, master: u64, make: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut ChaCha8Rng) -> R + Sync,
{
    let chunks = n.div_ceil(CHUNK_EPISODES);
    let mut nested: Vec<Vec<R>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(master);
            rng.set_stream(c);
            let lo = c * CHUNK_EPISODES;
            let hi = (lo + CHUNK_EPISODES).min(n);
            (lo..hi).map(|_| make(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n as usize);
    for chunk in nested.drain(..) {
        out.extend(chunk);
    }
    out
}

/// Full episodes under per-step uniform actions, collected in parallel
/// chunks with the same determinism contract as the dataset collectors.
pub fn collect_uniform_episodes(
    model: &ExoMdpModel,
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(ExoError::InvalidArgument(
            "dataset collection needs at least one episode".into(),
        ));
    }
    let horizon = model.horizon();
    let master: u64 = rng.r#gen();
    Ok(collect_chunked(n, master, |rng| {
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut s = model.sample_initial(rng);
        for _ in 1..=horizon {
            let a = rng.gen_range(0..model.a_count()) as u8;
            let (next, r) = model.step(&s, a as usize, rng);
            states.push(s);
            actions.push(a);
            rewards.push(r);
            s = next;
        }
        Trajectory {
            states,
            actions,
            rewards,
            member_index: None,
            rollout_index: None,
        }
    }))
}

/// Samples one full episode under a policy covering `1..=H` (a mixture
/// draws its member up front and follows it throughout).
pub fn roll_episode<'p>(
    model: &ExoMdpModel,
    policy: impl Into<PolicyRef<'p>>,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let members = policy.into().members();
    let member_index = if members.len() > 1 {
        Some(rng.gen_range(0..members.len()))
    } else {
        None
    };
    let member = &members[member_index.unwrap_or(0)];
    let horizon = model.horizon();
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = model.sample_initial(rng);
    for t in 1..=horizon {
        let a = member.action_at(t, &s)?;
        let (next, r) = model.step(&s, a as usize, rng);
        states.push(s);
        actions.push(a);
        rewards.push(r);
        s = next;
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        member_index,
        rollout_index: None,
    })
}

/// Data pass for one backward cover-construction round: roll in with a
/// uniform member of `mu` to layer `t`, play a uniform action, continue
/// with a uniform rollout policy from the cover, and record the layer-`h`
/// state.
pub fn collect_ossr_dataset(
    model: &ExoMdpModel,
    mu: &MixturePolicy,
    rollout_set: &PolicyCover,
    t: usize,
    h: usize,
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<OssrDataset> {
    if n == 0 {
        return Err(ExoError::InvalidArgument(
            "dataset collection needs at least one episode".into(),
        ));
    }
    if t == 0 || t >= h || h > model.horizon() {
        return Err(ExoError::InvalidArgument(format!(
            "collection needs 1 <= t < h <= H, got t={t}, h={h}"
        )));
    }
    check_roll_in(mu, t)?;
    for psi in &rollout_set.policies {
        for tau in t + 1..h {
            psi.step_policy(tau).ok_or(ExoError::TimestepOutOfRange {
                t: tau,
                lo: t + 1,
                hi: h - 1,
            })?;
        }
    }
    let master: u64 = rng.r#gen();
    let records = collect_chunked(n, master, |rng| {
        let member = &mu.members[rng.gen_range(0..mu.members.len())];
        let mut s = model.sample_initial(rng);
        for tau in 1..t {
            let a = member
                .action_at(tau, &s)
                .expect("roll-in coverage checked above");
            s = model.step(&s, a as usize, rng).0;
        }
        let s_t = s.clone();
        let a_t = rng.gen_range(0..model.a_count()) as u8;
        s = model.step(&s, a_t as usize, rng).0;
        let psi_index = rng.gen_range(0..rollout_set.policies.len());
        let psi = &rollout_set.policies[psi_index];
        for tau in t + 1..h {
            let a = psi
                .action_at(tau, &s)
                .expect("rollout coverage checked above");
            s = model.step(&s, a as usize, rng).0;
        }
        OssrRecord {
            s_t,
            a_t,
            psi_index,
            s_h: s,
        }
    });
    Ok(OssrDataset {
        t,
        h,
        psi_count: rollout_set.policies.len(),
        records,
    })
}

/// Data pass for one policy-search round: roll in with `mu` to `t`, play a
/// uniform action, follow the partial policy `pihat` (covering `t+1..=H`)
/// to the end, and record every reward.
pub fn collect_psdp_dataset(
    model: &ExoMdpModel,
    mu: &MixturePolicy,
    pihat: &NonstationaryPolicy,
    t: usize,
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<PsdpDataset> {
    if n == 0 {
        return Err(ExoError::InvalidArgument(
            "dataset collection needs at least one episode".into(),
        ));
    }
    let horizon = model.horizon();
    if t == 0 || t > horizon {
        return Err(ExoError::InvalidArgument(format!(
            "collection needs 1 <= t <= H, got t={t}"
        )));
    }
    check_roll_in(mu, t)?;
    for tau in t + 1..=horizon {
        pihat.step_policy(tau).ok_or(ExoError::TimestepOutOfRange {
            t: tau,
            lo: t + 1,
            hi: horizon,
        })?;
    }
    let master: u64 = rng.r#gen();
    let records = collect_chunked(n, master, |rng| {
        let member = &mu.members[rng.gen_range(0..mu.members.len())];
        let mut rewards = Vec::with_capacity(horizon);
        let mut s = model.sample_initial(rng);
        for tau in 1..t {
            let a = member
                .action_at(tau, &s)
                .expect("roll-in coverage checked above");
            let (next, r) = model.step(&s, a as usize, rng);
            rewards.push(r);
            s = next;
        }
        let s_t = s.clone();
        let a_t = rng.gen_range(0..model.a_count()) as u8;
        let (mut s, r_t) = model.step(&s, a_t as usize, rng);
        rewards.push(r_t);
        for tau in t + 1..=horizon {
            let a = pihat
                .action_at(tau, &s)
                .expect("suffix coverage checked above");
            let (next, r) = model.step(&s, a as usize, rng);
            rewards.push(r);
            s = next;
        }
        PsdpRecord { s_t, a_t, rewards }
    });
    Ok(PsdpDataset { t, records })
}

fn check_roll_in(mu: &MixturePolicy, t: usize) -> Result<()> {
    for member in &mu.members {
        for tau in 1..t {
            member.step_policy(tau).ok_or(ExoError::TimestepOutOfRange {
                t: tau,
                lo: 1,
                hi: t - 1,
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ExactDp;
    use crate::model::tests::tiny_model;
    use crate::policy::OneStepPolicy;

    fn constant_policy(a: u8, len: usize) -> NonstationaryPolicy {
        NonstationaryPolicy::new(1, vec![OneStepPolicy::constant(a, 2); len])
    }

    #[test]
    fn episode_shape_matches_horizon() {
        let model = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = roll_episode(&model, &constant_policy(1, 3), &mut rng).unwrap();
        assert_eq!(tr.states.len(), 3);
        assert_eq!(tr.actions, vec![1, 1, 1]);
        assert_eq!(tr.rewards.len(), 3);
    }

    #[test]
    fn empirical_return_matches_exact_value() {
        let model = tiny_model();
        let dp = ExactDp::new(&model).unwrap();
        let pol = constant_policy(1, 3);
        let exact = dp.policy_return(&pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += roll_episode(&model, &pol, &mut rng).unwrap().total_return();
        }
        let mean = sum / n as f64;
        // per-episode return lies in [0, H]; crude sigma bound suffices
        let sigma = (model.horizon() as f64) / (n as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * sigma,
            "mean {mean} vs exact {exact}"
        );
    }

    #[test]
    fn ossr_collection_records_uniform_actions() {
        let model = tiny_model();
        let mu = MixturePolicy::trivial();
        let cover = PolicyCover::trivial(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000u64;
        let ds = collect_ossr_dataset(&model, &mu, &cover, 1, 2, n, &mut rng).unwrap();
        assert_eq!(ds.records.len(), n as usize);
        let ones = ds.records.iter().filter(|r| r.a_t == 1).count() as f64;
        let p = ones / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "action frequency {p}");
    }

    #[test]
    fn collection_is_deterministic_across_thread_counts() {
        let model = tiny_model();
        let mu = MixturePolicy::single(constant_policy(0, 1));
        let cover = PolicyCover::trivial(3, 2);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(42);
                collect_ossr_dataset(&model, &mu, &cover, 2, 3, 5000, &mut rng).unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn psdp_records_full_reward_sequences() {
        let model = tiny_model();
        let mu = MixturePolicy::single(constant_policy(0, 1));
        let suffix = NonstationaryPolicy::new(3, vec![OneStepPolicy::constant(0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = collect_psdp_dataset(&model, &mu, &suffix, 2, 50, &mut rng).unwrap();
        for r in &ds.records {
            assert_eq!(r.rewards.len(), 3);
            assert!(r.rewards.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn zero_episodes_rejected() {
        let model = tiny_model();
        let mu = MixturePolicy::trivial();
        let cover = PolicyCover::trivial(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(collect_ossr_dataset(&model, &mu, &cover, 1, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn missing_rollout_steps_rejected() {
        let model = tiny_model();
        let mu = MixturePolicy::trivial();
        // cover claims (t+1..h) = (2..3) but holds an empty policy
        let bad = PolicyCover {
            t: 3,
            h: 3,
            factor_set: crate::factor::FactorSet::empty(),
            s_per_factor: 2,
            policies: vec![NonstationaryPolicy::empty(3)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = collect_ossr_dataset(&model, &mu, &bad, 1, 3, 10, &mut rng);
        assert!(matches!(err, Err(ExoError::TimestepOutOfRange { .. })));
    }
}
