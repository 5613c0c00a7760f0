//! Structural self-checks. Each check verifies, on a concrete instance, one
//! of the invariants the learning pipeline relies on, and reports the worst
//! observed residual so violations are quantified rather than just flagged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ExoError;
use crate::exact::ExactDp;
use crate::factor::FactorSet;
use crate::files::Provenance;
use crate::gen::{bellman_rank, gen_bellman_rank_instance};
use crate::model::ExoMdpModel;
use crate::policy::{NonstationaryPolicy, OneStepPolicy};
use crate::search::EpsLadder;
use crate::state::{restriction_count, unpack_joint};
use crate::Result;

/// Exact-arithmetic identities must hold to this tolerance under f64 DP.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Outcome of one structural check.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagReport {
    pub check: String,
    pub pass: bool,
    /// Worst observed quantity; its meaning (residual, ratio, margin, rank)
    /// is named in `detail`.
    pub worst_residual: f64,
    pub detail: String,
}

/// A uniformly random policy acting on the hidden factor set at every step.
/// Useful wherever an invariant must hold for all endogenous policies and a
/// random probe is the test strategy.
pub fn random_endogenous_policy(
    model: &ExoMdpModel,
    rng: &mut ChaCha8Rng,
) -> Result<NonstationaryPolicy> {
    let i_star = model.oracle().i_star().clone();
    let s = model.s_per_factor();
    let n = restriction_count(i_star.len(), s);
    let mut steps = Vec::with_capacity(model.horizon());
    for _ in 0..model.horizon() {
        let table: Vec<u8> = (0..n)
            .map(|_| rng.gen_range(0..model.a_count() as u8))
            .collect();
        steps.push(OneStepPolicy::new(i_star.clone(), s, table)?);
    }
    Ok(NonstationaryPolicy::new(1, steps))
}

/// Verifies that under endogenous policies the joint occupancy factors into
/// the product of its hidden-block and exogenous marginals, at every layer,
/// for `trials` random policies.
pub fn check_decoupling(model: &ExoMdpModel, trials: usize, seed: u64) -> Result<DiagReport> {
    let dp = ExactDp::new(model)?;
    let oracle = model.oracle();
    let i_star = oracle.i_star();
    let i_exo = oracle.i_exo();
    let full = FactorSet::from_indices(0..model.d());
    let joint = model.joint_state_count() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let pi = random_endogenous_policy(model, &mut rng)?;
        for h in 1..=model.horizon() {
            let occ_full = dp.occupancy(&pi, h, &full)?;
            let occ_en = dp.occupancy(&pi, h, i_star)?;
            let occ_ex = dp.occupancy(&pi, h, i_exo)?;
            for x in 0..joint {
                let state = unpack_joint(x, model.d(), model.s_per_factor());
                let en = oracle.en_index_of(&state);
                let ex = oracle.ex_index_of(&state);
                let residual =
                    (occ_full.value_at(x) - occ_en.value_at(en) * occ_ex.value_at(ex)).abs();
                worst = worst.max(residual);
            }
        }
    }
    Ok(DiagReport {
        check: "decoupling".into(),
        pass: worst < RESIDUAL_TOL,
        worst_residual: worst,
        detail: format!(
            "worst |joint - hidden x exogenous| occupancy gap over {trials} random hidden-set policies, layers 1..={}",
            model.horizon()
        ),
    })
}

/// Verifies that one-step reach maximization over a policy set on factors
/// `J` achieves exactly the value of the same maximization restricted to
/// `J` intersected with the hidden set: exogenous coordinates in the acting
/// set never help.
pub fn check_restriction(model: &ExoMdpModel, trials: usize, seed: u64) -> Result<DiagReport> {
    if model.horizon() < 2 {
        return Ok(DiagReport {
            check: "restriction".into(),
            pass: true,
            worst_residual: 0.0,
            detail: "horizon 1 has no one-step maximization to compare".into(),
        });
    }
    let dp = ExactDp::new(model)?;
    let i_star = model.oracle().i_star();
    let n = restriction_count(i_star.len(), model.s_per_factor());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let probe = random_endogenous_policy(model, &mut rng)?;
        let h = rng.gen_range(2..=model.horizon());
        let t = rng.gen_range(1..h);
        let x = rng.gen_range(0..n);
        let j = FactorSet::from_indices((0..model.d()).filter(|_| rng.r#gen::<bool>()));
        let restricted = j.intersection(i_star);

        let (_, v_full) = dp.skolem_max_one_step(&probe, t, h, &probe, &j, i_star, x)?;
        let (_, v_restricted) =
            dp.skolem_max_one_step(&probe, t, h, &probe, &restricted, i_star, x)?;
        worst = worst.max((v_full - v_restricted).abs());
    }
    Ok(DiagReport {
        check: "restriction".into(),
        pass: worst < RESIDUAL_TOL,
        worst_residual: worst,
        detail: format!(
            "worst reach gap between acting sets J and J restricted to the hidden set, {trials} random probes"
        ),
    })
}

/// Verifies the cover-quality bound on the exact cover chain: wherever a
/// hidden-block value is reachable with probability above `eps`, the cover
/// mixture's occupancy is within a factor `2 S^k` of the best reach.
pub fn check_density_ratio(model: &ExoMdpModel, eps: f64) -> Result<DiagReport> {
    if !(0.0..1.0).contains(&eps) {
        return Err(ExoError::InvalidArgument(format!(
            "occupancy floor must lie in [0, 1), got {eps}"
        )));
    }
    let dp = ExactDp::new(model)?;
    let i_star = model.oracle().i_star();
    let n = restriction_count(i_star.len(), model.s_per_factor());
    let bound = 2.0 * (model.s_per_factor().pow(model.k() as u32)) as f64;
    let covers = dp.cover_chain()?;

    let mut worst = 0.0f64;
    for cover in &covers {
        let mu = cover.mixture();
        let occ = dp.occupancy(&mu, cover.h, i_star)?;
        for x in 0..n {
            let reach = dp.max_reach(cover.h, i_star, x)?;
            if reach <= eps {
                continue;
            }
            // occupancy zero while reach is positive yields +inf: a loud fail
            worst = worst.max(reach / occ.value_at(x));
        }
    }
    Ok(DiagReport {
        check: "density-ratio".into(),
        pass: worst <= bound + 1e-9,
        worst_residual: worst,
        detail: format!(
            "worst best-reach to mixture-occupancy ratio over layers 1..={}, bound {bound}, cells with reach > {eps}",
            covers.len()
        ),
    })
}

/// Verifies that the accuracy ladder separates adjacent rungs by more than
/// the estimation slack across the whole supported parameter range.
pub fn check_ladder() -> Result<DiagReport> {
    let mut worst = f64::INFINITY;
    for k in 1..=10usize {
        for &eps in &[0.01, 0.1, 1.0] {
            for &multiplier in &[1.0, 5.0] {
                let ladder = EpsLadder::new(k, eps, multiplier)?;
                worst = worst.min(ladder.min_separation_margin());
            }
        }
    }
    Ok(DiagReport {
        check: "ladder".into(),
        pass: worst > 0.0,
        worst_residual: worst,
        detail: "minimum rung separation margin over k <= 10, eps in {0.01, 0.1, 1}, multipliers {1, 5}".into(),
    })
}

/// Recomputes the Bellman-error rank certificate for an instance produced by
/// the low-rank generator. The function class is rebuilt deterministically
/// from the provenance parameters; instances from other generators carry no
/// class and are refused.
pub fn check_bellman_rank(model: &ExoMdpModel, provenance: &Provenance) -> Result<DiagReport> {
    if provenance.generator != "bellman" {
        return Err(ExoError::InvalidArgument(format!(
            "the rank diagnostic needs an instance from the bellman generator (provenance names '{}'); other instances carry no function class",
            provenance.generator
        )));
    }
    let d = provenance
        .params
        .get("d")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ExoError::Schema {
            path: "provenance.params.d".into(),
            message: "missing exogenous dimension".into(),
        })? as usize;
    let (reference, class, _) = gen_bellman_rank_instance(d)?;
    if model.d() != reference.d()
        || model.s_per_factor() != reference.s_per_factor()
        || model.a_count() != reference.a_count()
        || model.horizon() != reference.horizon()
    {
        return Err(ExoError::InvalidArgument(
            "model dimensions do not match the construction named in its provenance".into(),
        ));
    }
    let rank = bellman_rank(model, &class)?;
    let need = d - 1;
    Ok(DiagReport {
        check: "bellman-rank".into(),
        pass: rank >= need,
        worst_residual: rank as f64,
        detail: format!(
            "largest per-step Bellman-error rank over a class of {} functions; need at least {need}",
            class.len()
        ),
    })
}
