//! Exact finite-horizon oracles on a small instance: policy evaluation,
//! occupancy measures, and full-joint value iteration.

use exomdp::exact::{ExactDp, RewardSpec};
use exomdp::gen::gen_random_exo_mdp;
use exomdp::{NonstationaryPolicy, OneStepPolicy};

fn constant_policy(action: u8, s: usize, horizon: usize) -> NonstationaryPolicy {
    let steps = (0..horizon).map(|_| OneStepPolicy::constant(action, s)).collect();
    NonstationaryPolicy::new(1, steps)
}

fn main() -> exomdp::Result<()> {
    let (model, _) = gen_random_exo_mdp(4, 1, 2, 2, 3, 0.1, 5)?;
    let dp = ExactDp::new(&model)?;
    let i_star = model.oracle().i_star();

    let s = model.s_per_factor();
    let always_0 = constant_policy(0, s, model.horizon());
    let always_1 = constant_policy(1, s, model.horizon());
    println!("J(always action 0) = {:.4}", dp.policy_return(&always_0)?);
    println!("J(always action 1) = {:.4}", dp.policy_return(&always_1)?);

    let best = dp.joint_value_iteration(&RewardSpec::Model);
    println!("J* from joint value iteration = {:.4}", best.value);

    for h in 1..=model.horizon() {
        let occ = dp.occupancy(&always_0, h, i_star)?;
        println!(
            "occupancy of the hidden factor {i_star} at layer {h} under action 0: {:?}",
            occ.values.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    Ok(())
}
