//! End-to-end learning from rollouts: cover construction followed by
//! backward policy search, graded against the exact optimum.

use exomdp::config::Caps;
use exomdp::driver::{behavioral_endogeneity, exo_rl, full_joint_value_iteration, ExoRlConfig};
use exomdp::gen::gen_random_exo_mdp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> exomdp::Result<()> {
    let (model, _) = gen_random_exo_mdp(4, 1, 2, 2, 3, 0.3, 1)?;
    let mut cfg = ExoRlConfig::new(0.1, 0.1, 0.3);
    cfg.n_override = Some(50_000);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let out = exo_rl(&model, &cfg, &Caps::default(), &mut rng)?;
    for phase in &out.summary.phases {
        println!("{}: {} episodes", phase.phase, phase.episodes);
    }
    for layer in &out.summary.layers {
        println!(
            "layer {} used factor set {} (deficiency {:.4})",
            layer.h,
            layer.factor_set,
            layer.deficiency.unwrap()
        );
    }

    let (j_star, _) = full_joint_value_iteration(&model)?;
    println!(
        "J(learned) = {:.4} vs J* = {:.4} after {} episodes",
        out.summary.j_hat.unwrap(),
        j_star,
        out.summary.total_episodes
    );
    println!(
        "learned policy ignores every exogenous factor: {}",
        behavioral_endogeneity(&model, &out.policy)?
    );
    Ok(())
}
