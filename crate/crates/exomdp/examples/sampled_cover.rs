//! Builds policy covers from rollouts alone, then grades them against the
//! exact oracle: the sampled chain should find the hidden factor and reach
//! every hidden value nearly as well as exhaustive planning would.

use exomdp::config::{BudgetMeter, Caps, SampleConfig};
use exomdp::exact::ExactDp;
use exomdp::gen::gen_random_exo_mdp;
use exomdp::ossr::ossr_h;
use exomdp::PolicyCover;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> exomdp::Result<()> {
    let (model, _) = gen_random_exo_mdp(4, 1, 2, 2, 3, 0.3, 1)?;
    println!("hidden set: {}", model.oracle().i_star());

    let config = SampleConfig::new(0.15, 0.1).with_n_override(Some(50_000));
    let mut meter = BudgetMeter::new(Caps::default().episode_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut covers = vec![PolicyCover::trivial(1, model.s_per_factor())];
    for h in 2..=model.horizon() {
        let out = ossr_h(&model, &covers, h, &config, &mut meter, &mut rng)?;
        for step in &out.steps {
            println!(
                "layer {}: backward step at t={} chose {} ({} episodes)",
                step.h, step.t, step.chosen, step.episodes
            );
        }
        covers.push(out.cover);
    }
    println!("total episodes: {}", meter.used());

    let dp = ExactDp::new(&model)?;
    for cover in &covers {
        println!(
            "layer {} cover on {}: deficiency {:.4}",
            cover.h,
            cover.factor_set,
            dp.cover_deficiency(cover)?
        );
    }
    Ok(())
}
