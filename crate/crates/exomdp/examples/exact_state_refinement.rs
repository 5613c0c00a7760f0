//! Exact backward state refinement: builds the cover chain layer by layer
//! and shows that the chosen factor sets stay inside the hidden set while
//! reaching every reachable hidden value at full strength.

use exomdp::exact::ExactDp;
use exomdp::gen::gen_random_exo_mdp;

fn main() -> exomdp::Result<()> {
    let (model, prov) = gen_random_exo_mdp(5, 2, 2, 2, 4, 0.05, 23)?;
    let i_star = model.oracle().i_star();
    println!(
        "instance: d={} with hidden set {i_star} (certified eta {:.3})",
        model.d(),
        prov.eta.unwrap()
    );

    let dp = ExactDp::new(&model)?;
    let covers = dp.cover_chain()?;
    for cover in &covers {
        let deficiency = dp.cover_deficiency(cover)?;
        println!(
            "layer {}: cover on {} with {} policies, deficiency {deficiency:.2e}",
            cover.h,
            cover.factor_set,
            cover.policies.len()
        );
        assert!(cover.factor_set.is_subset_of(i_star));
    }
    println!("every layer's factor set sits inside {i_star}, with zero shortfall");
    Ok(())
}
